#ifndef ESSFLOW_POTENTIALS_HPP
#define ESSFLOW_POTENTIALS_HPP

#include <cmath>
#include <concepts>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "essflow/core.hpp"
#include "essflow/transport.hpp"

namespace essflow {

// Observation operators h(x)

struct IdentityObservation {};

struct CoordinateProjection {
  std::vector<std::size_t> indices;
};

/// h(x) = A x + b with A stored row-major.
struct LinearObservation {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vector matrix;
  Vector offset;
};

/// Scalar property P(x): either w.x + b or |x|.
struct ScalarProperty {
  enum class Form { linear, norm };
  Form form = Form::linear;
  Vector weights;
  double offset = 0.0;
};

/// Euclidean distances between selected points of x read as `point_count`
/// stacked points of `point_dim` coordinates each.
struct PairwiseDistances {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::size_t point_count = 0;
  std::size_t point_dim = 0;
};

using ObservationOperator = std::variant<IdentityObservation, CoordinateProjection,
                                         LinearObservation, ScalarProperty, PairwiseDistances>;

class ConfigurationError : public Error {
 public:
  explicit ConfigurationError(const std::string& what)
      : Error(ErrorCategory::validation, "configuration error: " + what) {}
};

inline PairwiseDistances pairwise_distance_observation(
    std::vector<std::pair<std::size_t, std::size_t>> pairs, std::size_t point_count,
    std::size_t point_dim) {
  if (point_dim == 0) throw ConfigurationError("point dimension must be positive");
  for (const auto& [i, j] : pairs)
    if (i >= point_count || j >= point_count)
      throw ConfigurationError("pair (" + std::to_string(i) + ", " + std::to_string(j) +
                               ") out of range for " + std::to_string(point_count) + " points");
  return {std::move(pairs), point_count, point_dim};
}

/// Checks that `op` accepts inputs of dimension d.
inline void validate_operator(const ObservationOperator& op, std::size_t d) {
  std::visit(
      [d](const auto& h) {
        using H = std::decay_t<decltype(h)>;
        if constexpr (std::is_same_v<H, CoordinateProjection>) {
          if (h.indices.empty()) throw ConfigurationError("projection needs at least one index");
          for (auto i : h.indices)
            if (i >= d)
              throw ConfigurationError("projection index " + std::to_string(i) +
                                       " out of range for dimension " + std::to_string(d));
        } else if constexpr (std::is_same_v<H, LinearObservation>) {
          if (h.cols != d || h.matrix.size() != h.rows * h.cols || h.rows == 0)
            throw ConfigurationError("linear map shape does not match dimension");
          if (!h.offset.empty() && h.offset.size() != h.rows)
            throw ConfigurationError("linear map offset has wrong length");
        } else if constexpr (std::is_same_v<H, ScalarProperty>) {
          if (h.form == ScalarProperty::Form::linear && h.weights.size() != d)
            throw ConfigurationError("scalar property weights have wrong length");
        } else if constexpr (std::is_same_v<H, PairwiseDistances>) {
          if (h.point_count * h.point_dim != d)
            throw ConfigurationError("pairwise shape " + std::to_string(h.point_count) + "x" +
                                     std::to_string(h.point_dim) + " does not match dimension " +
                                     std::to_string(d));
          if (h.pairs.empty()) throw ConfigurationError("pairwise operator needs at least one pair");
        }
      },
      op);
}

inline Vector observe(const ObservationOperator& op, std::span<const double> x) {
  return std::visit(
      [x](const auto& h) -> Vector {
        using H = std::decay_t<decltype(h)>;
        if constexpr (std::is_same_v<H, IdentityObservation>) {
          return {x.begin(), x.end()};
        } else if constexpr (std::is_same_v<H, CoordinateProjection>) {
          Vector out;
          out.reserve(h.indices.size());
          for (auto i : h.indices) out.push_back(x[i]);
          return out;
        } else if constexpr (std::is_same_v<H, LinearObservation>) {
          Vector out(h.rows, 0.0);
          for (std::size_t r = 0; r < h.rows; ++r) {
            double acc = h.offset.empty() ? 0.0 : h.offset[r];
            for (std::size_t c = 0; c < h.cols; ++c) acc += h.matrix[r * h.cols + c] * x[c];
            out[r] = acc;
          }
          return out;
        } else if constexpr (std::is_same_v<H, ScalarProperty>) {
          if (h.form == ScalarProperty::Form::norm) return {std::sqrt(squared_norm(x)) + h.offset};
          double acc = h.offset;
          for (std::size_t i = 0; i < x.size(); ++i) acc += h.weights[i] * x[i];
          return {acc};
        } else {
          Vector out;
          out.reserve(h.pairs.size());
          for (const auto& [i, j] : h.pairs)
            out.push_back(std::sqrt(squared_distance(x.subspan(i * h.point_dim, h.point_dim),
                                                     x.subspan(j * h.point_dim, h.point_dim))));
          return out;
        }
      },
      op);
}

// Potentials g(x), handled as log g

enum class PotentialKind { gaussian_observation, exponential_tilt, quantized_observation, constant };

inline std::string_view to_string(PotentialKind k) {
  switch (k) {
    case PotentialKind::gaussian_observation: return "gaussian-observation";
    case PotentialKind::exponential_tilt: return "exponential-tilt";
    case PotentialKind::quantized_observation: return "quantized-observation";
    case PotentialKind::constant: return "constant";
  }
  return "?";
}

inline std::optional<PotentialKind> parse_potential_kind(std::string_view s) {
  if (s == "gaussian-observation") return PotentialKind::gaussian_observation;
  if (s == "exponential-tilt") return PotentialKind::exponential_tilt;
  if (s == "quantized-observation") return PotentialKind::quantized_observation;
  if (s == "constant") return PotentialKind::constant;
  return std::nullopt;
}

/// Nonnegative potential on data space. Every shipped kind has a finite log
/// value at every finite x; none of them impose hard zeros.
///
/// - gaussian-observation: -|h(x) - y|^2 / (2 s^2)
/// - exponential-tilt: -P(x) / s with P the (scalar) output of h
/// - quantized-observation: as gaussian-observation after rounding h(x) to a
///   grid of width q
/// - constant: 0
class Potential {
 public:
  static Potential constant() { return Potential(PotentialKind::constant, {}, 1.0, {}, 0.0); }

  static Potential gaussian(ObservationOperator op, Vector y, double sigma) {
    return {PotentialKind::gaussian_observation, std::move(y), sigma, std::move(op), 0.0};
  }

  static Potential exponential_tilt(ObservationOperator op, double sigma) {
    return {PotentialKind::exponential_tilt, {}, sigma, std::move(op), 0.0};
  }

  static Potential quantized(ObservationOperator op, Vector y, double sigma, double grid) {
    return {PotentialKind::quantized_observation, std::move(y), sigma, std::move(op), grid};
  }

  Potential(PotentialKind kind, Vector y, double sigma, ObservationOperator op, double grid)
      : kind_(kind), y_(std::move(y)), sigma_(sigma), op_(std::move(op)), grid_(grid) {
    if (!(sigma_ > 0.0) || !std::isfinite(sigma_))
      throw InvalidParameter("potential scale must be positive and finite, got " +
                             format_double(sigma_));
    if (kind_ == PotentialKind::quantized_observation && !(grid_ > 0.0))
      throw InvalidParameter("quantization grid width must be positive");
    if (!all_finite(y_)) throw InvalidParameter("observation must be finite");
    if ((kind_ == PotentialKind::gaussian_observation ||
         kind_ == PotentialKind::quantized_observation) && y_.empty())
      throw InvalidParameter("observation vector must be non-empty");
  }

  [[nodiscard]] PotentialKind kind() const noexcept { return kind_; }
  [[nodiscard]] const Vector& observation() const noexcept { return y_; }
  [[nodiscard]] double scale() const noexcept { return sigma_; }
  [[nodiscard]] double grid() const noexcept { return grid_; }
  [[nodiscard]] const ObservationOperator& observation_operator() const noexcept { return op_; }

  /// Same potential with the scale multiplied by `factor`.
  [[nodiscard]] Potential rescaled(double factor) const {
    return {kind_, y_, sigma_ * factor, op_, grid_};
  }

  /// Throws ConfigurationError unless h maps dimension-d points to outputs
  /// matching the observation.
  void validate_for_dimension(std::size_t d) const {
    if (kind_ == PotentialKind::constant) return;
    validate_operator(op_, d);
    const std::size_t out = observe(op_, Vector(d, 0.0)).size();
    if (kind_ == PotentialKind::exponential_tilt) {
      if (out != 1) throw ConfigurationError("exponential tilt needs a scalar observation operator");
    } else if (out != y_.size()) {
      throw ConfigurationError("observation operator yields " + std::to_string(out) +
                               " values but y has " + std::to_string(y_.size()));
    }
  }

  [[nodiscard]] double log(std::span<const double> x) const {
    if (!all_finite(x)) throw DomainError("potential evaluated at a non-finite point");
    switch (kind_) {
      case PotentialKind::constant:
        return 0.0;
      case PotentialKind::exponential_tilt:
        return -observe(op_, x)[0] / sigma_;
      case PotentialKind::gaussian_observation:
        return -squared_distance(observe(op_, x), y_) / (2.0 * sigma_ * sigma_);
      case PotentialKind::quantized_observation: {
        Vector h = observe(op_, x);
        for (auto& v : h) v = std::round(v / grid_) * grid_;
        return -squared_distance(h, y_) / (2.0 * sigma_ * sigma_);
      }
    }
    return kNegInf;
  }

 private:
  PotentialKind kind_;
  Vector y_;
  double sigma_;
  ObservationOperator op_;
  double grid_;
};

inline double log_potential(const Potential& p, std::span<const double> x) { return p.log(x); }

/// log g(T(z)) together with the data image T(z).
struct PullbackValue {
  double log_g = kNegInf;
  Vector x;
};

/// g o T: the potential read through a transport map.
class PullbackPotential {
 public:
  PullbackPotential(Potential potential, TransportMap map)
      : potential_(std::move(potential)), map_(std::move(map)) {
    potential_.validate_for_dimension(map_.dimension());
  }

  [[nodiscard]] const Potential& potential() const noexcept { return potential_; }
  [[nodiscard]] const TransportMap& map() const noexcept { return map_; }
  [[nodiscard]] std::size_t dimension() const { return map_.dimension(); }

  [[nodiscard]] PullbackValue evaluate(std::span<const double> z) const {
    PullbackValue v;
    v.x = integrate(map_, z);
    v.log_g = potential_.log(v.x);
    return v;
  }

  [[nodiscard]] double operator()(std::span<const double> z) const { return evaluate(z).log_g; }

 private:
  Potential potential_;
  TransportMap map_;
};

inline double log_pullback(const PullbackPotential& pp, std::span<const double> z) {
  return pp.evaluate(z).log_g;
}

/// Anything usable as a source-space log-potential by the samplers.
template <typename P>
concept SourcePotential = requires(const P& p, std::span<const double> z) {
  { p.evaluate(z) } -> std::same_as<PullbackValue>;
  { p.dimension() } -> std::convertible_to<std::size_t>;
};

}  // namespace essflow

#endif  // ESSFLOW_POTENTIALS_HPP
