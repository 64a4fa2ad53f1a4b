#ifndef ESSFLOW_TRANSPORT_HPP
#define ESSFLOW_TRANSPORT_HPP

#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "essflow/core.hpp"
#include "essflow/mlp.hpp"

namespace essflow {

/// u(t, x) = 0. The transport map is the identity.
struct ZeroVelocity {
  std::size_t dimension = 0;
};

/// Velocity of the straight path x_t = (1 + t(s - 1)) z + t mu, whose
/// exact transport map is T(z) = mu + s z.
struct AffineVelocity {
  Vector mean;
  double scale = 1.0;
};

enum class FieldKind : std::uint8_t { zero = 0, affine = 1, mlp = 2 };

/// Immutable velocity field. Evaluation is pure and thread-safe.
class VelocityField {
 public:
  using Impl = std::variant<ZeroVelocity, AffineVelocity, MlpVelocity>;

  explicit VelocityField(Impl impl) : impl_(std::move(impl)) {}

  [[nodiscard]] std::size_t dimension() const {
    return std::visit(
        [](const auto& f) -> std::size_t {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, ZeroVelocity>) return f.dimension;
          else if constexpr (std::is_same_v<F, AffineVelocity>) return f.mean.size();
          else return f.dimension();
        },
        impl_);
  }

  [[nodiscard]] FieldKind kind() const { return static_cast<FieldKind>(impl_.index()); }
  [[nodiscard]] const Impl& impl() const noexcept { return impl_; }

  void evaluate(double t, std::span<const double> x, std::span<double> out) const {
    std::visit(
        [&](const auto& f) {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, ZeroVelocity>) {
            std::fill(out.begin(), out.end(), 0.0);
          } else if constexpr (std::is_same_v<F, AffineVelocity>) {
            const double a = f.scale - 1.0;
            const double denom = 1.0 + t * a;
            for (std::size_t i = 0; i < out.size(); ++i)
              out[i] = a * (x[i] - t * f.mean[i]) / denom + f.mean[i];
          } else {
            f.evaluate(t, x, out);
          }
        },
        impl_);
  }

  [[nodiscard]] Vector operator()(double t, std::span<const double> x) const {
    Vector out(dimension());
    evaluate(t, x, out);
    return out;
  }

 private:
  Impl impl_;
};

inline std::shared_ptr<const VelocityField> zero_velocity(std::size_t dimension) {
  if (dimension == 0) throw InvalidParameter("dimension must be positive");
  return std::make_shared<const VelocityField>(ZeroVelocity{dimension});
}

inline std::shared_ptr<const VelocityField> affine_velocity(Vector mean, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale))
    throw InvalidParameter("affine velocity scale must be positive, got " + format_double(scale));
  if (mean.empty()) throw InvalidParameter("affine velocity mean must be non-empty");
  if (!all_finite(mean)) throw InvalidParameter("affine velocity mean must be finite");
  return std::make_shared<const VelocityField>(AffineVelocity{std::move(mean), scale});
}

inline std::shared_ptr<const VelocityField> mlp_velocity(MlpVelocity net) {
  return std::make_shared<const VelocityField>(std::move(net));
}

enum class Scheme { euler, midpoint, rk4 };

inline std::string_view to_string(Scheme s) {
  switch (s) {
    case Scheme::euler: return "euler";
    case Scheme::midpoint: return "midpoint";
    case Scheme::rk4: return "rk4";
  }
  return "?";
}

inline std::optional<Scheme> parse_scheme(std::string_view s) {
  if (s == "euler") return Scheme::euler;
  if (s == "midpoint") return Scheme::midpoint;
  if (s == "rk4") return Scheme::rk4;
  return std::nullopt;
}

inline constexpr int kDefaultTransportSteps = 50;

/// Fixed-step solution of dx/dt = u(t, x) from t = 0 to t = 1 on the uniform
/// grid t_k = k / N.
class TransportMap {
 public:
  TransportMap(std::shared_ptr<const VelocityField> field, Scheme scheme = Scheme::rk4,
               int steps = kDefaultTransportSteps)
      : field_(std::move(field)), scheme_(scheme), steps_(steps) {
    if (!field_) throw InvalidParameter("transport map needs a velocity field");
    if (steps_ < 1) throw InvalidParameter("transport steps must be >= 1");
  }

  [[nodiscard]] const VelocityField& field() const noexcept { return *field_; }
  [[nodiscard]] const std::shared_ptr<const VelocityField>& shared_field() const noexcept {
    return field_;
  }
  [[nodiscard]] Scheme scheme() const noexcept { return scheme_; }
  [[nodiscard]] int steps() const noexcept { return steps_; }
  [[nodiscard]] std::size_t dimension() const { return field_->dimension(); }

  [[nodiscard]] TransportMap with_steps(int steps) const { return {field_, scheme_, steps}; }

  /// Advances `x` by one step starting at grid index k.
  void step(int k, std::span<double> x, std::span<double> scratch) const {
    const std::size_t d = x.size();
    const double h = 1.0 / steps_;
    const double t = static_cast<double>(k) / steps_;
    double* k1 = scratch.data();
    double* k2 = k1 + d;
    double* k3 = k2 + d;
    double* k4 = k3 + d;
    double* tmp = k4 + d;
    const std::span<double> s1(k1, d), s2(k2, d), s3(k3, d), s4(k4, d), stmp(tmp, d);
    switch (scheme_) {
      case Scheme::euler:
        field_->evaluate(t, x, s1);
        for (std::size_t i = 0; i < d; ++i) x[i] += h * k1[i];
        break;
      case Scheme::midpoint:
        field_->evaluate(t, x, s1);
        for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
        field_->evaluate(t + 0.5 * h, stmp, s2);
        for (std::size_t i = 0; i < d; ++i) x[i] += h * k2[i];
        break;
      case Scheme::rk4:
        field_->evaluate(t, x, s1);
        for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
        field_->evaluate(t + 0.5 * h, stmp, s2);
        for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
        field_->evaluate(t + 0.5 * h, stmp, s3);
        for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + h * k3[i];
        field_->evaluate(t + h, stmp, s4);
        for (std::size_t i = 0; i < d; ++i)
          x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        break;
    }
  }

  /// Velocity evaluations per step for this scheme.
  [[nodiscard]] int stages() const noexcept {
    switch (scheme_) {
      case Scheme::euler: return 1;
      case Scheme::midpoint: return 2;
      case Scheme::rk4: return 4;
    }
    return 0;
  }

 private:
  std::shared_ptr<const VelocityField> field_;
  Scheme scheme_;
  int steps_;
};

namespace detail {
inline void check_source_point(const TransportMap& map, std::span<const double> z) {
  if (z.size() != map.dimension())
    throw InvalidParameter("source point has dimension " + std::to_string(z.size()) +
                           ", map expects " + std::to_string(map.dimension()));
  if (!all_finite(z)) throw DomainError("source point has non-finite entries");
}
}  // namespace detail

/// x_1 = T(z). Throws IntegrationDiverged on a non-finite intermediate state.
inline Vector integrate(const TransportMap& map, std::span<const double> z) {
  detail::check_source_point(map, z);
  Vector x(z.begin(), z.end());
  Vector scratch(5 * x.size());
  for (int k = 0; k < map.steps(); ++k) {
    map.step(k, x, scratch);
    if (!all_finite(x)) throw IntegrationDiverged(k + 1);
  }
  return x;
}

struct TrajectoryPoint {
  double t;
  Vector x;
};

/// All N + 1 states on the time grid; the last equals integrate(map, z).
inline std::vector<TrajectoryPoint> integrate_trajectory(const TransportMap& map,
                                                         std::span<const double> z) {
  detail::check_source_point(map, z);
  std::vector<TrajectoryPoint> out;
  out.reserve(static_cast<std::size_t>(map.steps()) + 1);
  Vector x(z.begin(), z.end());
  Vector scratch(5 * x.size());
  out.push_back({0.0, x});
  for (int k = 0; k < map.steps(); ++k) {
    map.step(k, x, scratch);
    if (!all_finite(x)) throw IntegrationDiverged(k + 1);
    out.push_back({static_cast<double>(k + 1) / map.steps(), x});
  }
  return out;
}

}  // namespace essflow

#endif  // ESSFLOW_TRANSPORT_HPP
