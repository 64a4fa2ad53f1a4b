#ifndef ESSFLOW_SOURCE_TRANSFORM_HPP
#define ESSFLOW_SOURCE_TRANSFORM_HPP

#include <cmath>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "essflow/core.hpp"

namespace essflow {

struct StandardNormalMarginal {};

struct UniformMarginal {
  double lower = 0.0;
  double upper = 1.0;
};

struct LogNormalMarginal {
  double log_mean = 0.0;
  double log_scale = 1.0;
};

using Marginal = std::variant<StandardNormalMarginal, UniformMarginal, LogNormalMarginal>;

/// Per-dimension map between a native marginal and the standard normal,
/// z_i = Phi^-1(F_i(v_i)).
class SourceTransform {
 public:
  explicit SourceTransform(std::vector<Marginal> marginals) : marginals_(std::move(marginals)) {
    for (std::size_t i = 0; i < marginals_.size(); ++i) {
      if (const auto* u = std::get_if<UniformMarginal>(&marginals_[i])) {
        if (!(u->upper > u->lower))
          throw InvalidParameter("uniform marginal " + std::to_string(i) + " needs lower < upper");
      } else if (const auto* l = std::get_if<LogNormalMarginal>(&marginals_[i])) {
        if (!(l->log_scale > 0.0))
          throw InvalidParameter("log-normal marginal " + std::to_string(i) +
                                 " needs positive scale");
      }
    }
  }

  [[nodiscard]] std::size_t dimension() const noexcept { return marginals_.size(); }
  [[nodiscard]] const std::vector<Marginal>& marginals() const noexcept { return marginals_; }

 private:
  std::vector<Marginal> marginals_;
};

namespace detail {

inline const boost::math::normal_distribution<double>& unit_normal() {
  static const boost::math::normal_distribution<double> n(0.0, 1.0);
  return n;
}

inline void check_transform_dimension(const SourceTransform& tr, std::size_t n) {
  if (tr.dimension() != n)
    throw InvalidParameter("vector has dimension " + std::to_string(n) + ", transform expects " +
                           std::to_string(tr.dimension()));
}

}  // namespace detail

inline Vector gaussianize(const SourceTransform& transform, std::span<const double> v) {
  detail::check_transform_dimension(transform, v.size());
  Vector z(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& m = transform.marginals()[i];
    if (std::holds_alternative<StandardNormalMarginal>(m)) {
      if (!std::isfinite(v[i]))
        throw DomainError("dimension " + std::to_string(i) + " is not finite");
      z[i] = v[i];
    } else if (const auto* u = std::get_if<UniformMarginal>(&m)) {
      if (!(v[i] > u->lower && v[i] < u->upper))
        throw DomainError("dimension " + std::to_string(i) + " value " + format_double(v[i]) +
                          " outside open uniform support");
      const double p = (v[i] - u->lower) / (u->upper - u->lower);
      z[i] = boost::math::quantile(detail::unit_normal(), p);
    } else {
      const auto& l = std::get<LogNormalMarginal>(m);
      if (!(v[i] > 0.0) || !std::isfinite(v[i]))
        throw DomainError("dimension " + std::to_string(i) + " value " + format_double(v[i]) +
                          " outside log-normal support");
      // Phi^-1(Phi((ln v - m) / s)) collapses to the standardized log.
      z[i] = (std::log(v[i]) - l.log_mean) / l.log_scale;
    }
  }
  return z;
}

inline Vector degaussianize(const SourceTransform& transform, std::span<const double> z) {
  detail::check_transform_dimension(transform, z.size());
  Vector v(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!std::isfinite(z[i])) throw DomainError("dimension " + std::to_string(i) + " is not finite");
    const auto& m = transform.marginals()[i];
    if (std::holds_alternative<StandardNormalMarginal>(m)) {
      v[i] = z[i];
    } else if (const auto* u = std::get_if<UniformMarginal>(&m)) {
      const double p = boost::math::cdf(detail::unit_normal(), z[i]);
      v[i] = u->lower + p * (u->upper - u->lower);
    } else {
      const auto& l = std::get<LogNormalMarginal>(m);
      v[i] = std::exp(l.log_mean + l.log_scale * z[i]);
    }
  }
  return v;
}

}  // namespace essflow

#endif  // ESSFLOW_SOURCE_TRANSFORM_HPP
