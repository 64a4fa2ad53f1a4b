#ifndef ESSFLOW_ORACLE_HPP
#define ESSFLOW_ORACLE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "essflow/core.hpp"
#include "essflow/histogram.hpp"
#include "essflow/parallel.hpp"
#include "essflow/potentials.hpp"
#include "essflow/transport.hpp"

namespace essflow {

class EmptyPosterior : public Error {
 public:
  EmptyPosterior()
      : Error(ErrorCategory::numeric, "grid posterior is empty: every cell has zero density") {}
};

inline constexpr std::size_t kMinOracleResolution = 32;

/// Normalized source posterior pi(z) ~ g(T(z)) N(z; 0, I) tabulated at the
/// cell centers of a 2D grid, with the data image of every center.
class GridPosterior {
 public:
  GridPosterior(GridSpec grid, Vector log_unnormalized, std::vector<Vector> images)
      : grid_(grid), log_density_(std::move(log_unnormalized)), images_(std::move(images)) {
    const double lse = log_sum_exp(log_density_);
    if (!std::isfinite(lse)) throw EmptyPosterior();
    log_normalizer_ = lse + std::log(grid_.cell_area());
    mass_.resize(log_density_.size());
    for (std::size_t c = 0; c < log_density_.size(); ++c) {
      log_density_[c] -= log_normalizer_;
      mass_[c] = std::exp(log_density_[c]) * grid_.cell_area();
    }
  }

  [[nodiscard]] const GridSpec& grid() const noexcept { return grid_; }
  /// Normalized log-density per cell.
  [[nodiscard]] const Vector& log_density() const noexcept { return log_density_; }
  /// log of the normalizing constant, including the cell area.
  [[nodiscard]] double log_normalizer() const noexcept { return log_normalizer_; }
  [[nodiscard]] const Vector& masses() const noexcept { return mass_; }
  [[nodiscard]] const std::vector<Vector>& images() const noexcept { return images_; }
  [[nodiscard]] double cell_area() const noexcept { return grid_.cell_area(); }

  [[nodiscard]] Histogram histogram() const { return {mass_, 0.0}; }

  /// Sum over cells of mass * f(center, image).
  template <typename F>
  [[nodiscard]] double expectation(F&& f) const {
    double s = 0.0;
    for (std::size_t c = 0; c < mass_.size(); ++c) {
      if (mass_[c] == 0.0) continue;
      const auto ctr = grid_.center(c);
      s += mass_[c] * f(std::span<const double>(ctr), std::span<const double>(images_[c]));
    }
    return s;
  }

  [[nodiscard]] Vector source_mean() const {
    return {expectation([](auto z, auto) { return z[0]; }),
            expectation([](auto z, auto) { return z[1]; })};
  }
  [[nodiscard]] Vector data_mean() const {
    return {expectation([](auto, auto x) { return x[0]; }),
            expectation([](auto, auto x) { return x[1]; })};
  }
  /// Per-dimension variance of z.
  [[nodiscard]] Vector source_variance() const {
    const Vector m = source_mean();
    return {expectation([&](auto z, auto) { return (z[0] - m[0]) * (z[0] - m[0]); }),
            expectation([&](auto z, auto) { return (z[1] - m[1]) * (z[1] - m[1]); })};
  }

 private:
  GridSpec grid_;
  Vector log_density_;
  double log_normalizer_ = 0.0;
  Vector mass_;
  std::vector<Vector> images_;
};

/// Tabulates log g(T(z)) + log N(z; 0, I) at every cell center.
template <SourcePotential P>
GridPosterior grid_posterior(const P& pullback, const GridSpec& grid, unsigned workers = 0) {
  grid.validate();
  if (pullback.dimension() != 2) throw InvalidParameter("grid oracle needs a 2D source space");
  if (grid.resolution < kMinOracleResolution)
    throw InvalidParameter("grid oracle resolution must be >= " + std::to_string(kMinOracleResolution));
  Vector logd(grid.cells(), kNegInf);
  std::vector<Vector> images(grid.cells());
  parallel_for(
      grid.cells(),
      [&](std::size_t c) {
        const auto ctr = grid.center(c);
        try {
          auto v = pullback.evaluate(ctr);
          logd[c] = v.log_g + standard_normal_log_density(ctr);
          images[c] = std::move(v.x);
        } catch (const IntegrationDiverged&) {
          images[c].assign(2, std::numeric_limits<double>::quiet_NaN());
        }
      },
      workers);
  return {grid, std::move(logd), std::move(images)};
}

/// Exact draws from the tabulated posterior: a cell by its mass, then a
/// uniform point inside it.
inline std::vector<Vector> rejection_sample(const GridPosterior& post, std::size_t n,
                                            std::uint64_t seed) {
  const auto& mass = post.masses();
  Vector cdf(mass.size());
  double acc = 0.0;
  for (std::size_t c = 0; c < mass.size(); ++c) cdf[c] = (acc += mass[c]);
  if (!(acc > 0.0)) throw EmptyPosterior();
  const auto& g = post.grid();
  Rng rng(seed);
  std::vector<Vector> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double u = rng.uniform() * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t c = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), mass.size() - 1);
    while (mass[c] == 0.0 && c > 0) --c;
    const std::size_t i = c / g.resolution;
    const std::size_t j = c % g.resolution;
    const double z0 = g.lower[0] + (static_cast<double>(i) + rng.uniform()) * g.width(0);
    const double z1 = g.lower[1] + (static_cast<double>(j) + rng.uniform()) * g.width(1);
    out.push_back({z0, z1});
  }
  return out;
}

// Jacobians and the change-of-variables identity

inline constexpr double kDefaultJacobianStencil = 1e-4;

struct JacobianEstimate {
  Eigen::MatrixXd matrix;
  double stencil = 0.0;
  double log_abs_det = 0.0;
  bool singular = false;
};

namespace detail {
inline JacobianEstimate finish_jacobian(Eigen::MatrixXd J, double stencil) {
  JacobianEstimate est{std::move(J), stencil, 0.0, false};
  if (!est.matrix.allFinite()) {
    est.singular = true;
    est.log_abs_det = std::numeric_limits<double>::quiet_NaN();
    return est;
  }
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(est.matrix);
  const Eigen::MatrixXd& U = lu.matrixLU();
  double s = 0.0;
  for (Eigen::Index i = 0; i < U.rows(); ++i) {
    const double a = std::abs(U(i, i));
    if (!(a > 0.0)) {
      est.singular = true;
      est.log_abs_det = kNegInf;
      return est;
    }
    s += std::log(a);
  }
  est.log_abs_det = s;
  return est;
}
}  // namespace detail

/// Central-difference Jacobian of T at z. The divisor is the representable
/// step (z_i + h) - (z_i - h), so linear maps come out exact up to rounding.
inline JacobianEstimate fd_jacobian(const TransportMap& map, std::span<const double> z,
                                    double stencil = kDefaultJacobianStencil) {
  if (!(stencil > 0.0)) throw InvalidParameter("stencil must be positive");
  const std::size_t d = z.size();
  Eigen::MatrixXd J(d, d);
  Vector zp(z.begin(), z.end());
  for (std::size_t j = 0; j < d; ++j) {
    const double hi = z[j] + stencil;
    const double lo = z[j] - stencil;
    zp[j] = hi;
    const Vector xp = integrate(map, zp);
    zp[j] = lo;
    const Vector xm = integrate(map, zp);
    zp[j] = z[j];
    for (std::size_t i = 0; i < d; ++i)
      J(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (xp[i] - xm[i]) / (hi - lo);
  }
  return detail::finish_jacobian(std::move(J), stencil);
}

/// Central-difference divergence of the velocity field at (t, x).
inline double fd_divergence(const VelocityField& field, double t, std::span<const double> x,
                            double stencil = kDefaultJacobianStencil) {
  const std::size_t d = x.size();
  Vector xp(x.begin(), x.end());
  Vector up(d), um(d);
  double div = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double hi = x[i] + stencil;
    const double lo = x[i] - stencil;
    xp[i] = hi;
    field.evaluate(t, xp, up);
    xp[i] = lo;
    field.evaluate(t, xp, um);
    xp[i] = x[i];
    div += (up[i] - um[i]) / (hi - lo);
  }
  return div;
}

struct LogDetTransport {
  Vector x;
  /// Time integral of div u along the path: log |det J_T(z)|.
  double log_abs_det = 0.0;
};

/// Integrates the state together with the log-volume change d/dt l = div u,
/// using the map's scheme and step count on the augmented system.
inline LogDetTransport integrate_log_det(const TransportMap& map, std::span<const double> z,
                                         double stencil = kDefaultJacobianStencil) {
  if (z.size() != map.dimension()) throw InvalidParameter("source point has the wrong dimension");
  const std::size_t d = z.size();
  const VelocityField& f = map.field();
  const int n = map.steps();
  const double h = 1.0 / n;
  Vector x(z.begin(), z.end());
  Vector tmp(d);
  std::array<Vector, 4> k;
  for (auto& v : k) v.resize(d);
  std::array<double, 4> dl{};
  double l = 0.0;
  for (int s = 0; s < n; ++s) {
    const double t = static_cast<double>(s) / n;
    f.evaluate(t, x, k[0]);
    dl[0] = fd_divergence(f, t, x, stencil);
    switch (map.scheme()) {
      case Scheme::euler:
        for (std::size_t i = 0; i < d; ++i) x[i] += h * k[0][i];
        l += h * dl[0];
        break;
      case Scheme::midpoint:
        for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * h * k[0][i];
        f.evaluate(t + 0.5 * h, tmp, k[1]);
        dl[1] = fd_divergence(f, t + 0.5 * h, tmp, stencil);
        for (std::size_t i = 0; i < d; ++i) x[i] += h * k[1][i];
        l += h * dl[1];
        break;
      case Scheme::rk4:
        for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * h * k[0][i];
        f.evaluate(t + 0.5 * h, tmp, k[1]);
        dl[1] = fd_divergence(f, t + 0.5 * h, tmp, stencil);
        for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * h * k[1][i];
        f.evaluate(t + 0.5 * h, tmp, k[2]);
        dl[2] = fd_divergence(f, t + 0.5 * h, tmp, stencil);
        for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + h * k[2][i];
        f.evaluate(t + h, tmp, k[3]);
        dl[3] = fd_divergence(f, t + h, tmp, stencil);
        for (std::size_t i = 0; i < d; ++i)
          x[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        l += h / 6.0 * (dl[0] + 2.0 * dl[1] + 2.0 * dl[2] + dl[3]);
        break;
    }
    if (!all_finite(x) || !std::isfinite(l)) throw IntegrationDiverged(s + 1);
  }
  return {std::move(x), l};
}

struct ChangeOfVariablesReport {
  double max_discrepancy = 0.0;
  std::size_t checked = 0;
  /// Indices of batch points skipped for a singular Jacobian.
  std::vector<std::size_t> skipped;
};

/// Compares two routes to the source posterior log-density at each z:
///   direct:    log g(T(z)) + log p(z)
///   data side: log pi(x) + log|det J| with x = T(z), where the data-space
///              density log pi(x) = log g(x) + log p(z) - log|det J| uses the
///              log-volume integral and the added term uses fd_jacobian.
/// Agreement means the Jacobian factors cancel as they should.
inline ChangeOfVariablesReport verify_change_of_variables(const TransportMap& map,
                                                          const Potential& potential,
                                                          std::span<const Vector> zs,
                                                          double stencil = kDefaultJacobianStencil) {
  ChangeOfVariablesReport rep;
  for (std::size_t b = 0; b < zs.size(); ++b) {
    const auto& z = zs[b];
    const JacobianEstimate jac = fd_jacobian(map, z, stencil);
    if (jac.singular) {
      rep.skipped.push_back(b);
      continue;
    }
    const double log_p = standard_normal_log_density(z);
    const double direct = potential.log(integrate(map, z)) + log_p;
    const LogDetTransport ld = integrate_log_det(map, z, stencil);
    const double data_density = potential.log(ld.x) + log_p - ld.log_abs_det;
    const double data_side = data_density + jac.log_abs_det;
    rep.max_discrepancy = std::max(rep.max_discrepancy, std::abs(direct - data_side));
    ++rep.checked;
  }
  return rep;
}

// Sample-versus-oracle metrics

/// TV distance between the (weighted) sample histogram and the grid masses.
/// Samples off the grid count fully as disagreement.
inline double tv_distance(std::span<const Vector> samples, std::span<const double> weights,
                          const GridPosterior& post) {
  return tv_distance(histogram(samples, weights, post.grid()), post.histogram());
}

inline double tv_distance(std::span<const Vector> samples, const GridPosterior& post) {
  return tv_distance(samples, {}, post);
}

/// TV distance at a coarser histogram resolution than the oracle grid.
inline double tv_distance(std::span<const Vector> samples, std::span<const double> weights,
                          const GridPosterior& post, std::size_t resolution) {
  const GridSpec coarse = with_resolution(post.grid(), resolution);
  return tv_distance(histogram(samples, weights, coarse),
                     coarsen(post.histogram(), post.grid(), resolution));
}

struct TvDecayPoint {
  std::size_t length = 0;
  double tv = 0.0;
  /// Bootstrap standard error from resampling whole chains.
  double standard_error = 0.0;
};

struct TvDecay {
  std::vector<TvDecayPoint> points;
  /// Each TV is at most the previous one plus twice the standard error of
  /// their difference.
  bool nonincreasing = true;
};

/// TV distance between the pooled first `length` states of every chain and
/// the oracle, for each requested length. Chains are resampled with
/// replacement for the error bars.
inline TvDecay tv_decay(std::span<const std::vector<Vector>> chains, const GridPosterior& post,
                        std::span<const std::size_t> lengths, std::size_t resolution,
                        std::size_t replicates, std::uint64_t seed) {
  if (chains.size() < 2) throw InvalidParameter("TV decay needs at least two chains");
  const GridSpec coarse = with_resolution(post.grid(), resolution);
  const Histogram target = coarsen(post.histogram(), post.grid(), resolution);
  TvDecay out;
  std::vector<double> reps_prev;
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> picks(replicates, std::vector<std::size_t>(chains.size()));
  for (auto& p : picks)
    for (auto& i : p) i = rng.index(chains.size());
  auto pooled_tv = [&](std::span<const std::size_t> which, std::size_t len) {
    std::vector<Vector> pts;
    for (auto c : which) {
      if (chains[c].size() < len) throw InvalidParameter("chain shorter than requested length");
      pts.insert(pts.end(), chains[c].begin(), chains[c].begin() + static_cast<std::ptrdiff_t>(len));
    }
    return tv_distance(histogram(pts, coarse), target);
  };
  std::vector<std::size_t> all(chains.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  for (std::size_t len : lengths) {
    TvDecayPoint pt{len, pooled_tv(all, len), 0.0};
    std::vector<double> reps(replicates);
    double s = 0.0, s2 = 0.0;
    for (std::size_t r = 0; r < replicates; ++r) {
      reps[r] = pooled_tv(picks[r], len);
      s += reps[r];
      s2 += reps[r] * reps[r];
    }
    const double b = static_cast<double>(replicates);
    pt.standard_error = std::sqrt(std::max(0.0, (s2 - s * s / b) / (b - 1.0)));
    if (!out.points.empty()) {
      // The same resampled chain sets are used at every length, so the
      // replicate differences give the error of the difference directly.
      double ds = 0.0, ds2 = 0.0;
      for (std::size_t r = 0; r < replicates; ++r) {
        const double dlt = reps[r] - reps_prev[r];
        ds += dlt;
        ds2 += dlt * dlt;
      }
      const double se_diff = std::sqrt(std::max(0.0, (ds2 - ds * ds / b) / (b - 1.0)));
      if (pt.tv > out.points.back().tv + 2.0 * se_diff) out.nonincreasing = false;
    }
    reps_prev = std::move(reps);
    out.points.push_back(pt);
  }
  return out;
}

struct MomentReport {
  std::size_t dimension = 0;
  double effective_size = 0.0;
  Vector mean;
  Vector mean_se;
  Vector variance;
  Vector variance_se;
  /// Row-major d x d covariance.
  Vector covariance;
};

/// Means, variances and covariance with Monte Carlo standard errors that
/// treat the samples as independent. Weighted reports use self-normalized
/// weights and the Kish effective size in place of n.
inline MomentReport moment_report(std::span<const Vector> samples,
                                  std::span<const double> weights = {}) {
  if (samples.size() < 2) throw InvalidParameter("moment report needs at least 2 samples");
  if (!weights.empty() && weights.size() != samples.size())
    throw InvalidParameter("weights and samples differ in length");
  const std::size_t n = samples.size();
  const std::size_t d = samples.front().size();
  Vector w(n, 1.0);
  if (!weights.empty()) w.assign(weights.begin(), weights.end());
  double total = 0.0, total2 = 0.0;
  for (double a : w) {
    total += a;
    total2 += a * a;
  }
  if (!(total > 0.0)) throw DomainError("weights sum to zero");

  MomentReport r;
  r.dimension = d;
  r.effective_size = total * total / total2;
  r.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) r.mean[k] += w[i] * samples[i][k];
  for (auto& m : r.mean) m /= total;
  r.covariance.assign(d * d, 0.0);
  Vector m4(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a) {
      const double da = samples[i][a] - r.mean[a];
      m4[a] += w[i] * da * da * da * da;
      for (std::size_t b = 0; b < d; ++b)
        r.covariance[a * d + b] += w[i] * da * (samples[i][b] - r.mean[b]);
    }
  // Unbiased for equal weights: divide by total - total2 / total.
  const double denom = total - total2 / total;
  for (auto& c : r.covariance) c /= denom;
  r.variance.resize(d);
  r.mean_se.resize(d);
  r.variance_se.resize(d);
  for (std::size_t k = 0; k < d; ++k) {
    r.variance[k] = r.covariance[k * d + k];
    r.mean_se[k] = std::sqrt(r.variance[k] / r.effective_size);
    const double kurt = m4[k] / total;
    r.variance_se[k] = std::sqrt(std::max(0.0, kurt - r.variance[k] * r.variance[k]) / r.effective_size);
  }
  return r;
}

}  // namespace essflow

#endif  // ESSFLOW_ORACLE_HPP
