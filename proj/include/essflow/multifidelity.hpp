#ifndef ESSFLOW_MULTIFIDELITY_HPP
#define ESSFLOW_MULTIFIDELITY_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "essflow/core.hpp"
#include "essflow/ess.hpp"
#include "essflow/histogram.hpp"
#include "essflow/parallel.hpp"
#include "essflow/potentials.hpp"
#include "essflow/transport.hpp"

namespace essflow {

/// Coarse and fine discretizations of one velocity field under one scheme.
class FidelityPair {
 public:
  FidelityPair(std::shared_ptr<const VelocityField> field, Scheme scheme, int coarse_steps,
               int fine_steps)
      : coarse_(field, scheme, coarse_steps), fine_(field, scheme, fine_steps) {
    if (fine_steps < coarse_steps)
      throw InvalidParameter("fine step count (" + std::to_string(fine_steps) +
                             ") must not be below the coarse step count (" +
                             std::to_string(coarse_steps) + ")");
  }

  [[nodiscard]] const TransportMap& coarse() const noexcept { return coarse_; }
  [[nodiscard]] const TransportMap& fine() const noexcept { return fine_; }

 private:
  TransportMap coarse_;
  TransportMap fine_;
};

class DegenerateWeights : public Error {
 public:
  explicit DegenerateWeights(const std::string& what)
      : Error(ErrorCategory::numeric, "degenerate importance weights: " + what) {}
};

/// Kish ESS below this fraction is flagged in run metadata.
inline constexpr double kDegenerateEssFraction = 0.01;

/// (sum w)^2 / (sum w^2) / n. Weights need not be normalized.
inline double kish_ess(std::span<const double> weights) {
  if (weights.empty()) throw DomainError("Kish ESS of an empty weight vector");
  double top = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("weights must be finite and nonnegative");
    top = std::max(top, w);
  }
  if (!(top > 0.0)) throw DomainError("all weights are zero");
  // Scaling by the largest weight keeps equal weights at exactly 1.
  double s = 0.0;
  double s2 = 0.0;
  for (double w : weights) {
    const double r = w / top;
    s += r;
    s2 += r * r;
  }
  return s * s / s2 / static_cast<double>(weights.size());
}

struct WeightedSampleSet {
  std::vector<Vector> z;
  std::vector<Vector> coarse_x;
  std::vector<Vector> fine_x;
  /// log g(T_fine(z)) - log g(T_coarse(z)).
  Vector log_weights;
  /// Self-normalized weights; sum to 1.
  Vector weights;
  double kish = 0.0;
  bool degenerate = false;
  int coarse_steps = 0;
  int fine_steps = 0;
  std::size_t fine_evaluations = 0;
  /// Samples whose fine transport diverged; they get zero weight.
  std::size_t fine_diverged = 0;

  [[nodiscard]] std::size_t size() const noexcept { return z.size(); }
};

/// Concatenates chains in chain order.
inline SampleSet pool(std::span<const SampleSet> chains) {
  SampleSet out;
  for (const auto& c : chains) {
    out.step_indices.insert(out.step_indices.end(), c.step_indices.begin(), c.step_indices.end());
    out.z.insert(out.z.end(), c.z.begin(), c.z.end());
    out.x.insert(out.x.end(), c.x.begin(), c.x.end());
    out.log_g.insert(out.log_g.end(), c.log_g.begin(), c.log_g.end());
  }
  return out;
}

/// Importance weights correcting samples drawn under the coarse map towards
/// the fine-map target. Runs the fine transport once per retained sample and
/// never inside a chain.
inline WeightedSampleSet reweight(const SampleSet& samples, const FidelityPair& pair,
                                  const Potential& potential, unsigned workers = 0) {
  if (samples.z.empty()) throw DomainError("no samples to reweight");
  const std::size_t n = samples.size();
  WeightedSampleSet w;
  w.z = samples.z;
  w.coarse_x.resize(n);
  w.fine_x.resize(n);
  w.log_weights.assign(n, kNegInf);
  w.coarse_steps = pair.coarse().steps();
  w.fine_steps = pair.fine().steps();
  std::vector<char> diverged(n, 0);

  parallel_for(
      n,
      [&](std::size_t i) {
        w.coarse_x[i] = samples.x.size() == n ? samples.x[i] : integrate(pair.coarse(), samples.z[i]);
        const double coarse = potential.log(w.coarse_x[i]);
        try {
          w.fine_x[i] = integrate(pair.fine(), samples.z[i]);
        } catch (const IntegrationDiverged&) {
          diverged[i] = 1;
          w.fine_x[i].assign(samples.z[i].size(), std::numeric_limits<double>::quiet_NaN());
          return;
        }
        w.log_weights[i] = potential.log(w.fine_x[i]) - coarse;
      },
      workers);
  w.fine_evaluations = n;
  w.fine_diverged = static_cast<std::size_t>(std::count(diverged.begin(), diverged.end(), 1));

  const double lse = log_sum_exp(w.log_weights);
  if (!std::isfinite(lse)) throw DegenerateWeights("every raw log-weight is -inf");
  w.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.weights[i] = std::exp(w.log_weights[i] - lse);
  w.kish = kish_ess(w.weights);
  w.degenerate = w.kish < kDegenerateEssFraction;
  return w;
}

// Weighted estimates with bootstrap errors

struct MeanStatistic {};
struct VarianceStatistic {};
struct HistogramStatistic {
  GridSpec grid;
};
using Statistic = std::variant<MeanStatistic, VarianceStatistic, HistogramStatistic>;

/// Which point cloud a statistic is computed on.
enum class SampleSpace { source, fine_data, coarse_data };

struct Estimate {
  Vector value;
  Vector standard_error;
  /// Bootstrap replicates with nonzero total weight; the others are skipped.
  std::size_t replicates_used = 0;
};

inline constexpr std::size_t kBootstrapReplicates = 1000;

namespace detail {

/// Weights relative to the largest, so equal log-weights give exactly 1.
inline Vector relative_weights(std::span<const double> log_weights) {
  double top = kNegInf;
  for (double lw : log_weights) top = std::max(top, lw);
  Vector r(log_weights.size(), 0.0);
  if (!std::isfinite(top)) return r;
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = std::exp(log_weights[i] - top);
  return r;
}

/// Self-normalized statistic over the multiset `idx` of samples; nullopt
/// when the selected weights sum to zero.
inline std::optional<Vector> weighted_statistic(const Statistic& stat,
                                                std::span<const Vector> points,
                                                std::span<const double> rel,
                                                std::span<const std::size_t> idx) {
  double total = 0.0;
  for (auto i : idx) total += rel[i];
  if (!(total > 0.0)) return std::nullopt;
  const std::size_t d = points.front().size();
  auto mean = [&] {
    Vector m(d, 0.0);
    for (auto i : idx)
      if (rel[i] > 0.0)
        for (std::size_t k = 0; k < d; ++k) m[k] += rel[i] * points[i][k];
    for (auto& v : m) v /= total;
    return m;
  };
  if (std::holds_alternative<MeanStatistic>(stat)) return mean();
  if (std::holds_alternative<VarianceStatistic>(stat)) {
    const Vector m = mean();
    Vector v(d, 0.0);
    for (auto i : idx)
      if (rel[i] > 0.0)
        for (std::size_t k = 0; k < d; ++k) v[k] += rel[i] * (points[i][k] - m[k]) * (points[i][k] - m[k]);
    for (auto& a : v) a /= total;
    return v;
  }
  const auto& grid = std::get<HistogramStatistic>(stat).grid;
  if (d != 2) throw InvalidParameter("histogram statistic needs 2D points");
  Vector h(grid.cells() + 1, 0.0);
  for (auto i : idx) {
    if (!(rel[i] > 0.0)) continue;
    h[grid.locate(points[i])] += rel[i];
  }
  for (auto& a : h) a /= total;
  return h;
}

}  // namespace detail

/// Self-normalized importance estimate of `stat` with bootstrap standard
/// errors from `replicates` resamples of the (point, weight) pairs.
///
/// Variance is the weighted population variance. The histogram value holds
/// the cell masses followed by the off-grid mass.
inline Estimate weighted_estimate(std::span<const Vector> points, std::span<const double> log_weights,
                                  const Statistic& stat, std::uint64_t seed,
                                  std::size_t replicates = kBootstrapReplicates) {
  if (points.empty()) throw DomainError("weighted estimate of an empty sample");
  if (points.size() != log_weights.size()) throw InvalidParameter("points and weights differ in length");
  const std::size_t n = points.size();
  const Vector rel = detail::relative_weights(log_weights);
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  auto value = detail::weighted_statistic(stat, points, rel, all);
  if (!value) throw DegenerateWeights("every weight is zero");

  Estimate est;
  est.value = std::move(*value);
  const std::size_t m = est.value.size();
  Vector sum(m, 0.0), sum2(m, 0.0);
  Rng rng(seed);
  std::vector<std::size_t> idx(n);
  for (std::size_t r = 0; r < replicates; ++r) {
    for (auto& i : idx) i = rng.index(n);
    auto rep = detail::weighted_statistic(stat, points, rel, idx);
    if (!rep) continue;
    ++est.replicates_used;
    for (std::size_t k = 0; k < m; ++k) {
      const double dlt = (*rep)[k] - est.value[k];
      sum[k] += dlt;
      sum2[k] += dlt * dlt;
    }
  }
  est.standard_error.assign(m, std::numeric_limits<double>::infinity());
  if (est.replicates_used >= 2) {
    const double b = static_cast<double>(est.replicates_used);
    for (std::size_t k = 0; k < m; ++k) {
      const double mu = sum[k] / b;
      est.standard_error[k] = std::sqrt(std::max(0.0, (sum2[k] / b - mu * mu) * b / (b - 1.0)));
    }
  }
  return est;
}

inline Estimate weighted_estimate(const WeightedSampleSet& w, const Statistic& stat,
                                  SampleSpace space, std::uint64_t seed,
                                  std::size_t replicates = kBootstrapReplicates) {
  const auto& pts = space == SampleSpace::source ? w.z
                    : space == SampleSpace::fine_data ? w.fine_x
                                                      : w.coarse_x;
  return weighted_estimate(pts, w.log_weights, stat, seed, replicates);
}

}  // namespace essflow

#endif  // ESSFLOW_MULTIFIDELITY_HPP
