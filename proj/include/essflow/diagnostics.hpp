#ifndef ESSFLOW_DIAGNOSTICS_HPP
#define ESSFLOW_DIAGNOSTICS_HPP

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "essflow/core.hpp"

namespace essflow {

namespace detail {
inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double a : v) s += a;
  return s / static_cast<double>(v.size());
}
inline double sample_variance(std::span<const double> v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double a : v) s += (a - m) * (a - m);
  return s / static_cast<double>(v.size() - 1);
}
}  // namespace detail

/// Split potential scale reduction for one scalar quantity. Each chain is
/// cut into halves and the halves are treated as separate chains. Needs at
/// least two chains of length >= 4; returns nullopt otherwise.
inline std::optional<double> split_rhat(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) return std::nullopt;
  std::size_t n = chains.front().size();
  for (const auto& c : chains) n = std::min(n, c.size());
  const std::size_t half = n / 2;
  if (half < 2) return std::nullopt;

  std::vector<double> means;
  std::vector<double> vars;
  for (const auto& c : chains) {
    for (std::size_t part = 0; part < 2; ++part) {
      std::span<const double> s(c.data() + part * half, half);
      means.push_back(detail::mean_of(s));
      vars.push_back(detail::sample_variance(s));
    }
  }
  const double len = static_cast<double>(half);
  const double within = detail::mean_of(vars);
  const double between = len * detail::sample_variance(means);
  if (!(within > 0.0)) return std::nullopt;
  const double pooled = (len - 1.0) / len * within + between / len;
  return std::sqrt(pooled / within);
}

/// Integrated autocorrelation time from the chain-averaged autocovariance,
/// truncated with Geyer's initial monotone positive sequence.
inline double integrated_autocorrelation_time(const std::vector<std::vector<double>>& chains) {
  if (chains.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t n = chains.front().size();
  for (const auto& c : chains) n = std::min(n, c.size());
  if (n < 4) return std::numeric_limits<double>::quiet_NaN();

  std::vector<double> means;
  for (const auto& c : chains) means.push_back(detail::mean_of(std::span(c.data(), n)));
  // Chain-averaged autocovariance at one lag; computed lazily because the
  // truncation usually stops after a few dozen lags.
  auto acov = [&](std::size_t lag) {
    double total = 0.0;
    for (std::size_t ch = 0; ch < chains.size(); ++ch) {
      const auto& c = chains[ch];
      double s = 0.0;
      for (std::size_t i = 0; i + lag < n; ++i) s += (c[i] - means[ch]) * (c[i + lag] - means[ch]);
      total += s / static_cast<double>(n);
    }
    return total / static_cast<double>(chains.size());
  };
  const double c0 = acov(0);
  if (!(c0 > 0.0)) return 1.0;

  // Sum of rho_{2k} + rho_{2k+1} pairs while positive, forced non-increasing.
  double tau = -1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    double pair = ((k == 0 ? c0 : acov(2 * k)) + acov(2 * k + 1)) / c0;
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);
    tau += 2.0 * pair;
    prev_pair = pair;
  }
  return std::max(tau, 1.0 / static_cast<double>(n));
}

}  // namespace essflow

#endif  // ESSFLOW_DIAGNOSTICS_HPP
