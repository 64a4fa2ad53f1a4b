#ifndef ESSFLOW_ESS_HPP
#define ESSFLOW_ESS_HPP

#include <cassert>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "essflow/core.hpp"
#include "essflow/diagnostics.hpp"
#include "essflow/parallel.hpp"
#include "essflow/potentials.hpp"

namespace essflow {

struct ChainCounters {
  std::uint64_t steps = 0;
  std::uint64_t potential_evaluations = 0;
  std::uint64_t shrinks = 0;
  std::uint64_t diverged_proposals = 0;
  std::uint64_t max_shrinks_in_step = 0;
};

/// Current source point with its cached data image and log-potential.
/// `log_g` always equals the pullback evaluated at `z`.
struct ChainState {
  Vector z;
  Vector x;
  double log_g = kNegInf;
  Rng rng;
  ChainCounters counters;
};

/// Angular bracket; always contains 0, the current state.
struct Bracket {
  double lower = 0.0;
  double upper = 0.0;
  [[nodiscard]] double width() const noexcept { return upper - lower; }
};

/// Moves the bracket end on the same side of 0 as `theta` onto `theta`.
inline Bracket shrink_bracket(double theta, Bracket b) {
  if (theta == 0.0) throw InvalidParameter("cannot shrink at theta = 0 (would exclude the current state)");
  if (!(theta >= b.lower && theta <= b.upper))
    throw InvalidParameter("theta " + format_double(theta) + " outside bracket [" +
                           format_double(b.lower) + ", " + format_double(b.upper) + "]");
  if (theta < 0.0) b.lower = theta;
  else b.upper = theta;
  return b;
}

class EssStalled : public Error {
 public:
  EssStalled(double bracket_width, double log_gap, std::optional<std::uint64_t> step = std::nullopt)
      : Error(ErrorCategory::numeric, message(bracket_width, log_gap, step)),
        bracket_width_(bracket_width),
        log_gap_(log_gap),
        step_(step) {}

  [[nodiscard]] double bracket_width() const noexcept { return bracket_width_; }
  /// Slice threshold minus the best log-potential seen on the ellipse.
  [[nodiscard]] double log_gap() const noexcept { return log_gap_; }
  [[nodiscard]] std::optional<std::uint64_t> step() const noexcept { return step_; }
  [[nodiscard]] EssStalled at_step(std::uint64_t step) const {
    return {bracket_width_, log_gap_, step};
  }

 private:
  static std::string message(double w, double gap, std::optional<std::uint64_t> step) {
    std::string s = "elliptical slice search stalled";
    if (step) s += " at step " + std::to_string(*step);
    return s + ": bracket width " + format_double(w) + ", log-potential gap " + format_double(gap) +
           " (is the potential nearly manifold-constrained?)";
  }
  double bracket_width_;
  double log_gap_;
  std::optional<std::uint64_t> step_;
};

inline constexpr std::size_t kDefaultMaxShrinks = 1000;

struct StepRecord {
  std::uint64_t evaluations = 0;
  std::uint64_t shrinks = 0;
  double theta = 0.0;
  double log_threshold = kNegInf;
};

/// One elliptical slice sampling transition targeting g(T(z)) N(z; 0, I).
///
/// Draws nu ~ N(0, I) and u ~ U(0, 1) once, then searches the ellipse
/// z cos(theta) + nu sin(theta), shrinking the angular bracket towards 0 after
/// every rejection. A proposal whose transport diverges counts as a rejection.
template <SourcePotential P>
StepRecord ess_step(ChainState& state, const P& pullback,
                    std::size_t max_shrinks = kDefaultMaxShrinks) {
  if (!std::isfinite(state.log_g))
    throw InvalidParameter("ess_step needs a finite cached log-potential");
#ifndef NDEBUG
  assert(pullback.evaluate(state.z).log_g == state.log_g);
#endif
  const std::size_t d = state.z.size();
  Vector nu = state.rng.normal_vector(d);
  const double log_threshold = state.log_g + std::log(state.rng.uniform());

  double theta = state.rng.uniform(0.0, kTwoPi);
  Bracket bracket{theta - kTwoPi, theta};
  StepRecord rec{0, 0, theta, log_threshold};
  double best = kNegInf;
  Vector proposal(d);

  for (;;) {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    for (std::size_t i = 0; i < d; ++i) proposal[i] = state.z[i] * c + nu[i] * s;

    ++rec.evaluations;
    std::optional<PullbackValue> value;
    try {
      value = pullback.evaluate(proposal);
    } catch (const IntegrationDiverged&) {
      ++state.counters.diverged_proposals;
    }
    if (value && value->log_g > log_threshold) {
      state.z = proposal;
      state.x = std::move(value->x);
      state.log_g = value->log_g;
      rec.theta = theta;
      break;
    }
    if (value) best = std::max(best, value->log_g);
    if (rec.shrinks >= max_shrinks) {
      state.counters.potential_evaluations += rec.evaluations;
      state.counters.shrinks += rec.shrinks;
      throw EssStalled(bracket.width(), log_threshold - best);
    }
    bracket = shrink_bracket(theta, bracket);
    ++rec.shrinks;
    theta = state.rng.uniform(bracket.lower, bracket.upper);
  }

  assert(state.log_g > log_threshold);
  ++state.counters.steps;
  state.counters.potential_evaluations += rec.evaluations;
  state.counters.shrinks += rec.shrinks;
  state.counters.max_shrinks_in_step = std::max(state.counters.max_shrinks_in_step, rec.shrinks);
  return rec;
}

inline constexpr int kMaxInitAttempts = 100;

/// Chain state at `z0`, or at a prior draw when `z0` is empty. Prior draws
/// are repeated until the log-potential is finite.
template <SourcePotential P>
ChainState init_chain_state(const P& pullback, Rng rng, const std::optional<Vector>& z0 = {}) {
  ChainState st{{}, {}, kNegInf, std::move(rng), {}};
  if (z0) {
    if (z0->size() != pullback.dimension())
      throw InvalidParameter("initial point has the wrong dimension");
    auto v = pullback.evaluate(*z0);
    if (!std::isfinite(v.log_g))
      throw InvalidParameter("log-potential at the initial point is not finite");
    st.z = *z0;
    st.x = std::move(v.x);
    st.log_g = v.log_g;
    return st;
  }
  for (int attempt = 0; attempt < kMaxInitAttempts; ++attempt) {
    Vector z = st.rng.normal_vector(pullback.dimension());
    try {
      auto v = pullback.evaluate(z);
      if (std::isfinite(v.log_g)) {
        st.z = std::move(z);
        st.x = std::move(v.x);
        st.log_g = v.log_g;
        return st;
      }
    } catch (const IntegrationDiverged&) {
    }
  }
  throw InvalidParameter("no prior draw with finite log-potential in " +
                         std::to_string(kMaxInitAttempts) + " attempts");
}

struct ChainConfig {
  std::size_t steps = 1200;
  std::size_t burn_in = 200;
  std::size_t thinning = 10;
  std::size_t chains = 1;
  std::size_t max_shrinks = kDefaultMaxShrinks;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps == 0) throw InvalidParameter("chain steps must be positive");
    if (burn_in >= steps) throw InvalidParameter("burn-in must be smaller than the step count");
    if (thinning == 0) throw InvalidParameter("thinning factor must be >= 1");
    if (chains == 0) throw InvalidParameter("chain count must be >= 1");
    if (max_shrinks < 16) throw InvalidParameter("max shrinks must be >= 16");
  }

  /// Steps burn_in, burn_in + thinning, ... below `steps` (0-based).
  [[nodiscard]] std::size_t retained_count() const noexcept {
    return (steps - burn_in + thinning - 1) / thinning;
  }
};

/// Retained states of one chain.
struct SampleSet {
  std::vector<std::uint64_t> step_indices;
  std::vector<Vector> z;
  std::vector<Vector> x;
  std::vector<double> log_g;
  ChainCounters counters;
  std::uint64_t seed = 0;
  std::size_t chain_index = 0;

  [[nodiscard]] std::size_t size() const noexcept { return z.size(); }
};

/// Chain `chain_index` of a run; its generator is seeded from
/// derive_seed(config.seed, chain_index).
template <SourcePotential P>
SampleSet run_chain(const P& pullback, const ChainConfig& config, std::size_t chain_index = 0,
                    const std::optional<Vector>& init = {}) {
  config.validate();
  const std::uint64_t seed = derive_seed(config.seed, chain_index);
  ChainState state = init_chain_state(pullback, Rng(seed), init);
  SampleSet out;
  out.seed = seed;
  out.chain_index = chain_index;
  const std::size_t n = config.retained_count();
  out.step_indices.reserve(n);
  out.z.reserve(n);
  out.x.reserve(n);
  out.log_g.reserve(n);
  for (std::size_t step = 0; step < config.steps; ++step) {
    try {
      ess_step(state, pullback, config.max_shrinks);
    } catch (const EssStalled& e) {
      throw e.at_step(step);
    }
    if (step >= config.burn_in && (step - config.burn_in) % config.thinning == 0) {
      out.step_indices.push_back(step);
      out.z.push_back(state.z);
      out.x.push_back(state.x);
      out.log_g.push_back(state.log_g);
    }
  }
  out.counters = state.counters;
  return out;
}

struct ChainDiagnostics {
  /// Split R-hat per source dimension; empty optionals with a single chain.
  std::vector<std::optional<double>> rhat;
  /// Pooled integrated autocorrelation time per source dimension, in
  /// retained-sample units.
  std::vector<double> iat;
};

struct ParallelRun {
  std::vector<SampleSet> chains;
  ChainDiagnostics diagnostics;
};

inline ChainDiagnostics diagnose(const std::vector<SampleSet>& chains) {
  ChainDiagnostics diag;
  if (chains.empty() || chains.front().z.empty()) return diag;
  const std::size_t d = chains.front().z.front().size();
  for (std::size_t k = 0; k < d; ++k) {
    std::vector<std::vector<double>> traces;
    for (const auto& c : chains) {
      std::vector<double> tr;
      tr.reserve(c.size());
      for (const auto& z : c.z) tr.push_back(z[k]);
      traces.push_back(std::move(tr));
    }
    diag.rhat.push_back(split_rhat(traces));
    diag.iat.push_back(integrated_autocorrelation_time(traces));
  }
  return diag;
}

/// Runs `config.chains` independent chains over the shared pullback, using
/// up to `workers` threads (0 picks the hardware concurrency). Results are
/// ordered by chain index and do not depend on the thread count.
template <SourcePotential P>
ParallelRun run_parallel_chains(const P& pullback, const ChainConfig& config,
                                const std::optional<Vector>& init = {}, unsigned workers = 0) {
  config.validate();
  ParallelRun run;
  run.chains.resize(config.chains);
  parallel_for(
      config.chains, [&](std::size_t i) { run.chains[i] = run_chain(pullback, config, i, init); },
      workers);
  run.diagnostics = diagnose(run.chains);
  return run;
}

// Gradient-ascent baseline

class BaselineDiverged : public Error {
 public:
  explicit BaselineDiverged(std::size_t iteration)
      : Error(ErrorCategory::numeric,
              "baseline gradient ascent produced a non-finite gradient at iteration " +
                  std::to_string(iteration)) {}
};

inline constexpr double kDefaultStencil = 1e-4;

/// Central-difference gradient of log g(T(z)); 2d pullback evaluations.
template <SourcePotential P>
Vector fd_gradient(const P& pullback, std::span<const double> z, double stencil = kDefaultStencil) {
  Vector g(z.size());
  Vector zp(z.begin(), z.end());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double hi = z[i] + stencil;
    const double lo = z[i] - stencil;
    zp[i] = hi;
    const double fp = pullback.evaluate(zp).log_g;
    zp[i] = lo;
    const double fm = pullback.evaluate(zp).log_g;
    zp[i] = z[i];
    g[i] = (fp - fm) / (hi - lo);
  }
  return g;
}

/// Source-space gradient ascent z <- z + step * grad log g(T(z)) with
/// finite-difference gradients. Returns all iterates, starting with `init`.
template <SourcePotential P>
std::vector<Vector> baseline_gradient_ascent(std::span<const double> init, const P& pullback,
                                             double step, std::size_t iterations,
                                             double stencil = kDefaultStencil) {
  if (!(step > 0.0)) throw InvalidParameter("baseline step size must be positive");
  if (!(stencil > 0.0)) throw InvalidParameter("stencil must be positive");
  std::vector<Vector> trace;
  trace.reserve(iterations + 1);
  trace.emplace_back(init.begin(), init.end());
  Vector z(init.begin(), init.end());
  for (std::size_t it = 0; it < iterations; ++it) {
    const Vector g = fd_gradient(pullback, z, stencil);
    if (!all_finite(g)) throw BaselineDiverged(it);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += step * g[i];
    trace.push_back(z);
  }
  return trace;
}

}  // namespace essflow

#endif  // ESSFLOW_ESS_HPP
