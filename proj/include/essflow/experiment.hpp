#ifndef ESSFLOW_EXPERIMENT_HPP
#define ESSFLOW_EXPERIMENT_HPP

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "essflow/config.hpp"
#include "essflow/ess.hpp"
#include "essflow/field_io.hpp"
#include "essflow/flow_training.hpp"
#include "essflow/multifidelity.hpp"
#include "essflow/oracle.hpp"
#include "essflow/serialization.hpp"

#ifndef ESSFLOW_VERSION
#define ESSFLOW_VERSION "unknown"
#endif

namespace essflow {

inline constexpr const char* kVersion = ESSFLOW_VERSION;

/// Progress messages on stderr unless quiet.
class Logger {
 public:
  explicit Logger(bool quiet = false) : quiet_(quiet) {}
  void info(const std::string& msg) const {
    if (!quiet_) std::cerr << "[essflow] " << msg << '\n';
  }
  void warn(const std::string& msg) const { std::cerr << "[essflow] warning: " << msg << '\n'; }

 private:
  bool quiet_;
};

/// Files produced by a command, held in memory until the run finishes so a
/// failure leaves no partial output.
class RunOutputs {
 public:
  void add(std::string name, std::string content) { files_.emplace_back(std::move(name), std::move(content)); }
  void add(std::string name, const std::vector<unsigned char>& bytes) {
    files_.emplace_back(std::move(name), std::string(bytes.begin(), bytes.end()));
  }
  [[nodiscard]] const std::vector<std::pair<std::string, std::string>>& files() const noexcept {
    return files_;
  }
  [[nodiscard]] const std::string* find(std::string_view name) const {
    for (const auto& [n, c] : files_)
      if (n == name) return &c;
    return nullptr;
  }

 private:
  std::vector<std::pair<std::string, std::string>> files_;
};

/// Wall-clock timings and work counters for the manifest.
class RunRecord {
 public:
  class Phase {
   public:
    Phase(RunRecord& rec, std::string name)
        : rec_(rec), name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}
    ~Phase() {
      rec_.timings_.emplace_back(
          name_, std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count());
    }
    Phase(const Phase&) = delete;
    Phase& operator=(const Phase&) = delete;

   private:
    RunRecord& rec_;
    std::string name_;
    std::chrono::steady_clock::time_point start_;
  };

  [[nodiscard]] Phase phase(std::string name) { return {*this, std::move(name)}; }
  void count_evaluations(std::uint64_t evals, int steps_per_eval) {
    potential_evaluations_ += evals;
    ode_steps_ += evals * static_cast<std::uint64_t>(steps_per_eval);
  }
  void count_ode_steps(std::uint64_t n) { ode_steps_ += n; }

  [[nodiscard]] Json timings() const {
    Json t = Json::object();
    for (const auto& [n, s] : timings_) t[n] = s;
    return t;
  }
  [[nodiscard]] Json counters() const {
    return {{"potential_evaluations", potential_evaluations_}, {"ode_steps", ode_steps_}};
  }

 private:
  std::vector<std::pair<std::string, double>> timings_;
  std::uint64_t potential_evaluations_ = 0;
  std::uint64_t ode_steps_ = 0;
};

struct RunResult {
  RunOutputs outputs;
  Json report;
  RunRecord record;
};

namespace detail {

inline std::string chain_file_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "chain_%02zu.csv", i);
  return buf;
}

inline ChainConfig chain_config(const ExperimentConfig& c) {
  ChainConfig cc = c.chain;
  cc.seed = c.seed;
  return cc;
}

inline Json vec_json(std::span<const double> v) { return Json(std::vector<double>(v.begin(), v.end())); }

inline std::vector<Vector> first_coordinates(const std::vector<SampleSet>& chains, bool data) {
  std::vector<Vector> out;
  for (const auto& c : chains) {
    const auto& src = data ? c.x : c.z;
    out.insert(out.end(), src.begin(), src.end());
  }
  return out;
}

inline void tally(RunRecord& rec, const std::vector<SampleSet>& chains, int steps) {
  for (const auto& c : chains) rec.count_evaluations(c.counters.potential_evaluations, steps);
}

}  // namespace detail

// Commands. Each assumes validate_config has passed.

inline RunResult cmd_train_prior(const ExperimentConfig& c, const Logger& log) {
  RunResult r;
  const ToyDataset data = make_dataset(c.dataset.name, c.dataset.size, c.dataset.noise, c.dataset.seed);
  TrainConfig tc = c.training;
  tc.seed = c.seed;
  log.info("training on " + c.dataset.name + " (" + std::to_string(data.points.size()) + " points, " +
           std::to_string(tc.iterations) + " iterations)");
  TrainResult tr = [&] {
    auto ph = r.record.phase("train");
    return train(data, tc);
  }();
  const VelocityField field(tr.field);
  r.outputs.add("model.efvf", encode_field(field));
  r.outputs.add("loss_trace.csv", loss_csv(tr.loss_trace));

  // Fraction of transported prior draws inside the inflated data box.
  const TransportMap map(std::make_shared<const VelocityField>(field), c.transport.scheme, c.transport.steps);
  double lo[2] = {1e300, 1e300}, hi[2] = {-1e300, -1e300};
  for (const auto& p : data.points)
    for (int a = 0; a < 2 && a < static_cast<int>(p.size()); ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  std::size_t inside = 0;
  const std::size_t probe = 5000;
  {
    auto ph = r.record.phase("prior_check");
    Rng rng(derive_seed(c.seed, 7));
    for (std::size_t i = 0; i < probe; ++i) {
      const Vector x = integrate(map, rng.normal_vector(map.dimension()));
      bool in = true;
      for (int a = 0; a < 2 && a < static_cast<int>(x.size()); ++a)
        in = in && x[a] >= lo[a] - 0.5 && x[a] <= hi[a] + 0.5;
      inside += in;
    }
    r.record.count_ode_steps(probe * static_cast<std::uint64_t>(map.steps()));
  }
  const std::size_t window = std::max<std::size_t>(1, std::min<std::size_t>(1000, tr.loss_trace.size() / 10));
  r.report = {{"initial_loss", running_average(std::span(tr.loss_trace).first(window), window)},
              {"final_loss", running_average(tr.loss_trace, window)},
              {"running_average_window", window},
              {"prior_inside_box_fraction", static_cast<double>(inside) / probe},
              {"model_checksum", hex64(fnv1a64(*r.outputs.find("model.efvf")))}};
  r.outputs.add("report.json", r.report.dump(2) + "\n");
  return r;
}

inline RunResult cmd_sample(const ExperimentConfig& c, const Logger& log) {
  RunResult r;
  const Problem p = make_problem(c);
  const ChainConfig cc = detail::chain_config(c);
  log.info("running " + std::to_string(cc.chains) + " chain(s) of " + std::to_string(cc.steps) + " steps");
  ParallelRun run = [&] {
    auto ph = r.record.phase("sample");
    return run_parallel_chains(p.pullback, cc);
  }();
  detail::tally(r.record, run.chains, p.map.steps());
  Json chains = Json::array();
  for (const auto& ch : run.chains) {
    r.outputs.add(detail::chain_file_name(ch.chain_index), sample_csv(ch));
    chains.push_back({{"file", detail::chain_file_name(ch.chain_index)},
                      {"seed", ch.seed},
                      {"retained", ch.size()},
                      {"counters", to_json(ch.counters)}});
  }
  r.report = {{"seed", c.seed},
              {"chain_config", to_json(cc)},
              {"transport", {{"scheme", to_string(p.map.scheme())}, {"steps", p.map.steps()}}},
              {"chains", chains},
              {"diagnostics", to_json(run.diagnostics)}};
  r.outputs.add("metadata.json", r.report.dump(2) + "\n");
  return r;
}

inline RunResult cmd_oracle_compare(const ExperimentConfig& c, const Logger& log) {
  RunResult r;
  const Problem p = make_problem(c);
  log.info("building grid oracle at resolution " + std::to_string(c.oracle.grid.resolution));
  const GridPosterior post = [&] {
    auto ph = r.record.phase("oracle");
    return grid_posterior(p.pullback, c.oracle.grid);
  }();
  r.record.count_evaluations(post.masses().size(), p.map.steps());

  ChainConfig cc = detail::chain_config(c);
  cc.thinning = 1;
  cc.steps = cc.burn_in + c.oracle.lengths.back();
  log.info("running " + std::to_string(cc.chains) + " chain(s) of " + std::to_string(cc.steps) + " steps");
  ParallelRun run = [&] {
    auto ph = r.record.phase("sample");
    return run_parallel_chains(p.pullback, cc);
  }();
  detail::tally(r.record, run.chains, p.map.steps());

  std::vector<std::vector<Vector>> zs;
  for (const auto& ch : run.chains) zs.push_back(ch.z);
  TvDecay decay = [&] {
    auto ph = r.record.phase("metrics");
    return tv_decay(zs, post, c.oracle.lengths, c.oracle.tv_resolution, c.oracle.bootstrap,
                    derive_seed(c.seed, 11));
  }();
  Json tv = Json::array();
  for (const auto& pt : decay.points)
    tv.push_back({{"length", pt.length}, {"tv", pt.tv}, {"bootstrap_se", pt.standard_error}});

  const std::vector<Vector> pooled = detail::first_coordinates(run.chains, false);
  const MomentReport m = moment_report(pooled);
  const Vector om = post.source_mean();
  const Vector ov = post.source_variance();
  Json moments = Json::array();
  for (std::size_t k = 0; k < 2; ++k)
    moments.push_back({{"dimension", k + 1},
                       {"chain_mean", m.mean[k]},
                       {"oracle_mean", om[k]},
                       {"mean_delta", m.mean[k] - om[k]},
                       {"mean_se", m.mean_se[k]},
                       {"chain_variance", m.variance[k]},
                       {"oracle_variance", ov[k]},
                       {"variance_delta", m.variance[k] - ov[k]},
                       {"variance_se", m.variance_se[k]}});
  r.report = {{"seed", c.seed},
              {"chain_config", to_json(cc)},
              {"oracle", {{"resolution", c.oracle.grid.resolution},
                          {"lower", c.oracle.grid.lower[0]},
                          {"upper", c.oracle.grid.upper[0]},
                          {"log_normalizer", post.log_normalizer()}}},
              {"tv_resolution", c.oracle.tv_resolution},
              {"tv", tv},
              {"tv_nonincreasing", decay.nonincreasing},
              {"moments", moments},
              {"diagnostics", to_json(run.diagnostics)}};
  r.outputs.add("grid.csv", grid_csv(post));
  for (const auto& ch : run.chains) r.outputs.add(detail::chain_file_name(ch.chain_index), sample_csv(ch));
  r.outputs.add("report.json", r.report.dump(2) + "\n");
  return r;
}

struct MultifidelityOutcome {
  WeightedSampleSet weighted;
  std::vector<SampleSet> chains;
};

/// Coarse-map chains followed by fine-map reweighting.
inline MultifidelityOutcome run_multifidelity(const Problem& p, const Potential& potential,
                                              const ChainConfig& cc, int coarse_steps,
                                              int fine_steps) {
  const FidelityPair pair(p.field, p.map.scheme(), coarse_steps, fine_steps);
  const PullbackPotential coarse(potential, pair.coarse());
  ParallelRun run = run_parallel_chains(coarse, cc);
  SampleSet pooled = pool(run.chains);
  return {reweight(pooled, pair, potential), std::move(run.chains)};
}

inline RunResult cmd_multifidelity(const ExperimentConfig& c, const Logger& log) {
  RunResult r;
  const Problem p = make_problem(c);
  const auto& mf = c.multifidelity;
  const ChainConfig cc = detail::chain_config(c);
  log.info("coarse chains at N=" + std::to_string(mf.coarse_steps) + ", reweighting at N=" +
           std::to_string(mf.fine_steps));
  MultifidelityOutcome out = [&] {
    auto ph = r.record.phase("sample_and_reweight");
    return run_multifidelity(p, p.potential, cc, mf.coarse_steps, mf.fine_steps);
  }();
  detail::tally(r.record, out.chains, mf.coarse_steps);
  r.record.count_ode_steps(out.weighted.fine_evaluations * static_cast<std::uint64_t>(mf.fine_steps));
  const WeightedSampleSet& w = out.weighted;

  Json warnings = Json::array();
  if (w.degenerate) {
    warnings.push_back("Kish ESS below 1%: weights are degenerate");
    log.warn("Kish ESS " + format_double(w.kish) + " is below 1%");
  }
  if (w.fine_diverged > 0)
    warnings.push_back(std::to_string(w.fine_diverged) + " fine-map integrations diverged");

  const Estimate mean = weighted_estimate(w, MeanStatistic{}, SampleSpace::fine_data,
                                          derive_seed(c.seed, 21), mf.bootstrap);
  Vector unweighted(mean.value.size(), 0.0);
  for (const auto& x : w.coarse_x)
    for (std::size_t k = 0; k < x.size(); ++k) unweighted[k] += x[k] / static_cast<double>(w.size());

  r.report = {{"seed", c.seed},
              {"chain_config", to_json(cc)},
              {"coarse_steps", mf.coarse_steps},
              {"fine_steps", mf.fine_steps},
              {"samples", w.size()},
              {"fine_evaluations", w.fine_evaluations},
              {"kish_ess", w.kish},
              {"kish_ess_percent", 100.0 * w.kish},
              {"weighted_mean", detail::vec_json(mean.value)},
              {"weighted_mean_se", detail::vec_json(mean.standard_error)},
              {"unweighted_coarse_mean", detail::vec_json(unweighted)},
              {"warnings", warnings}};

  if (p.map.dimension() == 2) {
    auto ph = r.record.phase("fine_oracle");
    const PullbackPotential fine(p.potential, p.map.with_steps(mf.fine_steps));
    const GridPosterior post = grid_posterior(fine, c.oracle.grid);
    r.record.count_evaluations(post.masses().size(), mf.fine_steps);
    const Vector om = post.data_mean();
    Json z = Json::array();
    for (std::size_t k = 0; k < 2; ++k) z.push_back((mean.value[k] - om[k]) / mean.standard_error[k]);
    r.report["fine_oracle_mean"] = detail::vec_json(om);
    r.report["weighted_minus_oracle_in_se"] = z;
    r.outputs.add("fine_grid.csv", grid_csv(post));
  }

  if (mf.sharpen > 0.0) {
    auto ph = r.record.phase("sharpness_comparison");
    const Potential sharp = p.potential.rescaled(1.0 / mf.sharpen);
    Json reps = Json::array();
    std::size_t lower = 0;
    for (std::size_t k = 0; k < mf.repetitions; ++k) {
      ChainConfig rc = cc;
      rc.seed = derive_seed(c.seed, 1000 + k);
      const auto a = run_multifidelity(p, p.potential, rc, mf.coarse_steps, mf.fine_steps);
      const auto b = run_multifidelity(p, sharp, rc, mf.coarse_steps, mf.fine_steps);
      detail::tally(r.record, a.chains, mf.coarse_steps);
      detail::tally(r.record, b.chains, mf.coarse_steps);
      lower += b.weighted.kish < a.weighted.kish;
      reps.push_back({{"seed", rc.seed}, {"kish_default", a.weighted.kish}, {"kish_sharp", b.weighted.kish}});
    }
    r.report["sharpness_comparison"] = {{"factor", mf.sharpen},
                                        {"repetitions", reps},
                                        {"sharp_lower_count", lower}};
  }

  r.outputs.add("weighted_samples.csv", weighted_csv(w));
  r.outputs.add("report.json", r.report.dump(2) + "\n");
  return r;
}

inline std::string_view branch_name(MoonBranch b) { return b == MoonBranch::upper ? "upper" : "lower"; }

inline RunResult cmd_moons_demo(const ExperimentConfig& c, const Logger& log) {
  RunResult r;
  const Problem p = make_problem(c);
  const auto& mc = c.moons;
  std::string scatter = "method,trial,x1,x2,branch\n";
  auto scatter_row = [&](std::string_view method, std::size_t trial, std::span<const double> x) {
    scatter += std::string(method) + ',' + std::to_string(trial) + ',' + format_double(x[0]) + ',' +
               format_double(x[1]) + ',' + std::string(branch_name(moon_branch(x))) + '\n';
  };

  // Prior silhouette against the training data.
  double prior_tv = 0.0;
  {
    auto ph = r.record.phase("prior");
    log.info("pushing " + std::to_string(mc.prior_samples) + " prior draws through the map");
    const ToyDataset data = make_dataset(c.dataset.name, c.dataset.size, c.dataset.noise, c.dataset.seed);
    std::vector<Vector> xs(mc.prior_samples);
    Rng rng(derive_seed(c.seed, 31));
    std::vector<Vector> zs(mc.prior_samples);
    for (auto& z : zs) z = rng.normal_vector(2);
    parallel_for(xs.size(), [&](std::size_t i) { xs[i] = integrate(p.map, zs[i]); });
    r.record.count_ode_steps(xs.size() * static_cast<std::uint64_t>(p.map.steps()));
    const GridSpec g = dataset_grid(data.points, 0.5, mc.kde_resolution);
    prior_tv = tv_distance(histogram(xs, g), kde_histogram(data.points, g, mc.kde_bandwidth));
    for (std::size_t i = 0; i < xs.size(); ++i) scatter_row("prior", i, xs[i]);
  }

  const GridPosterior post = [&] {
    auto ph = r.record.phase("oracle");
    return grid_posterior(p.pullback, c.oracle.grid);
  }();
  r.record.count_evaluations(post.masses().size(), p.map.steps());
  const double oracle_upper =
      post.expectation([](auto, auto x) { return moon_branch(x) == MoonBranch::upper ? 1.0 : 0.0; });

  // Paired trials from shared initial points.
  std::size_t baseline_switch = 0, ess_switch = 0, baseline_failed = 0, ess_failed = 0;
  std::size_t baseline_upper = 0, ess_upper = 0;
  {
    auto ph = r.record.phase("paired_trials");
    log.info("running " + std::to_string(mc.trials) + " paired trials");
    Rng init_rng(derive_seed(c.seed, 32));
    for (std::size_t t = 0; t < mc.trials; ++t) {
      Vector z0 = init_rng.normal_vector(2);
      const MoonBranch b0 = moon_branch(integrate(p.map, z0));
      try {
        const auto trace = baseline_gradient_ascent(z0, p.pullback, mc.baseline_step, mc.baseline_iterations);
        r.record.count_evaluations(4 * mc.baseline_iterations, p.map.steps());
        const Vector x = integrate(p.map, trace.back());
        const MoonBranch b = moon_branch(x);
        baseline_switch += b != b0;
        baseline_upper += b == MoonBranch::upper;
        scatter_row("baseline", t, x);
      } catch (const Error& e) {
        ++baseline_failed;
        log.warn("baseline trial " + std::to_string(t) + " failed: " + e.what());
      }
      try {
        ChainConfig tc;
        tc.steps = mc.ess_steps;
        tc.burn_in = mc.ess_steps - 1;
        tc.thinning = 1;
        tc.max_shrinks = c.chain.max_shrinks;
        tc.seed = derive_seed(c.seed, 33);
        const SampleSet s = run_chain(p.pullback, tc, t, z0);
        r.record.count_evaluations(s.counters.potential_evaluations, p.map.steps());
        const MoonBranch b = moon_branch(s.x.back());
        ess_switch += b != b0;
        ess_upper += b == MoonBranch::upper;
        scatter_row("ess", t, s.x.back());
      } catch (const Error& e) {
        ++ess_failed;
        log.warn("ESS trial " + std::to_string(t) + " failed: " + e.what());
      }
    }
  }

  // Long pooled chains against the oracle.
  const ChainConfig cc = detail::chain_config(c);
  ParallelRun run = [&] {
    auto ph = r.record.phase("chains");
    log.info("running " + std::to_string(cc.chains) + " chain(s) of " + std::to_string(cc.steps) + " steps");
    return run_parallel_chains(p.pullback, cc);
  }();
  detail::tally(r.record, run.chains, p.map.steps());
  const auto pooled_z = detail::first_coordinates(run.chains, false);
  const auto pooled_x = detail::first_coordinates(run.chains, true);
  double chain_upper = 0.0;
  for (const auto& x : pooled_x) chain_upper += moon_branch(x) == MoonBranch::upper;
  chain_upper /= static_cast<double>(pooled_x.size());
  for (const auto& ch : run.chains)
    for (const auto& x : ch.x) scatter_row("ess-chain", ch.chain_index, x);

  auto frac = [](std::size_t a, std::size_t n) { return n ? static_cast<double>(a) / n : 0.0; };
  const std::size_t nb = mc.trials - baseline_failed, ne = mc.trials - ess_failed;
  std::string table = "method,upper,lower,oracle_upper,oracle_lower\n";
  auto table_row = [&](std::string_view m, double up) {
    table += std::string(m) + ',' + format_double(up) + ',' + format_double(1.0 - up) + ',' +
             format_double(oracle_upper) + ',' + format_double(1.0 - oracle_upper) + '\n';
  };
  table_row("baseline", frac(baseline_upper, nb));
  table_row("ess", frac(ess_upper, ne));
  table_row("ess-chain", chain_upper);

  r.report = {{"seed", c.seed},
              {"trials", mc.trials},
              {"baseline", {{"switch_fraction", frac(baseline_switch, nb)},
                            {"upper_fraction", frac(baseline_upper, nb)},
                            {"failed", baseline_failed}}},
              {"ess", {{"switch_fraction", frac(ess_switch, ne)},
                       {"upper_fraction", frac(ess_upper, ne)},
                       {"failed", ess_failed}}},
              {"pooled_chains", {{"samples", pooled_z.size()},
                                 {"upper_fraction", chain_upper},
                                 {"tv_to_oracle", tv_distance(pooled_z, post)}}},
              {"oracle", {{"resolution", c.oracle.grid.resolution}, {"upper_mass", oracle_upper}}},
              {"prior_tv_to_kde", prior_tv},
              {"kde_bandwidth", mc.kde_bandwidth},
              {"diagnostics", to_json(run.diagnostics)}};
  r.outputs.add("scatter.csv", std::move(scatter));
  r.outputs.add("branch_occupancy.csv", std::move(table));
  r.outputs.add("report.json", r.report.dump(2) + "\n");
  return r;
}

inline RunResult run_command(const ExperimentConfig& c, const Logger& log) {
  switch (c.kind) {
    case ExperimentKind::train_prior: return cmd_train_prior(c, log);
    case ExperimentKind::sample: return cmd_sample(c, log);
    case ExperimentKind::oracle_compare: return cmd_oracle_compare(c, log);
    case ExperimentKind::multifidelity: return cmd_multifidelity(c, log);
    case ExperimentKind::moons_demo: return cmd_moons_demo(c, log);
  }
  throw ConfigurationError("unhandled experiment kind");
}

/// Writes every output and then manifest.json into `dir`.
inline Json write_run(const ExperimentConfig& c, const RunResult& r, const std::filesystem::path& dir) {
  Json outputs = Json::array();
  for (const auto& [name, content] : r.outputs.files()) {
    write_file_atomic(dir / name, content);
    outputs.push_back({{"file", name},
                       {"bytes", content.size()},
                       {"fnv1a64", hex64(fnv1a64(content))}});
  }
  Json config = Json::object();
  for (const auto& [k, v] : c.echo) config[k] = v;
  Json manifest = {{"version", kVersion},
                   {"experiment", to_string(c.kind)},
                   {"seed", c.seed},
                   {"config", config},
                   {"timings_seconds", r.record.timings()},
                   {"counters", r.record.counters()},
                   {"outputs", outputs}};
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

/// Validates, runs and writes one experiment. Returns the manifest.
inline Json run_experiment(const ExperimentConfig& c, const Logger& log) {
  validate_config(c);
  const RunResult r = run_command(c, log);
  return write_run(c, r, c.output);
}

}  // namespace essflow

#endif  // ESSFLOW_EXPERIMENT_HPP
