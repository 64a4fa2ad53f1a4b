#ifndef ESSFLOW_CONFIG_HPP
#define ESSFLOW_CONFIG_HPP

#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "essflow/core.hpp"
#include "essflow/ess.hpp"
#include "essflow/field_io.hpp"
#include "essflow/flow_training.hpp"
#include "essflow/histogram.hpp"
#include "essflow/multifidelity.hpp"
#include "essflow/oracle.hpp"
#include "essflow/potentials.hpp"
#include "essflow/serialization.hpp"
#include "essflow/transport.hpp"

namespace essflow {

enum class ExperimentKind { train_prior, sample, oracle_compare, multifidelity, moons_demo };

inline std::string_view to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::train_prior: return "train-prior";
    case ExperimentKind::sample: return "sample";
    case ExperimentKind::oracle_compare: return "oracle-compare";
    case ExperimentKind::multifidelity: return "multifidelity";
    case ExperimentKind::moons_demo: return "moons-demo";
  }
  return "?";
}

inline std::optional<ExperimentKind> parse_experiment_kind(std::string_view s) {
  for (auto k : {ExperimentKind::train_prior, ExperimentKind::sample, ExperimentKind::oracle_compare,
                 ExperimentKind::multifidelity, ExperimentKind::moons_demo})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

struct DatasetSpec {
  std::string name = "two-moons";
  std::size_t size = 20000;
  double noise = 0.05;
  std::uint64_t seed = 0;
};

enum class FieldSource { model, zero, affine };

struct TransportSpec {
  FieldSource source = FieldSource::model;
  std::filesystem::path model;
  std::size_t dimension = 2;
  Vector mean;
  double scale = 1.0;
  Scheme scheme = Scheme::rk4;
  int steps = kDefaultTransportSteps;
};

struct PotentialSpec {
  PotentialKind kind = PotentialKind::constant;
  Vector y;
  double sigma = 1.0;
  double grid = 0.0;
  ObservationOperator op = IdentityObservation{};
};

struct OracleSpec {
  GridSpec grid{{-5.0, -5.0}, {5.0, 5.0}, 128};
  std::size_t tv_resolution = 32;
  std::vector<std::size_t> lengths{250, 500, 1000, 2000, 4000};
  std::size_t bootstrap = 200;
};

struct MultifidelitySpec {
  int coarse_steps = 50;
  int fine_steps = 1000;
  std::size_t bootstrap = kBootstrapReplicates;
  /// When > 0, also compares Kish ESS against the potential with sigma
  /// divided by this factor over `repetitions` paired seeds.
  double sharpen = 0.0;
  std::size_t repetitions = 10;
};

struct MoonsSpec {
  std::size_t trials = 200;
  double baseline_step = 0.005;
  std::size_t baseline_iterations = 500;
  std::size_t ess_steps = 100;
  std::size_t prior_samples = 50000;
  std::size_t kde_resolution = 64;
  double kde_bandwidth = 0.03;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::sample;
  std::uint64_t seed = 0;
  std::filesystem::path output = "out";
  std::filesystem::path base_dir = ".";
  DatasetSpec dataset;
  TrainConfig training;
  TransportSpec transport;
  PotentialSpec potential;
  ChainConfig chain;
  OracleSpec oracle;
  MultifidelitySpec multifidelity;
  MoonsSpec moons;
  /// Every key as read, for the manifest.
  std::map<std::string, std::string> echo;
};

// Parsing helpers

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

template <typename T>
T parse_number(const std::string& key, std::string_view text) {
  const std::string s = trim(text);
  T v{};
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty())
    throw ConfigurationError(key + ": cannot parse '" + s + "' as a number");
  if constexpr (std::is_floating_point_v<T>)
    if (!std::isfinite(v)) throw ConfigurationError(key + ": value must be finite");
  return v;
}

}  // namespace detail

/// Reads values out of one INI tree, remembering which keys were used so
/// that leftovers can be rejected.
class ConfigReader {
 public:
  explicit ConfigReader(const boost::property_tree::ptree& tree) : tree_(tree) {
    for (const auto& [section, body] : tree_) {
      if (body.empty() && !body.data().empty())
        throw ConfigurationError("key '" + section + "' must live inside a [section]");
      for (const auto& [key, value] : body) {
        const std::string full = section + "." + key;
        echo_[full] = detail::trim(value.data());
        unused_.insert(full);
      }
    }
  }

  [[nodiscard]] std::optional<std::string> get(const std::string& key) {
    auto it = echo_.find(key);
    if (it == echo_.end()) return std::nullopt;
    unused_.erase(key);
    return it->second;
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (auto v = get(key)) out = detail::parse_number<T>(key, *v);
  }
  void read(const std::string& key, std::string& out) {
    if (auto v = get(key)) out = *v;
  }
  void read(const std::string& key, Vector& out) {
    if (auto v = get(key)) {
      out.clear();
      for (const auto& item : detail::split_list(*v)) out.push_back(detail::parse_number<double>(key, item));
    }
  }
  void read(const std::string& key, std::vector<std::size_t>& out) {
    if (auto v = get(key)) {
      out.clear();
      for (const auto& item : detail::split_list(*v))
        out.push_back(detail::parse_number<std::size_t>(key, item));
    }
  }

  /// Throws on the first key no reader asked for.
  void reject_unused() const {
    if (!unused_.empty()) throw ConfigurationError("unknown key '" + *unused_.begin() + "'");
  }

  [[nodiscard]] const std::map<std::string, std::string>& echo() const noexcept { return echo_; }

 private:
  const boost::property_tree::ptree& tree_;
  std::map<std::string, std::string> echo_;
  std::set<std::string> unused_;
};

namespace detail {

inline ObservationOperator read_operator(ConfigReader& r) {
  std::string name = "identity";
  r.read("potential.operator", name);
  if (name == "identity") return IdentityObservation{};
  if (name == "projection") {
    CoordinateProjection p;
    r.read("potential.indices", p.indices);
    return p;
  }
  if (name == "linear") {
    LinearObservation l;
    r.read("potential.rows", l.rows);
    r.read("potential.matrix", l.matrix);
    r.read("potential.offset", l.offset);
    if (l.rows == 0 || l.matrix.size() % l.rows != 0)
      throw ConfigurationError("potential.matrix length must be a multiple of potential.rows");
    l.cols = l.matrix.size() / l.rows;
    return l;
  }
  if (name == "scalar-linear" || name == "norm") {
    ScalarProperty s;
    s.form = name == "norm" ? ScalarProperty::Form::norm : ScalarProperty::Form::linear;
    r.read("potential.weights", s.weights);
    Vector off;
    r.read("potential.offset", off);
    if (off.size() > 1) throw ConfigurationError("scalar property offset must be a single number");
    if (!off.empty()) s.offset = off[0];
    return s;
  }
  if (name == "pairwise") {
    std::vector<std::size_t> flat;
    std::size_t points = 0, point_dim = 0;
    r.read("potential.pairs", flat);
    r.read("potential.points", points);
    r.read("potential.point_dim", point_dim);
    if (flat.size() % 2 != 0) throw ConfigurationError("potential.pairs needs an even number of indices");
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < flat.size(); i += 2) pairs.emplace_back(flat[i], flat[i + 1]);
    return pairwise_distance_observation(std::move(pairs), points, point_dim);
  }
  throw ConfigurationError("unknown observation operator '" + name + "'");
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace detail

/// Parses INI text. Relative paths are resolved against `base_dir`. When
/// `expected` is set, experiment.kind may be omitted but must match if given.
inline ExperimentConfig parse_config(const std::string& text,
                                     const std::filesystem::path& base_dir = ".",
                                     std::optional<ExperimentKind> expected = std::nullopt) {
  boost::property_tree::ptree tree;
  try {
    std::istringstream in(text);
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigurationError(std::string("malformed config: ") + e.what());
  }
  ConfigReader r(tree);
  ExperimentConfig c;
  c.base_dir = base_dir;

  std::string kind;
  r.read("experiment.kind", kind);
  if (kind.empty()) {
    if (!expected) throw ConfigurationError("experiment.kind is required");
    c.kind = *expected;
  } else {
    auto k = parse_experiment_kind(kind);
    if (!k) throw ConfigurationError("unknown experiment kind '" + kind + "'");
    if (expected && *k != *expected)
      throw ConfigurationError("config is for '" + kind + "', not '" + std::string(to_string(*expected)) + "'");
    c.kind = *k;
  }
  r.read("experiment.seed", c.seed);
  if (auto o = r.get("experiment.output")) c.output = detail::resolve(base_dir, *o);

  r.read("dataset.name", c.dataset.name);
  r.read("dataset.size", c.dataset.size);
  r.read("dataset.noise", c.dataset.noise);
  r.read("dataset.seed", c.dataset.seed);

  std::vector<std::size_t> hidden;
  r.read("training.hidden", hidden);
  if (!hidden.empty()) c.training.hidden = hidden;
  r.read("training.batch", c.training.batch_size);
  r.read("training.iterations", c.training.iterations);
  r.read("training.learning_rate", c.training.learning_rate);
  r.read("training.beta1", c.training.beta1);
  r.read("training.beta2", c.training.beta2);
  r.read("training.epsilon", c.training.epsilon);

  std::string field = "model";
  r.read("transport.field", field);
  if (field == "model") c.transport.source = FieldSource::model;
  else if (field == "zero") c.transport.source = FieldSource::zero;
  else if (field == "affine") c.transport.source = FieldSource::affine;
  else throw ConfigurationError("unknown transport.field '" + field + "'");
  if (auto m = r.get("transport.model")) c.transport.model = detail::resolve(base_dir, *m);
  r.read("transport.dimension", c.transport.dimension);
  r.read("transport.mean", c.transport.mean);
  r.read("transport.scale", c.transport.scale);
  std::string scheme = std::string(to_string(c.transport.scheme));
  r.read("transport.scheme", scheme);
  auto s = parse_scheme(scheme);
  if (!s) throw ConfigurationError("unknown transport.scheme '" + scheme + "'");
  c.transport.scheme = *s;
  r.read("transport.steps", c.transport.steps);

  std::string pk = "constant";
  r.read("potential.kind", pk);
  auto pkind = parse_potential_kind(pk);
  if (!pkind) throw ConfigurationError("unknown potential.kind '" + pk + "'");
  c.potential.kind = *pkind;
  r.read("potential.y", c.potential.y);
  r.read("potential.sigma", c.potential.sigma);
  r.read("potential.grid", c.potential.grid);
  if (c.potential.kind != PotentialKind::constant) c.potential.op = detail::read_operator(r);

  r.read("chain.steps", c.chain.steps);
  r.read("chain.burn_in", c.chain.burn_in);
  r.read("chain.thinning", c.chain.thinning);
  r.read("chain.chains", c.chain.chains);
  r.read("chain.max_shrinks", c.chain.max_shrinks);

  double lo = c.oracle.grid.lower[0], hi = c.oracle.grid.upper[0];
  r.read("oracle.lower", lo);
  r.read("oracle.upper", hi);
  c.oracle.grid.lower = {lo, lo};
  c.oracle.grid.upper = {hi, hi};
  r.read("oracle.resolution", c.oracle.grid.resolution);
  r.read("oracle.tv_resolution", c.oracle.tv_resolution);
  r.read("oracle.lengths", c.oracle.lengths);
  r.read("oracle.bootstrap", c.oracle.bootstrap);

  r.read("multifidelity.coarse_steps", c.multifidelity.coarse_steps);
  r.read("multifidelity.fine_steps", c.multifidelity.fine_steps);
  r.read("multifidelity.bootstrap", c.multifidelity.bootstrap);
  r.read("multifidelity.sharpen", c.multifidelity.sharpen);
  r.read("multifidelity.repetitions", c.multifidelity.repetitions);

  r.read("moons.trials", c.moons.trials);
  r.read("moons.baseline_step", c.moons.baseline_step);
  r.read("moons.baseline_iterations", c.moons.baseline_iterations);
  r.read("moons.ess_steps", c.moons.ess_steps);
  r.read("moons.prior_samples", c.moons.prior_samples);
  r.read("moons.kde_resolution", c.moons.kde_resolution);
  r.read("moons.kde_bandwidth", c.moons.kde_bandwidth);

  r.reject_unused();
  c.echo = r.echo();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path,
                                    std::optional<ExperimentKind> expected = std::nullopt) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec))
    throw ConfigurationError("config file not found: " + path.string());
  return parse_config(read_text_file(path), path.parent_path(), expected);
}

/// Builds the potential described by the config.
inline Potential make_potential(const PotentialSpec& p) {
  switch (p.kind) {
    case PotentialKind::constant: return Potential::constant();
    case PotentialKind::gaussian_observation: return Potential::gaussian(p.op, p.y, p.sigma);
    case PotentialKind::exponential_tilt: return Potential::exponential_tilt(p.op, p.sigma);
    case PotentialKind::quantized_observation: return Potential::quantized(p.op, p.y, p.sigma, p.grid);
  }
  throw ConfigurationError("unhandled potential kind");
}

/// Loads or constructs the velocity field named by the transport spec.
inline std::shared_ptr<const VelocityField> make_field(const TransportSpec& t) {
  switch (t.source) {
    case FieldSource::zero: return zero_velocity(t.dimension);
    case FieldSource::affine: {
      Vector mean = t.mean.empty() ? Vector(t.dimension, 0.0) : t.mean;
      return affine_velocity(std::move(mean), t.scale);
    }
    case FieldSource::model: {
      if (t.model.empty()) throw ConfigurationError("transport.model is required when transport.field = model");
      std::error_code ec;
      if (!std::filesystem::is_regular_file(t.model, ec))
        throw ConfigurationError("model file not found: " + t.model.string());
      return std::make_shared<const VelocityField>(load_field(t.model));
    }
  }
  throw ConfigurationError("unhandled field source");
}

/// Everything a sampling command needs, built and checked up front.
struct Problem {
  std::shared_ptr<const VelocityField> field;
  TransportMap map;
  Potential potential;
  PullbackPotential pullback;
};

inline Problem make_problem(const ExperimentConfig& c) {
  auto field = make_field(c.transport);
  if (c.transport.steps < 1) throw ConfigurationError("transport.steps must be >= 1");
  TransportMap map(field, c.transport.scheme, c.transport.steps);
  Potential pot = make_potential(c.potential);
  pot.validate_for_dimension(map.dimension());
  PullbackPotential pb(pot, map);
  return {field, map, pot, pb};
}

/// Checks every precondition the chosen command depends on; throws a
/// validation-category error before any compute happens.
inline void validate_config(const ExperimentConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigurationError(m); };
  switch (c.kind) {
    case ExperimentKind::train_prior: {
      c.training.validate();
      for (auto h : c.training.hidden)
        if (h == 0) fail("training.hidden widths must be positive");
      if (c.dataset.size < 1000) fail("dataset.size must be >= 1000 for training");
      if (!(c.dataset.noise >= 0.0)) fail("dataset.noise must be nonnegative");
      make_dataset(c.dataset.name, 1, c.dataset.noise, 0);
      return;
    }
    case ExperimentKind::sample:
    case ExperimentKind::oracle_compare:
    case ExperimentKind::multifidelity:
    case ExperimentKind::moons_demo:
      break;
  }
  c.chain.validate();
  const Problem p = make_problem(c);
  const bool two_d = p.map.dimension() == 2;
  if (c.kind == ExperimentKind::oracle_compare || c.kind == ExperimentKind::moons_demo) {
    if (!two_d) fail(std::string(to_string(c.kind)) + " needs a 2D source space");
    c.oracle.grid.validate();
    if (c.oracle.grid.resolution < kMinOracleResolution)
      fail("oracle.resolution must be >= " + std::to_string(kMinOracleResolution));
  }
  if (c.kind == ExperimentKind::oracle_compare) {
    if (c.oracle.lengths.empty()) fail("oracle.lengths must list at least one chain length");
    for (std::size_t i = 0; i < c.oracle.lengths.size(); ++i) {
      if (c.oracle.lengths[i] == 0) fail("oracle.lengths must be positive");
      if (i > 0 && c.oracle.lengths[i] <= c.oracle.lengths[i - 1])
        fail("oracle.lengths must be strictly increasing");
    }
    if (c.oracle.tv_resolution == 0 || c.oracle.grid.resolution % c.oracle.tv_resolution != 0)
      fail("oracle.tv_resolution must divide oracle.resolution");
    if (c.oracle.bootstrap < 2) fail("oracle.bootstrap must be >= 2");
    if (c.chain.chains < 2) fail("oracle-compare needs chain.chains >= 2 for bootstrap errors");
  }
  if (c.kind == ExperimentKind::multifidelity) {
    const auto& m = c.multifidelity;
    if (m.coarse_steps < 1) fail("multifidelity.coarse_steps must be >= 1");
    if (m.fine_steps < m.coarse_steps) fail("multifidelity.fine_steps must be >= coarse_steps");
    if (m.bootstrap < 2) fail("multifidelity.bootstrap must be >= 2");
    if (m.sharpen < 0.0) fail("multifidelity.sharpen must be nonnegative");
    if (m.sharpen > 0.0 && m.repetitions == 0) fail("multifidelity.repetitions must be >= 1");
  }
  if (c.kind == ExperimentKind::moons_demo) {
    const auto& m = c.moons;
    if (m.trials == 0) fail("moons.trials must be >= 1");
    if (!(m.baseline_step > 0.0)) fail("moons.baseline_step must be positive");
    if (m.ess_steps == 0) fail("moons.ess_steps must be >= 1");
    if (m.prior_samples < 2) fail("moons.prior_samples must be >= 2");
    if (m.kde_resolution == 0) fail("moons.kde_resolution must be positive");
    if (!(m.kde_bandwidth > 0.0)) fail("moons.kde_bandwidth must be positive");
    if (c.dataset.name != "two-moons") fail("moons-demo needs dataset.name = two-moons");
  }
}

}  // namespace essflow

#endif  // ESSFLOW_CONFIG_HPP
