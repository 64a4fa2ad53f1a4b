#ifndef ESSFLOW_TESTS_FIXTURES_HPP
#define ESSFLOW_TESTS_FIXTURES_HPP

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "essflow/essflow.hpp"

#ifndef ESSFLOW_FIXTURE_DIR
#define ESSFLOW_FIXTURE_DIR "fixtures"
#endif

namespace essflow::test_support {

/// Training setup for the shared two-moons prior: 2-64-64-2, 20k iterations.
inline TrainConfig moons_train_config() {
  TrainConfig tc;
  tc.hidden = {64, 64};
  tc.batch_size = 256;
  tc.iterations = 20000;
  tc.learning_rate = 2e-3;
  tc.seed = 0;
  return tc;
}

inline ToyDataset moons_dataset() { return sample_two_moons(20000, 0.05, 0); }

struct MoonsFixture {
  std::shared_ptr<const VelocityField> field;
  std::vector<double> loss_trace;
};

namespace detail {
inline std::string encode_trace(const std::vector<double>& t) { return loss_csv(t); }
inline std::vector<double> decode_trace(const std::string& csv) {
  std::vector<double> out;
  std::size_t pos = csv.find('\n') + 1;
  while (pos < csv.size()) {
    const std::size_t comma = csv.find(',', pos);
    const std::size_t end = csv.find('\n', comma);
    out.push_back(std::stod(csv.substr(comma + 1, end - comma - 1)));
    pos = end + 1;
  }
  return out;
}
}  // namespace detail

/// Trained two-moons field, cached on disk next to the test binaries so the
/// 20k-iteration training runs once per build tree.
inline const MoonsFixture& moons_fixture() {
  static const MoonsFixture fixture = [] {
    const TrainConfig tc = moons_train_config();
    const std::filesystem::path dir(ESSFLOW_FIXTURE_DIR);
    const std::string tag = "moons_" + std::to_string(tc.iterations) + "_s" + std::to_string(tc.seed);
    const auto model = dir / (tag + ".efvf");
    const auto trace = dir / (tag + "_loss.csv");
    std::error_code ec;
    if (std::filesystem::exists(model, ec) && std::filesystem::exists(trace, ec)) {
      try {
        return MoonsFixture{std::make_shared<const VelocityField>(load_field(model)),
                            detail::decode_trace(read_text_file(trace))};
      } catch (const std::exception&) {
        // Stale or partial cache: retrain below.
      }
    }
    TrainResult tr = train(moons_dataset(), tc);
    auto field = std::make_shared<const VelocityField>(std::move(tr.field));
    save_field(*field, model);
    write_file_atomic(trace, detail::encode_trace(tr.loss_trace));
    return MoonsFixture{field, std::move(tr.loss_trace)};
  }();
  return fixture;
}

/// Transport steps used for the two-moons sampling problems.
inline constexpr int kMoonsSteps = 20;

inline TransportMap moons_map(int steps = kMoonsSteps) {
  return TransportMap(moons_fixture().field, Scheme::rk4, steps);
}

/// Gaussian observation of the second data coordinate at 0.25; both moon
/// branches cross that height.
inline Potential moons_potential(double sigma = 0.1) {
  return Potential::gaussian(CoordinateProjection{{1}}, {0.25}, sigma);
}

/// Identity transport with y = (1, 1), sigma = 1; posterior N((0.5, 0.5), I / 2).
inline PullbackPotential conjugate_problem() {
  return PullbackPotential(Potential::gaussian(IdentityObservation{}, {1.0, 1.0}, 1.0),
                           TransportMap(zero_velocity(2), Scheme::rk4, 1));
}

/// Mean absolute deviation allowance for TV between an n-point histogram
/// and fixed cell probabilities p: 0.5 * sum sqrt(2 p_i / (pi n)).
inline double one_sample_tv_noise(std::span<const double> p, std::size_t n) {
  double s = 0.0;
  for (double a : p) s += std::sqrt(2.0 * a / (std::numbers::pi * static_cast<double>(n)));
  return 0.5 * s;
}

/// Same for two independent n-point histograms: sum sqrt(p_i / (pi n)).
inline double two_sample_tv_noise(std::span<const double> p, std::size_t n) {
  double s = 0.0;
  for (double a : p) s += std::sqrt(a / (std::numbers::pi * static_cast<double>(n)));
  return s;
}

}  // namespace essflow::test_support

#endif  // ESSFLOW_TESTS_FIXTURES_HPP
