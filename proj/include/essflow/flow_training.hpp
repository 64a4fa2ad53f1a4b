#ifndef ESSFLOW_FLOW_TRAINING_HPP
#define ESSFLOW_FLOW_TRAINING_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "essflow/core.hpp"
#include "essflow/histogram.hpp"
#include "essflow/mlp.hpp"

namespace essflow {

// Toy datasets

struct ToyDataset {
  std::string name;
  std::vector<Vector> points;
  double noise = 0.0;
};

/// Upper arc: unit circle about (0, 0), y >= 0. Lower arc: unit circle about
/// (1, 0.5), y <= 0.5. Points alternate between the arcs.
inline ToyDataset sample_two_moons(std::size_t n, double noise, std::uint64_t seed) {
  if (n == 0) throw InvalidParameter("dataset size must be >= 1");
  if (!(noise >= 0.0)) throw InvalidParameter("noise must be non-negative");
  Rng rng(seed);
  ToyDataset ds{"two-moons", {}, noise};
  ds.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = rng.uniform(0.0, std::numbers::pi);
    Vector p = (i % 2 == 0) ? Vector{std::cos(t), std::sin(t)}
                            : Vector{1.0 - std::cos(t), 0.5 - std::sin(t)};
    if (noise > 0.0)
      for (auto& v : p) v += noise * rng.normal();
    ds.points.push_back(std::move(p));
  }
  return ds;
}

/// Eight isotropic Gaussians evenly spaced on a circle of radius 2.
inline ToyDataset sample_gaussian_ring(std::size_t n, double noise, std::uint64_t seed) {
  if (n == 0) throw InvalidParameter("dataset size must be >= 1");
  Rng rng(seed);
  ToyDataset ds{"gaussian-mixture-ring", {}, noise};
  for (std::size_t i = 0; i < n; ++i) {
    const double a = kTwoPi * static_cast<double>(rng.index(8)) / 8.0;
    ds.points.push_back({2.0 * std::cos(a) + noise * rng.normal(),
                         2.0 * std::sin(a) + noise * rng.normal()});
  }
  return ds;
}

/// 4 x 4 checkerboard on [-2, 2]^2, alternate squares filled.
inline ToyDataset sample_checkerboard(std::size_t n, double noise, std::uint64_t seed) {
  if (n == 0) throw InvalidParameter("dataset size must be >= 1");
  Rng rng(seed);
  ToyDataset ds{"checkerboard", {}, noise};
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(-2.0, 2.0);
    const double y0 = rng.uniform() - 2.0 * static_cast<double>(rng.index(2));
    const double shift = std::fmod(std::floor(x) + 4.0, 2.0);
    ds.points.push_back({x + noise * rng.normal(), y0 + shift + noise * rng.normal()});
  }
  return ds;
}

inline ToyDataset make_dataset(std::string_view name, std::size_t n, double noise,
                               std::uint64_t seed) {
  if (name == "two-moons") return sample_two_moons(n, noise, seed);
  if (name == "gaussian-mixture-ring") return sample_gaussian_ring(n, noise, seed);
  if (name == "checkerboard") return sample_checkerboard(n, noise, seed);
  throw InvalidParameter("unknown dataset '" + std::string(name) + "'");
}

namespace detail {
inline double distance_to_half_circle(double px, double py, double cx, double cy, bool upper) {
  const double qx = px - cx;
  const double qy = py - cy;
  if (upper ? qy >= 0.0 : qy <= 0.0) return std::abs(std::hypot(qx, qy) - 1.0);
  return std::min(std::hypot(qx - 1.0, qy), std::hypot(qx + 1.0, qy));
}
}  // namespace detail

inline double distance_to_upper_moon(std::span<const double> p) {
  return detail::distance_to_half_circle(p[0], p[1], 0.0, 0.0, true);
}
inline double distance_to_lower_moon(std::span<const double> p) {
  return detail::distance_to_half_circle(p[0], p[1], 1.0, 0.5, false);
}

enum class MoonBranch { upper = 0, lower = 1 };

/// Nearest noiseless arc.
inline MoonBranch moon_branch(std::span<const double> p) {
  return distance_to_upper_moon(p) <= distance_to_lower_moon(p) ? MoonBranch::upper
                                                                : MoonBranch::lower;
}

// Conditional flow matching

struct CfmExample {
  Vector z;
  Vector x1;
  double t = 0.0;
};

struct LossAndGradient {
  double loss = 0.0;
  Vector gradient;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::size_t iteration, std::vector<double> trace)
      : Error(ErrorCategory::numeric,
              "training diverged at iteration " + std::to_string(iteration)),
        iteration_(iteration),
        trace_(std::move(trace)) {}
  [[nodiscard]] std::size_t iteration() const noexcept { return iteration_; }
  [[nodiscard]] const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  std::size_t iteration_;
  std::vector<double> trace_;
};

/// Mean over the batch of |u(t, x_t) - (x1 - z)|^2 with x_t = (1 - t) z + t x1,
/// and its gradient with respect to the network parameters.
inline LossAndGradient cfm_loss(const MlpVelocity& net, std::span<const CfmExample> batch) {
  if (batch.empty()) throw InvalidParameter("empty batch");
  const std::size_t d = net.dimension();
  LossAndGradient out{0.0, Vector(net.parameters().size(), 0.0)};
  MlpVelocity::Tape tape;
  Vector xt(d);
  Vector residual(d);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    for (std::size_t i = 0; i < d; ++i) xt[i] = (1.0 - ex.t) * ex.z[i] + ex.t * ex.x1[i];
    net.forward(ex.t, xt, tape);
    const Vector& pred = tape.values.back();
    double sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double r = pred[i] - (ex.x1[i] - ex.z[i]);
      sq += r * r;
      residual[i] = 2.0 * r * inv_n;
    }
    out.loss += sq * inv_n;
    net.backward(tape, residual, out.gradient);
  }
  if (!std::isfinite(out.loss)) throw TrainingDiverged(0, {out.loss});
  return out;
}

struct TrainConfig {
  std::vector<std::size_t> hidden{64, 64};
  std::size_t batch_size = 256;
  std::size_t iterations = 20000;
  double learning_rate = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  void validate() const {
    if (hidden.empty()) throw InvalidParameter("at least one hidden layer is required");
    for (auto h : hidden)
      if (h == 0) throw InvalidParameter("hidden width must be positive");
    if (batch_size == 0) throw InvalidParameter("batch size must be positive");
    if (iterations == 0) throw InvalidParameter("iteration count must be positive");
    if (!(learning_rate > 0.0)) throw InvalidParameter("learning rate must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
      throw InvalidParameter("moment decay rates must lie in (0, 1)");
    if (!(epsilon > 0.0)) throw InvalidParameter("epsilon must be positive");
  }
};

/// Weights ~ N(0, 1 / fan_in), zero biases.
inline MlpVelocity init_mlp(std::size_t dimension, std::span<const std::size_t> hidden, Rng& rng) {
  std::vector<std::size_t> layers{dimension + 1};
  layers.insert(layers.end(), hidden.begin(), hidden.end());
  layers.push_back(dimension);
  Vector params;
  params.reserve(MlpVelocity::parameter_count(layers));
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(layers[l]));
    for (std::size_t k = 0; k < layers[l] * layers[l + 1]; ++k) params.push_back(sd * rng.normal());
    params.insert(params.end(), layers[l + 1], 0.0);
  }
  return MlpVelocity(std::move(layers), std::move(params));
}

/// Adaptive-moment gradient descent with fixed hyperparameters.
class Adam {
 public:
  Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
      : m_(n, 0.0), v_(n, 0.0), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void update(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  Vector m_, v_;
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
};

struct TrainResult {
  MlpVelocity field;
  std::vector<double> loss_trace;
};

inline TrainResult train(const ToyDataset& dataset, const TrainConfig& config) {
  config.validate();
  if (dataset.points.empty()) throw InvalidParameter("dataset is empty");
  const std::size_t d = dataset.points.front().size();
  Rng init_rng(derive_seed(config.seed, 0));
  Rng batch_rng(derive_seed(config.seed, 1));

  TrainResult result{init_mlp(d, config.hidden, init_rng), {}};
  result.loss_trace.reserve(config.iterations);
  Adam adam(result.field.parameters().size(), config.learning_rate, config.beta1, config.beta2,
            config.epsilon);

  std::vector<CfmExample> batch(config.batch_size);
  for (auto& ex : batch) {
    ex.z.resize(d);
    ex.x1.resize(d);
  }
  for (std::size_t it = 0; it < config.iterations; ++it) {
    for (auto& ex : batch) {
      batch_rng.fill_normal(ex.z);
      ex.x1 = dataset.points[batch_rng.index(dataset.points.size())];
      ex.t = batch_rng.uniform();
    }
    LossAndGradient lg;
    try {
      lg = cfm_loss(result.field, batch);
    } catch (const TrainingDiverged&) {
      result.loss_trace.push_back(std::numeric_limits<double>::quiet_NaN());
      throw TrainingDiverged(it, result.loss_trace);
    }
    result.loss_trace.push_back(lg.loss);
    if (!all_finite(lg.gradient)) throw TrainingDiverged(it, result.loss_trace);
    Vector params = result.field.parameters();
    adam.update(params, lg.gradient);
    result.field.set_parameters(std::move(params));
  }
  return result;
}

/// Mean of the trailing `window` entries of a loss trace.
inline double running_average(std::span<const double> trace, std::size_t window) {
  if (trace.empty()) return 0.0;
  window = std::min(window, trace.size());
  double s = 0.0;
  for (std::size_t i = trace.size() - window; i < trace.size(); ++i) s += trace[i];
  return s / static_cast<double>(window);
}

/// Scott's rule bandwidth per axis, sd * n^(-1/6).
inline std::array<double, 2> scott_bandwidth(std::span<const Vector> points) {
  const auto n = static_cast<double>(points.size());
  std::array<double, 2> bw{};
  for (int a = 0; a < 2; ++a) {
    double m = 0.0, s = 0.0;
    for (const auto& p : points) m += p[a];
    m /= n;
    for (const auto& p : points) s += (p[a] - m) * (p[a] - m);
    bw[a] = std::sqrt(s / (n - 1.0)) * std::pow(n, -1.0 / 6.0);
  }
  return bw;
}

/// Cell masses of an isotropic Gaussian kernel density estimate with the
/// given bandwidth, integrated exactly over each cell.
inline Histogram kde_histogram(std::span<const Vector> points, const GridSpec& grid,
                               std::array<double, 2> bw) {
  grid.validate();
  if (points.empty()) throw InvalidParameter("kde needs at least one point");
  if (!(bw[0] > 0.0) || !(bw[1] > 0.0)) throw InvalidParameter("kde bandwidth must be positive");
  const auto n = static_cast<double>(points.size());
  const boost::math::normal_distribution<double> unit;
  const std::size_t r = grid.resolution;
  Histogram h{std::vector<double>(grid.cells(), 0.0), 0.0};
  std::vector<double> fx(r), fy(r);
  for (const auto& p : points) {
    double inside_x = 0.0, inside_y = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
      const double lo0 = grid.lower[0] + static_cast<double>(i) * grid.width(0);
      const double lo1 = grid.lower[1] + static_cast<double>(i) * grid.width(1);
      fx[i] = boost::math::cdf(unit, (lo0 + grid.width(0) - p[0]) / bw[0]) -
              boost::math::cdf(unit, (lo0 - p[0]) / bw[0]);
      fy[i] = boost::math::cdf(unit, (lo1 + grid.width(1) - p[1]) / bw[1]) -
              boost::math::cdf(unit, (lo1 - p[1]) / bw[1]);
      inside_x += fx[i];
      inside_y += fy[i];
    }
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < r; ++j) h.mass[i * r + j] += fx[i] * fy[j] / n;
    h.outside += (1.0 - inside_x * inside_y) / n;
  }
  return h;
}

inline Histogram kde_histogram(std::span<const Vector> points, const GridSpec& grid,
                               double bandwidth) {
  return kde_histogram(points, grid, {bandwidth, bandwidth});
}

inline Histogram kde_histogram(std::span<const Vector> points, const GridSpec& grid) {
  return kde_histogram(points, grid, scott_bandwidth(points));
}

/// Bounding box of the dataset grown by `margin` on every side.
inline GridSpec dataset_grid(std::span<const Vector> points, double margin, std::size_t resolution) {
  GridSpec g{{1e300, 1e300}, {-1e300, -1e300}, resolution};
  for (const auto& p : points)
    for (int a = 0; a < 2; ++a) {
      g.lower[a] = std::min(g.lower[a], p[a]);
      g.upper[a] = std::max(g.upper[a], p[a]);
    }
  for (int a = 0; a < 2; ++a) {
    g.lower[a] -= margin;
    g.upper[a] += margin;
  }
  return g;
}

}  // namespace essflow

#endif  // ESSFLOW_FLOW_TRAINING_HPP
