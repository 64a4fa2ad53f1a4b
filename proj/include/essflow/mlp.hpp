#ifndef ESSFLOW_MLP_HPP
#define ESSFLOW_MLP_HPP

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "essflow/core.hpp"

namespace essflow {

/// Smooth sigmoid-shaped activation s / sqrt(1 + s^2). Infinitely
/// differentiable, with derivative (1 - a^2)^(3/2) in terms of its output a.
inline double squash(double s) { return s / std::sqrt(1.0 + s * s); }

inline double squash_derivative_from_output(double a) {
  const double c = 1.0 - a * a;
  return c * std::sqrt(c);
}

/// Fully connected network u(t, x) with the time appended as the last input
/// coordinate. Layer sizes run from d + 1 inputs to d outputs; hidden layers
/// use `squash`, the output layer is linear.
///
/// Parameters are stored flat, layer by layer: weights (out x in, row-major)
/// followed by biases (out). A transposed copy backs the forward passes so
/// the inner loops run over independent outputs.
class MlpVelocity {
 public:
  MlpVelocity() = default;

  MlpVelocity(std::vector<std::size_t> layer_sizes, Vector parameters)
      : layers_(std::move(layer_sizes)), params_(std::move(parameters)) {
    if (layers_.size() < 2) throw InvalidParameter("mlp needs at least two layer sizes");
    for (auto s : layers_)
      if (s == 0) throw InvalidParameter("mlp layer size must be positive");
    if (layers_.front() != layers_.back() + 1)
      throw InvalidParameter("mlp input width must be output width + 1 (time input)");
    if (params_.size() != parameter_count(layers_))
      throw InvalidParameter("mlp parameter count " + std::to_string(params_.size()) +
                             " does not match layer sizes (expected " +
                             std::to_string(parameter_count(layers_)) + ")");
    for (std::size_t s : layers_) max_width_ = std::max(max_width_, s);
    rebuild_transposed();
  }

  static std::size_t parameter_count(std::span<const std::size_t> layers) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layers.size(); ++l)
      n += layers[l + 1] * layers[l] + layers[l + 1];
    return n;
  }

  [[nodiscard]] std::size_t dimension() const noexcept { return layers_.back(); }
  [[nodiscard]] const std::vector<std::size_t>& layer_sizes() const noexcept { return layers_; }
  [[nodiscard]] const Vector& parameters() const noexcept { return params_; }
  void set_parameters(Vector parameters) {
    if (parameters.size() != params_.size())
      throw InvalidParameter("parameter vector has the wrong length");
    params_ = std::move(parameters);
    rebuild_transposed();
  }
  [[nodiscard]] std::size_t layer_count() const noexcept { return layers_.size() - 1; }

  void evaluate(double t, std::span<const double> x, std::span<double> out) const {
    thread_local std::vector<double> a;
    thread_local std::vector<double> b;
    a.resize(max_width_);
    b.resize(max_width_);
    const std::size_t d = dimension();
    std::copy(x.begin(), x.end(), a.begin());
    a[d] = t;

    for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
      apply_layer(l, a.data(), b.data());
      std::swap(a, b);
    }
    std::copy_n(a.begin(), d, out.begin());
  }

  /// Per-layer activations kept for the backward pass. `values[0]` is the
  /// input (x, t); `values[l]` for l >= 1 is the post-activation output of
  /// layer l (the final entry is linear).
  struct Tape {
    std::vector<Vector> values;
  };

  void forward(double t, std::span<const double> x, Tape& tape) const {
    tape.values.resize(layers_.size());
    Vector& in0 = tape.values[0];
    in0.assign(x.begin(), x.end());
    in0.push_back(t);
    for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
      tape.values[l + 1].resize(layers_[l + 1]);
      apply_layer(l, tape.values[l].data(), tape.values[l + 1].data());
    }
  }

  /// Accumulates d(loss)/d(parameters) into `grad` given d(loss)/d(output).
  void backward(const Tape& tape, std::span<const double> output_grad,
                std::span<double> grad) const {
    thread_local Vector delta;
    thread_local Vector prev;
    delta.assign(output_grad.begin(), output_grad.end());

    for (std::size_t l = layers_.size() - 1; l-- > 0;) {
      const std::size_t in = layers_[l];
      const std::size_t outw = layers_[l + 1];
      const double* w = params_.data() + offsets_[l];
      double* gw = grad.data() + offsets_[l];
      double* gb = gw + outw * in;
      const Vector& a = tape.values[l];
      for (std::size_t o = 0; o < outw; ++o) {
        gb[o] += delta[o];
        double* grow = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) grow[i] += delta[o] * a[i];
      }
      if (l == 0) break;
      prev.assign(in, 0.0);
      for (std::size_t o = 0; o < outw; ++o) {
        const double* row = w + o * in;
        for (std::size_t i = 0; i < in; ++i) prev[i] += row[i] * delta[o];
      }
      for (std::size_t i = 0; i < in; ++i) prev[i] *= squash_derivative_from_output(a[i]);
      std::swap(delta, prev);
    }
  }

 private:
  void rebuild_transposed() {
    transposed_.resize(params_.size());
    offsets_.assign(layers_.size() - 1, 0);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
      const std::size_t in = layers_[l];
      const std::size_t outw = layers_[l + 1];
      offsets_[l] = off;
      for (std::size_t o = 0; o < outw; ++o)
        for (std::size_t i = 0; i < in; ++i)
          transposed_[off + i * outw + o] = params_[off + o * in + i];
      std::copy_n(params_.begin() + static_cast<std::ptrdiff_t>(off + outw * in), outw,
                  transposed_.begin() + static_cast<std::ptrdiff_t>(off + outw * in));
      off += outw * in + outw;
    }
  }

  void apply_layer(std::size_t l, const double* __restrict a, double* __restrict out) const {
    const std::size_t in = layers_[l];
    const std::size_t outw = layers_[l + 1];
    const double* __restrict wt = transposed_.data() + offsets_[l];
    const double* bias = wt + outw * in;
    // Blocks of outputs stay in registers across the whole input sweep.
    constexpr std::size_t kBlock = 8;
    std::size_t o0 = 0;
    for (; o0 + kBlock <= outw; o0 += kBlock) {
      double acc[kBlock];
      for (std::size_t k = 0; k < kBlock; ++k) acc[k] = bias[o0 + k];
      for (std::size_t i = 0; i < in; ++i) {
        const double ai = a[i];
        const double* __restrict col = wt + i * outw + o0;
        for (std::size_t k = 0; k < kBlock; ++k) acc[k] += col[k] * ai;
      }
      for (std::size_t k = 0; k < kBlock; ++k) out[o0 + k] = acc[k];
    }
    for (std::size_t o = o0; o < outw; ++o) {
      double acc = bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += wt[i * outw + o] * a[i];
      out[o] = acc;
    }
    if (l + 2 != layers_.size())
      for (std::size_t o = 0; o < outw; ++o) out[o] = squash(out[o]);
  }

  std::vector<std::size_t> layers_;
  Vector params_;
  Vector transposed_;
  std::vector<std::size_t> offsets_;
  std::size_t max_width_ = 0;
};

}  // namespace essflow

#endif  // ESSFLOW_MLP_HPP
