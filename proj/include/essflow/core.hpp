#ifndef ESSFLOW_CORE_HPP
#define ESSFLOW_CORE_HPP

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace essflow {

using Vector = std::vector<double>;

/// Broad failure classes. The command-line runner maps these onto exit codes.
enum class ErrorCategory { validation, numeric, io };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  [[nodiscard]] ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class InvalidParameter : public Error {
 public:
  explicit InvalidParameter(const std::string& what)
      : Error(ErrorCategory::validation, "invalid parameter: " + what) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what)
      : Error(ErrorCategory::validation, "domain error: " + what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what)
      : Error(ErrorCategory::io, "i/o error: " + what) {}
};

class IntegrationDiverged : public Error {
 public:
  explicit IntegrationDiverged(int step)
      : Error(ErrorCategory::numeric,
              "integration diverged: non-finite state after step " +
                  std::to_string(step)),
        step_(step) {}
  [[nodiscard]] int step() const noexcept { return step_; }

 private:
  int step_;
};

// Seeds

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for stream `index` under `root`. Distinct indices give unrelated
/// streams; the mapping is stable across runs and platforms.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) noexcept {
  return mix_seed(root ^ mix_seed(index + 0x632be59bd9b4e019ULL));
}

/// Seeded random source. Copyable, so a chain state can carry its own.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(mix_seed(seed)) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return normal_(engine_); }
  void fill_normal(std::span<double> out) {
    for (auto& v : out) v = normal_(engine_);
  }
  Vector normal_vector(std::size_t d) {
    Vector v(d);
    fill_normal(v);
    return v;
  }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// Numerics

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double a) { return std::isfinite(a); });
}

inline double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return kNegInf;
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

/// log N(z; 0, I)
inline double standard_normal_log_density(std::span<const double> z) {
  double sq = 0.0;
  for (double v : z) sq += v * v;
  return -0.5 * sq - 0.5 * static_cast<double>(z.size()) * std::log(kTwoPi);
}

inline double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double a : v) s += a * a;
  return s;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

/// FNV-1a, 64 bit.
inline std::uint64_t fnv1a64(std::span<const unsigned char> bytes,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
}

/// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, res.ptr};
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace essflow

#endif  // ESSFLOW_CORE_HPP
