#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fixtures.hpp"

using namespace essflow;

namespace {

// Closed-form path of the affine field: x_t = (1 + t(s - 1)) z + t mu.
Vector affine_path(const Vector& mu, double s, const Vector& z, double t) {
  Vector x(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) x[i] = (1.0 + t * (s - 1.0)) * z[i] + t * mu[i];
  return x;
}

double max_affine_error(Scheme scheme, int steps, const Vector& mu, double s, std::uint64_t seed) {
  TransportMap map(affine_velocity(mu, s), scheme, steps);
  Rng rng(seed);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const Vector z = rng.normal_vector(mu.size());
    const Vector x = integrate(map, z);
    const Vector exact = affine_path(mu, s, z, 1.0);
    for (std::size_t i = 0; i < z.size(); ++i) worst = std::max(worst, std::abs(x[i] - exact[i]));
  }
  return worst;
}

}  // namespace

TEST(Integrate, AffineShiftReachesMean) {
  for (Scheme s : {Scheme::euler, Scheme::midpoint, Scheme::rk4}) {
    TransportMap map(affine_velocity({2.0, 0.0}, 1.0), s, 100);
    const Vector x = integrate(map, Vector{0.0, 0.0});
    EXPECT_NEAR(x[0], 2.0, 1e-6) << to_string(s);
    EXPECT_NEAR(x[1], 0.0, 1e-6) << to_string(s);
  }
}

TEST(Integrate, AffineScaleTwo) {
  TransportMap map(affine_velocity({0.0, 0.0}, 2.0), Scheme::rk4, 100);
  const Vector x = integrate(map, Vector{1.0, 1.0});
  EXPECT_NEAR(x[0], 2.0, 1e-6);
  EXPECT_NEAR(x[1], 2.0, 1e-6);
}

TEST(Integrate, ZeroFieldIsIdentity) {
  Rng rng(4);
  for (Scheme s : {Scheme::euler, Scheme::midpoint, Scheme::rk4}) {
    TransportMap map(zero_velocity(3), s, 7);
    const Vector z = rng.normal_vector(3);
    EXPECT_EQ(integrate(map, z), z);
  }
}

TEST(Integrate, RejectsBadInput) {
  TransportMap map(zero_velocity(2));
  EXPECT_THROW(integrate(map, Vector{1.0}), InvalidParameter);
  EXPECT_THROW(integrate(map, Vector{1.0, std::nan("")}), DomainError);
  EXPECT_THROW(TransportMap(zero_velocity(2), Scheme::rk4, 0), InvalidParameter);
}

TEST(Integrate, DivergenceReportsStep) {
  // Scale 1e300 overflows the velocity on the first evaluation.
  TransportMap map(affine_velocity({0.0}, 1e300), Scheme::euler, 4);
  try {
    (void)integrate(map, Vector{1e10});
    FAIL() << "expected divergence";
  } catch (const IntegrationDiverged& e) {
    EXPECT_EQ(e.step(), 1);
    EXPECT_EQ(e.category(), ErrorCategory::numeric);
  }
}

TEST(Integrate, Deterministic) {
  const auto map = test_support::moons_map(50);
  Rng rng(9);
  for (int k = 0; k < 20; ++k) {
    const Vector z = rng.normal_vector(2);
    const Vector a = integrate(map, z);
    const Vector b = integrate(map, z);
    EXPECT_EQ(std::memcmp(a.data(), b.data(), 2 * sizeof(double)), 0);
  }
}

TEST(Trajectory, ZeroFieldFivePoints) {
  TransportMap map(zero_velocity(2), Scheme::rk4, 4);
  const auto tr = integrate_trajectory(map, Vector{1.0, 0.0});
  ASSERT_EQ(tr.size(), 5u);
  for (std::size_t k = 0; k < tr.size(); ++k) {
    EXPECT_EQ(tr[k].x, (Vector{1.0, 0.0}));
    EXPECT_DOUBLE_EQ(tr[k].t, static_cast<double>(k) / 4.0);
  }
}

TEST(Trajectory, EndpointMatchesIntegrateAndLength) {
  for (int n : {1, 2, 5, 33}) {
    TransportMap map(affine_velocity({1.0, -2.0}, 0.5), Scheme::midpoint, n);
    const Vector z{0.3, 0.7};
    const auto tr = integrate_trajectory(map, z);
    EXPECT_EQ(tr.size(), static_cast<std::size_t>(n) + 1);
    EXPECT_EQ(tr.back().x, integrate(map, z));
  }
}

TEST(AffineVelocity, UnitScaleCases) {
  const auto zero = affine_velocity({0.0, 0.0}, 1.0);
  const auto shift = affine_velocity({3.0}, 1.0);
  Rng rng(1);
  for (int k = 0; k < 20; ++k) {
    const double t = rng.uniform();
    const Vector x = rng.normal_vector(2);
    EXPECT_EQ((*zero)(t, x), (Vector{0.0, 0.0}));
    EXPECT_EQ((*shift)(t, Vector{x[0]}), (Vector{3.0}));
  }
  EXPECT_THROW(affine_velocity({0.0}, 0.0), InvalidParameter);
  EXPECT_THROW(affine_velocity({0.0}, -1.0), InvalidParameter);
}

TEST(AffineVelocity, PathConsistency) {
  const Vector mu{1.5, -0.5};
  const double s = 2.5;
  const auto field = affine_velocity(mu, s);
  Rng rng(2);
  const double h = 1e-4;
  for (int k = 0; k < 100; ++k) {
    const Vector z = rng.normal_vector(2);
    const double t = rng.uniform(h, 1.0 - h);
    const Vector xp = affine_path(mu, s, z, t + h);
    const Vector xm = affine_path(mu, s, z, t - h);
    const Vector u = (*field)(t, affine_path(mu, s, z, t));
    for (int i = 0; i < 2; ++i) EXPECT_NEAR((xp[i] - xm[i]) / (2 * h), u[i], 1e-5);
  }
}

// Affine paths are straight lines, so every scheme reproduces them up to
// rounding; the bound below holds for all N, hence also the O(1/N) and
// O(1/N^4) envelopes.
TEST(IntegratorOrder, AffineFieldErrorWithinEnvelope) {
  const Vector mu{1.0, -1.0};
  const double s = 3.0;
  for (int n : {10, 20, 40, 80, 160}) {
    EXPECT_LE(max_affine_error(Scheme::euler, n, mu, s, 5), 1e-12) << "N=" << n;
    EXPECT_LE(max_affine_error(Scheme::midpoint, n, mu, s, 5), 1e-12) << "N=" << n;
    EXPECT_LE(max_affine_error(Scheme::rk4, n, mu, s, 5), 1e-12) << "N=" << n;
  }
  EXPECT_LT(max_affine_error(Scheme::rk4, 100, mu, s, 5), 1e-6);
}

namespace {
// Max error against a fine rk4 reference on the trained field, whose
// trajectories are curved.
double max_trained_error(Scheme scheme, int steps) {
  const auto field = test_support::moons_fixture().field;
  const TransportMap map(field, scheme, steps);
  const TransportMap reference(field, Scheme::rk4, 4096);
  Rng rng(21);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const Vector z = rng.normal_vector(2);
    const Vector x = integrate(map, z);
    const Vector r = integrate(reference, z);
    for (int i = 0; i < 2; ++i) worst = std::max(worst, std::abs(x[i] - r[i]));
  }
  return worst;
}
}  // namespace

TEST(IntegratorOrder, TrainedFieldConvergenceRates) {
  double pe = 0.0, pm = 0.0, pr = 0.0;
  for (int n : {32, 64, 128, 256, 512, 1024}) {
    const double e = max_trained_error(Scheme::euler, n);
    const double m = max_trained_error(Scheme::midpoint, n);
    const double r = max_trained_error(Scheme::rk4, n);
    if (pe > 0.0) {
      // Euler reaches its asymptotic regime only at a few hundred steps.
      if (n >= 512) EXPECT_NEAR(pe / e, 2.0, 0.3) << "euler N=" << n;
      EXPECT_NEAR(pm / m, 4.0, 1.2) << "midpoint N=" << n;
      if (pr > 1e-12) EXPECT_GE(pr / r, 8.0) << "rk4 N=" << n;
    }
    pe = e;
    pm = m;
    pr = r;
  }
}

TEST(Continuity, TrainedMapIsLocallyLipschitz) {
  const auto map = test_support::moons_map(50);
  Rng rng(12);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const Vector z = rng.normal_vector(2);
    Vector e = rng.normal_vector(2);
    const double norm = std::sqrt(squared_norm(e));
    for (auto& v : e) v *= 1e-4 / norm;
    Vector zp = z;
    for (int i = 0; i < 2; ++i) zp[i] += e[i];
    worst = std::max(worst, std::sqrt(squared_distance(integrate(map, zp), integrate(map, z))) / 1e-4);
  }
  EXPECT_TRUE(std::isfinite(worst));
  EXPECT_LT(worst, 1e3);
}

// Source gaussianization

namespace {
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
double uniform_cdf(double v, double a, double b) { return std::clamp((v - a) / (b - a), 0.0, 1.0); }
double lognormal_cdf(double v, double m, double s) {
  return v <= 0.0 ? 0.0 : normal_cdf((std::log(v) - m) / s);
}
}  // namespace

TEST(Gaussianize, Medians) {
  SourceTransform tr({UniformMarginal{0.0, 1.0}, LogNormalMarginal{0.0, 1.0}, StandardNormalMarginal{}});
  const Vector z = gaussianize(tr, Vector{0.5, 1.0, 0.3});
  EXPECT_NEAR(z[0], 0.0, 1e-15);
  EXPECT_NEAR(z[1], 0.0, 1e-15);
  EXPECT_EQ(z[2], 0.3);
  const Vector v = degaussianize(tr, Vector{0.0, 0.0, -1.2});
  EXPECT_NEAR(v[0], 0.5, 1e-15);
  EXPECT_NEAR(v[1], 1.0, 1e-15);
  EXPECT_EQ(v[2], -1.2);
}

TEST(Gaussianize, RoundTrip) {
  SourceTransform tr({UniformMarginal{-2.0, 5.0}, LogNormalMarginal{0.4, 0.7}, StandardNormalMarginal{}});
  Rng rng(8);
  for (int k = 0; k < 1000; ++k) {
    const Vector v{rng.uniform(-1.99, 4.99), std::exp(0.4 + 0.7 * rng.normal()), rng.normal()};
    const Vector back = degaussianize(tr, gaussianize(tr, v));
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(back[i], v[i], 1e-9 * std::max(1.0, std::abs(v[i])));
  }
}

TEST(Gaussianize, OutsideSupportNamesDimension) {
  SourceTransform tr({StandardNormalMarginal{}, UniformMarginal{0.0, 1.0}});
  try {
    (void)gaussianize(tr, Vector{0.0, 1.5});
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("dimension 1"), std::string::npos) << e.what();
  }
  SourceTransform ln({LogNormalMarginal{0.0, 1.0}});
  EXPECT_THROW((void)gaussianize(ln, Vector{0.0}), DomainError);
}

TEST(Degaussianize, KolmogorovSmirnov) {
  const double a = -1.0, b = 3.0, m = 0.5, s = 0.8;
  SourceTransform tr({UniformMarginal{a, b}, LogNormalMarginal{m, s}});
  Rng rng(21);
  const std::size_t n = 100000;
  std::vector<double> u(n), l(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Vector v = degaussianize(tr, rng.normal_vector(2));
    u[k] = v[0];
    l[k] = v[1];
  }
  auto ks = [n](std::vector<double>& xs, auto cdf) {
    std::sort(xs.begin(), xs.end());
    double d = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double f = cdf(xs[k]);
      d = std::max({d, std::abs(f - static_cast<double>(k) / n), std::abs(f - static_cast<double>(k + 1) / n)});
    }
    return d;
  };
  EXPECT_LT(ks(u, [&](double v) { return uniform_cdf(v, a, b); }), 0.02);
  EXPECT_LT(ks(l, [&](double v) { return lognormal_cdf(v, m, s); }), 0.02);
}

// Field files

TEST(FieldIo, TrainedRoundTripIsBitExact) {
  const auto& field = *test_support::moons_fixture().field;
  const auto path = std::filesystem::path(ESSFLOW_FIXTURE_DIR) / "roundtrip_test.efvf";
  save_field(field, path);
  const VelocityField loaded = load_field(path);
  Rng rng(3);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double t = rng.uniform();
    const Vector x = rng.normal_vector(2);
    const Vector a = field(t, x), b = loaded(t, x);
    for (int i = 0; i < 2; ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  EXPECT_EQ(worst, 0.0);
  std::filesystem::remove(path);
}

TEST(FieldIo, AffineAndZeroRoundTrip) {
  const auto a = affine_velocity({1.0, 2.0, 3.0}, 0.25);
  const VelocityField b = decode_field(encode_field(*a));
  EXPECT_EQ(b.kind(), FieldKind::affine);
  EXPECT_EQ(b(0.3, Vector{1, 1, 1}), (*a)(0.3, Vector{1, 1, 1}));
  const VelocityField z = decode_field(encode_field(*zero_velocity(4)));
  EXPECT_EQ(z.kind(), FieldKind::zero);
  EXPECT_EQ(z.dimension(), 4u);
}

namespace {
ParseErrorCode parse_code(const std::vector<unsigned char>& bytes) {
  try {
    (void)decode_field(bytes);
  } catch (const ParseError& e) {
    EXPECT_EQ(e.category(), ErrorCategory::io);
    return e.code();
  }
  ADD_FAILURE() << "decode succeeded";
  return ParseErrorCode::trailing_data;
}
}  // namespace

TEST(FieldIo, MalformedFilesGiveDistinctErrors) {
  const auto good = encode_field(*test_support::moons_fixture().field);
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(parse_code(bad_magic), ParseErrorCode::bad_magic);

  auto truncated = good;
  truncated.resize(good.size() / 2);
  EXPECT_EQ(parse_code(truncated), ParseErrorCode::truncated);

  auto flipped = good;
  flipped[good.size() - 20] ^= 0x01;
  EXPECT_EQ(parse_code(flipped), ParseErrorCode::checksum_mismatch);

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(parse_code(trailing), ParseErrorCode::trailing_data);

  auto version = good;
  version[4] = 9;
  EXPECT_EQ(parse_code(version), ParseErrorCode::unsupported_version);

  // Dimension field (bytes 7..10) disagreeing with the layer list.
  auto dim = good;
  dim[7] = 3;
  EXPECT_EQ(parse_code(dim), ParseErrorCode::dimension_mismatch);

  EXPECT_THROW(load_field("/nonexistent/field.efvf"), Error);
}
