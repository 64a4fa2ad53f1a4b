#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "fixtures.hpp"

using namespace essflow;

TEST(LogPotential, ExactMatchIsZero) {
  const Vector y{0.3, -1.2, 4.0};
  const auto p = Potential::gaussian(IdentityObservation{}, y, 0.7);
  EXPECT_EQ(p.log(y), 0.0);
}

// Bulk-modulus row: target 300, scale 10, property value 310.
TEST(LogPotential, BulkModulusRow) {
  const auto p = Potential::gaussian(ScalarProperty{ScalarProperty::Form::linear, {1.0}, 0.0}, {300.0}, 10.0);
  EXPECT_DOUBLE_EQ(p.log(Vector{310.0}), -0.5);
}

TEST(LogPotential, EnergyAboveHullRow) {
  const auto p = Potential::exponential_tilt(ScalarProperty{ScalarProperty::Form::linear, {1.0}, 0.0}, 0.01);
  EXPECT_DOUBLE_EQ(p.log(Vector{0.02}), -2.0);
  EXPECT_EQ(p.log(Vector{0.0}), 0.0);
}

TEST(LogPotential, QuantizedRoundsBeforeGaussian) {
  const auto p = Potential::quantized(CoordinateProjection{{0}}, {0.25}, 0.1, 0.25);
  EXPECT_EQ(p.log(Vector{0.30, 7.0}), 0.0);
  // 0.40 rounds to 0.5: -(0.25)^2 / (2 * 0.01).
  EXPECT_DOUBLE_EQ(p.log(Vector{0.40, 7.0}), -3.125);
}

TEST(LogPotential, ConstantIsZero) {
  const auto p = Potential::constant();
  EXPECT_EQ(p.log(Vector{1e200, -3.0}), 0.0);
}

TEST(LogPotential, RejectsNonFinitePointAndBadScale) {
  const auto p = Potential::gaussian(IdentityObservation{}, {0.0}, 1.0);
  EXPECT_THROW((void)p.log(Vector{std::nan("")}), DomainError);
  EXPECT_THROW((void)p.log(Vector{INFINITY}), DomainError);
  EXPECT_THROW(Potential::gaussian(IdentityObservation{}, {0.0}, 0.0), InvalidParameter);
  EXPECT_THROW(Potential::gaussian(IdentityObservation{}, {0.0}, -1.0), InvalidParameter);
  EXPECT_THROW(Potential::quantized(IdentityObservation{}, {0.0}, 1.0, 0.0), InvalidParameter);
}

TEST(LogPotential, LinearObservation) {
  // h(x) = [[1, 2], [0, -1]] x + (0.5, 0)
  const LinearObservation h{2, 2, {1.0, 2.0, 0.0, -1.0}, {0.5, 0.0}};
  const auto p = Potential::gaussian(h, {3.5, -1.0}, 1.0);
  EXPECT_EQ(p.log(Vector{1.0, 1.0}), 0.0);
  EXPECT_DOUBLE_EQ(p.log(Vector{0.0, 1.0}), -0.5);
}

TEST(LogPotential, NormProperty) {
  const auto p = Potential::gaussian(ScalarProperty{ScalarProperty::Form::norm, {}, 0.0}, {5.0}, 1.0);
  EXPECT_EQ(p.log(Vector{3.0, 4.0}), 0.0);
}

TEST(Pullback, ConstantPotentialIsZero) {
  const PullbackPotential pp(Potential::constant(), test_support::moons_map());
  Rng rng(1);
  for (int k = 0; k < 20; ++k) EXPECT_EQ(log_pullback(pp, rng.normal_vector(2)), 0.0);
}

TEST(Pullback, ZeroFieldGaussianIdentity) {
  const Vector y{0.5, -0.25};
  const double s = 0.8;
  const PullbackPotential pp(Potential::gaussian(IdentityObservation{}, y, s),
                             TransportMap(zero_velocity(2), Scheme::rk4, 7));
  Rng rng(2);
  for (int k = 0; k < 50; ++k) {
    const Vector z = rng.normal_vector(2);
    const double want = -((z[0] - y[0]) * (z[0] - y[0]) + (z[1] - y[1]) * (z[1] - y[1])) / (2 * s * s);
    EXPECT_NEAR(log_pullback(pp, z), want, 1e-14 * (1.0 + std::abs(want)));
  }
}

TEST(Pullback, CompositionIsBitExact) {
  const auto map = test_support::moons_map();
  const auto pot = test_support::moons_potential();
  const PullbackPotential pp(pot, map);
  Rng rng(3);
  for (int k = 0; k < 100; ++k) {
    const Vector z = rng.normal_vector(2);
    const auto v = pp.evaluate(z);
    const double direct = log_potential(pot, integrate(map, z));
    EXPECT_EQ(std::memcmp(&v.log_g, &direct, sizeof(double)), 0);
    EXPECT_EQ(v.x, integrate(map, z));
  }
}

TEST(Pullback, DimensionMismatchIsConfigurationError) {
  EXPECT_THROW(PullbackPotential(Potential::gaussian(IdentityObservation{}, {0.0, 0.0, 0.0}, 1.0),
                                 TransportMap(zero_velocity(2))),
               ConfigurationError);
  EXPECT_THROW(PullbackPotential(Potential::gaussian(CoordinateProjection{{4}}, {0.0}, 1.0),
                                 TransportMap(zero_velocity(2))),
               ConfigurationError);
}

TEST(Pairwise, ThreeFourFive) {
  const auto h = pairwise_distance_observation({{0, 1}}, 2, 2);
  EXPECT_EQ(observe(h, Vector{0.0, 0.0, 3.0, 4.0}), (Vector{5.0}));
}

TEST(Pairwise, IdenticalPointsGiveZero) {
  const auto h = pairwise_distance_observation({{0, 1}}, 2, 3);
  EXPECT_EQ(observe(h, Vector{1.5, -2.0, 0.25, 1.5, -2.0, 0.25}), (Vector{0.0}));
}

TEST(Pairwise, MatchesBruteForce) {
  Rng rng(4);
  const Vector x = rng.normal_vector(10);  // 5 points in 2D
  std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 3}, {1, 4}, {2, 0}, {4, 3}};
  const auto h = pairwise_distance_observation(pairs, 5, 2);
  const Vector got = observe(h, x);
  ASSERT_EQ(got.size(), pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs[k];
    const double dx = x[2 * i] - x[2 * j], dy = x[2 * i + 1] - x[2 * j + 1];
    EXPECT_NEAR(got[k], std::sqrt(dx * dx + dy * dy), 1e-15);
  }
}

TEST(Pairwise, OutOfRangeIndexIsConfigurationError) {
  EXPECT_THROW(pairwise_distance_observation({{0, 5}}, 5, 2), ConfigurationError);
  EXPECT_THROW(pairwise_distance_observation({{0, 1}}, 2, 0), ConfigurationError);
}

TEST(Properties, MonotoneInResidual) {
  const auto p = Potential::gaussian(CoordinateProjection{{0}}, {0.4}, 0.3);
  Rng rng(5);
  for (int k = 0; k < 1000; ++k) {
    const Vector a{rng.uniform(-3, 3)}, b{rng.uniform(-3, 3)};
    const double ra = std::abs(a[0] - 0.4), rb = std::abs(b[0] - 0.4);
    if (ra == rb) continue;
    EXPECT_EQ(ra < rb, p.log(a) > p.log(b));
  }
}

TEST(Properties, HalvingScaleQuadruplesEnergy) {
  const auto p = Potential::gaussian(IdentityObservation{}, {1.0, -1.0}, 0.6);
  const auto q = p.rescaled(0.5);
  Rng rng(6);
  for (int k = 0; k < 100; ++k) {
    const Vector x = rng.normal_vector(2);
    EXPECT_NEAR(q.log(x), 4.0 * p.log(x), 1e-12 * std::abs(p.log(x)));
  }
}

TEST(Properties, QuantizedIsPiecewiseConstant) {
  const double q = 0.25;
  const auto p = Potential::quantized(CoordinateProjection{{0}}, {0.1}, 0.2, q);
  Rng rng(7);
  for (int k = 0; k < 1000; ++k) {
    const double cell = std::round(rng.uniform(-8, 8));
    // Two points strictly inside the same rounding cell.
    const double a = (cell + rng.uniform(-0.49, 0.49)) * q;
    const double b = (cell + rng.uniform(-0.49, 0.49)) * q;
    EXPECT_EQ(p.log(Vector{a, rng.normal()}), p.log(Vector{b, rng.normal()}));
  }
}

TEST(Properties, PullbackContinuity) {
  const PullbackPotential pp(test_support::moons_potential(), test_support::moons_map());
  Rng rng(8);
  for (int k = 0; k < 200; ++k) {
    const Vector z = rng.normal_vector(2);
    Vector zp = z;
    zp[0] += 1e-7;
    zp[1] -= 1e-7;
    const double a = pp(z), b = pp(zp);
    EXPECT_LT(std::abs(a - b), 1e-3 * (1.0 + std::abs(a)));
  }
}
