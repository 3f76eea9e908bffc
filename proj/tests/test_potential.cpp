#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "tumor_ocp/potential.hpp"

using tumor_ocp::ConfigError;
using tumor_ocp::Potential;

TEST(Potential, QuarticValues) {
  const Potential F = Potential::regular_quartic();
  EXPECT_EQ(F.F(1.0), 0.0);
  EXPECT_EQ(F.F(-1.0), 0.0);
  EXPECT_DOUBLE_EQ(F.F(0.0), 0.25);
  EXPECT_EQ(F.dF(0.0), 0.0);
  EXPECT_EQ(F.dF(1.0), 0.0);
  EXPECT_DOUBLE_EQ(F.dF(2.0), 6.0);
  EXPECT_DOUBLE_EQ(F.d2F(0.0), -1.0);
  EXPECT_DOUBLE_EQ(F.d2F(1.0), 2.0);
  EXPECT_DOUBLE_EQ(F.d2F(-1.0), 2.0);
}

TEST(Potential, QuarticClosedForms) {
  const Potential F;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 100; ++i) {
    const double r = u(rng);
    EXPECT_NEAR(F.F(r), 0.25 * (r * r - 1) * (r * r - 1), 1e-12);
    EXPECT_NEAR(F.dF(r), r * r * r - r, 1e-12);
    EXPECT_NEAR(F.d2F(r), 3 * r * r - 1, 1e-12);
    EXPECT_NEAR(F.d3F(r), 6 * r, 1e-12);
    EXPECT_GE(F.F(r), 0.0);
  }
}

TEST(Potential, DerivativesMatchCentralDifferences) {
  const Potential F = Potential::custom({0.3, -0.2, 0.1, 0.05, 0.2}, 10.0);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (const double eps : {1e-3, 5e-4}) {
    for (int i = 0; i < 100; ++i) {
      const double r = u(rng);
      // cubic and lower parts are differentiated exactly, the quartic leaves an O(eps²) term
      EXPECT_NEAR((F.F(r + eps) - F.F(r - eps)) / (2 * eps), F.dF(r), 4.0 * 0.2 * eps * eps * (1 + std::abs(r)) + 1e-9);
      EXPECT_NEAR((F.dF(r + eps) - F.dF(r - eps)) / (2 * eps), F.d2F(r), 4.0 * 0.2 * eps * eps + 1e-9);
      EXPECT_NEAR((F.d2F(r + eps) - F.d2F(r - eps)) / (2 * eps), F.d3F(r), 1e-8);
    }
  }
}

TEST(Potential, GrowthCheck) {
  EXPECT_TRUE(Potential::regular_quartic(3.0).validate_growth());
  EXPECT_FALSE(Potential::regular_quartic(0.5).validate_growth());
  EXPECT_TRUE(Potential::zero().validate_growth());
}

TEST(Potential, ConstructionRejectsInvalid) {
  EXPECT_THROW(Potential::custom({0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0}), ConfigError);
  EXPECT_NO_THROW(Potential::custom({1.0, 0.0, 0.0, 0.0, 0.0, 0.0}));
  EXPECT_THROW(Potential::custom({-0.1}), ConfigError);
  EXPECT_THROW(Potential::custom({0.0, 1.0}), ConfigError);  // F(r) = r goes negative
  EXPECT_THROW(Potential::regular_quartic(0.0), ConfigError);
  EXPECT_THROW(Potential::custom({NAN}), ConfigError);
}

TEST(Potential, Kinds) {
  EXPECT_EQ(tumor_ocp::to_string(Potential().kind()), "regular_quartic");
  EXPECT_EQ(tumor_ocp::to_string(Potential::zero().kind()), "custom");
}
