/* Copyright 2026 The DirMoE Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dirmoe/calibration.hpp"

namespace dirmoe {
namespace {

constexpr std::size_t kDraws = 1000000;

TEST(SimpsonIndex, Bounds) {
  EXPECT_EQ(simpson_index(std::vector<double>{0.0, 1.0, 0.0}), 1.0);
  EXPECT_DOUBLE_EQ(simpson_index(std::vector<double>(5, 0.2)), 0.2);
  EXPECT_EQ(simpson_index(std::vector<double>{0.5, 0.5, 0.0, 0.0}), 0.5);
  EXPECT_THROW(simpson_index(std::vector<double>{0.5, 0.4}), DomainError);
  EXPECT_THROW(simpson_index(std::vector<double>{1.5, -0.5}), DomainError);
}

TEST(ExpectedSimpson, Limits) {
  const std::vector<double> beta{0.5, 1.0, 3.0, 0.2};
  double b = 0.0, s2 = 0.0;
  for (double v : beta) {
    b += v;
    s2 += v * v;
  }
  EXPECT_NEAR(expected_simpson(1e-9, beta), 1.0, 1e-8);
  EXPECT_NEAR(expected_simpson(1e9, beta), s2 / (b * b), 1e-8);
  EXPECT_DOUBLE_EQ(expected_simpson(1.0, std::vector<double>{1.0, 1.0}), 2.0 / 3.0);
  EXPECT_THROW(expected_simpson(0.0, beta), DomainError);
  EXPECT_THROW(expected_simpson(1.0, std::vector<double>{1.0, 0.0}), DomainError);
}

// E[sum theta_i^2] = sum a_i (a_i + 1) / (a0 (a0 + 1)) from the Dirichlet
// second moments, written independently of the library closed form.
double second_moment_oracle(double lambda, const std::vector<double>& beta) {
  double a0 = 0.0, num = 0.0;
  for (double v : beta) {
    const double a = lambda * v;
    a0 += a;
    num += a * (a + 1.0);
  }
  return num / (a0 * (a0 + 1.0));
}

TEST(ExpectedSimpson, MatchesMomentsAndMonteCarlo) {
  EXPECT_LE(mc_expected_simpson(1.0, std::vector<double>{1.0, 1.0}, kDraws, 1).z_score(2.0 / 3.0), 3.0);
  SeededStream stream(2);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> beta(2 + 3 * trial);
    for (double& v : beta) v = 0.1 + 2.0 * stream.uniform();
    const double lambda = std::exp(4.0 * stream.uniform() - 2.0);
    const double closed = expected_simpson(lambda, beta);
    EXPECT_NEAR(closed, second_moment_oracle(lambda, beta), 1e-14);
    EXPECT_LE(mc_expected_simpson(lambda, beta, 200000, 10 + trial).z_score(closed), 3.0);
  }
}

TEST(LambdaFromSimpson, RoundTripAndPoles) {
  EXPECT_DOUBLE_EQ(lambda_from_simpson(0.5, 4), 0.5);
  EXPECT_NEAR(expected_simpson(0.5, std::vector<double>(4, 1.0)), 0.5, 1e-15);
  for (std::size_t e : {2u, 4u, 8u, 32u}) {
    for (double h : {0.2, 0.5, 0.9, 0.999}) {
      if (h <= 1.0 / double(e)) continue;
      EXPECT_NEAR(expected_simpson(lambda_from_simpson(h, e), std::vector<double>(e, 1.0)), h, 1e-12);
    }
  }
  EXPECT_LT(lambda_from_simpson(1.0 - 1e-9, 8), 1e-8);
  EXPECT_GT(lambda_from_simpson(1.0 / 8.0 + 1e-9, 8), 1e7);
  EXPECT_THROW(lambda_from_simpson(1.0, 8), DomainError);
  EXPECT_THROW(lambda_from_simpson(0.125, 8), DomainError);
  EXPECT_THROW(lambda_from_simpson(0.5, 1), DomainError);
}

TEST(LambdaFromSimpson, MonteCarloConfirmation) {
  EXPECT_LE(mc_expected_simpson(0.5, std::vector<double>(4, 1.0), kDraws, 3).z_score(0.5), 3.0);
}

TEST(RatioFromMass, TableValueAndRoundTrip) {
  EXPECT_NEAR(ratio_from_mass(0.85, 8, 1), 39.666666666666664, 1e-12);
  EXPECT_NEAR(ratio_from_mass(0.85, 8, 1), 39.7, 0.05);
  EXPECT_DOUBLE_EQ(ratio_from_mass(0.5, 8, 4), 1.0);
  for (double m : {0.1, 0.5, 0.85, 0.99}) {
    for (std::size_t k : {1u, 2u, 5u}) {
      for (double lo : {1e-3, 0.005, 1.0, 17.0}) {
        EXPECT_NEAR(mass_mean(ratio_from_mass(m, 8, k) * lo, lo, 8, k), m, 1e-12);
      }
    }
  }
  EXPECT_THROW(ratio_from_mass(1.0, 8, 1), DomainError);
  EXPECT_THROW(ratio_from_mass(0.5, 8, 0), DomainError);
  EXPECT_THROW(ratio_from_mass(0.5, 8, 8), DomainError);
}

TEST(LambdaFromVariance, TableSetting) {
  const double hi = ratio_from_mass(0.85, 8, 1);
  const double lambda = lambda_from_variance(0.85, 0.01, 1, 8, hi, 1.0);
  EXPECT_NEAR(lambda, 11.75 / (hi + 7.0), 1e-12);
  EXPECT_NEAR(lambda, 0.2518, 5e-4);
  const auto law = mass_law(hi, 1.0, lambda, 8, 1);
  EXPECT_NEAR(law.variance, 0.01, 1e-12);
  const auto mc = mc_mass(hi, 1.0, lambda, 8, 1, kDraws, 4);
  EXPECT_LE(mc.variance.z_score(0.01), 3.0) << mc.variance.mean << " +- " << mc.variance.std_error;
  EXPECT_LE(mc.mean.z_score(0.85), 3.0);
}

TEST(LambdaFromVariance, ScaleInvarianceAndLimits) {
  const double hi = ratio_from_mass(0.7, 8, 2);
  const double l1 = lambda_from_variance(0.7, 0.02, 2, 8, hi, 1.0);
  const double l2 = lambda_from_variance(0.7, 0.02, 2, 8, 2.0 * hi, 2.0);
  EXPECT_NEAR(l2, 0.5 * l1, 1e-14);
  const auto a = mass_law(hi, 1.0, l1, 8, 2), b = mass_law(2.0 * hi, 2.0, l2, 8, 2);
  EXPECT_NEAR(a.beta_a, b.beta_a, 1e-12);
  EXPECT_NEAR(a.beta_b, b.beta_b, 1e-12);
  EXPECT_LT(lambda_from_variance(0.7, 0.21 * (1.0 - 1e-9), 2, 8, hi, 1.0), 1e-8);
}

TEST(LambdaFromVariance, RejectsInconsistentInputs) {
  EXPECT_THROW(lambda_from_variance(0.9, 0.01, 1, 8, ratio_from_mass(0.85, 8, 1), 1.0), ConsistencyError);
  const double hi = ratio_from_mass(0.85, 8, 1);
  EXPECT_THROW(lambda_from_variance(0.85, 0.2, 1, 8, hi, 1.0), DomainError);
  EXPECT_THROW(lambda_from_variance(0.85, 0.0, 1, 8, hi, 1.0), DomainError);
}

TEST(MassLaw, MeanIndependentOfLambda) {
  const auto a = mass_law(2.0, 0.05, 0.1, 8, 1);
  const auto b = mass_law(2.0, 0.05, 1.0, 8, 1);
  const auto c = mass_law(2.0, 0.05, 10.0, 8, 1);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(b.mean, c.mean);
  EXPECT_GT(a.variance, b.variance);
  EXPECT_GT(b.variance, c.variance);
  EXPECT_DOUBLE_EQ(mass_law(1.0, 1.0, 3.0, 8, 7).mean, 7.0 / 8.0);
  EXPECT_THROW(mass_law(1.0, 1.0, 1.0, 8, 8), DomainError);
}

TEST(MassLaw, MatchesMonteCarlo) {
  struct Case {
    double hi, lo, lambda;
    std::size_t e, k;
  };
  std::uint64_t seed = 20;
  for (const Case c : {Case{2.0, 0.05, 1.0, 8, 1}, Case{1.5, 0.5, 0.3, 16, 3}, Case{0.8, 0.8, 4.0, 4, 2}}) {
    const auto law = mass_law(c.hi, c.lo, c.lambda, c.e, c.k);
    const auto mc = mc_mass(c.hi, c.lo, c.lambda, c.e, c.k, kDraws, seed++);
    EXPECT_LE(mc.mean.z_score(law.mean), 3.0);
    EXPECT_LE(mc.variance.z_score(law.variance), 3.0);
  }
}

TEST(MarginalVariance, ClosedFormAndMonteCarlo) {
  EXPECT_DOUBLE_EQ(dirichlet_marginal_variance(std::vector<double>{1.0, 1.0})[0], 1.0 / 12.0);
  const std::vector<double> alphas{2.0, 3.0, 5.0};
  const auto var = dirichlet_marginal_variance(alphas);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto mc = mc_marginal(alphas, i, kDraws, 30 + i);
    EXPECT_LE(mc.variance.z_score(var[i]), 3.0) << i;
    EXPECT_LE(mc.mean.z_score(alphas[i] / 10.0), 3.0) << i;
  }
  double prev = INFINITY;
  for (double lambda : {0.1, 1.0, 10.0, 100.0}) {
    std::vector<double> scaled = alphas;
    for (double& a : scaled) a *= lambda;
    const double v = dirichlet_marginal_variance(scaled)[0];
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(MonotoneSparsity, UniformBase) {
  const std::vector<double> grid{0.01, 0.1, 1.0, 10.0, 100.0};
  const auto rep = verify_monotone_sparsity(std::vector<double>(8, 1.0), grid, 200000, 40);
  EXPECT_TRUE(rep.strictly_decreasing);
  EXPECT_TRUE(rep.rational_form_matches);
  EXPECT_TRUE(rep.slope_negative);
  EXPECT_TRUE(rep.mc_consistent);
  EXPECT_GT(rep.points.front().closed_form, 0.9);
  EXPECT_LT(rep.points.back().closed_form, 0.14);
  EXPECT_DOUBLE_EQ(rep.limit_high, 0.125);
  EXPECT_THROW(verify_monotone_sparsity(std::vector<double>{1.0}, grid, 0, 1), DomainError);
  EXPECT_THROW(verify_monotone_sparsity(std::vector<double>{1.0, 1.0}, std::vector<double>{1.0, 0.5}, 0, 1),
               DomainError);
}

TEST(MonotoneSparsity, RandomBasesStrictlyDecrease) {
  SeededStream stream(50);
  std::vector<double> grid(20);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = std::pow(10.0, -6.0 + 12.0 * double(i) / 19.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> beta(2 + trial % 30);
    for (double& v : beta) v = 0.01 + 5.0 * stream.uniform();
    const auto rep = verify_monotone_sparsity(beta, grid, 0, 1);
    EXPECT_TRUE(rep.strictly_decreasing);
    EXPECT_TRUE(rep.slope_negative);
    EXPECT_NEAR(rep.points.front().closed_form, 1.0, 1e-4);
    EXPECT_NEAR(rep.points.back().closed_form, rep.limit_high, 1e-4);
    for (const auto& pt : rep.points) {
      EXPECT_GT(pt.closed_form, rep.limit_high);
      EXPECT_LT(pt.closed_form, 1.0);
    }
  }
}

}  // namespace
}  // namespace dirmoe
