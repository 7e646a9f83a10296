// Copyright 2026 The rnnt-lmd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rnnt/discount.hpp"

namespace rnnt {
namespace {

LogDistribution dist(std::vector<double> probs) {
  Vector lp;
  for (double p : probs) lp.push_back(std::log(p));
  return LogDistribution::from_log_probs(lp);
}

TEST(Kl, IdenticalIsZero) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto p = oracle::random_dist(rng, 5);
    EXPECT_EQ(kl_divergence(p, p), 0.0);
  }
}

TEST(Kl, PointMassAgainstUniformIsLogTwo) {
  EXPECT_NEAR(kl_divergence(dist({1.0, 0.0}), dist({0.5, 0.5})), 0.693147180559945, 1e-12);
}

TEST(Kl, MissingSupportIsInfinite) {
  EXPECT_EQ(kl_divergence(dist({0.5, 0.5}), dist({1.0, 0.0})), std::numeric_limits<double>::infinity());
}

TEST(Kl, GibbsInequality) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t v = 2 + rng.index(6);
    const auto p = oracle::random_dist(rng, v, 3.0);
    const auto q = oracle::random_dist(rng, v, 3.0);
    EXPECT_GE(kl_divergence(p, q), -1e-12);
  }
}

TEST(Kl, SizeMismatch) { EXPECT_THROW(kl_divergence(dist({0.5, 0.5}), dist({0.2, 0.3, 0.5})), UsageError); }

TEST(Roll, MemorylessWhenRhoZero) { EXPECT_EQ(update_roll({0.73}, 0.0, 0.25).p_roll, 0.25); }

TEST(Roll, Arithmetic) { EXPECT_NEAR(update_roll({1.0}, 0.5, 0.4).p_roll, 0.9, 1e-15); }

TEST(Roll, GeometricLimit) {
  for (double rho : {0.0, 0.3, 0.5, 0.9}) {
    RollingState s{1.0};
    for (int i = 0; i < 1000; ++i) s = update_roll(s, rho, 0.2);
    EXPECT_NEAR(s.p_roll, 0.2 / (1 - rho), 1e-12) << rho;
  }
}

TEST(Roll, EmaVariantStaysInUnitInterval) {
  RollingState s{1.0};
  for (int i = 0; i < 100; ++i) {
    s = update_roll(s, 0.7, 0.9, true);
    EXPECT_LE(s.p_roll, 1.0);
  }
  EXPECT_NEAR(s.p_roll, 0.9, 1e-12);
}

TEST(Roll, RejectsNonProbability) {
  EXPECT_THROW(update_roll({1.0}, 0.5, 1.5), UsageError);
  EXPECT_THROW(update_roll({1.0}, 0.5, -0.1), UsageError);
}

TEST(DAdapt, BlankIsAlwaysZero) {
  EXPECT_EQ(d_adapt(5.0, {0.0}, kBlank), 0.0);
  EXPECT_EQ(d_adapt(0.1, {3.0}, kBlank), 0.0);
}

TEST(DAdapt, FullRollIsZero) {
  for (TokenId k : {1, 2, 7}) EXPECT_EQ(d_adapt(2.5, {1.0}, k), 0.0);
}

TEST(DAdapt, Arithmetic) {
  EXPECT_NEAR(d_adapt(0.7, {0.2}, 3), 0.56, 1e-15);
  EXPECT_NEAR(d_adapt(1.0, {1.5}, 3), -0.5, 1e-15);
}

TEST(ScoreDisc, LambdaZeroIsIdentity) { EXPECT_EQ(score_disc(-2.0, -3.0, 0.5, 0.0), -2.0); }

TEST(ScoreDisc, NonPositiveDiscountIsClamped) {
  EXPECT_EQ(score_disc(-2.0, -3.0, 0.0, 1.0), -2.0);
  EXPECT_EQ(score_disc(-2.0, -3.0, -0.4, 1.0), -2.0);
}

TEST(ScoreDisc, Arithmetic) { EXPECT_NEAR(score_disc(-2.0, -3.0, 0.5, 1.0), -0.5, 1e-15); }

TEST(ScoreDisc, NeverBelowRawScore) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double lp = -rng.uniform(0, 10), li = -rng.uniform(0, 10);
    const double d = rng.uniform(-2, 2), lam = rng.uniform(0, 3);
    EXPECT_GE(score_disc(lp, li, d, lam), lp);
  }
}

TEST(ScoreDisc, LowerIlmProbabilityNeverScoresLower) {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const double lp = -rng.uniform(0, 10);
    double la = -rng.uniform(0, 10), lb = -rng.uniform(0, 10);
    if (la > lb) std::swap(la, lb);  // a is the ILM-rarer token
    const double d = rng.uniform(1e-3, 2), lam = rng.uniform(1e-3, 3);
    EXPECT_GE(score_disc(lp, la, d, lam), score_disc(lp, lb, d, lam));
  }
}

TEST(DiscountConfig, Validation) {
  EXPECT_NO_THROW((DiscountConfig{0.5, 0.9, 1.0, false, false}.validate()));
  EXPECT_THROW((DiscountConfig{-0.1, 0.5, 1.0, false, false}.validate()), ConfigError);
  EXPECT_THROW((DiscountConfig{0.1, 1.5, 1.0, false, false}.validate()), ConfigError);
  EXPECT_THROW((DiscountConfig{0.1, 0.5, -1.0, false, false}.validate()), ConfigError);
}

}  // namespace
}  // namespace rnnt
