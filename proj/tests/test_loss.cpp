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
#include "rnnt/loss.hpp"

namespace rnnt {
namespace {

ModelDims tiny() {
  ModelDims d;
  d.d_in = 3;
  d.d_enc = 4;
  d.d_pred = 4;
  d.d_joint = 5;
  d.d_emb = 3;
  d.v = 4;
  return d;
}

ModelParams random_params(std::uint64_t seed) {
  ModelParams p = init_params(tiny(), seed);
  Rng rng(seed + 77);
  for (Tensor* t : p.tensors())
    if (t->cols == 1)
      for (auto& v : t->data) v = rng.uniform(-0.3, 0.3);
  return p;
}

Example random_example(Rng& rng, std::string id, std::size_t T, std::size_t K) {
  Example ex;
  ex.id = std::move(id);
  ex.x = Matrix(T, 3);
  for (auto& v : ex.x.data()) v = rng.normal();
  ex.y = oracle::random_labels(rng, K, 4);
  return ex;
}

// ─── transducer_nll ─────────────────────────────────────────────────────────

TEST(TransducerNll, NoLabelsIsSumOfBlanks) {
  Rng rng(1);
  const Lattice lat = oracle::random_lattice(rng, 4, 0, 3);
  double want = 0.0;
  for (std::size_t t = 0; t < 4; ++t) want -= lat.at(t, 0, kBlank);
  EXPECT_NEAR(transducer_nll(lat, {}), want, 1e-12);
  const Lattice g = transducer_nll_grad(lat, {});
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(g.at(t, 0, k), k == kBlank ? -1.0 : 0.0);
}

TEST(TransducerNll, SingleFrameSingleLabel) {
  Rng rng(2);
  const Lattice lat = oracle::random_lattice(rng, 1, 1, 3);
  EXPECT_NEAR(transducer_nll(lat, LabelSequence{2}), -(lat.at(0, 0, 2) + lat.at(0, 1, kBlank)), 1e-12);
}

TEST(TransducerNll, TwoFramesOneLabelTwoPaths) {
  // v=2: the two paths are (label at t=0) and (blank, then label at t=1).
  Rng rng(3);
  const Lattice lat = oracle::random_lattice(rng, 2, 1, 2);
  const double p1 = std::exp(lat.at(0, 0, 1) + lat.at(0, 1, 0) + lat.at(1, 1, 0));
  const double p2 = std::exp(lat.at(0, 0, 0) + lat.at(1, 0, 1) + lat.at(1, 1, 0));
  EXPECT_NEAR(transducer_nll(lat, LabelSequence{1}), -std::log(p1 + p2), 1e-12);
}

TEST(TransducerNll, MatchesEnumerationOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t T = 1 + rng.index(4), K = rng.index(4), v = 2 + rng.index(3);
    const Lattice lat = oracle::random_lattice(rng, T, K, v);
    const LabelSequence y = oracle::random_labels(rng, K, v);
    const auto ref = oracle::enumerate_nll(lat, y);
    const auto got = transducer_nll_and_grad(lat, y);
    EXPECT_NEAR(got.nll, ref.nll, 1e-8);
    EXPECT_LE(ref.total_prob, 1.0 + 1e-12);
    for (std::size_t i = 0; i < lat.data().size(); ++i) {
      EXPECT_NEAR(got.grad.data()[i], ref.grad.data()[i], 1e-6);
      // Entries no path uses are exactly zero.
      if (ref.grad.data()[i] == 0.0) EXPECT_EQ(got.grad.data()[i], 0.0);
    }
  }
}

TEST(TransducerNll, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  Lattice lat = oracle::random_lattice(rng, 3, 2, 3);
  const LabelSequence y{2, 1};
  const Lattice g = transducer_nll_grad(lat, y);
  const double eps = 1e-6;
  for (std::size_t i = 0; i < lat.data().size(); ++i) {
    const double orig = lat.data()[i];
    lat.data()[i] = orig + eps;
    const double up = transducer_nll(lat, y);
    lat.data()[i] = orig - eps;
    const double down = transducer_nll(lat, y);
    lat.data()[i] = orig;
    const double fd = (up - down) / (2 * eps);
    // Central differences carry about 1e-10 of rounding noise at this step size.
    EXPECT_NEAR(g.data()[i], fd, 1e-9 + 1e-6 * std::abs(fd)) << "entry " << i;
  }
}

TEST(TransducerNll, RejectsBadInput) {
  Rng rng(6);
  const Lattice lat = oracle::random_lattice(rng, 2, 1, 3);
  EXPECT_THROW(transducer_nll(lat, LabelSequence{1, 2}), UsageError);
  EXPECT_THROW(transducer_nll(lat, LabelSequence{0}), UsageError);
  EXPECT_THROW(transducer_nll(Lattice(0, 0, 3), {}), UsageError);
}

// ─── build_lattice ──────────────────────────────────────────────────────────

TEST(Lattice, IlmCellsAreFrameInvariantAndIamCellsPrefixInvariant) {
  Rng rng(7);
  const ModelParams p = random_params(7);
  const Example ex = random_example(rng, "a", 5, 3);
  const std::vector<bool> none(4, false);
  const Lattice ilm = build_lattice(p, ex.x, ex.y, LatticeMode::ilm, none);
  const Lattice iam = build_lattice(p, ex.x, ex.y, LatticeMode::iam, none);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t u = 0; u <= 3; ++u)
      for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_EQ(ilm.at(t, u, k), ilm.at(0, u, k));
        EXPECT_EQ(iam.at(t, u, k), iam.at(t, 0, k));
      }
}

TEST(Lattice, FullyMaskedFullEqualsIam) {
  Rng rng(8);
  const ModelParams p = random_params(8);
  const Example ex = random_example(rng, "a", 4, 2);
  const Lattice full = build_lattice(p, ex.x, ex.y, LatticeMode::full, std::vector<bool>(3, true));
  const Lattice iam = build_lattice(p, ex.x, ex.y, LatticeMode::iam, std::vector<bool>(3, false));
  EXPECT_TRUE(full == iam);
}

TEST(Lattice, PartialMaskZeroesOnlyMaskedRows) {
  Rng rng(9);
  const ModelParams p = random_params(9);
  const Example ex = random_example(rng, "a", 3, 2);
  const std::vector<bool> mask{false, true, false};
  const Lattice m = build_lattice(p, ex.x, ex.y, LatticeMode::full, mask);
  const Lattice full = build_lattice(p, ex.x, ex.y, LatticeMode::full, std::vector<bool>(3, false));
  const Lattice iam = build_lattice(p, ex.x, ex.y, LatticeMode::iam, std::vector<bool>(3, false));
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t u = 0; u <= 2; ++u)
      for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(m.at(t, u, k), mask[u] ? iam.at(t, u, k) : full.at(t, u, k));
}

TEST(Lattice, ZeroWeightsGiveUniformCells) {
  Rng rng(10);
  const ModelParams p = ModelParams::zeros(tiny());
  const Example ex = random_example(rng, "a", 3, 2);
  const Lattice lat = build_lattice(p, ex.x, ex.y, LatticeMode::full, std::vector<bool>(3, false));
  for (double v : lat.data()) EXPECT_NEAR(v, -std::log(4.0), 1e-15);
}

TEST(Lattice, MaskLengthChecked) {
  Rng rng(11);
  const ModelParams p = random_params(11);
  const Example ex = random_example(rng, "a", 3, 2);
  EXPECT_THROW(build_lattice(p, ex.x, ex.y, LatticeMode::full, std::vector<bool>(2, false)), UsageError);
}

// ─── combined objective ─────────────────────────────────────────────────────

TEST(CombinedLoss, ReducesToPlainNll) {
  Rng rng(12);
  const ModelParams p = random_params(12);
  const std::vector<Example> batch{random_example(rng, "a", 4, 2), random_example(rng, "b", 3, 1)};
  LossConfig cfg{0.0, 0.0, 0.0, 5};
  const LossResult r = combined_loss_and_grads(p, batch, cfg);
  double want = 0.0;
  for (const auto& ex : batch)
    want += transducer_nll(build_lattice(p, ex.x, ex.y, LatticeMode::full, std::vector<bool>(ex.y.size() + 1)), ex.y);
  EXPECT_NEAR(r.loss, want / 2, 1e-12);
  EXPECT_NEAR(r.nll_full, want / 2, 1e-12);
}

TEST(CombinedLoss, FullMaskingIdentity) {
  Rng rng(13);
  const ModelParams p = random_params(13);
  const std::vector<Example> batch{random_example(rng, "a", 4, 2)};
  LossConfig cfg{0.3, 0.7, 1.0, 5};
  const LossResult r = combined_loss_and_grads(p, batch, cfg);
  EXPECT_NEAR(r.nll_full, r.nll_iam, 1e-12);
  EXPECT_NEAR(r.loss, (1 + cfg.beta) * r.nll_iam + cfg.alpha * r.nll_ilm, 1e-12);
  for (bool m : r.masks[0]) EXPECT_TRUE(m);
}

TEST(CombinedLoss, SeedIrrelevantWithoutMaskingOrAuxTerms) {
  Rng rng(14);
  const ModelParams p = random_params(14);
  const std::vector<Example> batch{random_example(rng, "a", 4, 2), random_example(rng, "b", 5, 3)};
  const LossResult a = combined_loss_and_grads(p, batch, {0.0, 0.0, 0.0, 1});
  const LossResult b = combined_loss_and_grads(p, batch, {0.0, 0.0, 0.0, 999});
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_TRUE(a.grads == b.grads);
}

TEST(CombinedLoss, MasksAreKeyedBySeedAndId) {
  LossConfig cfg{0.125, 0.125, 0.5, 3};
  EXPECT_EQ(draw_pn_mask(cfg, "x", 20), draw_pn_mask(cfg, "x", 20));
  EXPECT_NE(draw_pn_mask(cfg, "x", 20), draw_pn_mask(cfg, "y", 20));
  cfg.eta = 0.0;
  for (bool m : draw_pn_mask(cfg, "x", 20)) EXPECT_FALSE(m);
}

TEST(CombinedLoss, ThreadCountDoesNotChangeResults) {
  Rng rng(15);
  const ModelParams p = random_params(15);
  std::vector<Example> batch;
  for (int i = 0; i < 5; ++i) batch.push_back(random_example(rng, "u" + std::to_string(i), 3 + i % 3, 1 + i % 3));
  const LossConfig cfg{0.125, 0.125, 0.4, 8};
  const LossResult a = combined_loss_and_grads(p, batch, cfg, true, 1);
  const LossResult b = combined_loss_and_grads(p, batch, cfg, true, 3);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_TRUE(a.grads == b.grads);
}

TEST(CombinedLoss, GradientMatchesFiniteDifferences) {
  Rng rng(16);
  const ModelParams p = random_params(16);
  const std::vector<Example> batch{random_example(rng, "a", 3, 2)};
  for (double eta : {0.0, 0.5}) {
    const LossConfig cfg{0.125, 0.125, eta, 21};
    const LossResult r = combined_loss_and_grads(p, batch, cfg);
    for (const auto& c : gradient_check(p, batch, cfg, r.grads)) EXPECT_LT(c.max_rel_error, 1e-4) << c.name;
  }
}

TEST(CombinedLoss, RejectsEmptyBatchAndBadConfig) {
  const ModelParams p = random_params(17);
  EXPECT_THROW(combined_loss_and_grads(p, std::vector<Example>{}, {}), UsageError);
  EXPECT_THROW((LossConfig{-1.0, 0.0, 0.0, 0}.validate()), ConfigError);
  EXPECT_THROW((LossConfig{0.0, 0.0, 1.5, 0}.validate()), ConfigError);
}

// ─── optimizer ──────────────────────────────────────────────────────────────

TEST(Sgd, ZeroGradsOrZeroRateLeaveParamsUnchanged) {
  const ModelParams p = random_params(18);
  const Gradients zero = ModelParams::zeros(tiny());
  EXPECT_TRUE(sgd_step(p, zero, 0.1) == p);
  Gradients g = random_params(19);
  EXPECT_TRUE(sgd_step(p, g, 0.0) == p);
  EXPECT_THROW(sgd_step(p, g, -1.0), UsageError);
}

TEST(Sgd, StepReducesQuadratic) {
  // f(w) = 0.5 * ||w||^2 has gradient w; one step with lr in (0, 2) shrinks it.
  ModelParams w = random_params(20);
  auto f = [](const ModelParams& q) {
    double s = 0.0;
    for (const Tensor* t : q.tensors())
      for (double v : t->data) s += 0.5 * v * v;
    return s;
  };
  const double before = f(w);
  const ModelParams after = sgd_step(w, w, 0.1);
  EXPECT_NEAR(f(after), 0.81 * before, 1e-12);
}

TEST(Sgd, ClipScalesToMaxNorm) {
  Gradients g = random_params(21);
  const double n = grad_norm(g);
  ASSERT_GT(n, 1.0);
  EXPECT_NEAR(clip_grad_norm(g, 1.0), n, 1e-12);
  EXPECT_NEAR(grad_norm(g), 1.0, 1e-12);
  g.joint_b.data[0] = std::nan("");
  EXPECT_THROW(clip_grad_norm(g, 1.0), NumericError);
}

}  // namespace
}  // namespace rnnt
