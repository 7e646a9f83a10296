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

#pragma once

#include <chrono>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "rnnt/data.hpp"
#include "rnnt/loss.hpp"

namespace rnnt {

struct TrainOptions {
  LossConfig loss;
  double lr = 1e-4;
  std::size_t epochs = 1;
  std::size_t batch_size = 8;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  double nll_full = 0.0;
  double nll_ilm = 0.0;
  double nll_iam = 0.0;
  double wall_ms = 0.0;
};

inline std::vector<Example> make_examples(const Corpus& corpus, const Vocabulary& vocab) {
  std::vector<Example> out;
  out.reserve(corpus.size());
  for (const auto& u : corpus) out.push_back({u.id, u.features, encode_transcript(u.transcript, vocab)});
  return out;
}

/// Masking seed for one epoch. Masks differ across epochs but are reproducible,
/// which is what makes resumed runs match uninterrupted ones.
inline std::uint64_t epoch_mask_seed(std::uint64_t seed, std::size_t epoch) {
  return derive_seed(derive_seed(seed, "masking"), epoch);
}

/// One pass over `data` in a seeded shuffled order with fixed-rate gradient descent
/// and gradient-norm clipping. `epoch` is 1-based.
inline EpochStats train_epoch(ModelParams& params, std::span<const Example> data, const TrainOptions& opt,
                              std::size_t epoch) {
  if (data.empty()) throw UsageError("training corpus is empty");
  if (opt.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(derive_seed(opt.seed, "shuffle"), epoch));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

  LossConfig cfg = opt.loss;
  cfg.seed = epoch_mask_seed(opt.seed, epoch);
  EpochStats st;
  st.epoch = epoch;
  std::vector<Example> batch;
  for (std::size_t b = 0; b < order.size(); b += opt.batch_size) {
    batch.clear();
    for (std::size_t i = b; i < std::min(order.size(), b + opt.batch_size); ++i) batch.push_back(data[order[i]]);
    LossResult r;
    try {
      r = combined_loss_and_grads(params, batch, cfg, true, opt.threads);
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
    }
    const auto n = static_cast<double>(batch.size());
    st.loss += r.loss * n;
    st.nll_full += r.nll_full * n;
    st.nll_ilm += r.nll_ilm * n;
    st.nll_iam += r.nll_iam * n;
    clip_grad_norm(r.grads, opt.clip_norm);
    params = sgd_step(std::move(params), r.grads, opt.lr);
  }
  const auto n = static_cast<double>(data.size());
  st.loss /= n;
  st.nll_full /= n;
  st.nll_ilm /= n;
  st.nll_iam /= n;
  st.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return st;
}

inline constexpr const char* kEpochLogHeader = "epoch\tloss\tnll_full\tnll_ilm\tnll_iam";

/// epoch, mean loss, mean full NLL, mean ILM NLL, mean IAM NLL. Wall time is left
/// out so logs are reproducible byte for byte.
inline std::string format_epoch_line(const EpochStats& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu\t%.9f\t%.9f\t%.9f\t%.9f", s.epoch, s.loss, s.nll_full, s.nll_ilm, s.nll_iam);
  return buf;
}

}  // namespace rnnt
