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

// Adaptive implicit-LM discounting. At a decoding node the divergence between the
// implicit LM and the implicit AM, weighted by how unlikely the ILM found the
// recently emitted tokens, decides how strongly the ILM's opinion of the next
// token is subtracted back out of the transducer score.

#pragma once

#include <limits>

#include "rnnt/core.hpp"

namespace rnnt {

struct DiscountConfig {
  double lambda = 0.0;
  double rho = 0.0;
  double p_roll_init = 1.0;
  bool static_mode = false;
  /// Non-default variant: p' = rho * p + (1 - rho) * P_ILM, a true exponential
  /// moving average. Off unless explicitly requested.
  bool ema_roll = false;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("discount lambda must be finite and >= 0");
    if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("discount rho must lie in [0, 1]");
    if (!(p_roll_init >= 0.0) || !std::isfinite(p_roll_init)) throw ConfigError("p_roll_init must be >= 0");
  }
};

/// Rolling sum of ILM probabilities of the tokens emitted so far by a hypothesis.
struct RollingState {
  double p_roll = 1.0;
  friend bool operator==(const RollingState&, const RollingState&) = default;
};

/// KL(p || q) over the whole vocabulary, blank included. Terms with zero p-mass are
/// skipped; +inf when p has mass where q has none.
inline double kl_divergence(const LogDistribution& p, const LogDistribution& q) {
  if (p.size() != q.size()) throw UsageError("kl_divergence: distributions differ in size");
  double kl = 0.0;
  for (std::size_t y = 0; y < p.size(); ++y) {
    if (p[y] == kNegInf) continue;
    if (q[y] == kNegInf) return std::numeric_limits<double>::infinity();
    kl += std::exp(p[y]) * (p[y] - q[y]);
  }
  return kl;
}

/// p_roll' = rho * p_roll + P_ILM(emitted). Only non-blank emissions advance it.
inline RollingState update_roll(RollingState state, double rho, double p_ilm_of_emitted, bool ema = false) {
  if (!(p_ilm_of_emitted >= 0.0 && p_ilm_of_emitted <= 1.0))
    throw UsageError("update_roll: probability outside [0, 1]");
  if (ema) return {rho * state.p_roll + (1.0 - rho) * p_ilm_of_emitted};
  return {rho * state.p_roll + p_ilm_of_emitted};
}

/// (1 - p_roll) * kl for labels, 0 for blank. May be negative once p_roll > 1;
/// score_disc clamps it.
inline double d_adapt(double kl, const RollingState& state, TokenId token, TokenId blank_index = kBlank) {
  if (token == blank_index) return 0.0;
  return (1.0 - state.p_roll) * kl;
}

/// log P_rnnt - lambda * max(0, d) * log P_ILM. The correction is never negative
/// because log P_ILM <= 0.
inline double score_disc(double log_prnnt, double log_pilm, double d, double lambda) {
  if (lambda == 0.0 || !(d > 0.0)) return log_prnnt;
  return log_prnnt - lambda * d * log_pilm;
}

}  // namespace rnnt
