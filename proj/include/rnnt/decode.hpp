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

// Alignment-length synchronous beam search for the transducer, with pluggable
// token scoring: plain RNN-T, adaptive ILM discounting, static ILM discounting,
// shallow fusion and density-ratio fusion.

#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <string_view>
#include <thread>
#include <vector>

#include "rnnt/core.hpp"
#include "rnnt/discount.hpp"
#include "rnnt/lm.hpp"
#include "rnnt/model.hpp"

namespace rnnt {

enum class Strategy { baseline, adaptlmd, static_discount, shallow_fusion, density_ratio };

inline constexpr std::string_view kStrategyNames[] = {"baseline", "adaptlmd", "static_discount", "shallow_fusion",
                                                      "density_ratio"};

inline std::string_view to_string(Strategy s) { return kStrategyNames[static_cast<int>(s)]; }

inline std::optional<Strategy> parse_strategy(std::string_view name) {
  for (int i = 0; i < 5; ++i)
    if (kStrategyNames[i] == name) return static_cast<Strategy>(i);
  return std::nullopt;
}

struct ExternalLms {
  const NGramLM* source = nullptr;
  const NGramLM* target = nullptr;
};

struct DecodeConfig {
  std::size_t beam_width = 4;
  std::optional<std::size_t> max_symbols;  // cap on emitted labels; 2 * frames when unset
  Strategy strategy = Strategy::baseline;
  DiscountConfig discount;
  double fusion_mu = 0.0;  // source LM weight
  double fusion_nu = 0.0;  // target LM weight
  std::size_t nbest = 1;
  bool trace = false;

  void validate() const {
    if (beam_width < 1) throw ConfigError("beam_width must be >= 1");
    if (nbest < 1) throw ConfigError("nbest must be >= 1");
    if (!std::isfinite(fusion_mu) || !std::isfinite(fusion_nu)) throw ConfigError("fusion weights must be finite");
    discount.validate();
  }

  void check_lms(const ExternalLms& lms) const {
    if ((strategy == Strategy::shallow_fusion || strategy == Strategy::density_ratio) && !lms.target)
      throw ConfigError(std::string(to_string(strategy)) + " needs a target-domain LM");
    if (strategy == Strategy::density_ratio && !lms.source)
      throw ConfigError("density_ratio needs a source-domain LM");
  }
};

/// One step of a hypothesis' alignment path.
struct TraceRecord {
  std::size_t step = 0;  // alignment length t + u before this step
  std::size_t t = 0;
  std::size_t u = 0;
  TokenId token = kBlank;
  double log_prnnt = 0.0;
  double log_pilm = 0.0;  // log P_ILM(token | prefix); NaN when not computed
  double kl = 0.0;        // KL(P_ILM || P_IAM) at the node; NaN when not computed
  double d_adapt = 0.0;
  double p_roll_before = 0.0;
  double p_roll_after = 0.0;
  double score_delta = 0.0;
  double score = 0.0;  // cumulative hypothesis score after this step
};

struct TraceNode {
  TraceRecord record;
  std::shared_ptr<const TraceNode> parent;
};

struct BeamEntry {
  LabelSequence labels;
  double score = 0.0;
  PredictorState pstate;
  RollingState roll;
  std::shared_ptr<const TraceNode> history;
};

struct Hypothesis {
  LabelSequence labels;
  double score = 0.0;
  friend bool operator==(const Hypothesis&, const Hypothesis&) = default;
};

struct DecodeResult {
  std::vector<Hypothesis> nbest;   // descending score
  std::vector<TraceRecord> trace;  // path of the best hypothesis, when tracing
};

/// Divergence between the ILM and IAM at one node, computed once per node.
struct NodeContext {
  const LogDistribution* p_rnnt = nullptr;
  const LogDistribution* p_ilm = nullptr;
  double kl = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline double token_score(const BeamEntry& entry, TokenId token, const NodeContext& node, const DecodeConfig& cfg,
                          const ExternalLms& lms, double* d_out = nullptr) {
  const double lp = (*node.p_rnnt)[static_cast<std::size_t>(token)];
  if (d_out) *d_out = 0.0;
  if (token == kBlank) return lp;
  const bool static_mode = cfg.strategy == Strategy::static_discount ||
                           (cfg.strategy == Strategy::adaptlmd && cfg.discount.static_mode);
  switch (cfg.strategy) {
    case Strategy::baseline:
      return lp;
    case Strategy::adaptlmd:
    case Strategy::static_discount: {
      if (!node.p_ilm) throw UsageError("discounting strategies need the ILM distribution");
      const double log_pilm = (*node.p_ilm)[static_cast<std::size_t>(token)];
      const double d = static_mode ? 1.0 : d_adapt(node.kl, entry.roll, token);
      if (d_out) *d_out = d;
      return score_disc(lp, log_pilm, d, cfg.discount.lambda);
    }
    case Strategy::shallow_fusion:
      if (!lms.target) throw ConfigError("shallow_fusion needs a target-domain LM");
      if (cfg.fusion_nu == 0.0) return lp;
      return lp + cfg.fusion_nu * lms.target->logprob(token, entry.labels);
    case Strategy::density_ratio: {
      if (!lms.target || !lms.source) throw ConfigError("density_ratio needs source and target LMs");
      double s = lp;
      if (cfg.fusion_nu != 0.0) s += cfg.fusion_nu * lms.target->logprob(token, entry.labels);
      if (cfg.fusion_mu != 0.0) s -= cfg.fusion_mu * lms.source->logprob(token, entry.labels);
      return s;
    }
  }
  return lp;
}

}  // namespace detail

/// Score added when `entry` is extended by `token` at a node with the given
/// distributions. Blank always scores log P_rnnt(blank).
inline double extension_score(const BeamEntry& entry, TokenId token, const LogDistribution& p_rnnt,
                              const LogDistribution& p_ilm, const LogDistribution& p_iam, const DecodeConfig& cfg,
                              const ExternalLms& lms = {}) {
  NodeContext node{&p_rnnt, &p_ilm, kl_divergence(p_ilm, p_iam)};
  return detail::token_score(entry, token, node, cfg, lms);
}

/// Merges entries with identical labels (keeping the higher score, first seen on
/// ties) and keeps the best `width` by score, in stable order.
template <class Entry>
std::vector<Entry> prune_and_recombine(std::vector<Entry> candidates, std::size_t width) {
  if (width < 1) throw UsageError("beam width must be >= 1");
  std::vector<Entry> merged;
  std::map<LabelSequence, std::size_t> seen;
  for (auto& c : candidates) {
    auto [it, fresh] = seen.emplace(c.labels, merged.size());
    if (fresh) merged.push_back(std::move(c));
    else if (c.score > merged[it->second].score) merged[it->second] = std::move(c);
  }
  std::stable_sort(merged.begin(), merged.end(), [](const Entry& a, const Entry& b) { return a.score > b.score; });
  if (merged.size() > width) merged.resize(width);
  return merged;
}

namespace detail {

struct Candidate {
  LabelSequence labels;
  double score = 0.0;
  std::size_t parent = 0;
  TokenId token = kBlank;
  RollingState roll;
  bool final = false;  // blank out of the last frame
  std::shared_ptr<const TraceNode> history;
};

inline std::vector<TraceRecord> unwind(const std::shared_ptr<const TraceNode>& node) {
  std::vector<TraceRecord> out;
  for (const TraceNode* n = node.get(); n; n = n->parent.get()) out.push_back(n->record);
  std::reverse(out.begin(), out.end());
  return out;
}

}  // namespace detail

/// ALSD: at step i every hypothesis with u labels sits at frame t = i - u. Blank
/// moves to frame t+1 (or finishes the hypothesis after the last frame); a label
/// stays on frame t and advances u.
inline DecodeResult alsd_decode(const ModelParams& p, const FeatureSequence& x, const DecodeConfig& cfg,
                                const ExternalLms& lms = {}) {
  cfg.validate();
  cfg.check_lms(lms);
  const EncoderOutput h = tn_forward(p, x);
  const std::size_t T = h.rows();
  const std::size_t u_max = cfg.max_symbols.value_or(2 * T);
  const std::size_t v = p.dims.v;
  const bool need_aux =
      cfg.trace || cfg.strategy == Strategy::adaptlmd || cfg.strategy == Strategy::static_discount;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  std::vector<std::optional<LogDistribution>> iam_cache(T);
  std::vector<BeamEntry> beam(1);
  beam[0].pstate = pn_start(p);
  beam[0].roll = RollingState{cfg.discount.p_roll_init};
  std::vector<detail::Candidate> finals;

  for (std::size_t i = 0; i < T + u_max && !beam.empty(); ++i) {
    std::vector<detail::Candidate> cands;
    for (std::size_t b = 0; b < beam.size(); ++b) {
      const BeamEntry& e = beam[b];
      const std::size_t u = e.labels.size();
      if (u > i) continue;
      const std::size_t t = i - u;
      if (t >= T) continue;
      const LogDistribution prnnt = joint_dist(p, h.row(t), e.pstate.g);
      NodeContext node{&prnnt, nullptr, nan};
      LogDistribution ilm;
      if (need_aux) {
        if (!iam_cache[t]) iam_cache[t] = joint_dist(p, h.row(t), kZeroInput);
        ilm = joint_dist(p, kZeroInput, e.pstate.g);
        node.p_ilm = &ilm;
        node.kl = kl_divergence(ilm, *iam_cache[t]);
      }
      const TokenId last = u < u_max ? static_cast<TokenId>(v) : 1;
      for (TokenId k = 0; k < last; ++k) {
        double d = 0.0;
        const double s = detail::token_score(e, k, node, cfg, lms, &d);
        detail::Candidate c;
        c.labels = e.labels;
        if (k != kBlank) c.labels.push_back(k);
        c.score = e.score + s;
        c.parent = b;
        c.token = k;
        c.roll = e.roll;
        if (k != kBlank && need_aux)
          c.roll = update_roll(e.roll, cfg.discount.rho, std::exp(ilm[static_cast<std::size_t>(k)]),
                               cfg.discount.ema_roll);
        if (cfg.trace) {
          TraceRecord r;
          r.step = i;
          r.t = t;
          r.u = u;
          r.token = k;
          r.log_prnnt = prnnt[static_cast<std::size_t>(k)];
          r.log_pilm = need_aux ? ilm[static_cast<std::size_t>(k)] : nan;
          r.kl = node.kl;
          r.d_adapt = d;
          r.p_roll_before = e.roll.p_roll;
          r.p_roll_after = c.roll.p_roll;
          r.score_delta = s;
          r.score = c.score;
          c.history = std::make_shared<const TraceNode>(TraceNode{r, e.history});
        }
        c.final = k == kBlank && t + 1 == T;
        cands.push_back(std::move(c));
      }
    }
    // Finished hypotheses compete for beam slots in the step that produced them,
    // so a width-1 beam follows the greedy path to its end.
    auto kept = prune_and_recombine(std::move(cands), cfg.beam_width);
    std::vector<BeamEntry> next;
    next.reserve(kept.size());
    for (auto& c : kept) {
      if (c.final) {
        finals.push_back(std::move(c));
        continue;
      }
      BeamEntry ne;
      ne.pstate = c.token == kBlank ? beam[c.parent].pstate : pn_step(p, beam[c.parent].pstate, c.token);
      ne.labels = std::move(c.labels);
      ne.score = c.score;
      ne.roll = c.roll;
      ne.history = std::move(c.history);
      next.push_back(std::move(ne));
    }
    beam = std::move(next);
  }

  if (finals.empty()) throw UsageError("alsd_decode: no hypothesis reached the final frame");
  auto best = prune_and_recombine(std::move(finals), cfg.nbest);
  DecodeResult res;
  for (const auto& c : best) res.nbest.push_back({c.labels, c.score});
  if (cfg.trace) res.trace = detail::unwind(best.front().history);
  return res;
}

/// Per frame, emits argmax labels until blank wins or `max_symbols` labels have been
/// emitted on that frame. Ties go to the lowest index.
inline DecodeResult greedy_decode(const ModelParams& p, const FeatureSequence& x, std::size_t max_symbols) {
  const EncoderOutput h = tn_forward(p, x);
  PredictorState st = pn_start(p);
  Hypothesis hyp;
  for (std::size_t t = 0; t < h.rows(); ++t) {
    for (std::size_t emitted = 0;; ++emitted) {
      const LogDistribution d = joint_dist(p, h.row(t), st.g);
      auto lp = d.log_probs();
      const auto best = static_cast<TokenId>(std::max_element(lp.begin(), lp.end()) - lp.begin());
      if (best == kBlank || emitted >= max_symbols) {
        hyp.score += lp[kBlank];
        break;
      }
      hyp.score += lp[static_cast<std::size_t>(best)];
      hyp.labels.push_back(best);
      st = pn_step(p, st, best);
    }
  }
  return {{hyp}, {}};
}

/// Decodes every utterance; results are in input order for any thread count.
inline std::vector<DecodeResult> decode_all(const ModelParams& p, std::span<const FeatureSequence> inputs,
                                            const DecodeConfig& cfg, const ExternalLms& lms = {},
                                            std::size_t threads = 1) {
  std::vector<DecodeResult> out(inputs.size());
  std::vector<std::exception_ptr> errors(inputs.size());
  auto work = [&](std::size_t i) {
    try {
      out[i] = alsd_decode(p, inputs[i], cfg, lms);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, inputs.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < inputs.size(); ++i) work(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < inputs.size(); i += threads) work(i);
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace rnnt
