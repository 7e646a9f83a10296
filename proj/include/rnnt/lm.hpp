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

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnnt/core.hpp"

namespace rnnt {

/// Add-k smoothed character n-gram model over the non-blank vocabulary.
///
/// Outcomes are the v-1 label tokens plus an end-of-sentence event. The blank slot
/// (index 0) never occurs in text, so it doubles as the begin-of-sentence padding
/// in contexts and as the end-of-sentence outcome.
class NGramLM {
 public:
  static constexpr TokenId kSentinel = kBlank;

  NGramLM() = default;
  NGramLM(std::size_t order, double add_k, std::size_t vocab_size, std::string vocab_hash = {})
      : order_(order), add_k_(add_k), v_(vocab_size), vocab_hash_(std::move(vocab_hash)) {
    if (order_ < 1) throw UsageError("n-gram order must be >= 1");
    if (!(add_k_ > 0.0)) throw UsageError("add_k must be > 0");
    if (v_ < 2) throw UsageError("n-gram vocabulary needs at least one label");
  }

  std::size_t order() const { return order_; }
  double add_k() const { return add_k_; }
  /// Size of the outcome space: labels plus end-of-sentence.
  std::size_t outcomes() const { return v_; }
  std::size_t vocab_size() const { return v_; }
  const std::string& vocab_hash() const { return vocab_hash_; }

  void add_sentence(std::span<const TokenId> sentence) {
    std::vector<TokenId> padded(order_ - 1, kSentinel);
    for (TokenId id : sentence) {
      if (id == kBlank || id < 0 || static_cast<std::size_t>(id) >= v_)
        throw UsageError("n-gram corpus contains invalid token " + std::to_string(id));
      padded.push_back(id);
    }
    padded.push_back(kSentinel);
    for (std::size_t i = order_ - 1; i < padded.size(); ++i) {
      std::vector<TokenId> ctx(padded.begin() + static_cast<std::ptrdiff_t>(i - (order_ - 1)),
                               padded.begin() + static_cast<std::ptrdiff_t>(i));
      auto& row = counts_[ctx];
      if (row.empty()) row.assign(v_, 0.0);
      row[static_cast<std::size_t>(padded[i])] += 1.0;
    }
  }

  /// log P(token | last order-1 tokens of history).
  double logprob(TokenId token, std::span<const TokenId> history) const {
    if (token == kBlank) throw UsageError("lm_logprob: blank is not an LM token");
    if (token < 0 || static_cast<std::size_t>(token) >= v_)
      throw UsageError("lm_logprob: token " + std::to_string(token) + " out of range");
    return outcome_logprob(static_cast<std::size_t>(token), history);
  }

  double end_logprob(std::span<const TokenId> history) const { return outcome_logprob(kSentinel, history); }

  const std::map<std::vector<TokenId>, std::vector<double>>& counts() const { return counts_; }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format_version"] = 1;
    j["order"] = order_;
    j["add_k"] = add_k_;
    j["vocab_size"] = v_;
    j["vocab_hash"] = vocab_hash_;
    auto& table = j["counts"] = nlohmann::json::array();
    for (const auto& [ctx, row] : counts_) table.push_back({{"context", ctx}, {"counts", row}});
    return j;
  }

  static NGramLM from_json(const nlohmann::json& j) {
    NGramLM lm(j.at("order").get<std::size_t>(), j.at("add_k").get<double>(), j.at("vocab_size").get<std::size_t>(),
               j.at("vocab_hash").get<std::string>());
    for (const auto& e : j.at("counts")) {
      auto ctx = e.at("context").get<std::vector<TokenId>>();
      auto row = e.at("counts").get<std::vector<double>>();
      if (ctx.size() != lm.order_ - 1 || row.size() != lm.v_) throw ParseError("n-gram count row has wrong shape", 0);
      lm.counts_.emplace(std::move(ctx), std::move(row));
    }
    return lm;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw UsageError("cannot write LM file " + path);
    out << to_json().dump() << '\n';
  }

  static NGramLM load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open LM file " + path);
    try {
      nlohmann::json j;
      in >> j;
      return from_json(j);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ": " + e.what(), 0);
    }
  }

  friend bool operator==(const NGramLM&, const NGramLM&) = default;

 private:
  double outcome_logprob(std::size_t outcome, std::span<const TokenId> history) const {
    std::vector<TokenId> ctx(order_ - 1, kSentinel);
    const std::size_t take = std::min(history.size(), order_ - 1);
    std::copy(history.end() - static_cast<std::ptrdiff_t>(take), history.end(),
              ctx.end() - static_cast<std::ptrdiff_t>(take));
    double count = 0.0, total = 0.0;
    if (auto it = counts_.find(ctx); it != counts_.end()) {
      count = it->second[outcome];
      for (double c : it->second) total += c;
    }
    return std::log((count + add_k_) / (total + add_k_ * static_cast<double>(v_)));
  }

  std::size_t order_ = 1;
  double add_k_ = 1.0;
  std::size_t v_ = 2;
  std::string vocab_hash_;
  std::map<std::vector<TokenId>, std::vector<double>> counts_;
};

inline NGramLM train_ngram(std::span<const LabelSequence> corpus, std::size_t order, double add_k,
                           std::size_t vocab_size, std::string vocab_hash = {}) {
  NGramLM lm(order, add_k, vocab_size, std::move(vocab_hash));
  for (const auto& s : corpus) lm.add_sentence(s);
  return lm;
}

inline double lm_logprob(const NGramLM& lm, TokenId token, std::span<const TokenId> history) {
  return lm.logprob(token, history);
}

}  // namespace rnnt
