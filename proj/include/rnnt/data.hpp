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

// Synthetic speech-like corpora. Every character owns a fixed random embedding;
// an utterance's features are those embeddings, each repeated for a few frames,
// plus Gaussian noise. Transcripts mix Zipf-distributed common words with
// occasionally injected rare words, optionally grouped into domains so one
// domain can be held out of training.

#pragma once

#include <array>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnnt/core.hpp"

namespace rnnt {

struct Utterance {
  std::string id;
  FeatureSequence features;
  std::string transcript;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

using Corpus = std::vector<Utterance>;

struct CorpusSpec {
  std::string chars = "abcdefghijklmnopqrstuvwxyz";  // space is always part of the vocabulary
  std::vector<std::string> common_words;
  std::vector<std::string> rare_words;
  double zipf_s = 1.0;
  double rare_prob = 0.05;  // chance that a word slot holds a rare word
  std::size_t utterances = 100;
  std::size_t words_min = 1;
  std::size_t words_max = 3;
  std::size_t frames_per_char = 3;
  std::size_t d_in = 8;
  double noise_sigma = 0.3;
  std::uint64_t seed = 0;
  /// Domain name -> member words (common or rare). Untagged words are shared by all
  /// domains.
  std::map<std::string, std::vector<std::string>> domains;

  Vocabulary vocabulary() const { return Vocabulary::from_chars(chars); }

  void validate() const {
    if (common_words.empty()) throw UsageError("corpus spec: common word list is empty");
    if (rare_prob > 0.0 && rare_words.empty()) throw UsageError("corpus spec: rare_prob > 0 but no rare words");
    if (!(rare_prob >= 0.0 && rare_prob <= 1.0)) throw UsageError("corpus spec: rare_prob must lie in [0, 1]");
    if (words_min < 1 || words_max < words_min) throw UsageError("corpus spec: bad words-per-utterance range");
    if (frames_per_char < 1) throw UsageError("corpus spec: frames_per_char must be >= 1");
    if (d_in < 1) throw UsageError("corpus spec: d_in must be >= 1");
    if (!(noise_sigma >= 0.0)) throw UsageError("corpus spec: noise_sigma must be >= 0");
    const Vocabulary vocab = vocabulary();
    std::set<std::string> common(common_words.begin(), common_words.end());
    std::set<std::string> all(common);
    for (const auto& w : rare_words) {
      if (common.count(w)) throw UsageError("corpus spec: '" + w + "' is both common and rare");
      all.insert(w);
    }
    for (const auto& w : all) {
      if (w.empty()) throw UsageError("corpus spec: empty word");
      for (const auto& c : utf8_chars(w)) {
        auto id = vocab.find(c);
        if (!id || c == " ") throw UsageError("corpus spec: word '" + w + "' is not spellable from the vocabulary");
      }
    }
    std::set<std::string> tagged;
    for (const auto& [name, words] : domains) {
      for (const auto& w : words) {
        if (!all.count(w)) throw UsageError("corpus spec: domain '" + name + "' lists unknown word '" + w + "'");
        if (!tagged.insert(w).second) throw UsageError("corpus spec: word '" + w + "' is in two domains");
      }
    }
  }
};

/// Per-character acoustic prototypes, one d_in row per vocabulary entry (row 0, the
/// blank, is unused).
inline Matrix char_embeddings(const CorpusSpec& spec) {
  const Vocabulary vocab = spec.vocabulary();
  Matrix emb(vocab.size(), spec.d_in);
  Rng rng(derive_seed(spec.seed, "char-embedding"));
  for (std::size_t r = 1; r < vocab.size(); ++r)
    for (std::size_t c = 0; c < spec.d_in; ++c) emb(r, c) = rng.normal();
  return emb;
}

inline FeatureSequence synthesize_features(const std::string& transcript, const Vocabulary& vocab, const Matrix& emb,
                                           std::size_t frames_per_char, double noise_sigma, Rng& noise) {
  const LabelSequence ids = encode_transcript(transcript, vocab);
  FeatureSequence x(ids.size() * frames_per_char, emb.cols());
  std::size_t row = 0;
  for (TokenId id : ids) {
    for (std::size_t f = 0; f < frames_per_char; ++f, ++row) {
      for (std::size_t c = 0; c < emb.cols(); ++c) {
        x(row, c) = emb(static_cast<std::size_t>(id), c);
        if (noise_sigma > 0.0) x(row, c) += noise_sigma * noise.normal();
      }
    }
  }
  return x;
}

namespace detail {

class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double s) {
    double acc = 0.0;
    for (std::size_t r = 1; r <= n; ++r) {
      acc += 1.0 / std::pow(static_cast<double>(r), s);
      cdf_.push_back(acc);
    }
  }
  std::size_t sample(Rng& rng) const {
    const double u = rng.uniform() * cdf_.back();
    return std::min<std::size_t>(static_cast<std::size_t>(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin()),
                                 cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

/// Word pools for one domain: the domain's own words followed by untagged words,
/// in spec order.
struct WordPools {
  std::vector<std::string> common;
  std::vector<std::string> rare;
};

inline std::vector<WordPools> domain_pools(const CorpusSpec& spec) {
  std::set<std::string> tagged;
  for (const auto& [_, words] : spec.domains) tagged.insert(words.begin(), words.end());
  auto shared = [&](const std::vector<std::string>& list) {
    std::vector<std::string> out;
    for (const auto& w : list)
      if (!tagged.count(w)) out.push_back(w);
    return out;
  };
  std::vector<WordPools> pools;
  if (spec.domains.empty()) {
    pools.push_back({spec.common_words, spec.rare_words});
    return pools;
  }
  for (const auto& [_, words] : spec.domains) {
    std::set<std::string> mine(words.begin(), words.end());
    WordPools p;
    for (const auto& w : spec.common_words)
      if (mine.count(w)) p.common.push_back(w);
    for (const auto& w : spec.rare_words)
      if (mine.count(w)) p.rare.push_back(w);
    auto sc = shared(spec.common_words), sr = shared(spec.rare_words);
    p.common.insert(p.common.end(), sc.begin(), sc.end());
    p.rare.insert(p.rare.end(), sr.begin(), sr.end());
    if (p.common.empty()) throw UsageError("corpus spec: a domain has no common words to draw from");
    pools.push_back(std::move(p));
  }
  return pools;
}

}  // namespace detail

/// Draws `count` transcripts. Each utterance picks a domain uniformly, then each
/// word slot holds a rare word with probability rare_prob and a Zipf-ranked common
/// word otherwise.
inline std::vector<std::string> gen_transcripts(const CorpusSpec& spec, std::size_t count, std::uint64_t stream_seed) {
  spec.validate();
  const auto pools = detail::domain_pools(spec);
  std::vector<detail::ZipfSampler> zipf;
  for (const auto& p : pools) zipf.emplace_back(p.common.size(), spec.zipf_s);
  Rng rng(stream_seed);
  std::vector<std::string> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t d = pools.size() == 1 ? 0 : rng.index(pools.size());
    const std::size_t n = spec.words_min + rng.index(spec.words_max - spec.words_min + 1);
    std::string text;
    for (std::size_t w = 0; w < n; ++w) {
      if (w) text += ' ';
      const bool rare = rng.bernoulli(spec.rare_prob) && !pools[d].rare.empty();
      text += rare ? pools[d].rare[rng.index(pools[d].rare.size())] : pools[d].common[zipf[d].sample(rng)];
    }
    out.push_back(std::move(text));
  }
  return out;
}

/// Deterministic given spec.seed. Transcripts and noise use separate streams, so
/// changing noise_sigma leaves the transcripts unchanged.
inline Corpus gen_corpus(const CorpusSpec& spec) {
  const auto texts = gen_transcripts(spec, spec.utterances, derive_seed(spec.seed, "transcripts"));
  const Vocabulary vocab = spec.vocabulary();
  const Matrix emb = char_embeddings(spec);
  Rng noise(derive_seed(spec.seed, "noise"));
  Corpus corpus;
  corpus.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "utt%06zu", i);
    corpus.push_back({id, synthesize_features(texts[i], vocab, emb, spec.frames_per_char, spec.noise_sigma, noise),
                      texts[i]});
  }
  return corpus;
}

// ─── Persistence ────────────────────────────────────────────────────────────

/// JSON Lines: {"id": ..., "transcript": ..., "features": [[...], ...]} per line.
inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write corpus " + path);
  for (const auto& u : corpus) {
    nlohmann::json frames = nlohmann::json::array();
    for (std::size_t t = 0; t < u.features.rows(); ++t) {
      auto r = u.features.row(t);
      frames.push_back(std::vector<double>(r.begin(), r.end()));
    }
    out << nlohmann::json{{"id", u.id}, {"transcript", u.transcript}, {"features", std::move(frames)}}.dump()
        << '\n';
  }
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open corpus " + path);
  Corpus corpus;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Utterance u;
      u.id = j.at("id").get<std::string>();
      u.transcript = j.at("transcript").get<std::string>();
      const auto& frames = j.at("features");
      const std::size_t T = frames.size();
      const std::size_t d = T ? frames.at(0).size() : 0;
      u.features = Matrix(T, d);
      for (std::size_t t = 0; t < T; ++t) {
        const auto row = frames.at(t).get<std::vector<double>>();
        if (row.size() != d) throw ParseError(path + ": ragged feature matrix", line_no);
        std::copy(row.begin(), row.end(), u.features.row(t).begin());
      }
      if (!ids.insert(u.id).second) throw ParseError(path + ": duplicate utterance id '" + u.id + "'", line_no);
      corpus.push_back(std::move(u));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ": malformed record: " + e.what(), line_no);
    }
  }
  return corpus;
}

// ─── Splitting ──────────────────────────────────────────────────────────────

struct CorpusSplit {
  Corpus train;
  Corpus dev;
  Corpus test;
};

/// Random split by `fractions` (train, dev, test). With `holdout_domain`, every
/// utterance containing one of that domain's words goes to test first; the rest
/// is split randomly.
inline CorpusSplit split_corpus(const Corpus& corpus, std::array<double, 3> fractions, std::uint64_t seed,
                                const std::map<std::string, std::vector<std::string>>& domains = {},
                                const std::optional<std::string>& holdout_domain = std::nullopt) {
  for (double f : fractions)
    if (!(f >= 0.0)) throw UsageError("split fractions must be >= 0");
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
    throw UsageError("split fractions must sum to 1");
  std::set<std::string> held;
  if (holdout_domain) {
    auto it = domains.find(*holdout_domain);
    if (it == domains.end()) throw UsageError("unknown domain '" + *holdout_domain + "'");
    held.insert(it->second.begin(), it->second.end());
  }
  CorpusSplit out;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    bool in_held = false;
    for (const auto& w : split_words(normalize_text(corpus[i].transcript))) in_held = in_held || held.count(w);
    if (in_held) out.test.push_back(corpus[i]);
    else pool.push_back(i);
  }
  Rng rng(derive_seed(seed, "split"));
  for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.index(i)]);
  const auto n = static_cast<double>(pool.size());
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * n));
  const auto n_dev = std::min(pool.size() - n_train, static_cast<std::size_t>(std::llround(fractions[1] * n)));
  std::vector<std::size_t> tr(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> dv(pool.begin() + static_cast<std::ptrdiff_t>(n_train),
                              pool.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev));
  std::vector<std::size_t> te(pool.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev), pool.end());
  for (auto* part : {&tr, &dv, &te}) std::sort(part->begin(), part->end());
  for (auto i : tr) out.train.push_back(corpus[i]);
  for (auto i : dv) out.dev.push_back(corpus[i]);
  for (auto i : te) out.test.push_back(corpus[i]);
  std::stable_sort(out.test.begin(), out.test.end(), [](const Utterance& a, const Utterance& b) { return a.id < b.id; });
  return out;
}

}  // namespace rnnt
