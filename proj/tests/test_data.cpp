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

#include <filesystem>
#include <fstream>
#include <set>

#include "rnnt/data.hpp"

namespace rnnt {
namespace {

CorpusSpec small_spec() {
  CorpusSpec s;
  s.common_words = {"the", "bank", "card", "pay", "shop", "sale"};
  s.rare_words = {"banner", "carder"};
  s.utterances = 40;
  s.seed = 7;
  return s;
}

CorpusSpec domain_spec() {
  CorpusSpec s = small_spec();
  s.domains = {{"money", {"bank", "pay", "banner"}}, {"retail", {"shop", "sale"}}};
  s.utterances = 200;
  return s;
}

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

TEST(Corpus, Deterministic) {
  EXPECT_EQ(gen_corpus(small_spec()), gen_corpus(small_spec()));
  CorpusSpec other = small_spec();
  other.seed = 8;
  EXPECT_NE(gen_corpus(small_spec()), gen_corpus(other));
}

TEST(Corpus, ShapesFollowTranscripts) {
  const CorpusSpec spec = small_spec();
  for (const auto& u : gen_corpus(spec)) {
    EXPECT_EQ(u.features.rows(), utf8_chars(u.transcript).size() * spec.frames_per_char);
    EXPECT_EQ(u.features.cols(), spec.d_in);
    const auto w = split_words(u.transcript);
    EXPECT_GE(w.size(), spec.words_min);
    EXPECT_LE(w.size(), spec.words_max);
  }
}

TEST(Corpus, NoiselessFramesRepeatExactly) {
  CorpusSpec spec = small_spec();
  spec.noise_sigma = 0.0;
  const Matrix emb = char_embeddings(spec);
  const Vocabulary vocab = spec.vocabulary();
  for (const auto& u : gen_corpus(spec)) {
    const LabelSequence ids = encode_transcript(u.transcript, vocab);
    for (std::size_t t = 0; t < u.features.rows(); ++t)
      for (std::size_t c = 0; c < spec.d_in; ++c)
        EXPECT_EQ(u.features(t, c), emb(static_cast<std::size_t>(ids[t / spec.frames_per_char]), c));
  }
}

TEST(Corpus, NoiseLevelLeavesTranscriptsAlone) {
  CorpusSpec a = small_spec(), b = small_spec();
  b.noise_sigma = 2.0;
  const Corpus ca = gen_corpus(a), cb = gen_corpus(b);
  for (std::size_t i = 0; i < ca.size(); ++i) EXPECT_EQ(ca[i].transcript, cb[i].transcript);
}

TEST(Corpus, NearestPrototypeRecoversCharacters) {
  CorpusSpec spec = small_spec();
  spec.noise_sigma = 0.0;
  const Matrix emb = char_embeddings(spec);
  const Vocabulary vocab = spec.vocabulary();
  std::size_t right = 0, total = 0;
  for (const auto& u : gen_corpus(spec)) {
    const LabelSequence ids = encode_transcript(u.transcript, vocab);
    for (std::size_t t = 0; t < u.features.rows(); ++t) {
      std::size_t best = 1;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t r = 1; r < emb.rows(); ++r) {
        double d = 0.0;
        for (std::size_t c = 0; c < spec.d_in; ++c) d += std::pow(u.features(t, c) - emb(r, c), 2);
        if (d < best_d) best_d = d, best = r;
      }
      right += best == static_cast<std::size_t>(ids[t / spec.frames_per_char]);
      ++total;
    }
  }
  EXPECT_EQ(right, total);
}

TEST(Corpus, RareWordRateMatchesSpec) {
  CorpusSpec spec = small_spec();
  spec.rare_prob = 0.05;
  const auto texts = gen_transcripts(spec, 10000, 99);
  const std::set<std::string> rare(spec.rare_words.begin(), spec.rare_words.end());
  std::size_t slots = 0, hits = 0;
  for (const auto& t : texts)
    for (const auto& w : split_words(t)) ++slots, hits += rare.count(w);
  const double rate = static_cast<double>(hits) / static_cast<double>(slots);
  EXPECT_GT(rate, 0.05 * 0.8);
  EXPECT_LT(rate, 0.05 * 1.2);
}

TEST(Corpus, ZeroUtterances) {
  CorpusSpec spec = small_spec();
  spec.utterances = 0;
  EXPECT_TRUE(gen_corpus(spec).empty());
}

TEST(Corpus, SpecValidation) {
  CorpusSpec s = small_spec();
  s.common_words.clear();
  EXPECT_THROW(gen_corpus(s), UsageError);
  s = small_spec();
  s.rare_words.push_back("the");
  EXPECT_THROW(gen_corpus(s), UsageError);
  s = small_spec();
  s.common_words.push_back("caf3");
  EXPECT_THROW(gen_corpus(s), UsageError);
  s = small_spec();
  s.domains = {{"x", {"bank"}}, {"y", {"bank"}}};
  EXPECT_THROW(gen_corpus(s), UsageError);
  s = small_spec();
  s.domains = {{"x", {"nothere"}}};
  EXPECT_THROW(gen_corpus(s), UsageError);
}

TEST(Corpus, DomainsKeepTheirWordsApart) {
  const CorpusSpec spec = domain_spec();
  const std::set<std::string> money{"bank", "pay", "banner"}, retail{"shop", "sale"};
  bool saw_money = false, saw_retail = false;
  for (const auto& u : gen_corpus(spec)) {
    bool m = false, r = false;
    for (const auto& w : split_words(u.transcript)) m = m || money.count(w), r = r || retail.count(w);
    EXPECT_FALSE(m && r) << u.transcript;
    saw_money = saw_money || m;
    saw_retail = saw_retail || r;
  }
  EXPECT_TRUE(saw_money);
  EXPECT_TRUE(saw_retail);
}

TEST(Persistence, RoundTripIsExact) {
  const Corpus c = gen_corpus(small_spec());
  const auto path = temp_file("rnnt_test_corpus.jsonl");
  save_corpus(c, path.string());
  EXPECT_EQ(load_corpus(path.string()), c);
  std::filesystem::remove(path);
}

TEST(Persistence, TruncatedFileNamesTheLine) {
  const Corpus c = gen_corpus(small_spec());
  const auto path = temp_file("rnnt_test_truncated.jsonl");
  save_corpus(c, path.string());
  std::string text;
  {
    std::ifstream in(path);
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  // Keep two full lines and half of the third.
  std::size_t cut = text.find('\n');
  cut = text.find('\n', cut + 1);
  const std::size_t third_end = text.find('\n', cut + 1);
  {
    std::ofstream out(path, std::ios::trunc);
    out << text.substr(0, cut + 1 + (third_end - cut) / 2);
  }
  try {
    load_corpus(path.string());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line, 3u);
  }
  std::filesystem::remove(path);
}

TEST(Persistence, DuplicateIdsRejected) {
  Corpus c = gen_corpus(small_spec());
  c[1].id = c[0].id;
  const auto path = temp_file("rnnt_test_dup.jsonl");
  save_corpus(c, path.string());
  EXPECT_THROW(load_corpus(path.string()), ParseError);
  std::filesystem::remove(path);
}

TEST(Split, AllToTrain) {
  const Corpus c = gen_corpus(small_spec());
  const CorpusSplit s = split_corpus(c, {1.0, 0.0, 0.0}, 3);
  EXPECT_EQ(s.train, c);
  EXPECT_TRUE(s.dev.empty());
  EXPECT_TRUE(s.test.empty());
}

TEST(Split, PartitionsWithoutLoss) {
  const Corpus c = gen_corpus(small_spec());
  const CorpusSplit s = split_corpus(c, {0.5, 0.25, 0.25}, 3);
  EXPECT_EQ(s.train.size(), 20u);
  EXPECT_EQ(s.dev.size(), 10u);
  EXPECT_EQ(s.test.size(), 10u);
  std::set<std::string> ids;
  for (const auto* part : {&s.train, &s.dev, &s.test})
    for (const auto& u : *part) EXPECT_TRUE(ids.insert(u.id).second);
  EXPECT_EQ(ids.size(), c.size());
}

TEST(Split, HoldoutDomainNeverReachesTraining) {
  const CorpusSpec spec = domain_spec();
  const Corpus c = gen_corpus(spec);
  const CorpusSplit s = split_corpus(c, {0.8, 0.1, 0.1}, 3, spec.domains, std::string("money"));
  const std::set<std::string> money{"bank", "pay", "banner"};
  auto has_money = [&](const Utterance& u) {
    for (const auto& w : split_words(u.transcript))
      if (money.count(w)) return true;
    return false;
  };
  for (const auto* part : {&s.train, &s.dev})
    for (const auto& u : *part) EXPECT_FALSE(has_money(u)) << u.transcript;
  std::size_t held = 0;
  for (const auto& u : c) held += has_money(u);
  std::size_t in_test = 0;
  for (const auto& u : s.test) in_test += has_money(u);
  EXPECT_EQ(in_test, held);
  EXPECT_GT(held, 0u);
}

TEST(Split, RejectsBadFractions) {
  const Corpus c = gen_corpus(small_spec());
  EXPECT_THROW(split_corpus(c, {0.5, 0.5, 0.5}, 3), UsageError);
  EXPECT_THROW(split_corpus(c, {1.5, -0.5, 0.0}, 3), UsageError);
  EXPECT_THROW(split_corpus(c, {0.8, 0.1, 0.1}, 3, {}, std::string("nope")), UsageError);
}

}  // namespace
}  // namespace rnnt
