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

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rnnt/core.hpp"

namespace rnnt {

struct AlignedPair {
  std::optional<std::size_t> ref;  // empty for an insertion
  std::optional<std::size_t> hyp;  // empty for a deletion
};

struct Alignment {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::vector<AlignedPair> pairs;

  std::size_t errors() const { return substitutions + deletions + insertions; }
};

/// Unit-cost Levenshtein alignment. The backtrace prefers match/substitution, then
/// insertion, then deletion.
template <class Token>
Alignment edit_align(const std::vector<Token>& ref, const std::vector<Token>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> cost((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return cost[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1), at(i, j - 1) + 1, at(i - 1, j) + 1});

  Alignment a;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++a.substitutions;
      a.pairs.push_back({i - 1, j - 1});
      --i;
      --j;
    } else if (j > 0 && at(i, j) == at(i, j - 1) + 1) {
      ++a.insertions;
      a.pairs.push_back({std::nullopt, j - 1});
      --j;
    } else {
      ++a.deletions;
      a.pairs.push_back({i - 1, std::nullopt});
      --i;
    }
  }
  std::reverse(a.pairs.begin(), a.pairs.end());
  return a;
}

enum class ErrorUnit { word, character };

/// Words split on whitespace; characters are the code points of the normalized
/// text with spaces removed.
inline std::vector<std::string> tokenize(std::string_view text, ErrorUnit unit) {
  const std::string norm = normalize_text(text);
  if (unit == ErrorUnit::word) return split_words(norm);
  std::vector<std::string> chars;
  for (auto& c : utf8_chars(norm))
    if (c != " ") chars.push_back(std::move(c));
  return chars;
}

struct ErrorCounts {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t reference = 0;

  std::size_t errors() const { return substitutions + deletions + insertions; }
  double rate() const { return 100.0 * static_cast<double>(errors()) / static_cast<double>(reference); }
  void add(const Alignment& a, std::size_t ref_len) {
    substitutions += a.substitutions;
    deletions += a.deletions;
    insertions += a.insertions;
    reference += ref_len;
  }
};

struct RefHyp {
  std::string ref;
  std::string hyp;
};

inline ErrorCounts corpus_error_counts(std::span<const RefHyp> pairs, ErrorUnit unit) {
  ErrorCounts c;
  for (const auto& p : pairs) {
    const auto r = tokenize(p.ref, unit);
    c.add(edit_align(r, tokenize(p.hyp, unit)), r.size());
  }
  return c;
}

/// 100 * (S + D + I) / N, micro-averaged over the corpus.
inline double corpus_error_rate(std::span<const RefHyp> pairs, ErrorUnit unit) {
  if (pairs.empty()) throw UsageError("corpus_error_rate: no utterances");
  const ErrorCounts c = corpus_error_counts(pairs, unit);
  if (c.reference == 0) throw UsageError("corpus_error_rate: reference length is zero");
  return c.rate();
}

// ─── Rare words ─────────────────────────────────────────────────────────────

struct RareWordTable {
  std::map<std::string, std::size_t> counts;
  std::size_t threshold = 20;

  std::size_t count(const std::string& word) const {
    auto it = counts.find(word);
    return it == counts.end() ? 0 : it->second;
  }
  bool is_rare(const std::string& word) const { return count(word) < threshold; }
};

inline RareWordTable rare_table(std::span<const std::string> train_transcripts, std::size_t threshold = 20) {
  if (threshold < 1) throw UsageError("rare-word threshold must be >= 1");
  RareWordTable table;
  table.threshold = threshold;
  for (const auto& t : train_transcripts)
    for (auto& w : split_words(normalize_text(t))) ++table.counts[w];
  return table;
}

/// Optional grapheme-to-phoneme lexicon: word -> phoneme sequence. Words missing
/// from the table fall back to their characters.
using G2PTable = std::map<std::string, std::vector<std::string>>;

inline G2PTable load_g2p(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open g2p table " + path);
  G2PTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("g2p line needs word<TAB>phonemes", line_no);
    table[normalize_text(line.substr(0, tab))] = split_words(line.substr(tab + 1));
  }
  return table;
}

struct RareMetrics {
  std::size_t rare_words = 0;             // rare reference words seen
  std::optional<double> rare_cer;         // char errors / chars over rare reference words
  std::optional<double> rare_word_error;  // % of rare reference words not matched exactly
  std::optional<double> rare_per;         // only with a g2p table
};

/// Each rare reference word is compared with whatever the word-level alignment
/// pairs it with: its substitution partner, itself, or nothing for a deletion.
inline RareMetrics rare_word_metrics(std::span<const RefHyp> pairs, const RareWordTable& table,
                                     const G2PTable* g2p = nullptr) {
  RareMetrics m;
  std::size_t char_err = 0, char_ref = 0, word_err = 0, ph_err = 0, ph_ref = 0;
  auto phones = [&](const std::string& w) {
    if (auto it = g2p->find(w); it != g2p->end()) return it->second;
    return utf8_chars(w);
  };
  for (const auto& p : pairs) {
    const auto ref = tokenize(p.ref, ErrorUnit::word);
    const auto hyp = tokenize(p.hyp, ErrorUnit::word);
    const Alignment a = edit_align(ref, hyp);
    for (const auto& ap : a.pairs) {
      if (!ap.ref || !table.is_rare(ref[*ap.ref])) continue;
      const std::string& rw = ref[*ap.ref];
      const std::string hw = ap.hyp ? hyp[*ap.hyp] : std::string();
      ++m.rare_words;
      const auto rc = utf8_chars(rw);
      char_err += edit_align(rc, utf8_chars(hw)).errors();
      char_ref += rc.size();
      if (rw != hw) ++word_err;
      if (g2p) {
        const auto rp = phones(rw);
        ph_err += edit_align(rp, hw.empty() ? std::vector<std::string>{} : phones(hw)).errors();
        ph_ref += rp.size();
      }
    }
  }
  if (m.rare_words == 0) return m;
  m.rare_cer = 100.0 * static_cast<double>(char_err) / static_cast<double>(char_ref);
  m.rare_word_error = 100.0 * static_cast<double>(word_err) / static_cast<double>(m.rare_words);
  if (g2p && ph_ref > 0) m.rare_per = 100.0 * static_cast<double>(ph_err) / static_cast<double>(ph_ref);
  return m;
}

// ─── Report ─────────────────────────────────────────────────────────────────

struct UtteranceScore {
  std::string id;
  std::size_t word_errors = 0;
  std::size_t word_ref = 0;
  std::size_t char_errors = 0;
  std::size_t char_ref = 0;
};

struct EvalReport {
  double wer = 0.0;
  double cer = 0.0;
  ErrorCounts words;
  ErrorCounts chars;
  std::size_t rare_threshold = 20;
  RareMetrics rare;
  std::vector<UtteranceScore> per_utterance;
};

inline EvalReport evaluate(std::span<const std::string> ids, std::span<const RefHyp> pairs,
                           const RareWordTable& table, const G2PTable* g2p = nullptr) {
  if (ids.size() != pairs.size()) throw UsageError("evaluate: ids and pairs differ in length");
  if (pairs.empty()) throw UsageError("evaluate: no utterances");
  EvalReport r;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto rw = tokenize(pairs[i].ref, ErrorUnit::word);
    const auto rc = tokenize(pairs[i].ref, ErrorUnit::character);
    const Alignment aw = edit_align(rw, tokenize(pairs[i].hyp, ErrorUnit::word));
    const Alignment ac = edit_align(rc, tokenize(pairs[i].hyp, ErrorUnit::character));
    r.words.add(aw, rw.size());
    r.chars.add(ac, rc.size());
    r.per_utterance.push_back({ids[i], aw.errors(), rw.size(), ac.errors(), rc.size()});
  }
  if (r.words.reference == 0 || r.chars.reference == 0) throw UsageError("evaluate: reference length is zero");
  r.wer = r.words.rate();
  r.cer = r.chars.rate();
  r.rare_threshold = table.threshold;
  r.rare = rare_word_metrics(pairs, table, g2p);
  return r;
}

namespace detail {
inline std::string fmt_rate(std::optional<double> v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}
}  // namespace detail

/// Report layout: a "metric<TAB>value" summary, then optionally a per-utterance
/// section "id<TAB>word_errors<TAB>word_ref<TAB>char_errors<TAB>char_ref".
inline void write_report(std::ostream& out, const EvalReport& r, bool per_utterance) {
  out << "metric\tvalue\n";
  out << "wer\t" << detail::fmt_rate(r.wer) << '\n';
  out << "cer\t" << detail::fmt_rate(r.cer) << '\n';
  out << "word_sub\t" << r.words.substitutions << '\n';
  out << "word_del\t" << r.words.deletions << '\n';
  out << "word_ins\t" << r.words.insertions << '\n';
  out << "word_ref\t" << r.words.reference << '\n';
  out << "char_sub\t" << r.chars.substitutions << '\n';
  out << "char_del\t" << r.chars.deletions << '\n';
  out << "char_ins\t" << r.chars.insertions << '\n';
  out << "char_ref\t" << r.chars.reference << '\n';
  out << "rare_threshold\t" << r.rare_threshold << '\n';
  out << "rare_words\t" << r.rare.rare_words << '\n';
  out << "rare_cer\t" << detail::fmt_rate(r.rare.rare_cer) << '\n';
  out << "rare_word_error\t" << detail::fmt_rate(r.rare.rare_word_error) << '\n';
  out << "rare_per\t" << detail::fmt_rate(r.rare.rare_per) << '\n';
  if (!per_utterance) return;
  out << "\nid\tword_errors\tword_ref\tchar_errors\tchar_ref\n";
  for (const auto& u : r.per_utterance)
    out << u.id << '\t' << u.word_errors << '\t' << u.word_ref << '\t' << u.char_errors << '\t' << u.char_ref << '\n';
}

}  // namespace rnnt
