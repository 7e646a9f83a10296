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

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rnnt {

// ─── Errors ─────────────────────────────────────────────────────────────────

/// Bad arguments or violated preconditions. The CLI maps this to exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OovError : UsageError {
  OovError(std::string ch, std::size_t pos)
      : UsageError("out-of-vocabulary character '" + ch + "' at position " +
                   std::to_string(pos)),
        character(std::move(ch)),
        position(pos) {}
  std::string character;
  std::size_t position;
};

struct ConfigError : UsageError {
  using UsageError::UsageError;
};

/// Malformed input file. `line` is 1-based, 0 when not applicable.
struct ParseError : std::runtime_error {
  ParseError(const std::string& what, std::size_t line_no)
      : std::runtime_error(line_no ? what + " (line " + std::to_string(line_no) + ")" : what),
        line(line_no) {}
  std::size_t line;
};

/// Non-finite values or failed verification. The CLI maps this to exit code 2.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using TokenId = int;
using Vector = std::vector<double>;
using LabelSequence = std::vector<TokenId>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr TokenId kBlank = 0;

#if defined(RNNT_VALIDATE_DISTRIBUTIONS) || !defined(NDEBUG)
inline constexpr bool kValidateDistributions = true;
#else
inline constexpr bool kValidateDistributions = false;
#endif

// ─── Log-domain arithmetic ──────────────────────────────────────────────────

inline double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (a == kNegInf) return a;
  return a + std::log1p(std::exp(b - a));
}

inline double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw UsageError("log_sum_exp: empty input");
  const double m = *std::max_element(values.begin(), values.end());
  if (std::isinf(m)) return m;
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - m);
  return m + std::log(sum);
}

inline double log_sum_exp(std::initializer_list<double> values) {
  return log_sum_exp(std::span<const double>(values.begin(), values.size()));
}

// ─── LogDistribution ────────────────────────────────────────────────────────

/// A normalized distribution over the vocabulary, stored as log-probabilities.
class LogDistribution {
 public:
  LogDistribution() = default;

  /// Log-softmax of `logits`.
  static LogDistribution from_logits(std::span<const double> logits) {
    LogDistribution d;
    d.logp_.assign(logits.begin(), logits.end());
    const double z = log_sum_exp(logits);
    for (double& v : d.logp_) v -= z;
    if constexpr (kValidateDistributions) d.validate();
    return d;
  }

  /// Wraps already-normalized log-probabilities; always validated.
  static LogDistribution from_log_probs(Vector logp) {
    LogDistribution d;
    d.logp_ = std::move(logp);
    d.validate();
    return d;
  }

  std::size_t size() const { return logp_.size(); }
  double operator[](std::size_t i) const { return logp_[i]; }
  double prob(std::size_t i) const { return std::exp(logp_[i]); }
  std::span<const double> log_probs() const { return logp_; }

  /// Throws NumericError unless exp-sum is 1 within 1e-9 and no entry is NaN or +inf.
  void validate() const {
    if (logp_.empty()) throw NumericError("LogDistribution: empty");
    double sum = 0.0;
    for (double v : logp_) {
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity() || v > 1e-9)
        throw NumericError("LogDistribution: invalid log-probability " + std::to_string(v));
      sum += std::exp(v);
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw NumericError("LogDistribution: mass " + std::to_string(sum) + " is not 1");
  }

  friend bool operator==(const LogDistribution&, const LogDistribution&) = default;

 private:
  Vector logp_;
};

// ─── Text handling ──────────────────────────────────────────────────────────

/// Splits UTF-8 text into code points. Invalid lead bytes become single-byte units.
inline std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size();) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if ((c & 0xE0) == 0xC0) len = 2;
    else if ((c & 0xF0) == 0xE0) len = 3;
    else if ((c & 0xF8) == 0xF0) len = 4;
    len = std::min(len, text.size() - i);
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

/// Lowercases ASCII, collapses whitespace runs to one space and trims both ends.
inline std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
  }
  return out;
}

/// Splits on ASCII whitespace.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

// ─── Vocabulary ─────────────────────────────────────────────────────────────

/// Character vocabulary. Index 0 is always the blank.
class Vocabulary {
 public:
  static constexpr std::string_view kBlankToken = "<b>";
  static constexpr std::string_view kSpaceToken = "<sp>";

  /// `tokens[0]` must be the blank marker "<b>". Tokens are stored unescaped.
  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < 2) throw UsageError("vocabulary needs blank plus at least one token");
    if (tokens_[0] != kBlankToken) throw UsageError("vocabulary entry 0 must be <b>");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (tokens_[i].empty()) throw UsageError("vocabulary contains an empty token");
      if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
        throw UsageError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }

  /// Blank, space, then every distinct code point of `chars` in order.
  static Vocabulary from_chars(std::string_view chars) {
    std::vector<std::string> tokens{std::string(kBlankToken), " "};
    for (auto& ch : utf8_chars(chars)) {
      if (std::find(tokens.begin(), tokens.end(), ch) == tokens.end()) tokens.push_back(ch);
    }
    return Vocabulary(std::move(tokens));
  }

  std::size_t size() const { return tokens_.size(); }
  TokenId blank_index() const { return kBlank; }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::optional<TokenId> find(std::string_view tok) const {
    auto it = index_.find(std::string(tok));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool is_label(TokenId id) const {
    return id != kBlank && id >= 0 && static_cast<std::size_t>(id) < tokens_.size();
  }

  /// FNV-1a over the escaped token list; used to tie LM files to a vocabulary.
  std::string hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& t : tokens_) {
      for (unsigned char c : escape(t)) {
        h ^= c;
        h *= 1099511628211ULL;
      }
      h ^= '\n';
      h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  static std::string escape(const std::string& tok) { return tok == " " ? std::string(kSpaceToken) : tok; }
  static std::string unescape(const std::string& tok) { return tok == kSpaceToken ? " " : tok; }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open vocabulary file " + path);
    std::vector<std::string> tokens;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) throw ParseError("empty vocabulary line", line_no);
      if (line_no == 1 && line != kBlankToken) throw ParseError("first vocabulary line must be <b>", 1);
      tokens.push_back(unescape(line));
    }
    try {
      return Vocabulary(std::move(tokens));
    } catch (const UsageError& e) {
      throw ParseError(path + ": " + e.what(), 0);
    }
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw UsageError("cannot write vocabulary file " + path);
    for (const auto& t : tokens_) out << escape(t) << '\n';
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Normalizes `text` and maps each character to its vocabulary index.
inline LabelSequence encode_transcript(std::string_view text, const Vocabulary& vocab) {
  const std::string norm = normalize_text(text);
  if (norm.empty()) throw UsageError("encode_transcript: empty transcript");
  LabelSequence ids;
  const auto chars = utf8_chars(norm);
  for (std::size_t i = 0; i < chars.size(); ++i) {
    auto id = vocab.find(chars[i]);
    if (!id || *id == kBlank) throw OovError(chars[i], i);
    ids.push_back(*id);
  }
  return ids;
}

inline std::string decode_labels(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : ids) {
    if (!vocab.is_label(id)) throw UsageError("decode_labels: invalid label index " + std::to_string(id));
    out += vocab.token(id);
  }
  return out;
}

// ─── Feature matrix ─────────────────────────────────────────────────────────

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  /// Rows [0, n).
  Matrix head_rows(std::size_t n) const {
    Matrix m(n, cols_);
    std::copy_n(data_.begin(), n * cols_, m.data_.begin());
    return m;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Acoustic frames, one row per frame.
using FeatureSequence = Matrix;

inline void check_features(const FeatureSequence& x, std::size_t d_in) {
  if (x.rows() == 0) throw UsageError("feature sequence has no frames");
  if (x.cols() != d_in)
    throw UsageError("feature dimension " + std::to_string(x.cols()) + " does not match model d_in " +
                     std::to_string(d_in));
  for (double v : x.data())
    if (!std::isfinite(v)) throw UsageError("feature sequence contains a non-finite value");
}

// ─── Randomness ─────────────────────────────────────────────────────────────

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Purpose-keyed seed derivation: independent streams from one base seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : purpose) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return splitmix64(base ^ splitmix64(h));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(base ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

/// mt19937_64 with hand-written variate transforms so streams are identical across
/// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace rnnt
