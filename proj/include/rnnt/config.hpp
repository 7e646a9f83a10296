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

// Run configuration: an INI document with sections [model], [loss], [decode],
// [data] and [eval] plus the top-level keys `seed` and `threads`. Every key has a
// default; unknown keys are rejected.

#pragma once

#include <algorithm>
#include <charconv>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "rnnt/data.hpp"
#include "rnnt/decode.hpp"
#include "rnnt/model.hpp"
#include "rnnt/train.hpp"

namespace rnnt {

struct DecodeSettings {
  Strategy strategy = Strategy::baseline;
  bool greedy = false;  // strategy "greedy": per-frame argmax instead of beam search
  std::size_t beam_width = 4;
  std::size_t max_symbols = 0;  // 0: twice the frame count
  std::size_t greedy_max_symbols = 5;
  std::size_t nbest = 1;
  std::optional<double> lambda;  // required for the discounting strategies
  std::optional<double> rho;     // required for adaptlmd
  double p_roll_init = 1.0;
  bool static_mode = false;
  bool ema_roll = false;
  double fusion_mu = 0.0;
  double fusion_nu = 0.0;
  std::string src_lm;
  std::string tgt_lm;

  friend bool operator==(const DecodeSettings&, const DecodeSettings&) = default;
};

/// Word lists for the stock experiment: three topical domains over a shared core,
/// plus rare words spelled close to common ones so an implicit LM pulls toward the
/// familiar spelling.
inline CorpusSpec default_corpus() {
  CorpusSpec c;
  c.common_words = {"the",  "and",   "bank", "card",  "pay",  "money", "phone", "plan",  "data", "call",
                    "order", "price", "shop", "sale", "loan", "cash",  "bill",  "store", "offer", "account"};
  c.rare_words = {"banner", "carder", "planet", "caller", "shoppe", "loaner"};
  c.domains = {{"banking", {"bank", "loan", "cash", "account"}},
               {"retail", {"shop", "sale", "store", "price", "order"}},
               {"telco", {"phone", "plan", "data", "call"}}};
  c.utterances = 2000;
  c.noise_sigma = 0.6;
  return c;
}

struct DataSettings {
  CorpusSpec corpus = default_corpus();
  double train_fraction = 0.8;
  double dev_fraction = 0.1;
  double test_fraction = 0.1;
  std::string holdout_domain = "banking";
  std::size_t lm_order = 3;
  double lm_add_k = 0.5;
  std::size_t lm_text_utterances = 2000;

  friend bool operator==(const DataSettings& a, const DataSettings& b) {
    const auto& x = a.corpus;
    const auto& y = b.corpus;
    return x.chars == y.chars && x.common_words == y.common_words && x.rare_words == y.rare_words &&
           x.zipf_s == y.zipf_s && x.rare_prob == y.rare_prob && x.utterances == y.utterances &&
           x.words_min == y.words_min && x.words_max == y.words_max && x.frames_per_char == y.frames_per_char &&
           x.noise_sigma == y.noise_sigma && x.domains == y.domains && a.train_fraction == b.train_fraction &&
           a.dev_fraction == b.dev_fraction && a.test_fraction == b.test_fraction &&
           a.holdout_domain == b.holdout_domain && a.lm_order == b.lm_order && a.lm_add_k == b.lm_add_k &&
           a.lm_text_utterances == b.lm_text_utterances;
  }
};

struct EvalSettings {
  std::size_t rare_threshold = 20;
  bool per_utterance = true;
  std::string g2p;

  friend bool operator==(const EvalSettings&, const EvalSettings&) = default;
};

struct TrainSettings {
  double alpha = 0.125;
  double beta = 0.125;
  double eta = 0.2;
  double lr = 1e-4;
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  double clip_norm = 5.0;

  friend bool operator==(const TrainSettings&, const TrainSettings&) = default;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  ModelDims model;
  TrainSettings loss;
  DecodeSettings decode;
  DataSettings data;
  EvalSettings eval;

  friend bool operator==(const RunConfig& a, const RunConfig& b) {
    return a.seed == b.seed && a.threads == b.threads && a.model == b.model && a.loss == b.loss &&
           a.decode == b.decode && a.data == b.data && a.eval == b.eval;
  }

  Vocabulary vocabulary() const { return data.corpus.vocabulary(); }

  /// Model dimensions with the vocabulary size filled in.
  ModelDims model_dims() const {
    ModelDims d = model;
    d.v = vocabulary().size();
    return d;
  }

  CorpusSpec corpus_spec() const {
    CorpusSpec s = data.corpus;
    s.d_in = model.d_in;
    s.seed = derive_seed(seed, "data");
    return s;
  }

  TrainOptions train_options() const {
    TrainOptions o;
    o.loss.alpha = loss.alpha;
    o.loss.beta = loss.beta;
    o.loss.eta = loss.eta;
    o.lr = loss.lr;
    o.epochs = loss.epochs;
    o.batch_size = loss.batch_size;
    o.clip_norm = loss.clip_norm;
    o.seed = seed;
    o.threads = threads;
    return o;
  }

  DecodeConfig decode_config() const {
    DecodeConfig c;
    c.strategy = decode.strategy;
    c.beam_width = decode.beam_width;
    if (decode.max_symbols > 0) c.max_symbols = decode.max_symbols;
    c.nbest = decode.nbest;
    c.discount.lambda = decode.lambda.value_or(0.0);
    c.discount.rho = decode.rho.value_or(0.0);
    c.discount.p_roll_init = decode.p_roll_init;
    c.discount.static_mode = decode.static_mode;
    c.discount.ema_roll = decode.ema_roll;
    c.fusion_mu = decode.fusion_mu;
    c.fusion_nu = decode.fusion_nu;
    return c;
  }

  void validate() const {
    ModelDims d = model_dims();
    d.validate();
    if (d.v > 4096) throw ConfigError("vocabulary too large");
    train_options().loss.validate();
    if (!(loss.lr >= 0.0)) throw ConfigError("[loss] lr must be >= 0");
    if (loss.batch_size < 1) throw ConfigError("[loss] batch_size must be >= 1");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    const bool discounting = !decode.greedy && (decode.strategy == Strategy::adaptlmd ||
                                                decode.strategy == Strategy::static_discount);
    if (discounting && !decode.lambda) throw ConfigError("[decode] lambda is required for " +
                                                          std::string(to_string(decode.strategy)));
    if (!decode.greedy && decode.strategy == Strategy::adaptlmd && !decode.rho)
      throw ConfigError("[decode] rho is required for adaptlmd");
    decode_config().validate();
    if (std::abs(data.train_fraction + data.dev_fraction + data.test_fraction - 1.0) > 1e-9)
      throw ConfigError("[data] split fractions must sum to 1");
    if (!data.holdout_domain.empty() && !data.corpus.domains.count(data.holdout_domain))
      throw ConfigError("[data] holdout_domain '" + data.holdout_domain + "' is not a declared domain");
    if (eval.rare_threshold < 1) throw ConfigError("[eval] rare_threshold must be >= 1");
  }
};

namespace config_detail {

inline std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
    throw ConfigError("config key '" + key + "': expected a number, got '" + s + "'");
  return v;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + s + "'");
}

inline std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  return out;
}

struct Field {
  std::string section;  // empty for top-level keys
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::optional<std::string>(const RunConfig&)> get;
};

template <class T>
Field num(std::string sec, std::string key, T RunConfig::*part, double T::*member) {
  const std::string full = sec + "." + key;
  return {sec, key, [=](RunConfig& c, const std::string& s) { (c.*part).*member = parse_double(full, s); },
          [=](const RunConfig& c) -> std::optional<std::string> { return fmt((c.*part).*member); }};
}

template <class T>
Field count(std::string sec, std::string key, T RunConfig::*part, std::size_t T::*member) {
  const std::string full = sec + "." + key;
  return {sec, key,
          [=](RunConfig& c, const std::string& s) { (c.*part).*member = static_cast<std::size_t>(parse_uint(full, s)); },
          [=](const RunConfig& c) -> std::optional<std::string> { return std::to_string((c.*part).*member); }};
}

template <class T>
Field flag(std::string sec, std::string key, T RunConfig::*part, bool T::*member) {
  const std::string full = sec + "." + key;
  return {sec, key, [=](RunConfig& c, const std::string& s) { (c.*part).*member = parse_bool(full, s); },
          [=](const RunConfig& c) -> std::optional<std::string> { return (c.*part).*member ? "true" : "false"; }};
}

template <class T>
Field text(std::string sec, std::string key, T RunConfig::*part, std::string T::*member) {
  return {sec, key, [=](RunConfig& c, const std::string& s) { (c.*part).*member = s; },
          [=](const RunConfig& c) -> std::optional<std::string> { return (c.*part).*member; }};
}

inline Field optional_num(std::string key, std::optional<double> DecodeSettings::*member) {
  const std::string full = "decode." + key;
  return {"decode", key,
          [=](RunConfig& c, const std::string& s) {
            if (s.empty()) c.decode.*member = std::nullopt;
            else c.decode.*member = parse_double(full, s);
          },
          [=](const RunConfig& c) -> std::optional<std::string> {
            if (!(c.decode.*member)) return std::nullopt;
            return fmt(*(c.decode.*member));
          }};
}

inline Field corpus_num(std::string key, double CorpusSpec::*member) {
  const std::string full = "data." + key;
  return {"data", key, [=](RunConfig& c, const std::string& s) { c.data.corpus.*member = parse_double(full, s); },
          [=](const RunConfig& c) -> std::optional<std::string> { return fmt(c.data.corpus.*member); }};
}

inline Field corpus_count(std::string key, std::size_t CorpusSpec::*member) {
  const std::string full = "data." + key;
  return {"data", key,
          [=](RunConfig& c, const std::string& s) {
            c.data.corpus.*member = static_cast<std::size_t>(parse_uint(full, s));
          },
          [=](const RunConfig& c) -> std::optional<std::string> { return std::to_string(c.data.corpus.*member); }};
}

inline Field corpus_words(std::string key, std::vector<std::string> CorpusSpec::*member) {
  return {"data", key, [=](RunConfig& c, const std::string& s) { c.data.corpus.*member = split_words(s); },
          [=](const RunConfig& c) -> std::optional<std::string> { return join(c.data.corpus.*member); }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"", "seed", [](RunConfig& c, const std::string& s) { c.seed = parse_uint("seed", s); },
                 [](const RunConfig& c) -> std::optional<std::string> { return std::to_string(c.seed); }});
    f.push_back({"", "threads",
                 [](RunConfig& c, const std::string& s) { c.threads = static_cast<std::size_t>(parse_uint("threads", s)); },
                 [](const RunConfig& c) -> std::optional<std::string> { return std::to_string(c.threads); }});

    f.push_back(count("model", "d_in", &RunConfig::model, &ModelDims::d_in));
    f.push_back(count("model", "d_enc", &RunConfig::model, &ModelDims::d_enc));
    f.push_back(count("model", "d_pred", &RunConfig::model, &ModelDims::d_pred));
    f.push_back(count("model", "d_joint", &RunConfig::model, &ModelDims::d_joint));
    f.push_back(count("model", "d_emb", &RunConfig::model, &ModelDims::d_emb));

    f.push_back(num("loss", "alpha", &RunConfig::loss, &TrainSettings::alpha));
    f.push_back(num("loss", "beta", &RunConfig::loss, &TrainSettings::beta));
    f.push_back(num("loss", "eta", &RunConfig::loss, &TrainSettings::eta));
    f.push_back(num("loss", "lr", &RunConfig::loss, &TrainSettings::lr));
    f.push_back(count("loss", "epochs", &RunConfig::loss, &TrainSettings::epochs));
    f.push_back(count("loss", "batch_size", &RunConfig::loss, &TrainSettings::batch_size));
    f.push_back(num("loss", "clip_norm", &RunConfig::loss, &TrainSettings::clip_norm));

    f.push_back({"decode", "strategy",
                 [](RunConfig& c, const std::string& s) {
                   if (s == "greedy") {
                     c.decode.greedy = true;
                     c.decode.strategy = Strategy::baseline;
                     return;
                   }
                   auto st = parse_strategy(s);
                   if (!st)
                     throw ConfigError("unknown strategy '" + s +
                                       "' (valid: baseline, adaptlmd, static_discount, shallow_fusion, "
                                       "density_ratio, greedy)");
                   c.decode.greedy = false;
                   c.decode.strategy = *st;
                 },
                 [](const RunConfig& c) -> std::optional<std::string> {
                   return c.decode.greedy ? std::string("greedy") : std::string(to_string(c.decode.strategy));
                 }});
    f.push_back(count("decode", "beam_width", &RunConfig::decode, &DecodeSettings::beam_width));
    f.push_back(count("decode", "max_symbols", &RunConfig::decode, &DecodeSettings::max_symbols));
    f.push_back(count("decode", "greedy_max_symbols", &RunConfig::decode, &DecodeSettings::greedy_max_symbols));
    f.push_back(count("decode", "nbest", &RunConfig::decode, &DecodeSettings::nbest));
    f.push_back(optional_num("lambda", &DecodeSettings::lambda));
    f.push_back(optional_num("rho", &DecodeSettings::rho));
    f.push_back(num("decode", "p_roll_init", &RunConfig::decode, &DecodeSettings::p_roll_init));
    f.push_back(flag("decode", "static_mode", &RunConfig::decode, &DecodeSettings::static_mode));
    f.push_back(flag("decode", "ema_roll", &RunConfig::decode, &DecodeSettings::ema_roll));
    f.push_back(num("decode", "fusion_mu", &RunConfig::decode, &DecodeSettings::fusion_mu));
    f.push_back(num("decode", "fusion_nu", &RunConfig::decode, &DecodeSettings::fusion_nu));
    f.push_back(text("decode", "src_lm", &RunConfig::decode, &DecodeSettings::src_lm));
    f.push_back(text("decode", "tgt_lm", &RunConfig::decode, &DecodeSettings::tgt_lm));

    f.push_back({"data", "chars", [](RunConfig& c, const std::string& s) { c.data.corpus.chars = s; },
                 [](const RunConfig& c) -> std::optional<std::string> { return c.data.corpus.chars; }});
    f.push_back(corpus_words("common_words", &CorpusSpec::common_words));
    f.push_back(corpus_words("rare_words", &CorpusSpec::rare_words));
    f.push_back(corpus_num("rare_prob", &CorpusSpec::rare_prob));
    f.push_back(corpus_num("zipf_s", &CorpusSpec::zipf_s));
    f.push_back(corpus_count("utterances", &CorpusSpec::utterances));
    f.push_back(corpus_count("words_min", &CorpusSpec::words_min));
    f.push_back(corpus_count("words_max", &CorpusSpec::words_max));
    f.push_back(corpus_count("frames_per_char", &CorpusSpec::frames_per_char));
    f.push_back(corpus_num("noise_sigma", &CorpusSpec::noise_sigma));
    f.push_back(num("data", "train_fraction", &RunConfig::data, &DataSettings::train_fraction));
    f.push_back(num("data", "dev_fraction", &RunConfig::data, &DataSettings::dev_fraction));
    f.push_back(num("data", "test_fraction", &RunConfig::data, &DataSettings::test_fraction));
    f.push_back(text("data", "holdout_domain", &RunConfig::data, &DataSettings::holdout_domain));
    f.push_back(count("data", "lm_order", &RunConfig::data, &DataSettings::lm_order));
    f.push_back(num("data", "lm_add_k", &RunConfig::data, &DataSettings::lm_add_k));
    f.push_back(count("data", "lm_text_utterances", &RunConfig::data, &DataSettings::lm_text_utterances));

    f.push_back(count("eval", "rare_threshold", &RunConfig::eval, &EvalSettings::rare_threshold));
    f.push_back(flag("eval", "per_utterance", &RunConfig::eval, &EvalSettings::per_utterance));
    f.push_back(text("eval", "g2p", &RunConfig::eval, &EvalSettings::g2p));
    return f;
  }();
  return table;
}

inline const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields())
    if (f.section == section && f.key == key) return &f;
  return nullptr;
}

inline constexpr std::string_view kDomainPrefix = "domain.";

}  // namespace config_detail

/// Applies one "section.key" (or top-level "key") assignment.
inline void set_config_value(RunConfig& cfg, const std::string& dotted, const std::string& value) {
  const auto dot = dotted.find('.');
  std::string section = dot == std::string::npos ? "" : dotted.substr(0, dot);
  std::string key = dot == std::string::npos ? dotted : dotted.substr(dot + 1);
  if (section == "data" && key.starts_with(config_detail::kDomainPrefix)) {
    const std::string name = key.substr(config_detail::kDomainPrefix.size());
    if (name.empty()) throw ConfigError("empty domain name in '" + dotted + "'");
    auto words = split_words(value);
    if (words.empty()) cfg.data.corpus.domains.erase(name);
    else cfg.data.corpus.domains[name] = std::move(words);
    return;
  }
  const auto* f = config_detail::find_field(section, key);
  if (!f) throw ConfigError("unknown config key '" + dotted + "'");
  f->set(cfg, value);
}

inline RunConfig parse_config(std::istream& in, const std::string& origin = "config") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(origin + ": " + e.message(), e.line());
  }
  RunConfig cfg;
  for (const auto& [name, node] : tree) {
    const bool section = name == "model" || name == "loss" || name == "decode" || name == "data" || name == "eval";
    if (node.empty() && !section) {
      set_config_value(cfg, name, node.data());
      continue;
    }
    if (!section) throw ConfigError(origin + ": unknown section [" + name + "]");
    // A file that declares domains declares all of them.
    if (name == "data" && std::any_of(node.begin(), node.end(), [](const auto& kv) {
          return kv.first.starts_with(config_detail::kDomainPrefix);
        }))
      cfg.data.corpus.domains.clear();
    for (const auto& [key, leaf] : node) set_config_value(cfg, name + "." + key, leaf.data());
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path);
  return parse_config(in, path);
}

/// Fully resolved configuration in the same INI layout; parse_config(write_config(c)) == c.
inline std::string write_config(const RunConfig& cfg) {
  std::ostringstream out;
  std::string current = "";
  for (const auto& f : config_detail::fields()) {
    if (f.section != current) {
      out << "\n[" << f.section << "]\n";
      current = f.section;
    }
    if (auto v = f.get(cfg)) out << f.key << " = " << *v << '\n';
    if (f.section == "data" && f.key == "lm_text_utterances") {
      for (const auto& [name, words] : cfg.data.corpus.domains)
        out << config_detail::kDomainPrefix << name << " = " << config_detail::join(words) << '\n';
    }
  }
  return out.str();
}

}  // namespace rnnt
