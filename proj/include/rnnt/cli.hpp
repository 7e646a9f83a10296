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

// Subcommands gen, train, decode, eval and gradcheck. `run` is the whole program;
// it never calls exit() so tests can drive it in-process.

#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rnnt/config.hpp"
#include "rnnt/data.hpp"
#include "rnnt/decode.hpp"
#include "rnnt/eval.hpp"
#include "rnnt/lm.hpp"
#include "rnnt/loss.hpp"
#include "rnnt/train.hpp"

namespace rnnt::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kFailure = 2 };

/// Thrown when a verification step (gradcheck) fails; maps to exit code 2.
struct VerificationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;  // from --section.key=value
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool trace = false;
};

inline RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  for (const auto& [k, v] : o.overrides) set_config_value(cfg, k, v);
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  cfg.validate();
  return cfg;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << text;
}

inline void require_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("output directory does not exist: " + dir.string());
}

inline std::string fmt_score(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10f", v);
  return buf;
}

// ─── gen ────────────────────────────────────────────────────────────────────

/// Text for the target-domain LM: transcripts drawn only from the held-out domain
/// plus shared words, or from the whole spec when nothing is held out.
inline std::vector<std::string> target_domain_text(const RunConfig& cfg) {
  CorpusSpec s = cfg.corpus_spec();
  const auto n = cfg.data.lm_text_utterances;
  const auto seed = derive_seed(cfg.seed, "lm-text");
  if (cfg.data.holdout_domain.empty()) return gen_transcripts(s, n, seed);
  std::set<std::string> foreign;
  for (const auto& [name, words] : s.domains)
    if (name != cfg.data.holdout_domain) foreign.insert(words.begin(), words.end());
  auto keep = [&](std::vector<std::string>& list) { std::erase_if(list, [&](auto& w) { return foreign.count(w) > 0; }); };
  keep(s.common_words);
  keep(s.rare_words);
  s.domains = {{cfg.data.holdout_domain, s.domains.at(cfg.data.holdout_domain)}};
  if (s.rare_words.empty()) s.rare_prob = 0.0;
  return gen_transcripts(s, n, seed);
}

inline int cmd_gen(const RunConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  require_dir(out_dir);
  const Vocabulary vocab = cfg.vocabulary();
  const Corpus corpus = gen_corpus(cfg.corpus_spec());
  std::optional<std::string> holdout;
  if (!cfg.data.holdout_domain.empty()) holdout = cfg.data.holdout_domain;
  const CorpusSplit split =
      split_corpus(corpus, {cfg.data.train_fraction, cfg.data.dev_fraction, cfg.data.test_fraction}, cfg.seed,
                   cfg.data.corpus.domains, holdout);
  save_corpus(split.train, (out_dir / "train.jsonl").string());
  save_corpus(split.dev, (out_dir / "dev.jsonl").string());
  save_corpus(split.test, (out_dir / "test.jsonl").string());
  vocab.save((out_dir / "vocab.txt").string());

  std::vector<LabelSequence> src;
  for (const auto& u : split.train) src.push_back(encode_transcript(u.transcript, vocab));
  train_ngram(src, cfg.data.lm_order, cfg.data.lm_add_k, vocab.size(), vocab.hash())
      .save((out_dir / "lm_source.json").string());
  std::vector<LabelSequence> tgt;
  for (const auto& t : target_domain_text(cfg)) tgt.push_back(encode_transcript(t, vocab));
  train_ngram(tgt, cfg.data.lm_order, cfg.data.lm_add_k, vocab.size(), vocab.hash())
      .save((out_dir / "lm_target.json").string());
  write_text(out_dir / "config.ini", write_config(cfg));
  log << "gen: train " << split.train.size() << ", dev " << split.dev.size() << ", test " << split.test.size()
      << " utterances in " << out_dir.string() << '\n';
  return kOk;
}

// ─── train ──────────────────────────────────────────────────────────────────

inline void check_vocab_file(const fs::path& data_file, const Vocabulary& vocab) {
  const fs::path vf = data_file.parent_path() / "vocab.txt";
  if (!fs::exists(vf)) return;
  if (!(Vocabulary::load(vf.string()) == vocab))
    throw UsageError("vocabulary in " + vf.string() + " does not match the config's [data] chars");
}

inline std::string checkpoint_name(std::size_t epoch) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "checkpoint_epoch%03zu.json", epoch);
  return buf;
}

inline int cmd_train(const RunConfig& cfg, const fs::path& data_file, const fs::path& out_dir,
                     const std::string& resume, std::ostream& log) {
  require_dir(out_dir);
  const Vocabulary vocab = cfg.vocabulary();
  check_vocab_file(data_file, vocab);
  const Corpus corpus = load_corpus(data_file.string());
  for (const auto& u : corpus) check_features(u.features, cfg.model.d_in);
  const auto examples = make_examples(corpus, vocab);
  const TrainOptions opt = cfg.train_options();

  Checkpoint ck;
  if (resume.empty()) {
    ck.params = init_params(cfg.model_dims(), cfg.seed);
    ck.seed = cfg.seed;
  } else {
    ck = load_checkpoint(resume);
    if (!(ck.params.dims == cfg.model_dims())) throw UsageError("checkpoint dimensions do not match the config");
    if (ck.seed != cfg.seed) throw UsageError("checkpoint was trained with a different seed");
  }

  const fs::path log_path = out_dir / "train_log.tsv";
  std::vector<std::string> lines;
  if (!resume.empty() && fs::exists(log_path)) {
    // Keep the rows of epochs the checkpoint already covers.
    std::ifstream in(log_path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoul(line.substr(0, line.find('\t'))) <= ck.epoch) lines.push_back(line);
    }
  }
  write_text(out_dir / "config.ini", write_config(cfg));
  auto flush_log = [&] {
    std::string text = std::string(kEpochLogHeader) + '\n';
    for (const auto& l : lines) text += l + '\n';
    write_text(log_path, text);
  };
  flush_log();

  for (std::size_t epoch = ck.epoch + 1; epoch <= opt.epochs; ++epoch) {
    const EpochStats st = train_epoch(ck.params, examples, opt, epoch);
    ck.epoch = epoch;
    save_checkpoint(ck, (out_dir / checkpoint_name(epoch)).string());
    save_checkpoint(ck, (out_dir / "checkpoint.json").string());
    lines.push_back(format_epoch_line(st));
    flush_log();
    log << "epoch " << epoch << " loss " << st.loss << " (" << static_cast<long>(st.wall_ms) << " ms)\n";
  }
  return kOk;
}

// ─── decode ─────────────────────────────────────────────────────────────────

inline nlohmann::json trace_json(const std::string& id, const TraceRecord& r) {
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  return {{"id", id},
          {"step", r.step},
          {"t", r.t},
          {"u", r.u},
          {"token", r.token},
          {"log_prnnt", r.log_prnnt},
          {"log_pilm", num(r.log_pilm)},
          {"kl", num(r.kl)},
          {"d_adapt", r.d_adapt},
          {"p_roll_before", r.p_roll_before},
          {"p_roll_after", r.p_roll_after},
          {"score_delta", r.score_delta},
          {"score", r.score}};
}

inline int cmd_decode(const RunConfig& cfg, const std::string& checkpoint, const fs::path& data_file,
                      const fs::path& out_file, bool trace, std::ostream& log) {
  require_dir(out_file.has_parent_path() ? out_file.parent_path() : fs::path("."));
  const Vocabulary vocab = cfg.vocabulary();
  check_vocab_file(data_file, vocab);
  const Checkpoint ck = load_checkpoint(checkpoint);
  if (!(ck.params.dims == cfg.model_dims())) throw UsageError("checkpoint dimensions do not match the config");
  const Corpus corpus = load_corpus(data_file.string());

  DecodeConfig dc = cfg.decode_config();
  dc.trace = trace;
  std::optional<NGramLM> src, tgt;
  auto load_lm = [&](const std::string& path) {
    NGramLM lm = NGramLM::load(path);
    if (lm.vocab_size() != vocab.size() || (!lm.vocab_hash().empty() && lm.vocab_hash() != vocab.hash()))
      throw UsageError("LM " + path + " was built for a different vocabulary");
    return lm;
  };
  if (!cfg.decode.src_lm.empty()) src = load_lm(cfg.decode.src_lm);
  if (!cfg.decode.tgt_lm.empty()) tgt = load_lm(cfg.decode.tgt_lm);
  const ExternalLms lms{src ? &*src : nullptr, tgt ? &*tgt : nullptr};
  if (!cfg.decode.greedy) dc.check_lms(lms);

  std::vector<FeatureSequence> inputs;
  for (const auto& u : corpus) {
    check_features(u.features, ck.params.dims.d_in);
    inputs.push_back(u.features);
  }
  std::vector<DecodeResult> results;
  if (cfg.decode.greedy) {
    for (const auto& x : inputs) results.push_back(greedy_decode(ck.params, x, cfg.decode.greedy_max_symbols));
  } else {
    results = decode_all(ck.params, inputs, dc, lms, cfg.threads);
  }

  std::string hyps, nbest, traces;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& best = results[i].nbest.front();
    hyps += corpus[i].id + '\t' + decode_labels(best.labels, vocab) + '\t' + fmt_score(best.score) + '\n';
    for (std::size_t r = 0; r < results[i].nbest.size() && dc.nbest > 1; ++r)
      nbest += corpus[i].id + '\t' + std::to_string(r + 1) + '\t' + decode_labels(results[i].nbest[r].labels, vocab) +
               '\t' + fmt_score(results[i].nbest[r].score) + '\n';
    for (const auto& rec : results[i].trace) traces += trace_json(corpus[i].id, rec).dump() + '\n';
  }
  write_text(out_file, hyps);
  if (dc.nbest > 1) write_text(out_file.string() + ".nbest.tsv", nbest);
  if (trace) write_text(out_file.string() + ".trace.jsonl", traces);
  write_text(out_file.string() + ".config.ini", write_config(cfg));
  log << "decode: " << corpus.size() << " utterances -> " << out_file.string() << '\n';
  return kOk;
}

// ─── eval ───────────────────────────────────────────────────────────────────

/// Hypothesis file rows: id<TAB>text[<TAB>score].
inline std::vector<std::pair<std::string, std::string>> load_hypotheses(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open hypotheses " + path);
  std::vector<std::pair<std::string, std::string>> rows;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(path + ": expected id<TAB>text", line_no);
    std::string id = line.substr(0, tab);
    std::string rest = line.substr(tab + 1);
    if (auto t2 = rest.find('\t'); t2 != std::string::npos) rest.resize(t2);
    if (!seen.insert(id).second) throw ParseError(path + ": duplicate id '" + id + "'", line_no);
    rows.emplace_back(std::move(id), std::move(rest));
  }
  return rows;
}

inline int cmd_eval(const RunConfig& cfg, const std::string& refs_path, const std::string& hyps_path,
                    const std::string& train_path, const fs::path& out_file, std::ostream& log) {
  const Corpus refs = load_corpus(refs_path);
  const auto hyps = load_hypotheses(hyps_path);
  std::map<std::string, std::string> by_id(hyps.begin(), hyps.end());
  std::set<std::string> ref_ids;
  for (const auto& u : refs) {
    ref_ids.insert(u.id);
    if (!by_id.count(u.id)) throw UsageError("hypotheses lack reference id '" + u.id + "'");
  }
  for (const auto& [id, _] : hyps)
    if (!ref_ids.count(id)) throw UsageError("hypothesis id '" + id + "' is not in the references");

  std::vector<std::string> train_text;
  for (const auto& u : load_corpus(train_path)) train_text.push_back(u.transcript);
  const RareWordTable table = rare_table(train_text, cfg.eval.rare_threshold);
  std::optional<G2PTable> g2p;
  if (!cfg.eval.g2p.empty()) g2p = load_g2p(cfg.eval.g2p);

  std::vector<std::string> ids;
  std::vector<RefHyp> pairs;
  for (const auto& u : refs) {
    ids.push_back(u.id);
    pairs.push_back({u.transcript, by_id.at(u.id)});
  }
  const EvalReport rep = evaluate(ids, pairs, table, g2p ? &*g2p : nullptr);
  std::ostringstream text;
  write_report(text, rep, cfg.eval.per_utterance);
  if (out_file.empty()) {
    log << text.str();
  } else {
    write_text(out_file, text.str());
    write_text(out_file.string() + ".config.ini", write_config(cfg));
    log << "eval: WER " << rep.wer << " CER " << rep.cer << " -> " << out_file.string() << '\n';
  }
  return kOk;
}

// ─── gradcheck ──────────────────────────────────────────────────────────────

inline constexpr std::size_t kGradcheckMaxParams = 5000;
inline constexpr double kGradcheckTolerance = 1e-4;

/// Dimensions clamped to a size where central differences over every parameter
/// stay fast.
inline ModelDims gradcheck_dims(const RunConfig& cfg) {
  ModelDims d = cfg.model_dims();
  d.d_in = std::min<std::size_t>(d.d_in, 8);
  d.d_enc = std::min<std::size_t>(d.d_enc, 8);
  d.d_pred = std::min<std::size_t>(d.d_pred, 8);
  d.d_joint = std::min<std::size_t>(d.d_joint, 8);
  d.d_emb = std::min<std::size_t>(d.d_emb, 4);
  return d;
}

/// Two short random utterances with random label sequences.
inline std::vector<Example> gradcheck_batch(const ModelDims& d, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "gradcheck"));
  std::vector<Example> batch;
  const std::size_t frames[] = {4, 5};
  const std::size_t labels[] = {2, 3};
  for (std::size_t e = 0; e < 2; ++e) {
    Example ex;
    ex.id = "gradcheck" + std::to_string(e);
    ex.x = Matrix(frames[e], d.d_in);
    for (auto& v : ex.x.data()) v = rng.normal();
    for (std::size_t k = 0; k < labels[e]; ++k) ex.y.push_back(static_cast<TokenId>(1 + rng.index(d.v - 1)));
    batch.push_back(std::move(ex));
  }
  return batch;
}

inline int cmd_gradcheck(const RunConfig& cfg, bool corrupt, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const ModelDims d = gradcheck_dims(cfg);
  if (d.param_count() > kGradcheckMaxParams)
    throw UsageError("gradcheck model has " + std::to_string(d.param_count()) + " parameters (limit " +
                     std::to_string(kGradcheckMaxParams) + "); shrink the vocabulary");
  // Non-zero biases so their gradients are exercised away from the origin.
  ModelParams p = init_params(d, cfg.seed);
  Rng rng(derive_seed(cfg.seed, "gradcheck-bias"));
  for (auto* t : p.tensors())
    if (t->cols == 1)
      for (auto& v : t->data) v = rng.uniform(-0.1, 0.1);
  const auto batch = gradcheck_batch(d, cfg.seed);
  LossConfig lc = cfg.train_options().loss;
  lc.seed = derive_seed(cfg.seed, "masking");
  Gradients g = combined_loss_and_grads(p, batch, lc).grads;
  if (corrupt) g.joint_b.data[0] += 1e-2;

  const auto report = gradient_check(p, batch, lc, g);
  double worst = 0.0;
  out << "tensor\tcount\tmax_rel_error\tmax_abs_error\n";
  for (const auto& c : report) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s\t%zu\t%.3e\t%.3e\n", c.name.c_str(), c.count, c.max_rel_error, c.max_abs_error);
    out << buf;
    worst = std::max(worst, c.max_rel_error);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  char buf[160];
  std::snprintf(buf, sizeof buf, "gradcheck %s: %zu parameters, max relative error %.3e (tolerance %.0e), %.2f s\n",
                worst < kGradcheckTolerance ? "PASS" : "FAIL", d.param_count(), worst, kGradcheckTolerance, secs);
  out << buf;
  if (!(worst < kGradcheckTolerance)) throw VerificationFailure("gradient check failed");
  return kOk;
}

// ─── Entry point ────────────────────────────────────────────────────────────

/// Splits `--section.key=value` overrides out of argv; everything else goes to CLI11.
inline std::vector<std::string> extract_overrides(const std::vector<std::string>& args, Options& o) {
  std::vector<std::string> rest;
  for (const auto& a : args) {
    const auto eq = a.find('=');
    const auto dot = a.find('.');
    if (a.starts_with("--") && eq != std::string::npos && dot != std::string::npos && dot < eq) {
      o.overrides.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
    } else {
      rest.push_back(a);
    }
  }
  return rest;
}

inline int run(const std::vector<std::string>& argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Options o;
  std::vector<std::string> args = extract_overrides({argv.begin() + (argv.empty() ? 0 : 1), argv.end()}, o);

  CLI::App app{"RNN-T training and decoding with adaptive implicit-LM discounting", "rnnt"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  app.add_option("--config", o.config_path, "INI config file (defaults apply when omitted)");
  app.add_option("--seed", o.seed, "Override the config seed");
  app.add_option("--threads", o.threads, "Worker threads");
  app.add_flag("--trace", o.trace, "Write per-step decode traces");
  app.footer("Any config key can be overridden with --section.key=value, e.g. --decode.lambda=0.1");

  std::string out_path, data_path, checkpoint, resume, refs, hyps, train_path, strategy;
  std::optional<std::size_t> threshold;
  bool corrupt = false;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic corpus, vocabulary and n-gram LMs");
  gen->add_option("--out", out_path, "Existing output directory")->required();

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--data", data_path, "Training corpus (JSONL)")->required();
  train->add_option("--out", out_path, "Existing output directory")->required();
  train->add_option("--resume", resume, "Checkpoint to continue from");

  auto* decode = app.add_subcommand("decode", "Decode a corpus");
  decode->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  decode->add_option("--data", data_path, "Corpus to decode (JSONL)")->required();
  decode->add_option("--out", out_path, "Hypotheses file (id<TAB>text<TAB>score)")->required();
  decode->add_option("--strategy", strategy,
                     "baseline, adaptlmd, static_discount, shallow_fusion, density_ratio or greedy");

  auto* eval = app.add_subcommand("eval", "Score hypotheses against references");
  eval->add_option("--refs", refs, "Reference corpus (JSONL)")->required();
  eval->add_option("--hyps", hyps, "Hypotheses file")->required();
  eval->add_option("--train", train_path, "Training corpus used to find rare words")->required();
  eval->add_option("--threshold", threshold, "Words seen fewer times than this in training are rare (default 20)");
  eval->add_option("--out", out_path, "Report file (stdout when omitted)");

  auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  gradcheck->add_flag("--corrupt-gradient", corrupt)->group("");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (!strategy.empty()) o.overrides.emplace_back("decode.strategy", strategy);
    if (threshold) o.overrides.emplace_back("eval.rare_threshold", std::to_string(*threshold));
    const RunConfig cfg = resolve_config(o);
    if (*gen) return cmd_gen(cfg, out_path, err);
    if (*train) return cmd_train(cfg, data_path, out_path, resume, err);
    if (*decode) return cmd_decode(cfg, checkpoint, data_path, out_path, o.trace, err);
    if (*eval) return cmd_eval(cfg, refs, hyps, train_path, out_path, out);
    if (*gradcheck) return cmd_gradcheck(cfg, corrupt, out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kFailure;
  } catch (const VerificationFailure& e) {
    err << "verification failed: " << e.what() << '\n';
    return kFailure;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace rnnt::cli
