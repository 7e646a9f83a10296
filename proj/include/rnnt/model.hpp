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

// A tiny RNN-T: recurrent transcription network (TN), recurrent prediction
// network (PN) and an additive joint network. Either joint input can be replaced
// by the zero vector to read out the implicit acoustic model (PN masked) or the
// implicit language model (TN masked).

#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnnt/core.hpp"

namespace rnnt {

struct ModelDims {
  std::size_t d_in = 8;
  std::size_t d_enc = 32;
  std::size_t d_pred = 32;
  std::size_t d_joint = 32;
  std::size_t d_emb = 8;
  std::size_t v = 2;

  void validate() const {
    if (d_in < 1 || d_enc < 1 || d_pred < 1 || d_joint < 1 || d_emb < 1)
      throw UsageError("model dimensions must all be >= 1");
    if (v < 2) throw UsageError("model vocabulary size must be >= 2");
  }

  std::size_t param_count() const {
    const auto gru = [](std::size_t in, std::size_t hid) { return 3 * hid * (in + hid) + 3 * hid; };
    return gru(d_in, d_enc) + d_joint * d_enc + d_joint + v * d_emb + gru(d_emb, d_pred) +
           d_joint * d_pred + d_joint + v * d_joint + v;
  }

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// A named, shaped parameter block. Vectors are stored as `rows x 1`.
struct Tensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vector data;

  Tensor() = default;
  Tensor(std::string n, std::size_t r, std::size_t c) : name(std::move(n)), rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// ─── Dense kernels ──────────────────────────────────────────────────────────

namespace kernels {

/// y += W[row0 : row0 + y.size(), :] x
inline void gemv_acc(const Tensor& w, std::span<const double> x, std::span<double> y, std::size_t row0 = 0) {
  for (std::size_t r = 0; r < y.size(); ++r) {
    const double* wr = w.data.data() + (row0 + r) * w.cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < w.cols; ++c) acc += wr[c] * x[c];
    y[r] += acc;
  }
}

/// dx += W^T dy
inline void gemv_t_acc(const Tensor& w, std::span<const double> dy, std::span<double> dx) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    const double* wr = w.data.data() + r * w.cols;
    for (std::size_t c = 0; c < w.cols; ++c) dx[c] += wr[c] * g;
  }
}

/// dW += dy x^T
inline void outer_acc(Tensor& dw, std::span<const double> dy, std::span<const double> x) {
  for (std::size_t r = 0; r < dw.rows; ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    double* wr = dw.data.data() + r * dw.cols;
    for (std::size_t c = 0; c < dw.cols; ++c) wr[c] += g * x[c];
  }
}

inline void add_to(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

inline double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

}  // namespace kernels

// ─── Parameters ─────────────────────────────────────────────────────────────

/// Single-layer GRU. Gate rows are stacked as [update z; reset r; candidate n]:
///   z = sigmoid(Wx_z x + Wh_z h + b_z)
///   r = sigmoid(Wx_r x + Wh_r h + b_r)
///   n = tanh(Wx_n x + b_n + r * (Wh_n h))
///   h' = (1 - z) * n + z * h
struct GruParams {
  Tensor w_x;
  Tensor w_h;
  Tensor b;

  GruParams() = default;
  GruParams(const std::string& prefix, std::size_t in, std::size_t hid)
      : w_x(prefix + ".w_x", 3 * hid, in), w_h(prefix + ".w_h", 3 * hid, hid), b(prefix + ".b", 3 * hid, 1) {}

  std::size_t hidden() const { return w_h.cols; }
  friend bool operator==(const GruParams&, const GruParams&) = default;
};

/// All trainable weights. Row 0 of the embedding table (the blank slot, never fed
/// to the predictor as a label) is the learned start-of-sequence embedding.
struct ModelParams {
  ModelDims dims;
  GruParams tn;
  Tensor tn_proj;
  Tensor tn_proj_b;
  Tensor embed;
  GruParams pn;
  Tensor pn_proj;
  Tensor pn_proj_b;
  Tensor joint_w;
  Tensor joint_b;

  ModelParams() = default;

  static ModelParams zeros(const ModelDims& d) {
    d.validate();
    ModelParams p;
    p.dims = d;
    p.tn = GruParams("tn.gru", d.d_in, d.d_enc);
    p.tn_proj = Tensor("tn.proj", d.d_joint, d.d_enc);
    p.tn_proj_b = Tensor("tn.proj_b", d.d_joint, 1);
    p.embed = Tensor("pn.embed", d.v, d.d_emb);
    p.pn = GruParams("pn.gru", d.d_emb, d.d_pred);
    p.pn_proj = Tensor("pn.proj", d.d_joint, d.d_pred);
    p.pn_proj_b = Tensor("pn.proj_b", d.d_joint, 1);
    p.joint_w = Tensor("joint.w", d.v, d.d_joint);
    p.joint_b = Tensor("joint.b", d.v, 1);
    return p;
  }

  /// Fixed enumeration order used by checkpoints, gradient checks and optimizers.
  std::vector<Tensor*> tensors() {
    return {&tn.w_x, &tn.w_h, &tn.b, &tn_proj, &tn_proj_b, &embed, &pn.w_x,
            &pn.w_h, &pn.b, &pn_proj, &pn_proj_b, &joint_w, &joint_b};
  }
  std::vector<const Tensor*> tensors() const {
    auto ts = const_cast<ModelParams*>(this)->tensors();
    return {ts.begin(), ts.end()};
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const Tensor* t : tensors()) n += t->data.size();
    return n;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Same shapes as ModelParams, one partial derivative per parameter.
using Gradients = ModelParams;

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weight matrices; biases zero.
inline ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
  ModelParams p = ModelParams::zeros(dims);
  Rng rng(derive_seed(seed, "init"));
  for (Tensor* t : p.tensors()) {
    if (t->cols == 1) continue;
    const double r = 1.0 / std::sqrt(static_cast<double>(t->cols));
    for (double& w : t->data) w = rng.uniform(-r, r);
  }
  return p;
}

// ─── Transcription network ──────────────────────────────────────────────────

/// Activations of one GRU step, kept for backpropagation.
struct GruStep {
  Vector h_prev;
  Vector z;
  Vector r;
  Vector n;
  Vector c;  // Wh_n h_prev
  Vector h;
};

inline GruStep gru_step(const GruParams& g, std::span<const double> x, std::span<const double> h_prev) {
  const std::size_t hid = g.hidden();
  Vector ax(g.b.data);
  kernels::gemv_acc(g.w_x, x, ax);
  Vector ah(3 * hid, 0.0);
  kernels::gemv_acc(g.w_h, h_prev, ah);
  GruStep s;
  s.h_prev.assign(h_prev.begin(), h_prev.end());
  s.z.resize(hid);
  s.r.resize(hid);
  s.n.resize(hid);
  s.c.assign(ah.begin() + 2 * hid, ah.end());
  s.h.resize(hid);
  for (std::size_t i = 0; i < hid; ++i) {
    s.z[i] = kernels::sigmoid(ax[i] + ah[i]);
    s.r[i] = kernels::sigmoid(ax[hid + i] + ah[hid + i]);
    s.n[i] = std::tanh(ax[2 * hid + i] + s.r[i] * s.c[i]);
    s.h[i] = (1.0 - s.z[i]) * s.n[i] + s.z[i] * h_prev[i];
  }
  return s;
}

/// Backpropagates `dh` through one step. Accumulates parameter gradients into
/// `grad`, adds the input gradient into `dx` (if non-empty) and returns d h_prev.
inline Vector gru_step_backward(const GruParams& g, GruParams& grad, const GruStep& s, std::span<const double> x,
                                std::span<const double> dh, std::span<double> dx) {
  const std::size_t hid = g.hidden();
  Vector dpre(3 * hid);  // gradient w.r.t. Wx x + b
  Vector dwh(3 * hid);   // gradient w.r.t. Wh h_prev
  Vector dh_prev(hid);
  for (std::size_t i = 0; i < hid; ++i) {
    const double dn = dh[i] * (1.0 - s.z[i]);
    const double dz = dh[i] * (s.h_prev[i] - s.n[i]);
    dh_prev[i] = dh[i] * s.z[i];
    const double dan = dn * (1.0 - s.n[i] * s.n[i]);
    const double dr = dan * s.c[i];
    const double daz = dz * s.z[i] * (1.0 - s.z[i]);
    const double dar = dr * s.r[i] * (1.0 - s.r[i]);
    dpre[i] = daz;
    dpre[hid + i] = dar;
    dpre[2 * hid + i] = dan;
    dwh[i] = daz;
    dwh[hid + i] = dar;
    dwh[2 * hid + i] = dan * s.r[i];
  }
  kernels::outer_acc(grad.w_x, dpre, x);
  kernels::add_to(grad.b.data, dpre);
  kernels::outer_acc(grad.w_h, dwh, s.h_prev);
  kernels::gemv_t_acc(g.w_h, dwh, dh_prev);
  if (!dx.empty()) kernels::gemv_t_acc(g.w_x, dpre, dx);
  return dh_prev;
}

/// Encoder output: one d_joint row per frame.
using EncoderOutput = Matrix;

/// Forward activations of the transcription network.
struct TnTrace {
  std::vector<GruStep> steps;
  EncoderOutput h;
};

inline TnTrace tn_forward_trace(const ModelParams& p, const FeatureSequence& x) {
  check_features(x, p.dims.d_in);
  TnTrace tr;
  tr.h = Matrix(x.rows(), p.dims.d_joint);
  Vector state(p.dims.d_enc, 0.0);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    tr.steps.push_back(gru_step(p.tn, x.row(t), state));
    state = tr.steps.back().h;
    auto out = tr.h.row(t);
    std::copy(p.tn_proj_b.data.begin(), p.tn_proj_b.data.end(), out.begin());
    kernels::gemv_acc(p.tn_proj, state, out);
  }
  return tr;
}

/// Causal encoding: row t depends on frames 0..t only.
inline EncoderOutput tn_forward(const ModelParams& p, const FeatureSequence& x) {
  return tn_forward_trace(p, x).h;
}

// ─── Prediction network ─────────────────────────────────────────────────────

struct PredictorState {
  Vector hidden;
  Vector g;  // projected output fed to the joint network

  friend bool operator==(const PredictorState&, const PredictorState&) = default;
};

namespace detail {

inline Vector pn_project(const ModelParams& p, std::span<const double> hidden) {
  Vector g(p.pn_proj_b.data);
  kernels::gemv_acc(p.pn_proj, hidden, g);
  return g;
}

}  // namespace detail

/// Empty-prefix state: the start embedding fed once into a zero recurrent state.
inline PredictorState pn_start(const ModelParams& p) {
  Vector zero(p.dims.d_pred, 0.0);
  GruStep s = gru_step(p.pn, p.embed.row(kBlank), zero);
  PredictorState st;
  st.g = detail::pn_project(p, s.h);
  st.hidden = std::move(s.h);
  return st;
}

inline PredictorState pn_step(const ModelParams& p, const PredictorState& state, TokenId label) {
  if (label == kBlank) throw UsageError("pn_step: blank never advances the prediction network");
  if (label < 0 || static_cast<std::size_t>(label) >= p.dims.v)
    throw UsageError("pn_step: label " + std::to_string(label) + " out of range");
  GruStep s = gru_step(p.pn, p.embed.row(static_cast<std::size_t>(label)), state.hidden);
  PredictorState st;
  st.g = detail::pn_project(p, s.h);
  st.hidden = std::move(s.h);
  return st;
}

/// Forward activations of the prediction network over all K+1 prefixes of y.
struct PnTrace {
  std::vector<TokenId> inputs;  // start symbol, then y_1..y_K
  std::vector<GruStep> steps;
  Matrix g;                     // (K+1) x d_joint
};

inline PnTrace pn_forward_trace(const ModelParams& p, std::span<const TokenId> y) {
  PnTrace tr;
  tr.inputs.push_back(kBlank);
  for (TokenId id : y) {
    if (id == kBlank || id < 0 || static_cast<std::size_t>(id) >= p.dims.v)
      throw UsageError("label sequence contains invalid token " + std::to_string(id));
    tr.inputs.push_back(id);
  }
  tr.g = Matrix(tr.inputs.size(), p.dims.d_joint);
  Vector state(p.dims.d_pred, 0.0);
  for (std::size_t u = 0; u < tr.inputs.size(); ++u) {
    tr.steps.push_back(gru_step(p.pn, p.embed.row(static_cast<std::size_t>(tr.inputs[u])), state));
    state = tr.steps.back().h;
    auto out = tr.g.row(u);
    std::copy(p.pn_proj_b.data.begin(), p.pn_proj_b.data.end(), out.begin());
    kernels::gemv_acc(p.pn_proj, state, out);
  }
  return tr;
}

// ─── Joint network ──────────────────────────────────────────────────────────

/// Passing an empty span for `h` or `g` substitutes the zero vector, the identity of
/// the additive combination.
inline constexpr std::span<const double> kZeroInput{};

/// Computes tanh(h + g) into `z` and the output logits W z + b into `logits`.
inline void joint_forward(const ModelParams& p, std::span<const double> h, std::span<const double> g, Vector& z,
                          Vector& logits) {
  const std::size_t dj = p.dims.d_joint;
  if ((!h.empty() && h.size() != dj) || (!g.empty() && g.size() != dj))
    throw UsageError("joint input dimension does not match d_joint " + std::to_string(dj));
  z.assign(dj, 0.0);
  for (std::size_t i = 0; i < dj; ++i) {
    double a = 0.0;
    if (!h.empty()) a += h[i];
    if (!g.empty()) a += g[i];
    z[i] = std::tanh(a);
  }
  logits = p.joint_b.data;
  kernels::gemv_acc(p.joint_w, z, logits);
}

/// softmax(J(h ⊕ g)). With `g` zeroed this is the implicit acoustic model; with `h`
/// zeroed the implicit language model.
inline LogDistribution joint_dist(const ModelParams& p, std::span<const double> h, std::span<const double> g) {
  Vector z, logits;
  joint_forward(p, h, g, z, logits);
  return LogDistribution::from_logits(logits);
}

// ─── Checkpoints ────────────────────────────────────────────────────────────

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;  // completed training epochs
};

inline nlohmann::json dims_to_json(const ModelDims& d) {
  return {{"d_in", d.d_in}, {"d_enc", d.d_enc}, {"d_pred", d.d_pred},
          {"d_joint", d.d_joint}, {"d_emb", d.d_emb}, {"v", d.v}};
}

inline ModelDims dims_from_json(const nlohmann::json& j) {
  ModelDims d;
  d.d_in = j.at("d_in").get<std::size_t>();
  d.d_enc = j.at("d_enc").get<std::size_t>();
  d.d_pred = j.at("d_pred").get<std::size_t>();
  d.d_joint = j.at("d_joint").get<std::size_t>();
  d.d_emb = j.at("d_emb").get<std::size_t>();
  d.v = j.at("v").get<std::size_t>();
  d.validate();
  return d;
}

/// JSON document: format version, dims, seed, epoch and every tensor by name with
/// shape. Doubles are written in shortest round-trip form, so load(save(p)) == p.
inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["dims"] = dims_to_json(ck.params.dims);
  j["seed"] = ck.seed;
  j["epoch"] = ck.epoch;
  auto& ts = j["tensors"] = nlohmann::json::array();
  for (const Tensor* t : ck.params.tensors())
    ts.push_back({{"name", t->name}, {"shape", {t->rows, t->cols}}, {"data", t->data}});
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw UsageError("cannot write checkpoint " + path);
    out << j.dump() << '\n';
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw UsageError("cannot move checkpoint into " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
  try {
    if (j.at("format_version").get<int>() != kCheckpointVersion)
      throw ParseError(path + ": unsupported checkpoint version", 0);
    Checkpoint ck;
    ck.params = ModelParams::zeros(dims_from_json(j.at("dims")));
    ck.seed = j.at("seed").get<std::uint64_t>();
    ck.epoch = j.value("epoch", std::size_t{0});
    const auto& ts = j.at("tensors");
    auto dst = ck.params.tensors();
    if (ts.size() != dst.size()) throw ParseError(path + ": wrong tensor count", 0);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const auto& jt = ts[i];
      if (jt.at("name").get<std::string>() != dst[i]->name)
        throw ParseError(path + ": expected tensor " + dst[i]->name, 0);
      const auto shape = jt.at("shape").get<std::array<std::size_t, 2>>();
      if (shape[0] != dst[i]->rows || shape[1] != dst[i]->cols)
        throw ParseError(path + ": shape mismatch for " + dst[i]->name, 0);
      auto data = jt.at("data").get<Vector>();
      if (data.size() != dst[i]->data.size()) throw ParseError(path + ": size mismatch for " + dst[i]->name, 0);
      for (double v : data)
        if (!std::isfinite(v)) throw ParseError(path + ": non-finite value in " + dst[i]->name, 0);
      dst[i]->data = std::move(data);
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
}

}  // namespace rnnt
