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

#include <string>
#include <thread>
#include <vector>

#include "rnnt/core.hpp"
#include "rnnt/model.hpp"

namespace rnnt {

// ─── Lattice ────────────────────────────────────────────────────────────────

/// T x (K+1) grid of output distributions; cell (t, u) is the distribution after
/// frame t has been read and u labels have been emitted.
class Lattice {
 public:
  Lattice() = default;
  Lattice(std::size_t T, std::size_t K, std::size_t v, double fill = 0.0)
      : T_(T), K_(K), v_(v), logp_(T * (K + 1) * v, fill) {}

  std::size_t frames() const { return T_; }
  std::size_t labels() const { return K_; }
  std::size_t vocab() const { return v_; }

  std::span<double> cell(std::size_t t, std::size_t u) { return {logp_.data() + offset(t, u), v_}; }
  std::span<const double> cell(std::size_t t, std::size_t u) const { return {logp_.data() + offset(t, u), v_}; }
  double& at(std::size_t t, std::size_t u, std::size_t k) { return logp_[offset(t, u) + k]; }
  double at(std::size_t t, std::size_t u, std::size_t k) const { return logp_[offset(t, u) + k]; }
  std::vector<double>& data() { return logp_; }
  const std::vector<double>& data() const { return logp_; }

  friend bool operator==(const Lattice&, const Lattice&) = default;

 private:
  std::size_t offset(std::size_t t, std::size_t u) const { return (t * (K_ + 1) + u) * v_; }

  std::size_t T_ = 0;
  std::size_t K_ = 0;
  std::size_t v_ = 0;
  std::vector<double> logp_;
};

enum class LatticeMode { full, ilm, iam };

namespace detail {

inline void check_labels(std::span<const TokenId> y, std::size_t v) {
  for (TokenId id : y)
    if (id == kBlank || id < 0 || static_cast<std::size_t>(id) >= v)
      throw UsageError("label sequence contains invalid token " + std::to_string(id));
}

}  // namespace detail

/// Cell (t, u) is joint_dist with inputs picked by `mode`: full uses (h_t, g_u) with
/// g_u zeroed where mask_pn[u] is set; ilm uses (0, g_u); iam uses (h_t, 0).
inline Lattice build_lattice(const ModelParams& p, const FeatureSequence& x, std::span<const TokenId> y,
                             LatticeMode mode, const std::vector<bool>& mask_pn) {
  detail::check_labels(y, p.dims.v);
  if (mask_pn.size() != y.size() + 1) throw UsageError("mask_pn must have K+1 entries");
  const EncoderOutput h = tn_forward(p, x);
  const PnTrace pn = pn_forward_trace(p, y);
  const std::size_t T = h.rows(), K = y.size(), v = p.dims.v;
  Lattice lat(T, K, v);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= K; ++u) {
      std::span<const double> hin = mode == LatticeMode::ilm ? kZeroInput : h.row(t);
      std::span<const double> gin =
          (mode == LatticeMode::iam || (mode == LatticeMode::full && mask_pn[u])) ? kZeroInput : pn.g.row(u);
      const LogDistribution d = joint_dist(p, hin, gin);
      std::copy(d.log_probs().begin(), d.log_probs().end(), lat.cell(t, u).begin());
    }
  }
  return lat;
}

// ─── Transducer loss ────────────────────────────────────────────────────────

namespace detail {

inline void check_lattice(const Lattice& lat, std::span<const TokenId> y) {
  if (lat.frames() == 0) throw UsageError("transducer loss: lattice has no frames");
  if (lat.labels() != y.size()) throw UsageError("transducer loss: lattice K does not match label count");
  check_labels(y, lat.vocab());
}

/// log alpha(t, u): total log-probability of reaching node (t, u).
inline Matrix forward_variables(const Lattice& lat, std::span<const TokenId> y) {
  const std::size_t T = lat.frames(), K = lat.labels();
  Matrix alpha(T, K + 1, kNegInf);
  alpha(0, 0) = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= K; ++u) {
      if (t == 0 && u == 0) continue;
      double a = kNegInf;
      if (t > 0) a = alpha(t - 1, u) + lat.at(t - 1, u, kBlank);
      if (u > 0) a = log_add(a, alpha(t, u - 1) + lat.at(t, u - 1, static_cast<std::size_t>(y[u - 1])));
      alpha(t, u) = a;
    }
  }
  return alpha;
}

/// log beta(t, u): total log-probability of completing the alignment from (t, u),
/// including the final blank out of (T-1, K).
inline Matrix backward_variables(const Lattice& lat, std::span<const TokenId> y) {
  const std::size_t T = lat.frames(), K = lat.labels();
  Matrix beta(T, K + 1, kNegInf);
  beta(T - 1, K) = lat.at(T - 1, K, kBlank);
  for (std::size_t t = T; t-- > 0;) {
    for (std::size_t u = K + 1; u-- > 0;) {
      if (t == T - 1 && u == K) continue;
      double b = kNegInf;
      if (t + 1 < T) b = beta(t + 1, u) + lat.at(t, u, kBlank);
      if (u < K) b = log_add(b, beta(t, u + 1) + lat.at(t, u, static_cast<std::size_t>(y[u])));
      beta(t, u) = b;
    }
  }
  return beta;
}

}  // namespace detail

/// -log of the total probability of all monotone alignments of y.
inline double transducer_nll(const Lattice& lat, std::span<const TokenId> y) {
  detail::check_lattice(lat, y);
  const Matrix alpha = detail::forward_variables(lat, y);
  const std::size_t T = lat.frames(), K = lat.labels();
  return -(alpha(T - 1, K) + lat.at(T - 1, K, kBlank));
}

struct TransducerGrad {
  double nll = 0.0;
  Lattice grad;  // d nll / d log p, same shape as the input lattice
};

/// NLL and its gradient with respect to every lattice log-probability, from the
/// forward and backward variables. Entries no alignment uses get exactly zero.
inline TransducerGrad transducer_nll_and_grad(const Lattice& lat, std::span<const TokenId> y) {
  detail::check_lattice(lat, y);
  const std::size_t T = lat.frames(), K = lat.labels();
  const Matrix alpha = detail::forward_variables(lat, y);
  const Matrix beta = detail::backward_variables(lat, y);
  const double log_z = beta(0, 0);
  TransducerGrad out{-log_z, Lattice(T, K, lat.vocab(), 0.0)};
  if (!std::isfinite(log_z)) return out;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= K; ++u) {
      const double a = alpha(t, u);
      if (a == kNegInf) continue;
      const double next_blank = (t + 1 < T) ? beta(t + 1, u) : (u == K ? 0.0 : kNegInf);
      if (next_blank != kNegInf)
        out.grad.at(t, u, kBlank) = -std::exp(a + lat.at(t, u, kBlank) + next_blank - log_z);
      if (u < K && beta(t, u + 1) != kNegInf) {
        const auto k = static_cast<std::size_t>(y[u]);
        out.grad.at(t, u, k) = -std::exp(a + lat.at(t, u, k) + beta(t, u + 1) - log_z);
      }
    }
  }
  return out;
}

inline Lattice transducer_nll_grad(const Lattice& lat, std::span<const TokenId> y) {
  return transducer_nll_and_grad(lat, y).grad;
}

// ─── Combined objective ─────────────────────────────────────────────────────

struct LossConfig {
  double alpha = 0.125;  // implicit LM loss weight
  double beta = 0.125;   // implicit AM loss weight
  double eta = 0.2;      // probability of zeroing g_u in the full lattice
  std::uint64_t seed = 0;

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("loss weights alpha and beta must be >= 0");
    if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in [0, 1]");
  }
};

struct Example {
  std::string id;
  FeatureSequence x;
  LabelSequence y;
};

/// Per-prefix PN-output mask for one example, keyed by (seed, example id).
inline std::vector<bool> draw_pn_mask(const LossConfig& cfg, const std::string& example_id, std::size_t K) {
  Rng rng(derive_seed(cfg.seed, example_id));
  std::vector<bool> mask(K + 1);
  for (std::size_t u = 0; u <= K; ++u) mask[u] = rng.bernoulli(cfg.eta);
  return mask;
}

struct ExampleLoss {
  double nll_full = 0.0;
  double nll_ilm = 0.0;
  double nll_iam = 0.0;
  std::vector<bool> mask;
};

struct LossResult {
  double loss = 0.0;  // mean of nll_full + alpha * nll_ilm + beta * nll_iam
  double nll_full = 0.0;
  double nll_ilm = 0.0;
  double nll_iam = 0.0;
  Gradients grads;
  std::vector<std::vector<bool>> masks;  // one per example, in batch order
};

namespace detail {

/// Backpropagates d nll / d logp of one cell through the output layer. Returns the
/// gradient w.r.t. the joint pre-activation (h ⊕ g), scaled by `weight`.
inline void joint_cell_backward(const ModelParams& p, Gradients& grad, std::span<const double> logp,
                                std::span<const double> dlogp, std::span<const double> z, double weight,
                                std::vector<std::size_t>& active, Vector& dlogits, Vector& da) {
  const std::size_t v = logp.size();
  double total = 0.0;
  active.clear();
  for (std::size_t k = 0; k < v; ++k) {
    if (dlogp[k] != 0.0) {
      total += dlogp[k];
      active.push_back(k);
    }
  }
  for (std::size_t k = 0; k < v; ++k) dlogits[k] = weight * (dlogp[k] - std::exp(logp[k]) * total);
  kernels::outer_acc(grad.joint_w, dlogits, z);
  kernels::add_to(grad.joint_b.data, dlogits);
  std::fill(da.begin(), da.end(), 0.0);
  kernels::gemv_t_acc(p.joint_w, dlogits, da);
  for (std::size_t i = 0; i < da.size(); ++i) da[i] *= 1.0 - z[i] * z[i];
}

/// One example: the three lattice NLLs and (optionally) unscaled gradients of
/// nll_full + alpha * nll_ilm + beta * nll_iam.
inline ExampleLoss example_loss(const ModelParams& p, const Example& ex, const LossConfig& cfg, Gradients* grad) {
  check_labels(ex.y, p.dims.v);
  const TnTrace tn = tn_forward_trace(p, ex.x);
  const PnTrace pn = pn_forward_trace(p, ex.y);
  const std::size_t T = tn.h.rows(), K = ex.y.size(), v = p.dims.v, dj = p.dims.d_joint;

  ExampleLoss out;
  out.mask = draw_pn_mask(cfg, ex.id, K);

  Vector z, logits;
  // Full lattice, keeping tanh activations for the backward pass.
  Lattice full(T, K, v);
  std::vector<double> full_z(T * (K + 1) * dj);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= K; ++u) {
      joint_forward(p, tn.h.row(t), out.mask[u] ? kZeroInput : pn.g.row(u), z, logits);
      const double lz = log_sum_exp(logits);
      auto cell = full.cell(t, u);
      for (std::size_t k = 0; k < v; ++k) cell[k] = logits[k] - lz;
      std::copy(z.begin(), z.end(), full_z.begin() + static_cast<std::ptrdiff_t>((t * (K + 1) + u) * dj));
    }
  }
  // Implicit LM: one distribution per prefix, broadcast over frames.
  Matrix ilm_logp(K + 1, v), ilm_z(K + 1, dj);
  for (std::size_t u = 0; u <= K; ++u) {
    joint_forward(p, kZeroInput, pn.g.row(u), z, logits);
    const double lz = log_sum_exp(logits);
    for (std::size_t k = 0; k < v; ++k) ilm_logp(u, k) = logits[k] - lz;
    std::copy(z.begin(), z.end(), ilm_z.row(u).begin());
  }
  // Implicit AM: one distribution per frame, broadcast over prefixes.
  Matrix iam_logp(T, v), iam_z(T, dj);
  for (std::size_t t = 0; t < T; ++t) {
    joint_forward(p, tn.h.row(t), kZeroInput, z, logits);
    const double lz = log_sum_exp(logits);
    for (std::size_t k = 0; k < v; ++k) iam_logp(t, k) = logits[k] - lz;
    std::copy(z.begin(), z.end(), iam_z.row(t).begin());
  }
  Lattice ilm(T, K, v), iam(T, K, v);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= K; ++u) {
      std::copy_n(ilm_logp.row(u).begin(), v, ilm.cell(t, u).begin());
      std::copy_n(iam_logp.row(t).begin(), v, iam.cell(t, u).begin());
    }
  }

  TransducerGrad g_full = transducer_nll_and_grad(full, ex.y);
  TransducerGrad g_ilm = transducer_nll_and_grad(ilm, ex.y);
  TransducerGrad g_iam = transducer_nll_and_grad(iam, ex.y);
  out.nll_full = g_full.nll;
  out.nll_ilm = g_ilm.nll;
  out.nll_iam = g_iam.nll;
  const double total = out.nll_full + cfg.alpha * out.nll_ilm + cfg.beta * out.nll_iam;
  if (!std::isfinite(total))
    throw NumericError("non-finite loss for example '" + ex.id + "' (full " + std::to_string(out.nll_full) +
                       ", ilm " + std::to_string(out.nll_ilm) + ", iam " + std::to_string(out.nll_iam) + ")");
  if (!grad) return out;

  Matrix dh(T, dj, 0.0);
  Matrix dg(K + 1, dj, 0.0);
  std::vector<std::size_t> active;
  Vector dlogits(v), da(dj);

  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= K; ++u) {
      std::span<const double> zc(full_z.data() + (t * (K + 1) + u) * dj, dj);
      joint_cell_backward(p, *grad, full.cell(t, u), g_full.grad.cell(t, u), zc, 1.0, active, dlogits, da);
      kernels::add_to(dh.row(t), da);
      if (!out.mask[u]) kernels::add_to(dg.row(u), da);
    }
  }
  if (cfg.alpha > 0.0) {
    Vector dcell(v);
    for (std::size_t u = 0; u <= K; ++u) {
      std::fill(dcell.begin(), dcell.end(), 0.0);
      for (std::size_t t = 0; t < T; ++t) kernels::add_to(dcell, g_ilm.grad.cell(t, u));
      joint_cell_backward(p, *grad, ilm_logp.row(u), dcell, ilm_z.row(u), cfg.alpha, active, dlogits, da);
      kernels::add_to(dg.row(u), da);
    }
  }
  if (cfg.beta > 0.0) {
    Vector dcell(v);
    for (std::size_t t = 0; t < T; ++t) {
      std::fill(dcell.begin(), dcell.end(), 0.0);
      for (std::size_t u = 0; u <= K; ++u) kernels::add_to(dcell, g_iam.grad.cell(t, u));
      joint_cell_backward(p, *grad, iam_logp.row(t), dcell, iam_z.row(t), cfg.beta, active, dlogits, da);
      kernels::add_to(dh.row(t), da);
    }
  }

  // Transcription network: projection, then backpropagation through time.
  Vector ds_next(p.dims.d_enc, 0.0);
  for (std::size_t t = T; t-- > 0;) {
    const GruStep& st = tn.steps[t];
    kernels::outer_acc(grad->tn_proj, dh.row(t), st.h);
    kernels::add_to(grad->tn_proj_b.data, dh.row(t));
    Vector ds = ds_next;
    kernels::gemv_t_acc(p.tn_proj, dh.row(t), ds);
    ds_next = gru_step_backward(p.tn, grad->tn, st, ex.x.row(t), ds, {});
  }

  // Prediction network.
  Vector dq_next(p.dims.d_pred, 0.0);
  Vector dx(p.dims.d_emb);
  for (std::size_t u = K + 1; u-- > 0;) {
    const GruStep& st = pn.steps[u];
    kernels::outer_acc(grad->pn_proj, dg.row(u), st.h);
    kernels::add_to(grad->pn_proj_b.data, dg.row(u));
    Vector dq = dq_next;
    kernels::gemv_t_acc(p.pn_proj, dg.row(u), dq);
    std::fill(dx.begin(), dx.end(), 0.0);
    const auto row = static_cast<std::size_t>(pn.inputs[u]);
    dq_next = gru_step_backward(p.pn, grad->pn, st, p.embed.row(row), dq, dx);
    for (std::size_t i = 0; i < dx.size(); ++i) grad->embed(row, i) += dx[i];
  }
  return out;
}

inline void add_scaled(Gradients& dst, const Gradients& src, double scale) {
  auto d = dst.tensors();
  auto s = src.tensors();
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < d[i]->data.size(); ++j) d[i]->data[j] += scale * s[i]->data[j];
}

}  // namespace detail

/// Mean over the batch of nll_full + alpha * nll_ilm + beta * nll_iam with analytic
/// gradients through all three lattices. Per-example gradients are reduced in batch
/// order regardless of `threads`, so results are bit-identical for any thread count.
inline LossResult combined_loss_and_grads(const ModelParams& p, std::span<const Example> batch, const LossConfig& cfg,
                                          bool with_grads = true, std::size_t threads = 1) {
  cfg.validate();
  if (batch.empty()) throw UsageError("combined loss: empty batch");
  const std::size_t n = batch.size();
  std::vector<ExampleLoss> losses(n);
  std::vector<Gradients> grads(with_grads ? n : 0);
  std::vector<std::exception_ptr> errors(n);

  auto work = [&](std::size_t i) {
    try {
      Gradients* g = nullptr;
      if (with_grads) {
        grads[i] = Gradients::zeros(p.dims);
        g = &grads[i];
      }
      losses[i] = detail::example_loss(p, batch[i], cfg, g);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += threads) work(i);
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  LossResult res;
  if (with_grads) res.grads = Gradients::zeros(p.dims);
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    res.nll_full += losses[i].nll_full;
    res.nll_ilm += losses[i].nll_ilm;
    res.nll_iam += losses[i].nll_iam;
    res.loss += losses[i].nll_full + cfg.alpha * losses[i].nll_ilm + cfg.beta * losses[i].nll_iam;
    if (with_grads) detail::add_scaled(res.grads, grads[i], inv);
    res.masks.push_back(std::move(losses[i].mask));
  }
  res.loss *= inv;
  res.nll_full *= inv;
  res.nll_ilm *= inv;
  res.nll_iam *= inv;
  return res;
}

// ─── Optimization ───────────────────────────────────────────────────────────

/// params - lr * grads, element-wise.
inline ModelParams sgd_step(ModelParams params, const Gradients& grads, double lr) {
  if (!(lr >= 0.0)) throw UsageError("learning rate must be >= 0");
  if (!(params.dims == grads.dims)) throw UsageError("sgd_step: gradient shapes do not match parameters");
  detail::add_scaled(params, grads, -lr);
  return params;
}

inline double grad_norm(const Gradients& g) {
  double s = 0.0;
  for (const Tensor* t : g.tensors())
    for (double v : t->data) s += v * v;
  return std::sqrt(s);
}

/// Rescales `g` to norm `max_norm` if it is larger. Returns the norm before clipping.
inline double clip_grad_norm(Gradients& g, double max_norm) {
  const double norm = grad_norm(g);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor* t : g.tensors())
      for (double& v : t->data) v *= s;
  }
  return norm;
}

// ─── Finite-difference verification ─────────────────────────────────────────

struct TensorCheck {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero partials from
/// dominating on pure round-off.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Fourth-order central differences of the combined loss over every parameter,
/// compared with `analytic`. The wider step keeps round-off near 1e-12, so even
/// partials close to zero are resolved. Masks are fixed by (cfg.seed, example id),
/// so the loss is a deterministic function of the parameters.
inline std::vector<TensorCheck> gradient_check(const ModelParams& p, std::span<const Example> batch,
                                               const LossConfig& cfg, const Gradients& analytic, double eps = 1e-3) {
  ModelParams probe = p;
  std::vector<TensorCheck> report;
  auto pt = probe.tensors();
  auto at = analytic.tensors();
  auto loss_at = [&](double* w, double value) {
    *w = value;
    return combined_loss_and_grads(probe, batch, cfg, false).loss;
  };
  for (std::size_t i = 0; i < pt.size(); ++i) {
    TensorCheck c{pt[i]->name, pt[i]->data.size(), 0.0, 0.0};
    for (std::size_t j = 0; j < pt[i]->data.size(); ++j) {
      double* w = &pt[i]->data[j];
      const double orig = *w;
      const double f1 = loss_at(w, orig + eps), b1 = loss_at(w, orig - eps);
      const double f2 = loss_at(w, orig + 2 * eps), b2 = loss_at(w, orig - 2 * eps);
      *w = orig;
      const double numeric = (8.0 * (f1 - b1) - (f2 - b2)) / (12.0 * eps);
      const double a = at[i]->data[j];
      c.max_rel_error = std::max(c.max_rel_error, relative_error(a, numeric));
      c.max_abs_error = std::max(c.max_abs_error, std::abs(a - numeric));
    }
    report.push_back(c);
  }
  return report;
}

}  // namespace rnnt
