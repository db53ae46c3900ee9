#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvfusion/autodiff.hpp"
#include "mvfusion/model.hpp"
#include "mvfusion/probdist.hpp"

namespace mvf {

// One stratum of samples: per-view row blocks plus optional labels.  A view
// tensor may be empty (numel 0) when that view is absent for the stratum.
struct Batch {
  std::vector<Tensor> views;
  std::vector<int> labels;

  std::size_t rows() const {
    for (const Tensor& v : views)
      if (v.numel() > 0) return v.rows();
    return 0;
  }
  bool empty() const { return rows() == 0; }
};

// Standard-normal draws for the latent reparameterization, one [B, dz] block
// per mixture component and per draw.
struct LatentNoise {
  std::vector<std::vector<Tensor>> eps;  // [component][t]
};

// Standard-normal draws for the missing-view reparameterization, [B, dm].
struct ImputeNoise {
  std::vector<Tensor> eps;  // [t]
};

// Additive pieces of a variational bound, all oriented so that
// total = sum of parts = the lower bound (maximize), loss() = -total.
struct BoundBreakdown {
  std::vector<double> recon;        // per view: E_q log p(x_v | .)
  double prior_z = 0.0;
  double prior_y = 0.0;
  double entropy = 0.0;             // mixture posterior entropy bound
  double classifier_entropy = 0.0;  // only label-marginalized bounds
  double imputer_entropy = 0.0;     // only imputation-marginalized bounds
  double total = 0.0;

  double loss() const { return -total; }
};

inline Tensor one_hot_rows(const std::vector<int>& labels, std::size_t K) {
  Tensor t = Tensor::zeros({labels.size(), K});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= K)
      throw ContractError("label " + std::to_string(labels[i]) + " outside 0.." + std::to_string(K - 1));
    t(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return t;
}

inline Tensor constant_class_rows(std::size_t B, std::size_t k, std::size_t K) {
  Tensor t = Tensor::zeros({B, K});
  for (std::size_t i = 0; i < B; ++i) t(i, k) = 1.0;
  return t;
}

namespace detail {

struct Ctx {
  Tape& t;
  LeafBinder& leaf;
  const Model& m;
};

struct MixWeights {
  std::vector<Var> log_w, w;  // scalars, one per component
};

inline MixWeights mix_weights(Ctx& c) {
  const std::size_t V = c.m.num_views();
  std::vector<Var> logits;
  logits.push_back(c.t.constant_scalar(0.0));  // first logit pinned
  Var free = c.leaf("mix/logits");
  for (std::size_t l = 1; l < V; ++l) logits.push_back(c.t.element(free, l - 1));
  Var lse = c.t.logsumexp(logits);
  MixWeights w;
  for (std::size_t l = 0; l < V; ++l) {
    w.log_w.push_back(c.t.sub(logits[l], lse));
    w.w.push_back(c.t.exp_(w.log_w.back()));
  }
  return w;
}

// log N(x; mu, diag var) summed over columns, one value per row.
inline Var gauss_logpdf_rows(Tape& t, Var x, Var mu, Var var) {
  const double d = static_cast<double>(t.val(x).cols());
  Var diff = t.sub(x, mu);
  Var inner = t.add(t.log_(var), t.div(t.square_(diff), var));
  return t.shift(t.scale(t.row_sum(inner), -0.5), -0.5 * d * kLog2Pi);
}

// Entropy of N(.; mu, diag var) per row: 0.5*sum log var + d/2*(log 2pi + 1).
inline Var gauss_entropy_rows(Tape& t, Var var) {
  const double d = static_cast<double>(t.val(var).cols());
  return t.shift(t.scale(t.row_sum(t.log_(var)), 0.5), 0.5 * d * (kLog2Pi + 1.0));
}

struct Posterior {
  std::vector<Var> mu, var;  // per component, [B, dz]
};

inline Posterior encode_views(Ctx& c, const std::vector<Var>& xs, Var y1h) {
  Posterior p;
  for (std::size_t v = 0; v < c.m.num_views(); ++v) {
    auto heads = mlp_forward(c.t, c.leaf, c.m.enc[v], c.t.concat_cols({xs[v], y1h}));
    p.mu.push_back(heads.at("mu"));
    p.var.push_back(heads.at("var"));
  }
  return p;
}

// Lower bound on the entropy of the per-row posterior mixture.
inline Var mixture_entropy_rows(Ctx& c, const Posterior& p, const MixWeights& w) {
  const std::size_t V = c.m.num_views();
  Var acc{};
  for (std::size_t v = 0; v < V; ++v) {
    std::vector<Var> inner;
    for (std::size_t l = 0; l < V; ++l) {
      Var s = c.t.add(p.var[v], p.var[l]);
      Var conv = gauss_logpdf_rows(c.t, p.mu[v], p.mu[l], s);
      inner.push_back(c.t.add_scalar(conv, w.log_w[l]));
    }
    Var term = c.t.scale_by(c.t.logsumexp(inner), w.w[v]);
    acc = v == 0 ? term : c.t.add(acc, term);
  }
  return c.t.neg(acc);
}

struct BatchTerms {
  std::vector<Var> recon;  // per view, [B]
  Var prior_z{}, prior_y{}, entropy{};
  Var cls_entropy{}, imp_entropy{};
};

inline Var terms_total_rows(Tape& t, const BatchTerms& bt) {
  Var acc = bt.recon[0];
  for (std::size_t v = 1; v < bt.recon.size(); ++v) acc = t.add(acc, bt.recon[v]);
  acc = t.add(acc, bt.prior_z);
  acc = t.add(acc, bt.prior_y);
  acc = t.add(acc, bt.entropy);
  if (bt.cls_entropy.valid()) acc = t.add(acc, bt.cls_entropy);
  if (bt.imp_entropy.valid()) acc = t.add(acc, bt.imp_entropy);
  return acc;
}

// Core labeled bound for one stratum.  xs holds every view as a tape node;
// for incomplete-data bounds xs[missing] is the true value or an imputer
// sample, and observed-view decoders additionally condition on it.
inline BatchTerms labeled_terms(Ctx& c, const std::vector<Var>& xs, const Tensor& y1h,
                                const std::vector<int>& labels, const LatentNoise& noise, int T) {
  const std::size_t V = c.m.num_views();
  const std::size_t B = c.t.val(xs[0]).rows();
  const std::size_t dz = c.m.latent_dim();
  if (noise.eps.size() != V) throw ContractError("latent noise needs one block per component");
  for (const auto& comp : noise.eps) {
    if (comp.size() != static_cast<std::size_t>(T)) throw ContractError("latent noise draw count != T");
    for (const Tensor& e : comp)
      if (e.rank() != 2 || e.rows() != B || e.cols() != dz)
        throw DimensionError("latent noise block " + e.shape_str());
  }

  Var y = c.t.constant(y1h);
  MixWeights w = mix_weights(c);
  Posterior post = encode_views(c, xs, y);

  // z draws shared by every consumer of component l, draw t
  std::vector<std::vector<Var>> z(V);
  for (std::size_t l = 0; l < V; ++l)
    for (int t = 0; t < T; ++t)
      z[l].push_back(c.t.add(post.mu[l], c.t.mul(c.t.sqrt_(post.var[l]), c.t.constant(noise.eps[l][t]))));

  const double invT = 1.0 / static_cast<double>(T);
  const bool simvae = c.m.cfg.kind == ModelKind::Simvae;
  const std::size_t missing = c.m.cfg.missing_view;

  BatchTerms bt;
  Var zero_mu = c.t.constant(Tensor::zeros({B, dz}));
  Var unit_var = c.t.constant(Tensor::full({B, dz}, 1.0));

  Var prior_acc{};
  std::vector<Var> recon_acc(V);
  for (std::size_t l = 0; l < V; ++l) {
    Var comp_prior{};
    std::vector<Var> comp_recon(V);
    for (int t = 0; t < T; ++t) {
      Var pz = gauss_logpdf_rows(c.t, z[l][t], zero_mu, unit_var);
      comp_prior = t == 0 ? pz : c.t.add(comp_prior, pz);
      for (std::size_t v = 0; v < V; ++v) {
        std::vector<Var> din = {y, z[l][t]};
        if (simvae && v != missing) din.push_back(xs[missing]);
        auto heads = mlp_forward(c.t, c.leaf, c.m.dec[v], c.t.concat_cols(din));
        Var lp = gauss_logpdf_rows(c.t, xs[v], heads.at("mu"), heads.at("var"));
        comp_recon[v] = t == 0 ? lp : c.t.add(comp_recon[v], lp);
      }
    }
    Var wp = c.t.scale_by(c.t.scale(comp_prior, invT), w.w[l]);
    prior_acc = l == 0 ? wp : c.t.add(prior_acc, wp);
    for (std::size_t v = 0; v < V; ++v) {
      Var wr = c.t.scale_by(c.t.scale(comp_recon[v], invT), w.w[l]);
      recon_acc[v] = l == 0 ? wr : c.t.add(recon_acc[v], wr);
    }
  }
  bt.recon = std::move(recon_acc);
  bt.prior_z = prior_acc;

  const CategoricalDist prior = c.m.label_prior();
  Tensor py = Tensor::zeros({B});
  for (std::size_t i = 0; i < B; ++i)
    py(i) = categorical_log_pmf(static_cast<std::size_t>(labels[i]), prior);
  bt.prior_y = c.t.constant(py);

  bt.entropy = mixture_entropy_rows(c, post, w);
  return bt;
}

inline BatchTerms scale_terms(Tape& t, const BatchTerms& a, double s) {
  BatchTerms out;
  for (Var r : a.recon) out.recon.push_back(t.scale(r, s));
  out.prior_z = t.scale(a.prior_z, s);
  out.prior_y = t.scale(a.prior_y, s);
  out.entropy = t.scale(a.entropy, s);
  if (a.cls_entropy.valid()) out.cls_entropy = t.scale(a.cls_entropy, s);
  if (a.imp_entropy.valid()) out.imp_entropy = t.scale(a.imp_entropy, s);
  return out;
}

inline BatchTerms add_terms(Tape& t, const BatchTerms& a, const BatchTerms& b) {
  BatchTerms out;
  for (std::size_t v = 0; v < a.recon.size(); ++v) out.recon.push_back(t.add(a.recon[v], b.recon[v]));
  out.prior_z = t.add(a.prior_z, b.prior_z);
  out.prior_y = t.add(a.prior_y, b.prior_y);
  out.entropy = t.add(a.entropy, b.entropy);
  if (a.cls_entropy.valid() && b.cls_entropy.valid()) out.cls_entropy = t.add(a.cls_entropy, b.cls_entropy);
  else if (a.cls_entropy.valid()) out.cls_entropy = a.cls_entropy;
  else if (b.cls_entropy.valid()) out.cls_entropy = b.cls_entropy;
  if (a.imp_entropy.valid() && b.imp_entropy.valid()) out.imp_entropy = t.add(a.imp_entropy, b.imp_entropy);
  else if (a.imp_entropy.valid()) out.imp_entropy = a.imp_entropy;
  else if (b.imp_entropy.valid()) out.imp_entropy = b.imp_entropy;
  return out;
}

// Weight every part row-wise by q_k (responsibility of one enumerated class).
inline BatchTerms weight_terms(Tape& t, const BatchTerms& a, Var rowk) {
  BatchTerms out;
  for (Var r : a.recon) out.recon.push_back(t.mul(rowk, r));
  out.prior_z = t.mul(rowk, a.prior_z);
  out.prior_y = t.mul(rowk, a.prior_y);
  out.entropy = t.mul(rowk, a.entropy);
  if (a.cls_entropy.valid()) out.cls_entropy = t.mul(rowk, a.cls_entropy);
  if (a.imp_entropy.valid()) out.imp_entropy = t.mul(rowk, a.imp_entropy);
  return out;
}

// Label-marginalized bound: classifier responsibilities weight the per-class
// labeled bound; every enumeration reuses the same latent noise.
inline BatchTerms unlabeled_terms(Ctx& c, const std::vector<Var>& xs, Var cls_input,
                                  const LatentNoise& noise, int T, Var* logq_out = nullptr) {
  const std::size_t K = c.m.num_classes();
  const std::size_t B = c.t.val(xs[0]).rows();
  auto heads = mlp_forward(c.t, c.leaf, c.m.cls, cls_input);
  Var logq = heads.at("logp");
  if (logq_out) *logq_out = logq;

  BatchTerms acc;
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<int> labels(B, static_cast<int>(k));
    BatchTerms tk = labeled_terms(c, xs, constant_class_rows(B, k, K), labels, noise, T);
    Var qk = c.t.exp_(c.t.col(logq, k));
    BatchTerms wk = weight_terms(c.t, tk, qk);
    acc = k == 0 ? wk : add_terms(c.t, acc, wk);
  }
  acc.cls_entropy = c.t.neg(c.t.row_sum(c.t.mul(c.t.exp_(logq), logq)));
  return acc;
}

struct ImputerHeads {
  Var mu{}, var{};
};

inline ImputerHeads imputer_forward(Ctx& c, Var x_obs) {
  if (!c.m.has_imputer) throw ContractError("model has no imputer");
  auto heads = mlp_forward(c.t, c.leaf, c.m.imp, x_obs);
  return {heads.at("mu"), heads.at("var")};
}

// Concatenation of the always-present views in view order.
inline Var observed_concat(Ctx& c, const std::vector<Var>& xs) {
  std::vector<Var> parts;
  for (std::size_t v = 0; v < c.m.num_views(); ++v)
    if (v != c.m.cfg.missing_view) parts.push_back(xs[v]);
  return parts.size() == 1 ? parts[0] : c.t.concat_cols(parts);
}

// All views in view order with the missing slot substituted.
inline Var full_concat(Ctx& c, const std::vector<Var>& xs, Var xm) {
  std::vector<Var> parts;
  for (std::size_t v = 0; v < c.m.num_views(); ++v)
    parts.push_back(v == c.m.cfg.missing_view ? xm : xs[v]);
  return c.t.concat_cols(parts);
}

inline BoundBreakdown read_terms(Tape& t, const BatchTerms& bt, Var total_rows) {
  auto row_total = [&](Var v) {
    double s = 0.0;
    for (double x : t.val(v).v) s += x;
    return s;
  };
  BoundBreakdown b;
  for (Var r : bt.recon) b.recon.push_back(row_total(r));
  b.prior_z = row_total(bt.prior_z);
  b.prior_y = row_total(bt.prior_y);
  b.entropy = row_total(bt.entropy);
  if (bt.cls_entropy.valid()) b.classifier_entropy = row_total(bt.cls_entropy);
  if (bt.imp_entropy.valid()) b.imputer_entropy = row_total(bt.imp_entropy);
  b.total = row_total(total_rows);
  return b;
}

// Optional backward pass: grads accumulates d(total)/d(params), the
// ascent direction of the bound.
inline BoundBreakdown finish_bound(Tape& t, LeafBinder& leaf, const BatchTerms& bt,
                                   ParamStore* grads) {
  Var rows = terms_total_rows(t, bt);
  if (grads) {
    t.backward(t.sum(rows));
    leaf.add_grads_into(*grads);
  }
  return read_terms(t, bt, rows);
}

inline std::vector<Var> bind_views(Ctx& c, const Batch& batch, std::optional<Var> xm = {}) {
  std::vector<Var> xs(c.m.num_views());
  for (std::size_t v = 0; v < c.m.num_views(); ++v) {
    if (xm.has_value() && v == c.m.cfg.missing_view) {
      xs[v] = *xm;
      continue;
    }
    const Tensor& data = batch.views[v];
    if (data.numel() == 0) throw ContractError("view " + std::to_string(v) + " absent from batch");
    if (data.cols() != c.m.cfg.view_dims[v])
      throw DimensionError("view " + std::to_string(v) + " width " + std::to_string(data.cols()));
    data.ensure_finite("batch view " + std::to_string(v));
    xs[v] = c.t.constant(data);
  }
  return xs;
}

}  // namespace detail

// ---- per-sample noise containers for the single-row entry points ----

struct SampleNoise {
  std::vector<std::vector<std::vector<double>>> latent;  // [component][t][dz]
  std::vector<std::vector<double>> missing;              // [t][dm]
};

namespace detail {

inline LatentNoise latent_from_sample(const SampleNoise& n) {
  LatentNoise out;
  for (const auto& comp : n.latent) {
    std::vector<Tensor> draws;
    for (const auto& d : comp) draws.push_back(Tensor::matrix(1, d.size(), d));
    out.eps.push_back(std::move(draws));
  }
  return out;
}

inline ImputeNoise impute_from_sample(const SampleNoise& n) {
  ImputeNoise out;
  for (const auto& d : n.missing) out.eps.push_back(Tensor::matrix(1, d.size(), d));
  return out;
}

inline Batch single_row_batch(const Model& m, const std::vector<std::vector<double>>& views, int label) {
  Batch b;
  for (std::size_t v = 0; v < m.num_views(); ++v) {
    if (v < views.size() && !views[v].empty())
      b.views.push_back(Tensor::matrix(1, views[v].size(), views[v]));
    else
      b.views.push_back(Tensor{});
  }
  if (label >= 0) b.labels = {label};
  return b;
}

}  // namespace detail

// ======== public bound evaluation ========

// Labeled bound of the semi-supervised model for one (X, y) pair.
inline BoundBreakdown smvae_labeled_bound(const Model& m, const std::vector<std::vector<double>>& views,
                                          int y, const SampleNoise& noise, int T = 1,
                                          ParamStore* grads = nullptr) {
  if (m.cfg.kind != ModelKind::Smvae) throw ContractError("smvae_labeled_bound needs an smvae model");
  Tape t;
  LeafBinder leaf(t, m.params);
  detail::Ctx c{t, leaf, m};
  Batch b = detail::single_row_batch(m, views, y);
  auto xs = detail::bind_views(c, b);
  auto bt = detail::labeled_terms(c, xs, one_hot_rows(b.labels, m.num_classes()), b.labels,
                                  detail::latent_from_sample(noise), T);
  return detail::finish_bound(t, leaf, bt, grads);
}

// Label-marginalized bound for one unlabeled X.
inline BoundBreakdown smvae_unlabeled_bound(const Model& m, const std::vector<std::vector<double>>& views,
                                            const SampleNoise& noise, int T = 1,
                                            ParamStore* grads = nullptr) {
  if (m.cfg.kind != ModelKind::Smvae) throw ContractError("smvae_unlabeled_bound needs an smvae model");
  Tape t;
  LeafBinder leaf(t, m.params);
  detail::Ctx c{t, leaf, m};
  Batch b = detail::single_row_batch(m, views, -1);
  auto xs = detail::bind_views(c, b);
  auto bt = detail::unlabeled_terms(c, xs, t.concat_cols(xs), detail::latent_from_sample(noise), T);
  return detail::finish_bound(t, leaf, bt, grads);
}

// Unsupervised evidence bound (single-class specialization).
inline BoundBreakdown mvae_elbo(const Model& m, const std::vector<std::vector<double>>& views,
                                const SampleNoise& noise, int T = 1,
                                ParamStore* grads = nullptr) {
  if (m.cfg.kind != ModelKind::Mvae) throw ContractError("mvae_elbo needs an mvae model");
  Tape t;
  LeafBinder leaf(t, m.params);
  detail::Ctx c{t, leaf, m};
  Batch b = detail::single_row_batch(m, views, 0);
  auto xs = detail::bind_views(c, b);
  auto bt = detail::labeled_terms(c, xs, one_hot_rows({0}, 1), {0}, detail::latent_from_sample(noise), T);
  return detail::finish_bound(t, leaf, bt, grads);
}

// Complete-and-labeled bound of the incomplete-data model.
inline BoundBreakdown simvae_bound_lc(const Model& m, const std::vector<std::vector<double>>& views,
                                      int y, const SampleNoise& noise, int T = 1,
                                      ParamStore* grads = nullptr) {
  if (m.cfg.kind != ModelKind::Simvae) throw ContractError("simvae bounds need a simvae model");
  Tape t;
  LeafBinder leaf(t, m.params);
  detail::Ctx c{t, leaf, m};
  Batch b = detail::single_row_batch(m, views, y);
  auto xs = detail::bind_views(c, b);
  auto bt = detail::labeled_terms(c, xs, one_hot_rows(b.labels, m.num_classes()), b.labels,
                                  detail::latent_from_sample(noise), T);
  return detail::finish_bound(t, leaf, bt, grads);
}

// Labeled bound with the incomplete view integrated out through the imputer.
inline BoundBreakdown simvae_bound_li(const Model& m, const std::vector<std::vector<double>>& views,
                                      int y, const SampleNoise& noise, int T = 1, int Tm = 1,
                                      ParamStore* grads = nullptr) {
  if (m.cfg.kind != ModelKind::Simvae) throw ContractError("simvae bounds need a simvae model");
  Tape t;
  LeafBinder leaf(t, m.params);
  detail::Ctx c{t, leaf, m};
  Batch b = detail::single_row_batch(m, views, y);
  const LatentNoise ln = detail::latent_from_sample(noise);
  const ImputeNoise mn = detail::impute_from_sample(noise);
  if (mn.eps.size() != static_cast<std::size_t>(Tm)) throw ContractError("imputer noise draw count != Tm");

  // bind observed views only; the missing slot comes from the imputer
  std::vector<Var> obs(m.num_views());
  for (std::size_t v = 0; v < m.num_views(); ++v)
    if (v != m.cfg.missing_view) obs[v] = t.constant(b.views[v]);
  Var x_obs = detail::observed_concat(c, obs);
  auto imp = detail::imputer_forward(c, x_obs);

  detail::BatchTerms acc;
  for (int tm = 0; tm < Tm; ++tm) {
    Var xm = t.add(imp.mu, t.mul(t.sqrt_(imp.var), t.constant(mn.eps[tm])));
    auto xs = obs;
    xs[m.cfg.missing_view] = xm;
    auto bt = detail::labeled_terms(c, xs, one_hot_rows(b.labels, m.num_classes()), b.labels, ln, T);
    acc = tm == 0 ? bt : detail::add_terms(t, acc, bt);
  }
  acc = detail::scale_terms(t, acc, 1.0 / static_cast<double>(Tm));
  acc.imp_entropy = detail::gauss_entropy_rows(t, imp.var);
  return detail::finish_bound(t, leaf, acc, grads);
}

// Complete unlabeled bound: enumerate y at the true incomplete view.
inline BoundBreakdown simvae_bound_uc(const Model& m, const std::vector<std::vector<double>>& views,
                                      const SampleNoise& noise, int T = 1,
                                      ParamStore* grads = nullptr) {
  if (m.cfg.kind != ModelKind::Simvae) throw ContractError("simvae bounds need a simvae model");
  Tape t;
  LeafBinder leaf(t, m.params);
  detail::Ctx c{t, leaf, m};
  Batch b = detail::single_row_batch(m, views, -1);
  auto xs = detail::bind_views(c, b);
  auto bt = detail::unlabeled_terms(c, xs, t.concat_cols(xs), detail::latent_from_sample(noise), T);
  return detail::finish_bound(t, leaf, bt, grads);
}

// Incomplete unlabeled bound: imputer samples outside, label enumeration
// inside, classifier evaluated at each imputed draw.
inline BoundBreakdown simvae_bound_ui(const Model& m, const std::vector<std::vector<double>>& views,
                                      const SampleNoise& noise, int T = 1, int Tm = 1,
                                      ParamStore* grads = nullptr) {
  if (m.cfg.kind != ModelKind::Simvae) throw ContractError("simvae bounds need a simvae model");
  Tape t;
  LeafBinder leaf(t, m.params);
  detail::Ctx c{t, leaf, m};
  Batch b = detail::single_row_batch(m, views, -1);
  const LatentNoise ln = detail::latent_from_sample(noise);
  const ImputeNoise mn = detail::impute_from_sample(noise);
  if (mn.eps.size() != static_cast<std::size_t>(Tm)) throw ContractError("imputer noise draw count != Tm");

  std::vector<Var> obs(m.num_views());
  for (std::size_t v = 0; v < m.num_views(); ++v)
    if (v != m.cfg.missing_view) obs[v] = t.constant(b.views[v]);
  Var x_obs = detail::observed_concat(c, obs);
  auto imp = detail::imputer_forward(c, x_obs);

  detail::BatchTerms acc;
  for (int tm = 0; tm < Tm; ++tm) {
    Var xm = t.add(imp.mu, t.mul(t.sqrt_(imp.var), t.constant(mn.eps[tm])));
    auto xs = obs;
    xs[m.cfg.missing_view] = xm;
    auto bt = detail::unlabeled_terms(c, xs, detail::full_concat(c, obs, xm), ln, T);
    acc = tm == 0 ? bt : detail::add_terms(t, acc, bt);
  }
  acc = detail::scale_terms(t, acc, 1.0 / static_cast<double>(Tm));
  acc.imp_entropy = detail::gauss_entropy_rows(t, imp.var);
  return detail::finish_bound(t, leaf, acc, grads);
}

// ======== batched training objectives ========

struct ObjectiveResult {
  double value = 0.0;            // F, the quantity gradient descent minimizes
  BoundBreakdown parts;          // bound-oriented sums over every sample
  double class_penalty = 0.0;    // alpha * sum -log q(y|X) (already weighted)
  double impute_penalty = 0.0;   // alpha1 * sum -log q(x_m|x_o) (already weighted)
};

struct SmvaeNoise {
  LatentNoise labeled, unlabeled;
};

struct SimvaeNoise {
  LatentNoise lc, li, uc, ui;
  ImputeNoise li_m, ui_m;
};

namespace detail {

inline void accumulate_parts(BoundBreakdown& into, const BoundBreakdown& add) {
  if (into.recon.empty()) into.recon.assign(add.recon.size(), 0.0);
  for (std::size_t v = 0; v < add.recon.size(); ++v) into.recon[v] += add.recon[v];
  into.prior_z += add.prior_z;
  into.prior_y += add.prior_y;
  into.entropy += add.entropy;
  into.classifier_entropy += add.classifier_entropy;
  into.imputer_entropy += add.imputer_entropy;
  into.total += add.total;
}

}  // namespace detail

// Semi-supervised objective over one minibatch:
//   F = sum labeled losses + sum unlabeled losses + alpha * sum -log q(y|X),
//   alpha = c * (N_l + N_u) / N_l.
// When grads is given, d F / d params is accumulated into it.
inline ObjectiveResult smvae_objective(const Model& m, const Batch& labeled, const Batch& unlabeled,
                                       double cweight, const SmvaeNoise& noise, int T = 1,
                                       ParamStore* grads = nullptr) {
  if (m.cfg.kind != ModelKind::Smvae) throw ContractError("smvae_objective needs an smvae model");
  const std::size_t Nl = labeled.rows(), Nu = unlabeled.rows();
  if (Nl == 0) throw ContractError("smvae_objective: labeled batch is empty");
  if (labeled.labels.size() != Nl) throw ContractError("smvae_objective: labeled batch lacks labels");
  const double alpha = cweight * static_cast<double>(Nl + Nu) / static_cast<double>(Nl);

  Tape t;
  LeafBinder leaf(t, m.params);
  detail::Ctx c{t, leaf, m};
  ObjectiveResult out;

  auto xs = detail::bind_views(c, labeled);
  auto lt = detail::labeled_terms(c, xs, one_hot_rows(labeled.labels, m.num_classes()),
                                  labeled.labels, noise.labeled, T);
  Var l_rows = detail::terms_total_rows(t, lt);
  detail::accumulate_parts(out.parts, detail::read_terms(t, lt, l_rows));
  Var F = t.neg(t.sum(l_rows));

  auto cls_heads = mlp_forward(t, leaf, m.cls, t.concat_cols(xs));
  Var nll = t.neg(t.sum(t.select_cols(cls_heads.at("logp"), labeled.labels)));
  out.class_penalty = alpha * t.val(nll).v[0];
  F = t.add(F, t.scale(nll, alpha));

  if (Nu > 0) {
    auto uxs = detail::bind_views(c, unlabeled);
    auto ut = detail::unlabeled_terms(c, uxs, t.concat_cols(uxs), noise.unlabeled, T);
    Var u_rows = detail::terms_total_rows(t, ut);
    detail::accumulate_parts(out.parts, detail::read_terms(t, ut, u_rows));
    F = t.add(F, t.neg(t.sum(u_rows)));
  }

  out.value = t.val(F).v[0];
  if (!std::isfinite(out.value)) throw NumericError("smvae_objective value");
  if (grads) {
    t.backward(F);
    leaf.add_grads_into(*grads);
  }
  return out;
}

// Unsupervised objective: F = sum of per-sample negative evidence bounds.
inline ObjectiveResult mvae_objective(const Model& m, const Batch& batch, const LatentNoise& noise,
                                      int T = 1, ParamStore* grads = nullptr) {
  if (m.cfg.kind != ModelKind::Mvae) throw ContractError("mvae_objective needs an mvae model");
  if (batch.rows() == 0) throw ContractError("mvae_objective: empty batch");
  Tape t;
  LeafBinder leaf(t, m.params);
  detail::Ctx c{t, leaf, m};
  ObjectiveResult out;

  auto xs = detail::bind_views(c, batch);
  std::vector<int> labels(batch.rows(), 0);
  auto lt = detail::labeled_terms(c, xs, one_hot_rows(labels, 1), labels, noise, T);
  Var rows = detail::terms_total_rows(t, lt);
  detail::accumulate_parts(out.parts, detail::read_terms(t, lt, rows));
  Var F = t.neg(t.sum(rows));
  out.value = t.val(F).v[0];
  if (!std::isfinite(out.value)) throw NumericError("mvae_objective value");
  if (grads) {
    t.backward(F);
    leaf.add_grads_into(*grads);
  }
  return out;
}

// Incomplete-data objective over the four strata (complete/incomplete x
// labeled/unlabeled):
//   F = sum of stratum losses
//     + alpha1 * sum_complete -log q(x_m|x_o),  alpha1 = c1 (N_c+N_i)/N_c
//     + alpha2 * sum_labeled  -log q(y|.),      alpha2 = c2 (N_l+N_u)/N_l.
// Incomplete labeled rows feed the classifier concat(x_o, imputer mean).
inline ObjectiveResult simvae_objective(const Model& m, const Batch& lc, const Batch& li,
                                        const Batch& uc, const Batch& ui, double c1, double c2,
                                        const SimvaeNoise& noise, int T = 1, int Tm = 1,
                                        ParamStore* grads = nullptr) {
  if (m.cfg.kind != ModelKind::Simvae) throw ContractError("simvae_objective needs a simvae model");
  const std::size_t Nc = lc.rows() + uc.rows();
  const std::size_t Ni = li.rows() + ui.rows();
  const std::size_t Nl = lc.rows() + li.rows();
  const std::size_t Nu = uc.rows() + ui.rows();
  if (Nc == 0) throw ContractError("simvae_objective: no complete samples in batch");
  if (Nl == 0) throw ContractError("simvae_objective: no labeled samples in batch");
  const double alpha1 = c1 * static_cast<double>(Nc + Ni) / static_cast<double>(Nc);
  const double alpha2 = c2 * static_cast<double>(Nl + Nu) / static_cast<double>(Nl);
  const std::size_t missing = m.cfg.missing_view;

  Tape t;
  LeafBinder leaf(t, m.params);
  detail::Ctx c{t, leaf, m};
  ObjectiveResult out;
  Var F{};
  auto addF = [&](Var x) { F = F.valid() ? t.add(F, x) : x; };

  double impute_nll = 0.0, class_nll = 0.0;

  // complete labeled
  if (!lc.empty()) {
    auto xs = detail::bind_views(c, lc);
    auto bt = detail::labeled_terms(c, xs, one_hot_rows(lc.labels, m.num_classes()), lc.labels,
                                    noise.lc, T);
    Var rows = detail::terms_total_rows(t, bt);
    detail::accumulate_parts(out.parts, detail::read_terms(t, bt, rows));
    addF(t.neg(t.sum(rows)));

    auto imp = detail::imputer_forward(c, detail::observed_concat(c, xs));
    Var inll = t.neg(t.sum(detail::gauss_logpdf_rows(t, xs[missing], imp.mu, imp.var)));
    impute_nll += t.val(inll).v[0];
    addF(t.scale(inll, alpha1));

    auto heads = mlp_forward(t, leaf, m.cls, t.concat_cols(xs));
    Var cnll = t.neg(t.sum(t.select_cols(heads.at("logp"), lc.labels)));
    class_nll += t.val(cnll).v[0];
    addF(t.scale(cnll, alpha2));
  }

  // incomplete labeled
  if (!li.empty()) {
    std::vector<Var> obs(m.num_views());
    for (std::size_t v = 0; v < m.num_views(); ++v)
      if (v != missing) obs[v] = t.constant(li.views[v]);
    Var x_obs = detail::observed_concat(c, obs);
    auto imp = detail::imputer_forward(c, x_obs);

    detail::BatchTerms acc;
    for (int tm = 0; tm < Tm; ++tm) {
      Var xm = t.add(imp.mu, t.mul(t.sqrt_(imp.var), t.constant(noise.li_m.eps[tm])));
      auto xs = obs;
      xs[missing] = xm;
      auto bt = detail::labeled_terms(c, xs, one_hot_rows(li.labels, m.num_classes()), li.labels,
                                      noise.li, T);
      acc = tm == 0 ? bt : detail::add_terms(t, acc, bt);
    }
    acc = detail::scale_terms(t, acc, 1.0 / static_cast<double>(Tm));
    acc.imp_entropy = detail::gauss_entropy_rows(t, imp.var);
    Var rows = detail::terms_total_rows(t, acc);
    detail::accumulate_parts(out.parts, detail::read_terms(t, acc, rows));
    addF(t.neg(t.sum(rows)));

    // classifier sees the conditional-mean fill for incomplete labeled rows
    auto heads = mlp_forward(t, leaf, m.cls, detail::full_concat(c, obs, imp.mu));
    Var cnll = t.neg(t.sum(t.select_cols(heads.at("logp"), li.labels)));
    class_nll += t.val(cnll).v[0];
    addF(t.scale(cnll, alpha2));
  }

  // complete unlabeled
  if (!uc.empty()) {
    auto xs = detail::bind_views(c, uc);
    auto bt = detail::unlabeled_terms(c, xs, t.concat_cols(xs), noise.uc, T);
    Var rows = detail::terms_total_rows(t, bt);
    detail::accumulate_parts(out.parts, detail::read_terms(t, bt, rows));
    addF(t.neg(t.sum(rows)));

    auto imp = detail::imputer_forward(c, detail::observed_concat(c, xs));
    Var inll = t.neg(t.sum(detail::gauss_logpdf_rows(t, xs[missing], imp.mu, imp.var)));
    impute_nll += t.val(inll).v[0];
    addF(t.scale(inll, alpha1));
  }

  // incomplete unlabeled
  if (!ui.empty()) {
    std::vector<Var> obs(m.num_views());
    for (std::size_t v = 0; v < m.num_views(); ++v)
      if (v != missing) obs[v] = t.constant(ui.views[v]);
    Var x_obs = detail::observed_concat(c, obs);
    auto imp = detail::imputer_forward(c, x_obs);

    detail::BatchTerms acc;
    for (int tm = 0; tm < Tm; ++tm) {
      Var xm = t.add(imp.mu, t.mul(t.sqrt_(imp.var), t.constant(noise.ui_m.eps[tm])));
      auto xs = obs;
      xs[missing] = xm;
      auto bt = detail::unlabeled_terms(c, xs, detail::full_concat(c, obs, xm), noise.ui, T);
      acc = tm == 0 ? bt : detail::add_terms(t, acc, bt);
    }
    acc = detail::scale_terms(t, acc, 1.0 / static_cast<double>(Tm));
    acc.imp_entropy = detail::gauss_entropy_rows(t, imp.var);
    Var rows = detail::terms_total_rows(t, acc);
    detail::accumulate_parts(out.parts, detail::read_terms(t, acc, rows));
    addF(t.neg(t.sum(rows)));
  }

  out.impute_penalty = alpha1 * impute_nll;
  out.class_penalty = alpha2 * class_nll;
  out.value = t.val(F).v[0];
  if (!std::isfinite(out.value)) throw NumericError("simvae_objective value");
  if (grads) {
    t.backward(F);
    leaf.add_grads_into(*grads);
  }
  return out;
}

// ======== prediction-time entry points ========

// Class posterior for fully observed rows, [B, K] probabilities.
inline Tensor classify_batch(const Model& m, const std::vector<Tensor>& views) {
  if (!m.has_classifier) throw ContractError("model has no classifier");
  std::size_t B = 0;
  for (std::size_t v = 0; v < m.num_views(); ++v) {
    const Tensor& x = views.at(v);
    if (x.rank() != 2 || x.cols() != m.cfg.view_dims[v])
      throw DimensionError("classify view " + std::to_string(v) + " shape " + x.shape_str());
    if (v == 0) B = x.rows();
    if (x.rows() != B) throw DimensionError("classify view row mismatch");
    if (!x.all_finite())
      throw ContractError("classify: view " + std::to_string(v) + " has unfilled entries; impute first");
  }
  Tape t;
  LeafBinder leaf(t, m.params);
  std::vector<Var> xs;
  for (const Tensor& x : views) xs.push_back(t.constant(x));
  auto heads = mlp_forward(t, leaf, m.cls, t.concat_cols(xs));
  Tensor probs = t.val(heads.at("logp"));
  for (double& x : probs.v) x = std::exp(x);
  return probs;
}

inline CategoricalDist classify(const Model& m, std::span<const double> x1, std::span<const double> x2) {
  std::vector<Tensor> views = {Tensor::matrix(1, x1.size(), {x1.begin(), x1.end()}),
                               Tensor::matrix(1, x2.size(), {x2.begin(), x2.end()})};
  Tensor probs = classify_batch(m, views);
  return CategoricalDist(std::vector<double>(probs.v.begin(), probs.v.end()));
}

// Conditional-mean fill of the missing view from the observed rows [B, d_o].
inline Tensor impute_batch(const Model& m, const Tensor& x_obs) {
  if (!m.has_imputer) throw ContractError("model has no imputer");
  if (x_obs.rank() != 2 || x_obs.cols() != m.observed_dim())
    throw DimensionError("impute input shape " + x_obs.shape_str());
  x_obs.ensure_finite("impute input");
  Tape t;
  LeafBinder leaf(t, m.params);
  auto heads = mlp_forward(t, leaf, m.imp, t.constant(x_obs));
  return t.val(heads.at("mu"));
}

inline std::vector<double> impute_missing(const Model& m, std::span<const double> x_obs) {
  Tensor out = impute_batch(m, Tensor::matrix(1, x_obs.size(), {x_obs.begin(), x_obs.end()}));
  return out.v;
}

}  // namespace mvf
