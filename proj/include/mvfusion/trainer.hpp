#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mvfusion/adam.hpp"
#include "mvfusion/bounds.hpp"
#include "mvfusion/datakit.hpp"
#include "mvfusion/model.hpp"
#include "mvfusion/rng.hpp"

namespace mvf {

struct TrainConfig {
  ModelKind kind = ModelKind::Smvae;
  std::size_t latent_dim = 30;
  std::vector<std::size_t> hidden = {100, 50};
  double variance_floor = 1e-6;
  std::vector<double> prior_y;  // empty means uniform
  double lr = 3e-4;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  int T = 1, Tm = 1;
  double c = 1.0, c1 = 1.0, c2 = 1.0;
  double clip_norm = 0.0;  // 0 disables clipping
  std::uint64_t seed = 0;
};

// Row indices of one minibatch, kept separate per stratum.
struct Minibatch {
  std::array<std::vector<int>, 4> rows;  // lc, li, uc, ui

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& r : rows) n += r.size();
    return n;
  }
};

inline ModelConfig model_config_for(const MultiViewDataset& ds, const TrainConfig& cfg) {
  ModelConfig mc;
  mc.kind = cfg.kind;
  mc.num_classes = cfg.kind == ModelKind::Mvae ? 1 : ds.num_classes;
  mc.latent_dim = cfg.latent_dim;
  for (const Tensor& v : ds.views) mc.view_dims.push_back(v.cols());
  mc.hidden = cfg.hidden;
  mc.variance_floor = cfg.variance_floor;
  mc.missing_view = ds.missing_view;
  if (cfg.kind != ModelKind::Mvae) mc.prior_y = cfg.prior_y;
  return mc;
}

// Stratified round-robin minibatch plan for one epoch.  Every row appears
// exactly once; the batch count is capped so each batch keeps at least one
// labeled row (and for the incomplete-data model, one complete row).
inline std::vector<Minibatch> plan_minibatches(const MultiViewDataset& ds, const TrainConfig& cfg,
                                               std::size_t epoch) {
  ds.validate();
  auto strata = strata_indices(ds);
  const std::size_t n = ds.n();
  if (n == 0) throw ContractError("empty dataset");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");

  if (cfg.kind != ModelKind::Simvae && (!strata[1].empty() || !strata[3].empty()))
    throw ContractError("dataset has incomplete rows; this model kind needs complete data");

  std::size_t nb = (n + cfg.batch_size - 1) / cfg.batch_size;
  if (cfg.kind != ModelKind::Mvae) {
    const std::size_t n_lab = strata[0].size() + strata[1].size();
    if (n_lab == 0) throw ContractError("no labeled rows to train the classifier on");
    nb = std::min(nb, n_lab);
  }
  if (cfg.kind == ModelKind::Simvae) {
    const std::size_t n_comp = strata[0].size() + strata[2].size();
    if (n_comp == 0) throw ContractError("no complete rows to train the imputer on");
    nb = std::min(nb, n_comp);
  }
  nb = std::max<std::size_t>(nb, 1);

  // Dealing offsets: labeled rows (lc then li) and complete rows (lc then uc)
  // each fill one contiguous arc of batch slots, so whenever nb is within the
  // caps above every batch holds at least one labeled and one complete row.
  std::array<std::size_t, 4> offset{};
  offset[1] = strata[0].size();
  offset[2] = strata[0].size();
  offset[3] = strata[0].size() + strata[1].size() + strata[2].size();

  std::vector<Minibatch> plan(nb);
  for (std::size_t s = 0; s < 4; ++s) {
    const auto& rows = strata[s];
    if (rows.empty()) continue;
    auto order = rng::shuffled_indices(rows.size(), {cfg.seed, rng::kShuffle, epoch, s});
    for (std::size_t k = 0; k < rows.size(); ++k)
      plan[(offset[s] + k) % nb].rows[s].push_back(rows[static_cast<std::size_t>(order[k])]);
  }
  return plan;
}

// Records which (sample, component, draw) noise keys were generated, for
// tests that pin the one-draw-shared-everywhere estimator structure.
struct NoiseLedger {
  struct Draw {
    std::uint64_t kind, sample, component, t;
    auto operator<=>(const Draw&) const = default;
  };
  std::vector<Draw> draws;
};

namespace detail {

inline LatentNoise keyed_latent_noise(const TrainConfig& cfg, std::size_t epoch, std::size_t batch,
                                      const std::vector<int>& sample_ids, std::size_t components,
                                      std::size_t dz, NoiseLedger* ledger) {
  LatentNoise noise;
  noise.eps.resize(components);
  for (std::size_t l = 0; l < components; ++l) {
    for (int t = 0; t < cfg.T; ++t) {
      Tensor e = Tensor::zeros({sample_ids.size(), dz});
      for (std::size_t i = 0; i < sample_ids.size(); ++i) {
        const auto sample = static_cast<std::uint64_t>(sample_ids[i]);
        if (ledger) ledger->draws.push_back({rng::kLatent, sample, l, static_cast<std::uint64_t>(t)});
        for (std::size_t k = 0; k < dz; ++k)
          e(i, k) = rng::normal({cfg.seed, rng::kLatent, epoch, batch, sample, l,
                                 static_cast<std::uint64_t>(t), k});
      }
      noise.eps[l].push_back(std::move(e));
    }
  }
  return noise;
}

inline ImputeNoise keyed_impute_noise(const TrainConfig& cfg, std::size_t epoch, std::size_t batch,
                                      const std::vector<int>& sample_ids, std::size_t dm,
                                      NoiseLedger* ledger) {
  ImputeNoise noise;
  for (int t = 0; t < cfg.Tm; ++t) {
    Tensor e = Tensor::zeros({sample_ids.size(), dm});
    for (std::size_t i = 0; i < sample_ids.size(); ++i) {
      const auto sample = static_cast<std::uint64_t>(sample_ids[i]);
      if (ledger) ledger->draws.push_back({rng::kMissingNoise, sample, 0, static_cast<std::uint64_t>(t)});
      for (std::size_t k = 0; k < dm; ++k)
        e(i, k) = rng::normal({cfg.seed, rng::kMissingNoise, epoch, batch, sample,
                               static_cast<std::uint64_t>(t), k});
    }
    noise.eps.push_back(std::move(e));
  }
  return noise;
}

}  // namespace detail

// Gradient of the mean per-sample objective over one minibatch.  The raw
// objective sums over samples; both the gradient and the reported value are
// divided by the batch row count so learning rates transfer across sizes.
inline ParamStore estimate_gradients(const Model& m, const MultiViewDataset& ds, const Minibatch& mb,
                                     const TrainConfig& cfg, std::size_t epoch, std::size_t batch,
                                     double* objective_out = nullptr, NoiseLedger* ledger = nullptr) {
  const std::size_t V = m.num_views();
  const std::size_t dz = m.latent_dim();
  const std::size_t dm = m.cfg.view_dims[m.cfg.missing_view];
  ParamStore grads = ParamStore::zeros_like(m.params);
  const auto B = static_cast<double>(mb.total());
  if (B == 0.0) throw ContractError("empty minibatch");

  ObjectiveResult res;
  switch (m.cfg.kind) {
    case ModelKind::Mvae: {
      std::vector<int> rows = mb.rows[0];
      rows.insert(rows.end(), mb.rows[2].begin(), mb.rows[2].end());
      Batch all = gather_batch(ds, rows, true);
      res = mvae_objective(m, all, detail::keyed_latent_noise(cfg, epoch, batch, rows, V, dz, ledger),
                           cfg.T, &grads);
      break;
    }
    case ModelKind::Smvae: {
      Batch lab = gather_batch(ds, mb.rows[0], true);
      Batch unlab = gather_batch(ds, mb.rows[2], true);
      SmvaeNoise noise;
      noise.labeled = detail::keyed_latent_noise(cfg, epoch, batch, mb.rows[0], V, dz, ledger);
      noise.unlabeled = detail::keyed_latent_noise(cfg, epoch, batch, mb.rows[2], V, dz, ledger);
      res = smvae_objective(m, lab, unlab, cfg.c, noise, cfg.T, &grads);
      break;
    }
    case ModelKind::Simvae: {
      Batch lc = gather_batch(ds, mb.rows[0], true);
      Batch li = gather_batch(ds, mb.rows[1], false);
      Batch uc = gather_batch(ds, mb.rows[2], true);
      Batch ui = gather_batch(ds, mb.rows[3], false);
      SimvaeNoise noise;
      noise.lc = detail::keyed_latent_noise(cfg, epoch, batch, mb.rows[0], V, dz, ledger);
      noise.li = detail::keyed_latent_noise(cfg, epoch, batch, mb.rows[1], V, dz, ledger);
      noise.uc = detail::keyed_latent_noise(cfg, epoch, batch, mb.rows[2], V, dz, ledger);
      noise.ui = detail::keyed_latent_noise(cfg, epoch, batch, mb.rows[3], V, dz, ledger);
      noise.li_m = detail::keyed_impute_noise(cfg, epoch, batch, mb.rows[1], dm, ledger);
      noise.ui_m = detail::keyed_impute_noise(cfg, epoch, batch, mb.rows[3], dm, ledger);
      res = simvae_objective(m, lc, li, uc, ui, cfg.c1, cfg.c2, noise, cfg.T, cfg.Tm, &grads);
      break;
    }
  }
  grads.scale_all(1.0 / B);
  grads.ensure_finite("estimate_gradients");
  if (objective_out) *objective_out = res.value / B;
  return grads;
}

struct EvalMetrics {
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> per_class_accuracy;
  double nmse = std::numeric_limits<double>::quiet_NaN();
  double mean_bound_loss = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline LatentNoise zero_latent_noise(std::size_t B, std::size_t components, std::size_t dz) {
  LatentNoise n;
  n.eps.assign(components, {Tensor::zeros({B, dz})});
  return n;
}

// Sum of per-sample bound losses over given rows, deterministic (zero noise),
// evaluated in chunks so tapes stay small.
inline double sum_bound_losses(const Model& m, const MultiViewDataset& ds,
                               const std::vector<int>& rows, bool labeled, bool complete) {
  const std::size_t V = m.num_views();
  const std::size_t dz = m.latent_dim();
  const std::size_t dm = m.cfg.view_dims[m.cfg.missing_view];
  double total = 0.0;
  const std::size_t chunk = 512;
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    std::vector<int> part(rows.begin() + static_cast<long>(start),
                          rows.begin() + static_cast<long>(std::min(rows.size(), start + chunk)));
    Batch b = gather_batch(ds, part, complete);
    const std::size_t B = part.size();
    Tape t;
    LeafBinder leaf(t, m.params);
    Ctx c{t, leaf, m};
    LatentNoise ln = zero_latent_noise(B, V, dz);
    BatchTerms bt;
    if (complete) {
      auto xs = bind_views(c, b);
      if (labeled)
        bt = labeled_terms(c, xs, one_hot_rows(b.labels, m.num_classes()), b.labels, ln, 1);
      else if (m.has_classifier)
        bt = unlabeled_terms(c, xs, t.concat_cols(xs), ln, 1);
      else
        bt = labeled_terms(c, xs, one_hot_rows(std::vector<int>(B, 0), 1), std::vector<int>(B, 0), ln, 1);
    } else {
      std::vector<Var> obs(V);
      for (std::size_t v = 0; v < V; ++v)
        if (v != m.cfg.missing_view) obs[v] = t.constant(b.views[v]);
      auto imp = imputer_forward(c, observed_concat(c, obs));
      Var xm = imp.mu;  // zero draw falls on the mean
      auto xs = obs;
      xs[m.cfg.missing_view] = xm;
      if (labeled)
        bt = labeled_terms(c, xs, one_hot_rows(b.labels, m.num_classes()), b.labels, ln, 1);
      else
        bt = unlabeled_terms(c, xs, full_concat(c, obs, xm), ln, 1);
      bt.imp_entropy = gauss_entropy_rows(t, imp.var);
    }
    for (double x : t.val(terms_total_rows(t, bt)).v) total -= x;
  }
  return total;
}

}  // namespace detail

// Accuracy over rows with known true labels (incomplete rows run through the
// imputer mean first), reconstruction error over hidden rows, and the mean
// deterministic bound loss.
inline EvalMetrics evaluate(const Model& m, const MultiViewDataset& ds) {
  ds.validate();
  EvalMetrics out;
  const std::size_t K = m.num_classes();
  const std::size_t mv = m.cfg.missing_view;

  // classification
  if (m.has_classifier) {
    std::vector<int> rows;
    for (std::size_t i = 0; i < ds.n(); ++i)
      if (ds.true_labels[i] >= 0 && (ds.present[i] || m.has_imputer)) rows.push_back(static_cast<int>(i));
    if (!rows.empty()) {
      std::vector<std::size_t> hits(K, 0), totals(K, 0);
      const std::size_t chunk = 512;
      for (std::size_t start = 0; start < rows.size(); start += chunk) {
        std::vector<int> part(rows.begin() + static_cast<long>(start),
                              rows.begin() + static_cast<long>(std::min(rows.size(), start + chunk)));
        std::vector<Tensor> views;
        for (std::size_t v = 0; v < ds.num_views(); ++v) {
          Tensor sub = Tensor::zeros({part.size(), ds.views[v].cols()});
          for (std::size_t i = 0; i < part.size(); ++i)
            for (std::size_t j = 0; j < sub.cols(); ++j)
              sub(i, j) = ds.views[v](static_cast<std::size_t>(part[i]), j);
          views.push_back(std::move(sub));
        }
        if (m.has_imputer) {
          // fill hidden rows of the maskable view with the imputer mean
          std::vector<std::size_t> hidden_local;
          for (std::size_t i = 0; i < part.size(); ++i)
            if (!ds.present[static_cast<std::size_t>(part[i])]) hidden_local.push_back(i);
          if (!hidden_local.empty()) {
            Tensor obs = Tensor::zeros({hidden_local.size(), m.observed_dim()});
            for (std::size_t i = 0; i < hidden_local.size(); ++i) {
              std::size_t off = 0;
              for (std::size_t v = 0; v < ds.num_views(); ++v) {
                if (v == mv) continue;
                for (std::size_t j = 0; j < views[v].cols(); ++j)
                  obs(i, off + j) = views[v](hidden_local[i], j);
                off += views[v].cols();
              }
            }
            Tensor fill = impute_batch(m, obs);
            for (std::size_t i = 0; i < hidden_local.size(); ++i)
              for (std::size_t j = 0; j < fill.cols(); ++j) views[mv](hidden_local[i], j) = fill(i, j);
          }
        }
        Tensor probs = classify_batch(m, views);
        for (std::size_t i = 0; i < part.size(); ++i) {
          std::size_t best = 0;
          for (std::size_t k = 1; k < K; ++k)
            if (probs(i, k) > probs(i, best)) best = k;
          const auto truth = static_cast<std::size_t>(ds.true_labels[static_cast<std::size_t>(part[i])]);
          totals[truth]++;
          hits[truth] += best == truth;
        }
      }
      std::size_t h = 0, n = 0;
      out.per_class_accuracy.assign(K, std::numeric_limits<double>::quiet_NaN());
      for (std::size_t k = 0; k < K; ++k) {
        h += hits[k];
        n += totals[k];
        if (totals[k] > 0)
          out.per_class_accuracy[k] = static_cast<double>(hits[k]) / static_cast<double>(totals[k]);
      }
      out.accuracy = static_cast<double>(h) / static_cast<double>(n);
    }
  }

  // imputation error on hidden rows
  if (m.has_imputer && ds.has_hidden_truth) {
    std::vector<int> hidden;
    for (std::size_t i = 0; i < ds.n(); ++i)
      if (!ds.present[i]) hidden.push_back(static_cast<int>(i));
    if (!hidden.empty()) {
      Tensor obs = Tensor::zeros({hidden.size(), m.observed_dim()});
      Tensor truth = Tensor::zeros({hidden.size(), ds.hidden_truth.cols()});
      for (std::size_t i = 0; i < hidden.size(); ++i) {
        std::size_t off = 0;
        for (std::size_t v = 0; v < ds.num_views(); ++v) {
          if (v == mv) continue;
          for (std::size_t j = 0; j < ds.views[v].cols(); ++j)
            obs(i, off + j) = ds.views[v](static_cast<std::size_t>(hidden[i]), j);
          off += ds.views[v].cols();
        }
        for (std::size_t j = 0; j < truth.cols(); ++j)
          truth(i, j) = ds.hidden_truth(static_cast<std::size_t>(hidden[i]), j);
      }
      out.nmse = metric_nmse(truth, impute_batch(m, obs));
    }
  }

  // deterministic mean bound loss over all rows
  auto strata = strata_indices(ds);
  double loss_sum = 0.0;
  if (m.cfg.kind == ModelKind::Simvae) {
    loss_sum += detail::sum_bound_losses(m, ds, strata[0], true, true);
    loss_sum += detail::sum_bound_losses(m, ds, strata[1], true, false);
    loss_sum += detail::sum_bound_losses(m, ds, strata[2], false, true);
    loss_sum += detail::sum_bound_losses(m, ds, strata[3], false, false);
  } else {
    loss_sum += detail::sum_bound_losses(m, ds, strata[0], m.has_classifier, true);
    loss_sum += detail::sum_bound_losses(m, ds, strata[2], false, true);
  }
  out.mean_bound_loss = loss_sum / static_cast<double>(ds.n());
  return out;
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double objective = 0.0;  // mean per-sample minibatch objective
  double val_accuracy = std::numeric_limits<double>::quiet_NaN();
  double val_nmse = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> lambda;
  double seconds = 0.0;
};

struct RunRecord {
  std::vector<EpochMetrics> epochs;
};

struct TrainResult {
  Model model;
  RunRecord record;
};

// Full training loop: stratified minibatches, keyed noise, Adam updates,
// per-epoch validation metrics.  Same dataset, config, and seed give
// bit-identical parameters and metrics on one machine.
inline TrainResult train(const MultiViewDataset& train_ds, const MultiViewDataset& val_ds,
                         const TrainConfig& cfg) {
  train_ds.validate();
  Model m = build_model(model_config_for(train_ds, cfg), cfg.seed);
  AdamState opt = AdamState::init(m.params, {cfg.lr, 0.9, 0.999, 1e-8});

  RunRecord rec;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto tic = std::chrono::steady_clock::now();
    auto plan = plan_minibatches(train_ds, cfg, epoch);
    double obj_sum = 0.0;
    std::size_t row_sum = 0;
    for (std::size_t b = 0; b < plan.size(); ++b) {
      double obj = 0.0;
      ParamStore grads = estimate_gradients(m, train_ds, plan[b], cfg, epoch, b, &obj);
      clip_global_norm(grads, cfg.clip_norm);
      adam_step(opt, m.params, grads);
      obj_sum += obj * static_cast<double>(plan[b].total());
      row_sum += plan[b].total();
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.objective = obj_sum / static_cast<double>(row_sum);
    em.lambda = m.mixture_weights();
    if (val_ds.n() > 0) {
      EvalMetrics ev = evaluate(m, val_ds);
      em.val_accuracy = ev.accuracy;
      em.val_nmse = ev.nmse;
    }
    em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
    rec.epochs.push_back(std::move(em));
  }
  return {std::move(m), std::move(rec)};
}

}  // namespace mvf
