#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "mvfusion/finite_diff.hpp"
#include "mvfusion/trainer.hpp"
#include "test_support.hpp"

using namespace mvf;

namespace {

// All rows complete; the first n_labeled rows carry labels cycling 0..K-1.
MultiViewDataset hand_dataset(std::size_t n, std::size_t n_labeled, std::size_t d1, std::size_t d2,
                              std::size_t K, std::uint64_t seed) {
  MultiViewDataset ds;
  ds.views = {Tensor::zeros({n, d1}), Tensor::zeros({n, d2})};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d1; ++j) ds.views[0](i, j) = rng::normal({seed, 71, i, j});
    for (std::size_t j = 0; j < d2; ++j) ds.views[1](i, j) = rng::normal({seed, 72, i, j});
  }
  ds.true_labels.resize(n);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.true_labels[i] = static_cast<int>(i % K);
    ds.labels[i] = i < n_labeled ? ds.true_labels[i] : kUnlabeled;
  }
  ds.present.assign(n, 1);
  ds.num_classes = K;
  return ds;
}

TrainConfig small_cfg(ModelKind kind, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.kind = kind;
  cfg.latent_dim = 2;
  cfg.hidden = {4};
  cfg.seed = seed;
  return cfg;
}

std::vector<int> flatten_plan(const std::vector<Minibatch>& plan) {
  std::vector<int> all;
  for (const auto& mb : plan)
    for (const auto& rows : mb.rows) all.insert(all.end(), rows.begin(), rows.end());
  return all;
}

}  // namespace

TEST_CASE("minibatch plan partitions every row exactly once") {
  MultiViewDataset ds = hand_dataset(97, 23, 3, 2, 2, 5);
  TrainConfig cfg = small_cfg(ModelKind::Smvae, 5);
  cfg.batch_size = 16;

  auto plan = plan_minibatches(ds, cfg, 0);
  REQUIRE(plan.size() == 7);  // ceil(97/16)

  auto all = flatten_plan(plan);
  REQUIRE(all.size() == 97);
  std::set<int> uniq(all.begin(), all.end());
  REQUIRE(uniq.size() == 97);
  REQUIRE(*uniq.begin() == 0);
  REQUIRE(*uniq.rbegin() == 96);

  std::size_t lo = 97, hi = 0;
  for (const auto& mb : plan) {
    for (int r : mb.rows[0]) REQUIRE(ds.labels[static_cast<std::size_t>(r)] >= 0);
    for (int r : mb.rows[2]) REQUIRE(ds.labels[static_cast<std::size_t>(r)] == kUnlabeled);
    REQUIRE(mb.rows[1].empty());
    REQUIRE(mb.rows[3].empty());
    lo = std::min(lo, mb.total());
    hi = std::max(hi, mb.total());
  }
  REQUIRE(hi - lo <= 2);
}

TEST_CASE("ten labeled rows over ten batches give one labeled row each") {
  MultiViewDataset ds = hand_dataset(100, 10, 3, 2, 2, 9);
  TrainConfig cfg = small_cfg(ModelKind::Smvae, 9);
  cfg.batch_size = 10;

  auto plan = plan_minibatches(ds, cfg, 0);
  REQUIRE(plan.size() == 10);
  for (const auto& mb : plan) {
    REQUIRE(mb.rows[0].size() == 1);
    REQUIRE(mb.total() == 10);
  }
}

TEST_CASE("labeled row count caps the number of batches") {
  MultiViewDataset ds = hand_dataset(100, 3, 3, 2, 2, 2);
  TrainConfig cfg = small_cfg(ModelKind::Smvae, 2);
  cfg.batch_size = 10;

  auto plan = plan_minibatches(ds, cfg, 0);
  REQUIRE(plan.size() == 3);
  for (const auto& mb : plan) REQUIRE(mb.rows[0].size() == 1);
}

TEST_CASE("every batch keeps a labeled and a complete row under view masking") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    MultiViewDataset ds = hand_dataset(44, 4, 3, 2, 2, seed);
    ds = apply_view_mask(ds, 0.5, 1, seed);
    TrainConfig cfg = small_cfg(ModelKind::Simvae, seed);
    for (std::size_t bs : {3u, 7u, 16u}) {
      cfg.batch_size = bs;
      for (std::size_t epoch = 0; epoch < 3; ++epoch) {
        auto plan = plan_minibatches(ds, cfg, epoch);
        REQUIRE(flatten_plan(plan).size() == 44);
        for (const auto& mb : plan) {
          REQUIRE(mb.rows[0].size() + mb.rows[1].size() >= 1);  // labeled
          REQUIRE(mb.rows[0].size() + mb.rows[2].size() >= 1);  // complete
        }
      }
    }
  }
}

TEST_CASE("plan rejects impossible setups") {
  MultiViewDataset unlabeled = hand_dataset(20, 0, 3, 2, 2, 1);
  TrainConfig cfg = small_cfg(ModelKind::Smvae, 1);
  cfg.batch_size = 5;
  REQUIRE_THROWS_AS(plan_minibatches(unlabeled, cfg, 0), ContractError);

  // the unsupervised model has no labeled-row requirement
  cfg.kind = ModelKind::Mvae;
  REQUIRE(plan_minibatches(unlabeled, cfg, 0).size() == 4);

  MultiViewDataset masked = hand_dataset(20, 6, 3, 2, 2, 1);
  masked = apply_view_mask(masked, 0.3, 1, 1);
  cfg.kind = ModelKind::Smvae;
  REQUIRE_THROWS_AS(plan_minibatches(masked, cfg, 0), ContractError);
  cfg.kind = ModelKind::Mvae;
  REQUIRE_THROWS_AS(plan_minibatches(masked, cfg, 0), ContractError);
  cfg.kind = ModelKind::Simvae;
  REQUIRE(!plan_minibatches(masked, cfg, 0).empty());

  cfg.batch_size = 0;
  REQUIRE_THROWS_AS(plan_minibatches(masked, cfg, 0), ConfigError);
}

TEST_CASE("plan order is keyed by seed and epoch") {
  MultiViewDataset ds = hand_dataset(60, 15, 3, 2, 3, 4);
  TrainConfig cfg = small_cfg(ModelKind::Smvae, 4);
  cfg.batch_size = 12;

  auto a = flatten_plan(plan_minibatches(ds, cfg, 0));
  auto b = flatten_plan(plan_minibatches(ds, cfg, 0));
  REQUIRE(a == b);

  auto c = flatten_plan(plan_minibatches(ds, cfg, 1));
  REQUIRE(a != c);

  cfg.seed = 5;
  auto d = flatten_plan(plan_minibatches(ds, cfg, 0));
  REQUIRE(a != d);
}

TEST_CASE("noise ledger shows one shared draw per sample, component, and pass") {
  MultiViewDataset ds = hand_dataset(16, 8, 3, 2, 2, 7);
  ds = apply_view_mask(ds, 0.5, 1, 7);
  TrainConfig cfg = small_cfg(ModelKind::Simvae, 7);
  cfg.batch_size = 16;
  cfg.T = 2;
  cfg.Tm = 3;

  auto plan = plan_minibatches(ds, cfg, 0);
  REQUIRE(plan.size() == 1);
  const Minibatch& mb = plan[0];

  Model m = build_model(model_config_for(ds, cfg), cfg.seed);
  NoiseLedger ledger;
  estimate_gradients(m, ds, mb, cfg, 0, 0, nullptr, &ledger);

  const std::size_t incomplete = mb.rows[1].size() + mb.rows[3].size();
  REQUIRE(incomplete > 0);
  const std::size_t expect_latent = mb.total() * 2 * static_cast<std::size_t>(cfg.T);
  const std::size_t expect_impute = incomplete * static_cast<std::size_t>(cfg.Tm);
  REQUIRE(ledger.draws.size() == expect_latent + expect_impute);

  std::set<NoiseLedger::Draw> uniq(ledger.draws.begin(), ledger.draws.end());
  REQUIRE(uniq.size() == ledger.draws.size());

  std::set<std::uint64_t> latent_samples;
  for (const auto& d : ledger.draws)
    if (d.kind == rng::kLatent) latent_samples.insert(d.sample);
  REQUIRE(latent_samples.size() == mb.total());
}

TEST_CASE("minibatch gradient matches finite differences end to end") {
  MultiViewDataset ds = hand_dataset(12, 6, 3, 2, 2, 3);
  ds = apply_view_mask(ds, 0.5, 1, 3);
  TrainConfig cfg = small_cfg(ModelKind::Simvae, 3);
  cfg.batch_size = 12;

  auto plan = plan_minibatches(ds, cfg, 0);
  REQUIRE(plan.size() == 1);
  const Minibatch& mb = plan[0];
  Model m = build_model(model_config_for(ds, cfg), cfg.seed);

  double obj = 0.0;
  ParamStore grads = estimate_gradients(m, ds, mb, cfg, 0, 0, &obj);
  REQUIRE(std::isfinite(obj));

  auto loss = [&](const ParamStore& p) {
    Model probe = m;
    probe.params = p;
    double value = 0.0;
    estimate_gradients(probe, ds, mb, cfg, 0, 0, &value);
    return value;
  };
  ParamStore fd = finite_diff_gradient(loss, m.params, 1e-5);
  std::string where;
  REQUIRE(max_relative_error(grads, fd, 1e-2, &where) < 1e-4);
}

TEST_CASE("one-draw and many-draw gradient estimates agree in expectation") {
  MultiViewDataset ds = hand_dataset(12, 4, 3, 2, 2, 6);
  TrainConfig cfg1 = small_cfg(ModelKind::Smvae, 6);
  cfg1.batch_size = 12;
  TrainConfig cfg8 = cfg1;
  cfg8.T = 8;

  Model m = build_model(model_config_for(ds, cfg1), 21);
  auto plan = plan_minibatches(ds, cfg1, 0);
  const Minibatch& mb = plan[0];

  const int R = 150;
  std::vector<double> v1, v8, g1, g8;
  for (int r = 0; r < R; ++r) {
    // varying the epoch key redraws all noise
    double o = 0.0;
    ParamStore ga = estimate_gradients(m, ds, mb, cfg1, static_cast<std::size_t>(r), 0, &o);
    v1.push_back(o);
    g1.push_back(ga.at("dec0/W0").v[0]);
    ParamStore gb = estimate_gradients(m, ds, mb, cfg8, static_cast<std::size_t>(r), 0, &o);
    v8.push_back(o);
    g8.push_back(gb.at("dec0/W0").v[0]);
  }

  auto mean_var = [](const std::vector<double>& x) {
    double mu = 0.0;
    for (double a : x) mu += a;
    mu /= static_cast<double>(x.size());
    double var = 0.0;
    for (double a : x) var += (a - mu) * (a - mu);
    var /= static_cast<double>(x.size() - 1);
    return std::pair{mu, var};
  };
  auto [mv1, vv1] = mean_var(v1);
  auto [mv8, vv8] = mean_var(v8);
  REQUIRE(std::abs(mv1 - mv8) <= 4.0 * std::sqrt((vv1 + vv8) / R));
  auto [mg1, vg1] = mean_var(g1);
  auto [mg8, vg8] = mean_var(g8);
  REQUIRE(std::abs(mg1 - mg8) <= 4.0 * std::sqrt((vg1 + vg8) / R));
  // more draws shrink the spread
  REQUIRE(vv8 < vv1);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.latent_dim = 2;
  spec.d1 = 6;
  spec.d2 = 4;
  spec.n = 60;
  spec.seed = 12;
  MultiViewDataset ds = generate_synthetic(spec);
  ds = apply_label_mask(ds, 0.3, 12);
  ds = apply_view_mask(ds, 0.4, 1, 12);

  TrainConfig cfg = small_cfg(ModelKind::Simvae, 12);
  cfg.hidden = {6};
  cfg.batch_size = 20;
  cfg.epochs = 2;

  TrainResult a = train(ds, ds, cfg);
  TrainResult b = train(ds, ds, cfg);

  for (const auto& name : a.model.params.names())
    REQUIRE(a.model.params.at(name).v == b.model.params.at(name).v);
  REQUIRE(a.record.epochs.size() == 2);
  for (std::size_t e = 0; e < 2; ++e) {
    const auto& ea = a.record.epochs[e];
    const auto& eb = b.record.epochs[e];
    auto same = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
    REQUIRE(ea.objective == eb.objective);
    REQUIRE(same(ea.val_accuracy, eb.val_accuracy));
    REQUIRE(same(ea.val_nmse, eb.val_nmse));
    REQUIRE(ea.lambda == eb.lambda);
  }
}

TEST_CASE("semi-supervised training lowers the objective and learns the labels") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.latent_dim = 2;
  spec.d1 = 6;
  spec.d2 = 4;
  spec.n = 240;
  spec.class_separation = 3.0;
  spec.seed = 8;
  MultiViewDataset full = generate_synthetic(spec);
  auto parts = split_dataset(full, 0.75, 0.25, 8);
  MultiViewDataset train_ds = parts[0], val_ds = parts[1];
  train_ds = apply_label_mask(train_ds, 0.25, 8);

  Standardizer std_ = Standardizer::fit(train_ds);
  std_.apply(train_ds);
  std_.apply(val_ds);

  TrainConfig cfg = small_cfg(ModelKind::Smvae, 8);
  cfg.latent_dim = 3;
  cfg.hidden = {12};
  cfg.lr = 2e-3;
  cfg.batch_size = 48;
  cfg.epochs = 12;

  TrainResult r = train(train_ds, val_ds, cfg);
  const auto& first = r.record.epochs.front();
  const auto& last = r.record.epochs.back();
  REQUIRE(last.objective < first.objective);
  REQUIRE(last.val_accuracy >= 0.75);
  REQUIRE(last.lambda.size() == 2);
  double lam_sum = 0.0;
  for (double l : last.lambda) {
    REQUIRE(l > 0.0);
    lam_sum += l;
  }
  REQUIRE(std::abs(lam_sum - 1.0) < 1e-12);
  REQUIRE(std::isnan(last.val_nmse));  // nothing is masked here
  for (const auto& em : r.record.epochs) REQUIRE(em.seconds >= 0.0);
}

TEST_CASE("unsupervised training runs without labels and reports no accuracy") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.latent_dim = 2;
  spec.d1 = 5;
  spec.d2 = 3;
  spec.n = 60;
  spec.seed = 15;
  MultiViewDataset ds = generate_synthetic(spec);
  for (auto& y : ds.labels) y = kUnlabeled;

  TrainConfig cfg = small_cfg(ModelKind::Mvae, 15);
  cfg.epochs = 3;
  cfg.batch_size = 20;
  cfg.lr = 1e-3;

  TrainResult r = train(ds, ds, cfg);
  REQUIRE(r.record.epochs.size() == 3);
  REQUIRE(r.record.epochs.back().objective < r.record.epochs.front().objective);
  REQUIRE(std::isnan(r.record.epochs.back().val_accuracy));
  REQUIRE(!r.model.has_classifier);
}

TEST_CASE("evaluate agrees with the single-row bound API on complete data") {
  MultiViewDataset ds = hand_dataset(6, 3, 3, 2, 2, 11);
  TrainConfig cfg = small_cfg(ModelKind::Smvae, 11);
  Model m = build_model(model_config_for(ds, cfg), 11);

  SampleNoise zero;
  zero.latent.assign(2, {std::vector<double>(2, 0.0)});

  double loss_sum = 0.0;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    std::vector<std::vector<double>> views = {
        {ds.views[0].v.begin() + static_cast<long>(i * 3), ds.views[0].v.begin() + static_cast<long>(i * 3 + 3)},
        {ds.views[1].v.begin() + static_cast<long>(i * 2), ds.views[1].v.begin() + static_cast<long>(i * 2 + 2)}};
    if (ds.labels[i] >= 0)
      loss_sum += smvae_labeled_bound(m, views, ds.labels[i], zero).loss();
    else
      loss_sum += smvae_unlabeled_bound(m, views, zero).loss();
  }

  EvalMetrics ev = evaluate(m, ds);
  REQUIRE(std::abs(ev.mean_bound_loss - loss_sum / 6.0) < 1e-9);
  REQUIRE(ev.accuracy >= 0.0);
  REQUIRE(ev.accuracy <= 1.0);
  REQUIRE(std::isnan(ev.nmse));
}

TEST_CASE("evaluate agrees with the single-row bound API under masking") {
  MultiViewDataset ds = hand_dataset(16, 8, 3, 2, 2, 13);
  ds = apply_view_mask(ds, 0.5, 1, 13);
  auto strata = strata_indices(ds);
  for (const auto& s : strata) REQUIRE(!s.empty());

  TrainConfig cfg = small_cfg(ModelKind::Simvae, 13);
  Model m = build_model(model_config_for(ds, cfg), 13);

  SampleNoise zero;
  zero.latent.assign(2, {std::vector<double>(2, 0.0)});
  zero.missing.assign(1, std::vector<double>(2, 0.0));

  auto row_views = [&](std::size_t i) {
    std::vector<std::vector<double>> views(2);
    for (std::size_t j = 0; j < 3; ++j) views[0].push_back(ds.views[0](i, j));
    for (std::size_t j = 0; j < 2; ++j)
      views[1].push_back(ds.present[i] ? ds.views[1](i, j) : 0.0);
    return views;
  };

  double loss_sum = 0.0;
  for (int r : strata[0]) {
    auto i = static_cast<std::size_t>(r);
    loss_sum += simvae_bound_lc(m, row_views(i), ds.labels[i], zero).loss();
  }
  for (int r : strata[1]) {
    auto i = static_cast<std::size_t>(r);
    loss_sum += simvae_bound_li(m, row_views(i), ds.labels[i], zero).loss();
  }
  for (int r : strata[2]) loss_sum += simvae_bound_uc(m, row_views(static_cast<std::size_t>(r)), zero).loss();
  for (int r : strata[3]) loss_sum += simvae_bound_ui(m, row_views(static_cast<std::size_t>(r)), zero).loss();

  EvalMetrics ev = evaluate(m, ds);
  REQUIRE(std::abs(ev.mean_bound_loss - loss_sum / 16.0) < 1e-9);

  // imputation error matches a by-hand single-row pass
  Tensor truth = Tensor::zeros({0, 0});
  std::vector<double> tv, pv;
  std::size_t hidden = 0;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    if (ds.present[i]) continue;
    std::vector<double> obs;
    for (std::size_t j = 0; j < 3; ++j) obs.push_back(ds.views[0](i, j));
    auto fill = impute_missing(m, obs);
    pv.insert(pv.end(), fill.begin(), fill.end());
    for (std::size_t j = 0; j < 2; ++j) tv.push_back(ds.hidden_truth(i, j));
    ++hidden;
  }
  Tensor T_ = Tensor::matrix(hidden, 2, tv);
  Tensor P_ = Tensor::matrix(hidden, 2, pv);
  REQUIRE(std::abs(ev.nmse - metric_nmse(T_, P_)) < 1e-12);

  // accuracy counts argmax hits over all rows with known truth
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    std::vector<double> x1, x2;
    for (std::size_t j = 0; j < 3; ++j) x1.push_back(ds.views[0](i, j));
    if (ds.present[i])
      for (std::size_t j = 0; j < 2; ++j) x2.push_back(ds.views[1](i, j));
    else
      x2 = impute_missing(m, x1);
    auto dist = classify(m, x1, x2);
    std::size_t best = 0;
    for (std::size_t k = 1; k < dist.probs.size(); ++k)
      if (dist.probs[k] > dist.probs[best]) best = k;
    hits += static_cast<int>(best) == ds.true_labels[i];
  }
  REQUIRE(std::abs(ev.accuracy - static_cast<double>(hits) / 16.0) < 1e-12);
}
