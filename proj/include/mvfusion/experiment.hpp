#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mvfusion/checkpoint.hpp"
#include "mvfusion/config.hpp"
#include "mvfusion/csvio.hpp"
#include "mvfusion/trainer.hpp"

namespace mvf {

inline constexpr const char* kMetricsHeader =
    "seed,epoch,objective,val_acc,val_nmse,lambda_1,lambda_2,seconds";

inline std::size_t thread_budget() {
  const char* env = std::getenv("MVFUSION_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (!end || *end != '\0' || n < 1)
    throw ConfigError("MVFUSION_THREADS must be a positive integer, got '" + std::string(env) + "'");
  return static_cast<std::size_t>(n);
}

// Runs fn(0..n_tasks-1), spreading tasks over at most `workers` threads.
// Tasks must not share mutable state; the first exception wins and rethrows.
inline void run_parallel(std::size_t n_tasks, std::size_t workers,
                         const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n_tasks <= 1) {
    for (std::size_t i = 0; i < n_tasks; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr err;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n_tasks) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(err_mutex);
        if (!err) err = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n_tasks); ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

struct PreparedData {
  MultiViewDataset train, val, test;
  Standardizer scaler;
  bool standardized = false;
};

namespace detail {

inline MultiViewDataset load_csv_dataset(const DataConfig& d) {
  MultiViewDataset ds;
  ds.views.push_back(read_view_csv(d.view1_csv));
  ds.views.push_back(read_view_csv(d.view2_csv));
  ds.labels = read_labels_csv(d.labels_csv);
  ds.true_labels = ds.labels;
  ds.missing_view = d.which_view_missing - 1;
  if (!d.mask_csv.empty()) {
    ds.present = read_mask_csv(d.mask_csv);
    const Tensor& mv = ds.views[ds.missing_view];
    Tensor truth = Tensor::zeros({mv.rows(), mv.cols()});
    for (std::size_t i = 0; i < ds.present.size() && i < mv.rows(); ++i) {
      if (ds.present[i]) continue;
      for (std::size_t j = 0; j < mv.cols(); ++j) {
        truth(i, j) = mv(i, j);
        ds.views[ds.missing_view](i, j) = std::numeric_limits<double>::quiet_NaN();
      }
    }
    ds.hidden_truth = std::move(truth);
    ds.has_hidden_truth = true;
  } else {
    ds.present.assign(ds.labels.size(), 1);
  }
  int max_label = -1;
  for (int y : ds.labels) max_label = std::max(max_label, y);
  if (max_label < 0) throw ConfigError(d.labels_csv + ": no labeled rows");
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;
  ds.validate();
  return ds;
}

}  // namespace detail

// One seed's data pipeline: source, split, label/view masking on the train
// and validation splits (test stays complete), optional standardization.
inline PreparedData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  MultiViewDataset full;
  if (cfg.data.source == DataConfig::Source::Synthetic) {
    SyntheticSpec spec = cfg.data.synth;
    spec.seed = seed;
    full = generate_synthetic(spec);
    full.missing_view = cfg.data.which_view_missing - 1;
  } else {
    full = detail::load_csv_dataset(cfg.data);
  }

  auto parts = split_dataset(full, cfg.data.train_fraction, cfg.data.val_fraction, seed);
  PreparedData out;
  out.train = std::move(parts[0]);
  out.val = std::move(parts[1]);
  out.test = std::move(parts[2]);

  if (cfg.data.fraction_labeled < 1.0)
    out.train = apply_label_mask(std::move(out.train), cfg.data.fraction_labeled, seed);
  if (cfg.data.fraction_missing > 0.0) {
    const std::size_t mv = cfg.data.which_view_missing - 1;
    out.train = apply_view_mask(std::move(out.train), cfg.data.fraction_missing, mv, seed);
    out.val = apply_view_mask(std::move(out.val), cfg.data.fraction_missing, mv, seed + 1);
  }
  if (cfg.standardize) {
    out.scaler = Standardizer::fit(out.train);
    out.scaler.apply(out.train);
    out.scaler.apply(out.val);
    out.scaler.apply(out.test);
    out.standardized = true;
  }
  return out;
}

namespace detail {

inline std::string metrics_rows(std::uint64_t seed, const RunRecord& rec) {
  std::ostringstream out;
  for (const EpochMetrics& em : rec.epochs) {
    out << seed << ',' << (em.epoch + 1) << ',' << format_value(em.objective) << ','
        << format_value(em.val_accuracy) << ',' << format_value(em.val_nmse) << ','
        << format_value(em.lambda.at(0)) << ',' << format_value(em.lambda.at(1)) << ','
        << format_value(em.seconds) << '\n';
  }
  return out.str();
}

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  double mu = 0.0;
  for (double x : xs) mu += x;
  mu /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mu, 0.0};
  double s2 = 0.0;
  for (double x : xs) s2 += (x - mu) * (x - mu);
  return {mu, std::sqrt(s2 / static_cast<double>(xs.size() - 1))};
}

inline std::string checkpoint_name(std::uint64_t seed) {
  return "checkpoint_seed" + std::to_string(seed) + ".mvf1";
}

inline NamedTensors scaler_records(const Standardizer& sc) {
  NamedTensors rec;
  for (std::size_t v = 0; v < sc.mean.size(); ++v) {
    rec.emplace_back("scaler/mean" + std::to_string(v), Tensor::vec(sc.mean[v]));
    rec.emplace_back("scaler/sd" + std::to_string(v), Tensor::vec(sc.sd[v]));
  }
  return rec;
}

}  // namespace detail

// Trains every seed (parallel up to MVFUSION_THREADS), then writes
// metrics.csv, summary.csv, and one checkpoint per seed under out_dir.
// File contents do not depend on the worker schedule.
inline void run_train(const ExperimentConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::size_t S = cfg.seeds.size();
  std::vector<RunRecord> records(S);

  run_parallel(S, thread_budget(), [&](std::size_t si) {
    const std::uint64_t seed = cfg.seeds[si];
    PreparedData data = prepare_data(cfg, seed);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    TrainResult res = train(data.train, data.val, tc);
    NamedTensors rec = model_records(res.model);
    if (data.standardized) {
      NamedTensors sc = detail::scaler_records(data.scaler);
      rec.insert(rec.end(), sc.begin(), sc.end());
    }
    detail::atomic_write_bytes(out_dir + "/" + detail::checkpoint_name(seed), encode_records(rec));
    records[si] = std::move(res.record);
  });

  std::string metrics = std::string(kMetricsHeader) + "\n";
  for (std::size_t si = 0; si < S; ++si) metrics += detail::metrics_rows(cfg.seeds[si], records[si]);
  atomic_write_text(out_dir + "/metrics.csv", metrics);

  // final-epoch statistics over seeds, in metrics.csv column order
  const char* names[] = {"objective", "val_acc", "val_nmse", "lambda_1", "lambda_2"};
  std::vector<std::vector<double>> finals(5);
  for (const RunRecord& rec : records) {
    const EpochMetrics& em = rec.epochs.back();
    finals[0].push_back(em.objective);
    finals[1].push_back(em.val_accuracy);
    finals[2].push_back(em.val_nmse);
    finals[3].push_back(em.lambda.at(0));
    finals[4].push_back(em.lambda.at(1));
  }
  std::string summary = "metric,mean,std\n";
  for (std::size_t k = 0; k < 5; ++k) {
    auto [mu, sd] = detail::mean_std(finals[k]);
    summary += std::string(names[k]) + "," + format_value(mu) + "," + format_value(sd) + "\n";
  }
  atomic_write_text(out_dir + "/summary.csv", summary);
}

struct SweepCell {
  double fraction_labeled = 0.0;
  double fraction_missing = 0.0;
  std::string variant;
};

inline std::vector<SweepCell> sweep_cells(const ExperimentConfig& cfg) {
  std::vector<double> fls = cfg.sweep.fraction_labeled;
  if (fls.empty()) fls = {cfg.data.fraction_labeled};
  std::vector<double> fms = cfg.sweep.fraction_missing;
  if (fms.empty()) fms = {cfg.data.fraction_missing};
  std::vector<SweepCell> cells;
  for (double fl : fls)
    for (double fm : fms)
      for (const std::string& v : cfg.sweep.variants) cells.push_back({fl, fm, v});
  return cells;
}

// Specializes the experiment to one sweep cell.  fulldata trains the
// complete-data model with nothing masked; partialdata masks and then drops
// the incomplete training rows; simvae trains on the masked data directly.
inline ExperimentConfig cell_config(const ExperimentConfig& cfg, const SweepCell& cell) {
  ExperimentConfig out = cfg;
  out.data.fraction_labeled = cell.fraction_labeled;
  out.data.fraction_missing = cell.fraction_missing;
  if (cell.variant == "simvae") {
    out.train.kind = ModelKind::Simvae;
  } else if (cell.variant == "fulldata") {
    out.train.kind = ModelKind::Smvae;
    out.data.fraction_missing = 0.0;
  } else if (cell.variant == "partialdata") {
    out.train.kind = ModelKind::Smvae;
  } else {
    throw ConfigError("unknown sweep variant '" + cell.variant + "'");
  }
  return out;
}

inline std::string cell_dir_name(const SweepCell& cell) {
  return "fl" + format_value(cell.fraction_labeled) + "_fm" + format_value(cell.fraction_missing) +
         "_" + cell.variant;
}

inline void run_sweep(const ExperimentConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::vector<SweepCell> cells = sweep_cells(cfg);
  const std::size_t S = cfg.seeds.size();
  std::vector<std::vector<RunRecord>> records(cells.size(), std::vector<RunRecord>(S));

  run_parallel(cells.size() * S, thread_budget(), [&](std::size_t task) {
    const std::size_t ci = task / S;
    const std::size_t si = task % S;
    const SweepCell& cell = cells[ci];
    ExperimentConfig ccfg = cell_config(cfg, cell);
    const std::uint64_t seed = cfg.seeds[si];

    PreparedData data;
    if (cell.variant == "partialdata") {
      ExperimentConfig raw = ccfg;
      raw.standardize = false;
      data = prepare_data(raw, seed);
      std::vector<int> keep;
      for (std::size_t i = 0; i < data.train.n(); ++i)
        if (data.train.present[i]) keep.push_back(static_cast<int>(i));
      if (keep.empty()) throw ContractError("partialdata variant dropped every training row");
      data.train = take_rows(data.train, keep);
      if (ccfg.standardize) {
        data.scaler = Standardizer::fit(data.train);
        data.scaler.apply(data.train);
        data.scaler.apply(data.val);
        data.scaler.apply(data.test);
        data.standardized = true;
      }
    } else {
      data = prepare_data(ccfg, seed);
    }

    TrainConfig tc = ccfg.train;
    tc.seed = seed;
    records[ci][si] = train(data.train, data.val, tc).record;
  });

  std::string summary = "fraction_labeled,fraction_missing,variant,acc_mean,acc_std,nmse_mean,nmse_std,seeds\n";
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    const std::string dir = out_dir + "/" + cell_dir_name(cells[ci]);
    std::filesystem::create_directories(dir);
    std::string metrics = std::string(kMetricsHeader) + "\n";
    std::vector<double> accs, nmses;
    for (std::size_t si = 0; si < S; ++si) {
      metrics += detail::metrics_rows(cfg.seeds[si], records[ci][si]);
      const EpochMetrics& em = records[ci][si].epochs.back();
      accs.push_back(em.val_accuracy);
      nmses.push_back(em.val_nmse);
    }
    atomic_write_text(dir + "/metrics.csv", metrics);
    auto [am, as] = detail::mean_std(accs);
    auto [nm, ns] = detail::mean_std(nmses);
    summary += format_value(cells[ci].fraction_labeled) + "," +
               format_value(cells[ci].fraction_missing) + "," + cells[ci].variant + "," +
               format_value(am) + "," + format_value(as) + "," + format_value(nm) + "," +
               format_value(ns) + "," + std::to_string(S) + "\n";
  }
  atomic_write_text(out_dir + "/summary.csv", summary);
}

// Loads the first seed's checkpoint from out_dir, feeds the observed view
// through the imputer, and writes imputed.csv (original units) beside it.
inline void run_impute(const ExperimentConfig& cfg, const std::string& out_dir) {
  const std::string ckpt = out_dir + "/" + detail::checkpoint_name(cfg.seeds.front());
  Model m = load_checkpoint(ckpt);
  if (!m.has_imputer)
    throw ConfigError(ckpt + ": checkpoint kind cannot impute (train a simvae model)");
  const std::size_t mv = m.cfg.missing_view;
  const std::size_t ov = mv == 0 ? 1 : 0;

  Tensor observed;
  if (cfg.data.source == DataConfig::Source::Csv) {
    observed = read_view_csv(mv == 0 ? cfg.data.view2_csv : cfg.data.view1_csv);
  } else {
    SyntheticSpec spec = cfg.data.synth;
    spec.seed = cfg.seeds.front();
    observed = generate_synthetic(spec).views[ov];
  }
  if (observed.cols() != m.cfg.view_dims[ov])
    throw ConfigError("observed view has " + std::to_string(observed.cols()) + " columns, model expects " +
                      std::to_string(m.cfg.view_dims[ov]));

  // scaler records are optional; absent means the model saw raw units
  NamedTensors records = decode_records(read_file_bytes(ckpt), ckpt);
  std::vector<double> mean_o, sd_o, mean_m, sd_m;
  for (const auto& [name, t] : records) {
    if (name == "scaler/mean" + std::to_string(ov)) mean_o = t.v;
    if (name == "scaler/sd" + std::to_string(ov)) sd_o = t.v;
    if (name == "scaler/mean" + std::to_string(mv)) mean_m = t.v;
    if (name == "scaler/sd" + std::to_string(mv)) sd_m = t.v;
  }
  if (!mean_o.empty())
    for (std::size_t i = 0; i < observed.rows(); ++i)
      for (std::size_t j = 0; j < observed.cols(); ++j)
        observed(i, j) = (observed(i, j) - mean_o[j]) / sd_o[j];

  Tensor imputed = impute_batch(m, observed);
  if (!mean_m.empty())
    for (std::size_t i = 0; i < imputed.rows(); ++i)
      for (std::size_t j = 0; j < imputed.cols(); ++j)
        imputed(i, j) = imputed(i, j) * sd_m[j] + mean_m[j];

  std::filesystem::create_directories(out_dir);
  write_view_csv(out_dir + "/imputed.csv", imputed);
}

}  // namespace mvf
