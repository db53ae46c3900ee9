#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mvfusion/csvio.hpp"
#include "mvfusion/datakit.hpp"
#include "mvfusion/errors.hpp"
#include "mvfusion/trainer.hpp"

namespace mvf {

// Experiment description parsed from a flat key=value file.  `#` starts a
// comment, keys are section.name, and any key outside the known set is an
// error so typos cannot silently fall back to defaults.

struct DataConfig {
  enum class Source { Synthetic, Csv };
  Source source = Source::Synthetic;
  SyntheticSpec synth;
  std::string view1_csv, view2_csv, labels_csv, mask_csv;
  double fraction_labeled = 1.0;   // of the training split
  double fraction_missing = 0.0;   // of the maskable view, train and val splits
  std::size_t which_view_missing = 2;  // 1-based, as in the view1/view2 keys
  double train_fraction = 0.7;
  double val_fraction = 0.15;
};

struct SweepConfig {
  std::vector<double> fraction_labeled;
  std::vector<double> fraction_missing;
  std::vector<std::string> variants = {"simvae", "fulldata", "partialdata"};
};

struct ExperimentConfig {
  DataConfig data;
  TrainConfig train;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  bool standardize = true;
  SweepConfig sweep;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(trim(cur));
  if (out.size() == 1 && out[0].empty()) out.clear();
  return out;
}

inline bool parse_bool(const std::string& s, const std::string& file, std::size_t line) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(file + ":" + std::to_string(line) + ": expected true/false, got '" + s + "'");
}

inline std::size_t parse_size(const std::string& s, const std::string& file, std::size_t line) {
  long x = parse_int(s, file, line);
  if (x < 0) throw ConfigError(file + ":" + std::to_string(line) + ": expected a nonnegative integer");
  return static_cast<std::size_t>(x);
}

}  // namespace detail

inline void validate_config(const ExperimentConfig& cfg) {
  const DataConfig& d = cfg.data;
  const bool any_csv = !d.view1_csv.empty() || !d.view2_csv.empty() || !d.labels_csv.empty() ||
                       !d.mask_csv.empty();
  if (d.source == DataConfig::Source::Synthetic && any_csv)
    throw ConfigError("config sets both data sources: synthetic generator and csv paths");
  if (d.source == DataConfig::Source::Csv) {
    if (d.view1_csv.empty() || d.view2_csv.empty() || d.labels_csv.empty())
      throw ConfigError("csv data source needs data.view1_csv, data.view2_csv, and data.labels_csv");
  } else {
    if (d.synth.n == 0) throw ConfigError("data.n must be positive");
    if (d.synth.num_classes < 2) throw ConfigError("data.num_classes must be at least 2");
    if (d.synth.d1 == 0 || d.synth.d2 == 0) throw ConfigError("view widths must be positive");
  }
  if (d.fraction_labeled < 0.0 || d.fraction_labeled > 1.0)
    throw ConfigError("data.fraction_labeled outside [0,1]");
  if (d.fraction_missing < 0.0 || d.fraction_missing > 1.0)
    throw ConfigError("data.fraction_missing outside [0,1]");
  if (d.which_view_missing != 1 && d.which_view_missing != 2)
    throw ConfigError("data.which_view_missing must be 1 or 2");
  if (d.train_fraction <= 0.0 || d.val_fraction < 0.0 || d.train_fraction + d.val_fraction > 1.0)
    throw ConfigError("split fractions invalid");

  if (cfg.train.latent_dim == 0) throw ConfigError("model.latent_dim must be positive");
  if (cfg.train.hidden.empty()) throw ConfigError("model.hidden must list at least one width");
  for (std::size_t h : cfg.train.hidden)
    if (h == 0) throw ConfigError("model.hidden widths must be positive");
  if (!(cfg.train.variance_floor > 0.0)) throw ConfigError("model.variance_floor must be positive");
  if (!(cfg.train.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (cfg.train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (cfg.train.epochs == 0) throw ConfigError("train.epochs must be positive");
  if (cfg.train.T < 1 || cfg.train.Tm < 1) throw ConfigError("train.T and train.T_m must be at least 1");
  if (cfg.train.clip_norm < 0.0) throw ConfigError("train.clip_norm must be nonnegative");
  if (cfg.seeds.empty()) throw ConfigError("train.seeds must list at least one seed");
  for (double f : cfg.sweep.fraction_labeled)
    if (f <= 0.0 || f > 1.0) throw ConfigError("sweep.fraction_labeled outside (0,1]");
  for (double f : cfg.sweep.fraction_missing)
    if (f < 0.0 || f > 1.0) throw ConfigError("sweep.fraction_missing outside [0,1]");
  if (cfg.sweep.variants.empty()) throw ConfigError("sweep.variants must not be empty");
  for (const std::string& v : cfg.sweep.variants)
    if (v != "simvae" && v != "fulldata" && v != "partialdata")
      throw ConfigError("unknown sweep variant '" + v + "'");
}

inline ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string line = detail::trim(raw);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (!seen.insert(key).second)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key " + key);

    auto num = [&] { return detail::parse_double(val, origin, lineno); };
    auto count = [&] { return detail::parse_size(val, origin, lineno); };
    auto flag = [&] { return detail::parse_bool(val, origin, lineno); };

    if (key == "data.source") {
      if (val == "synthetic") cfg.data.source = DataConfig::Source::Synthetic;
      else if (val == "csv") cfg.data.source = DataConfig::Source::Csv;
      else throw ConfigError(origin + ":" + std::to_string(lineno) + ": data.source must be synthetic or csv");
    } else if (key == "data.n") cfg.data.synth.n = count();
    else if (key == "data.num_classes") cfg.data.synth.num_classes = count();
    else if (key == "data.d1") cfg.data.synth.d1 = count();
    else if (key == "data.d2") cfg.data.synth.d2 = count();
    else if (key == "data.latent_dim") cfg.data.synth.latent_dim = count();
    else if (key == "data.class_separation") cfg.data.synth.class_separation = num();
    else if (key == "data.coupling") cfg.data.synth.coupling = num();
    else if (key == "data.noise1") cfg.data.synth.noise1 = num();
    else if (key == "data.noise2") cfg.data.synth.noise2 = num();
    else if (key == "data.view2_informative") cfg.data.synth.view2_informative = flag();
    else if (key == "data.view1_csv") cfg.data.view1_csv = val;
    else if (key == "data.view2_csv") cfg.data.view2_csv = val;
    else if (key == "data.labels_csv") cfg.data.labels_csv = val;
    else if (key == "data.mask_csv") cfg.data.mask_csv = val;
    else if (key == "data.fraction_labeled") cfg.data.fraction_labeled = num();
    else if (key == "data.fraction_missing") cfg.data.fraction_missing = num();
    else if (key == "data.which_view_missing") cfg.data.which_view_missing = count();
    else if (key == "data.train_fraction") cfg.data.train_fraction = num();
    else if (key == "data.val_fraction") cfg.data.val_fraction = num();
    else if (key == "model.kind") {
      try {
        cfg.train.kind = kind_from_name(val);
      } catch (const ConfigError&) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": model.kind must be mvae, smvae, or simvae");
      }
    } else if (key == "model.latent_dim") cfg.train.latent_dim = count();
    else if (key == "model.hidden") {
      cfg.train.hidden.clear();
      for (const std::string& h : detail::split_list(val))
        cfg.train.hidden.push_back(detail::parse_size(h, origin, lineno));
    } else if (key == "model.variance_floor") cfg.train.variance_floor = num();
    else if (key == "model.prior_y") {
      cfg.train.prior_y.clear();
      for (const std::string& p : detail::split_list(val))
        cfg.train.prior_y.push_back(detail::parse_double(p, origin, lineno));
    } else if (key == "train.lr") cfg.train.lr = num();
    else if (key == "train.batch_size") cfg.train.batch_size = count();
    else if (key == "train.epochs") cfg.train.epochs = count();
    else if (key == "train.T") cfg.train.T = static_cast<int>(detail::parse_size(val, origin, lineno));
    else if (key == "train.T_m") cfg.train.Tm = static_cast<int>(detail::parse_size(val, origin, lineno));
    else if (key == "train.c") cfg.train.c = num();
    else if (key == "train.c1") cfg.train.c1 = num();
    else if (key == "train.c2") cfg.train.c2 = num();
    else if (key == "train.clip_norm") cfg.train.clip_norm = num();
    else if (key == "train.standardize") cfg.standardize = flag();
    else if (key == "train.seeds") {
      cfg.seeds.clear();
      for (const std::string& s : detail::split_list(val))
        cfg.seeds.push_back(detail::parse_size(s, origin, lineno));
    } else if (key == "sweep.fraction_labeled") {
      cfg.sweep.fraction_labeled.clear();
      for (const std::string& f : detail::split_list(val))
        cfg.sweep.fraction_labeled.push_back(detail::parse_double(f, origin, lineno));
    } else if (key == "sweep.fraction_missing") {
      cfg.sweep.fraction_missing.clear();
      for (const std::string& f : detail::split_list(val))
        cfg.sweep.fraction_missing.push_back(detail::parse_double(f, origin, lineno));
    } else if (key == "sweep.variants") {
      cfg.sweep.variants = detail::split_list(val);
    } else {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown key " + key);
    }
  }
  if (cfg.data.source == DataConfig::Source::Csv) {
    for (const char* k : {"data.n", "data.num_classes", "data.d1", "data.d2", "data.latent_dim",
                          "data.class_separation", "data.coupling", "data.noise1", "data.noise2",
                          "data.view2_informative"})
      if (seen.count(k))
        throw ConfigError(origin + ": " + k + " has no meaning for the csv source");
  }
  validate_config(cfg);
  return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

}  // namespace mvf
