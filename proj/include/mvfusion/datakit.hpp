#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mvfusion/bounds.hpp"
#include "mvfusion/errors.hpp"
#include "mvfusion/rng.hpp"
#include "mvfusion/tensor.hpp"

namespace mvf {

inline constexpr int kUnlabeled = -1;

// Two-or-more-view dataset with row-aligned labels and a designated view that
// may be missing per row.  Masked rows of that view hold NaN so any read that
// bypasses the mask fails loudly; the pre-mask values live in hidden_truth.
struct MultiViewDataset {
  std::vector<Tensor> views;            // [n, d_v] each
  std::vector<int> labels;              // working labels, kUnlabeled where hidden
  std::vector<int> true_labels;         // evaluation labels
  std::vector<std::uint8_t> present;    // 1 when the missing-capable view is observed
  std::size_t missing_view = 1;
  Tensor hidden_truth;                  // [n, d_m]; rows valid where present == 0
  bool has_hidden_truth = false;
  std::size_t num_classes = 0;

  std::size_t n() const { return labels.size(); }
  std::size_t num_views() const { return views.size(); }
  std::size_t view_dim(std::size_t v) const { return views[v].cols(); }

  std::size_t count_labeled() const {
    std::size_t c = 0;
    for (int y : labels) c += y != kUnlabeled;
    return c;
  }
  std::size_t count_present() const {
    std::size_t c = 0;
    for (std::uint8_t p : present) c += p;
    return c;
  }

  void validate() const {
    if (views.size() < 2) throw ContractError("dataset needs at least two views");
    for (const Tensor& v : views)
      if (v.rank() != 2 || v.rows() != n()) throw DimensionError("dataset view rows != label count");
    if (true_labels.size() != n() || present.size() != n())
      throw DimensionError("dataset field lengths disagree");
    if (missing_view >= views.size()) throw ContractError("missing_view out of range");
  }
};

// ---- synthetic data ----

// Two-view class-conditional generator: y drawn uniformly, z standard normal,
//   x2 = M2[y] + z A2 + s2 e2          (or pure noise when uninformative)
//   x1 = M1[y] + z A1 + x2 C + s1 e1
// so view 1 depends on view 2 the way the incomplete-data model assumes.
struct SyntheticSpec {
  std::size_t num_classes = 3;
  std::size_t latent_dim = 4;
  std::size_t d1 = 20, d2 = 8;
  std::size_t n = 5000;
  double class_separation = 2.2;
  double coupling = 0.8;
  double noise1 = 0.8, noise2 = 0.6;
  bool view2_informative = true;
  std::uint64_t seed = 0;
};

struct SyntheticTruth {
  Tensor class_means1, class_means2;  // [K, d]
  Tensor load1, load2;                // [dz, d]
  Tensor cross;                       // [d2, d1], already scaled by coupling
  Tensor z;                           // [n, dz]
};

inline MultiViewDataset generate_synthetic(const SyntheticSpec& s, SyntheticTruth* truth = nullptr) {
  if (s.num_classes == 0 || s.n == 0 || s.d1 == 0 || s.d2 == 0 || s.latent_dim == 0)
    throw ConfigError("synthetic spec has a zero dimension");
  const std::size_t K = s.num_classes, dz = s.latent_dim;
  const std::uint64_t g = s.seed;

  auto normals = [&](std::size_t r, std::size_t c, std::uint64_t tag, double scale) {
    Tensor t = Tensor::zeros({r, c});
    for (std::size_t k = 0; k < t.numel(); ++k) t.v[k] = scale * rng::normal({g, rng::kSynth, tag, k});
    return t;
  };
  auto unit_rows = [&](Tensor t, double norm) {
    for (std::size_t i = 0; i < t.rows(); ++i) {
      double s2 = 0.0;
      for (std::size_t j = 0; j < t.cols(); ++j) s2 += t(i, j) * t(i, j);
      const double f = norm / std::sqrt(std::max(s2, 1e-300));
      for (std::size_t j = 0; j < t.cols(); ++j) t(i, j) *= f;
    }
    return t;
  };

  Tensor M1 = unit_rows(normals(K, s.d1, 1, 1.0), s.class_separation);
  Tensor M2 = unit_rows(normals(K, s.d2, 2, 1.0), s.class_separation);
  Tensor A1 = normals(dz, s.d1, 3, 1.0 / std::sqrt(static_cast<double>(dz)));
  Tensor A2 = normals(dz, s.d2, 4, 1.0 / std::sqrt(static_cast<double>(dz)));
  Tensor C = normals(s.d2, s.d1, 5, s.coupling / std::sqrt(static_cast<double>(s.d2)));
  Tensor Z = Tensor::zeros({s.n, dz});

  MultiViewDataset ds;
  ds.views = {Tensor::zeros({s.n, s.d1}), Tensor::zeros({s.n, s.d2})};
  ds.labels.resize(s.n);
  ds.present.assign(s.n, 1);
  ds.num_classes = K;

  for (std::size_t i = 0; i < s.n; ++i) {
    const auto y = static_cast<std::size_t>(rng::uniform({g, rng::kSynth, 6, i}) * static_cast<double>(K));
    ds.labels[i] = static_cast<int>(y);
    for (std::size_t k = 0; k < dz; ++k) Z(i, k) = rng::normal({g, rng::kSynth, 7, i, k});

    for (std::size_t j = 0; j < s.d2; ++j) {
      double x = s.noise2 * rng::normal({g, rng::kSynth, 8, i, j});
      if (s.view2_informative) {
        x += M2(y, j);
        for (std::size_t k = 0; k < dz; ++k) x += Z(i, k) * A2(k, j);
      }
      ds.views[1](i, j) = x;
    }
    for (std::size_t j = 0; j < s.d1; ++j) {
      double x = M1(y, j) + s.noise1 * rng::normal({g, rng::kSynth, 9, i, j});
      for (std::size_t k = 0; k < dz; ++k) x += Z(i, k) * A1(k, j);
      for (std::size_t k = 0; k < s.d2; ++k) x += ds.views[1](i, k) * C(k, j);
      ds.views[0](i, j) = x;
    }
  }
  ds.true_labels = ds.labels;
  if (truth) *truth = {M1, M2, A1, A2, C, Z};
  return ds;
}

// ---- masking ----

// Hides labels so only about `fraction` remain, stratified per class so every
// class keeps at least one label.  Keyed independently of the view mask, so
// the two masks commute.
inline MultiViewDataset apply_label_mask(MultiViewDataset ds, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw ConfigError("label fraction outside [0,1]");
  ds.validate();
  if (fraction >= 1.0) return ds;
  std::vector<std::vector<int>> per_class;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const int y = ds.true_labels[i];
    if (y < 0) continue;
    if (per_class.size() <= static_cast<std::size_t>(y)) per_class.resize(static_cast<std::size_t>(y) + 1);
    per_class[static_cast<std::size_t>(y)].push_back(static_cast<int>(i));
  }
  for (int& y : ds.labels) y = kUnlabeled;
  for (std::size_t cls = 0; cls < per_class.size(); ++cls) {
    const auto& rows = per_class[cls];
    if (rows.empty()) continue;
    auto order = rng::shuffled_indices(rows.size(), {seed, rng::kLabelMask, cls});
    const auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(rows.size()) + 0.5)));
    for (std::size_t k = 0; k < keep && k < rows.size(); ++k) {
      const int i = rows[static_cast<std::size_t>(order[k])];
      ds.labels[static_cast<std::size_t>(i)] = ds.true_labels[static_cast<std::size_t>(i)];
    }
  }
  return ds;
}

// Hides `fraction` of the rows of one view.  Hidden values move to
// hidden_truth and the live matrix gets NaN so stale reads surface.
inline MultiViewDataset apply_view_mask(MultiViewDataset ds, double fraction, std::size_t which_view,
                                        std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw ConfigError("missing fraction outside [0,1]");
  if (which_view >= ds.views.size()) throw ConfigError("which_view out of range");
  ds.validate();
  ds.missing_view = which_view;
  const std::size_t n = ds.n();
  const std::size_t dm = ds.view_dim(which_view);
  if (!ds.has_hidden_truth) {
    ds.hidden_truth = Tensor::zeros({n, dm});
    ds.has_hidden_truth = true;
  }
  const auto hide = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5));
  auto order = rng::shuffled_indices(n, {seed, rng::kViewMask, which_view});
  for (std::size_t k = 0; k < hide; ++k) {
    const auto i = static_cast<std::size_t>(order[k]);
    if (!ds.present[i]) continue;
    ds.present[i] = 0;
    for (std::size_t j = 0; j < dm; ++j) {
      ds.hidden_truth(i, j) = ds.views[which_view](i, j);
      ds.views[which_view](i, j) = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return ds;
}

// Restores every hidden row bit-exactly and clears the mask.
inline MultiViewDataset unmask_views(MultiViewDataset ds) {
  ds.validate();
  if (!ds.has_hidden_truth) return ds;
  const std::size_t dm = ds.view_dim(ds.missing_view);
  for (std::size_t i = 0; i < ds.n(); ++i) {
    if (ds.present[i]) continue;
    for (std::size_t j = 0; j < dm; ++j) ds.views[ds.missing_view](i, j) = ds.hidden_truth(i, j);
    ds.present[i] = 1;
  }
  ds.hidden_truth = Tensor{};
  ds.has_hidden_truth = false;
  return ds;
}

// ---- splitting ----

inline MultiViewDataset take_rows(const MultiViewDataset& ds, const std::vector<int>& rows) {
  MultiViewDataset out;
  out.missing_view = ds.missing_view;
  out.num_classes = ds.num_classes;
  out.has_hidden_truth = ds.has_hidden_truth;
  for (const Tensor& v : ds.views) {
    Tensor sub = Tensor::zeros({rows.size(), v.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) sub(i, j) = v(static_cast<std::size_t>(rows[i]), j);
    out.views.push_back(std::move(sub));
  }
  if (ds.has_hidden_truth) {
    out.hidden_truth = Tensor::zeros({rows.size(), ds.hidden_truth.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < ds.hidden_truth.cols(); ++j)
        out.hidden_truth(i, j) = ds.hidden_truth(static_cast<std::size_t>(rows[i]), j);
  }
  for (int r : rows) {
    out.labels.push_back(ds.labels[static_cast<std::size_t>(r)]);
    out.true_labels.push_back(ds.true_labels[static_cast<std::size_t>(r)]);
    out.present.push_back(ds.present[static_cast<std::size_t>(r)]);
  }
  return out;
}

// Class-stratified train/val/test split with deterministic keyed shuffles.
inline std::array<MultiViewDataset, 3> split_dataset(const MultiViewDataset& ds,
                                                     double train_frac, double val_frac,
                                                     std::uint64_t seed) {
  ds.validate();
  if (train_frac <= 0.0 || val_frac < 0.0 || train_frac + val_frac > 1.0)
    throw ConfigError("split fractions invalid");
  std::vector<std::vector<int>> per_class;
  std::vector<int> unlabeled_rows;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const int y = ds.true_labels[i];
    if (y < 0) {
      unlabeled_rows.push_back(static_cast<int>(i));
      continue;
    }
    if (per_class.size() <= static_cast<std::size_t>(y)) per_class.resize(static_cast<std::size_t>(y) + 1);
    per_class[static_cast<std::size_t>(y)].push_back(static_cast<int>(i));
  }
  per_class.push_back(std::move(unlabeled_rows));  // rows with unknown class split together

  std::vector<int> tr, va, te;
  for (std::size_t cls = 0; cls < per_class.size(); ++cls) {
    const auto& rows = per_class[cls];
    if (rows.empty()) continue;
    auto order = rng::shuffled_indices(rows.size(), {seed, rng::kSplit, cls});
    const auto n_tr = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(rows.size()) + 0.5));
    const auto n_va = static_cast<std::size_t>(std::floor(val_frac * static_cast<double>(rows.size()) + 0.5));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const int r = rows[static_cast<std::size_t>(order[k])];
      if (k < n_tr) tr.push_back(r);
      else if (k < n_tr + n_va) va.push_back(r);
      else te.push_back(r);
    }
  }
  return {take_rows(ds, tr), take_rows(ds, va), take_rows(ds, te)};
}

// ---- standardization ----

// Column-wise centering and scaling fitted on one split's observed rows only,
// then applied unchanged to every split, including the hidden truth.
struct Standardizer {
  std::vector<std::vector<double>> mean, sd;  // per view

  static Standardizer fit(const MultiViewDataset& ds) {
    ds.validate();
    Standardizer st;
    for (std::size_t v = 0; v < ds.num_views(); ++v) {
      const Tensor& X = ds.views[v];
      std::vector<double> mu(X.cols(), 0.0), sg(X.cols(), 0.0);
      for (std::size_t j = 0; j < X.cols(); ++j) {
        double s = 0.0, s2 = 0.0;
        std::size_t cnt = 0;
        for (std::size_t i = 0; i < X.rows(); ++i) {
          if (v == ds.missing_view && !ds.present[i]) continue;
          s += X(i, j);
          s2 += X(i, j) * X(i, j);
          ++cnt;
        }
        if (cnt == 0) throw ContractError("standardizer: no observed rows for view " + std::to_string(v));
        mu[j] = s / static_cast<double>(cnt);
        const double var = std::max(0.0, s2 / static_cast<double>(cnt) - mu[j] * mu[j]);
        sg[j] = var < 1e-24 ? 1.0 : std::sqrt(var);
      }
      st.mean.push_back(std::move(mu));
      st.sd.push_back(std::move(sg));
    }
    return st;
  }

  void apply(MultiViewDataset& ds) const {
    ds.validate();
    if (mean.size() != ds.num_views()) throw DimensionError("standardizer view count");
    for (std::size_t v = 0; v < ds.num_views(); ++v) {
      Tensor& X = ds.views[v];
      if (mean[v].size() != X.cols()) throw DimensionError("standardizer width for view " + std::to_string(v));
      for (std::size_t i = 0; i < X.rows(); ++i)
        for (std::size_t j = 0; j < X.cols(); ++j)
          X(i, j) = (X(i, j) - mean[v][j]) / sd[v][j];  // NaN rows stay NaN
    }
    if (ds.has_hidden_truth) {
      const std::size_t mv = ds.missing_view;
      for (std::size_t i = 0; i < ds.n(); ++i) {
        if (ds.present[i]) continue;
        for (std::size_t j = 0; j < ds.hidden_truth.cols(); ++j)
          ds.hidden_truth(i, j) = (ds.hidden_truth(i, j) - mean[mv][j]) / sd[mv][j];
      }
    }
  }
};

// ---- metrics ----

// Frobenius-relative reconstruction error |X - Xhat| / |X|.
inline double metric_nmse(const Tensor& X, const Tensor& Xhat) {
  if (!X.same_shape(Xhat)) throw DimensionError("nmse shape mismatch " + X.shape_str() + " vs " + Xhat.shape_str());
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < X.numel(); ++k) {
    const double d = X.v[k] - Xhat.v[k];
    num += d * d;
    den += X.v[k] * X.v[k];
  }
  if (den == 0.0) throw ContractError("nmse reference matrix is identically zero");
  return std::sqrt(num / den);
}

// ---- strata and batch assembly ----

// Stratum order: complete+labeled, incomplete+labeled, complete+unlabeled,
// incomplete+unlabeled.  Complete-data models only use slots 0 and 2.
inline std::array<std::vector<int>, 4> strata_indices(const MultiViewDataset& ds) {
  std::array<std::vector<int>, 4> out;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const bool lab = ds.labels[i] != kUnlabeled;
    const bool pres = ds.present[i] != 0;
    const std::size_t slot = pres ? (lab ? 0 : 2) : (lab ? 1 : 3);
    out[slot].push_back(static_cast<int>(i));
  }
  return out;
}

// Gathers rows into a Batch; when with_missing_view is false the missing view
// slot stays empty (incomplete strata).
inline Batch gather_batch(const MultiViewDataset& ds, const std::vector<int>& rows,
                          bool with_missing_view) {
  Batch b;
  for (std::size_t v = 0; v < ds.num_views(); ++v) {
    if (v == ds.missing_view && !with_missing_view) {
      b.views.push_back(Tensor{});
      continue;
    }
    Tensor sub = Tensor::zeros({rows.size(), ds.views[v].cols()});
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < sub.cols(); ++j)
        sub(i, j) = ds.views[v](static_cast<std::size_t>(rows[i]), j);
    b.views.push_back(std::move(sub));
  }
  bool all_labeled = !rows.empty();
  for (int r : rows) all_labeled = all_labeled && ds.labels[static_cast<std::size_t>(r)] != kUnlabeled;
  if (all_labeled)
    for (int r : rows) b.labels.push_back(ds.labels[static_cast<std::size_t>(r)]);
  return b;
}

}  // namespace mvf
