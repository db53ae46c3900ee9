#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "mvfusion/csvio.hpp"
#include "mvfusion/datakit.hpp"

using namespace mvf;
using Catch::Matchers::WithinAbs;

namespace {

SyntheticSpec tiny_spec() {
  SyntheticSpec s;
  s.num_classes = 3;
  s.latent_dim = 2;
  s.d1 = 6;
  s.d2 = 4;
  s.n = 600;
  s.seed = 5;
  return s;
}

}  // namespace

TEST_CASE("synthetic generator shape, determinism, balance") {
  SyntheticSpec s = tiny_spec();
  MultiViewDataset a = generate_synthetic(s);
  MultiViewDataset b = generate_synthetic(s);
  a.validate();
  CHECK(a.views[0].rows() == 600);
  CHECK(a.views[0].cols() == 6);
  CHECK(a.views[1].cols() == 4);
  CHECK(a.views[0].v == b.views[0].v);
  CHECK(a.labels == b.labels);

  s.seed = 6;
  MultiViewDataset c = generate_synthetic(s);
  CHECK(a.views[0].v != c.views[0].v);

  std::vector<int> counts(3, 0);
  for (int y : a.labels) counts[static_cast<std::size_t>(y)]++;
  for (int cnt : counts) CHECK(cnt > 120);  // roughly uniform classes
}

TEST_CASE("synthetic generator matches its recorded ground truth in the small-noise limit") {
  SyntheticSpec s = tiny_spec();
  s.noise1 = 1e-6;
  s.noise2 = 1e-6;
  s.n = 50;
  SyntheticTruth truth;
  MultiViewDataset ds = generate_synthetic(s, &truth);

  for (std::size_t i = 0; i < ds.n(); ++i) {
    const auto y = static_cast<std::size_t>(ds.labels[i]);
    for (std::size_t j = 0; j < s.d2; ++j) {
      double want = truth.class_means2(y, j);
      for (std::size_t k = 0; k < s.latent_dim; ++k) want += truth.z(i, k) * truth.load2(k, j);
      CHECK_THAT(ds.views[1](i, j), WithinAbs(want, 1e-4));
    }
    for (std::size_t j = 0; j < s.d1; ++j) {
      double want = truth.class_means1(y, j);
      for (std::size_t k = 0; k < s.latent_dim; ++k) want += truth.z(i, k) * truth.load1(k, j);
      for (std::size_t k = 0; k < s.d2; ++k) want += ds.views[1](i, k) * truth.cross(k, j);
      CHECK_THAT(ds.views[0](i, j), WithinAbs(want, 1e-4));
    }
  }

  // uninformative second view carries neither class nor latent signal
  s.view2_informative = false;
  s.noise2 = 1.0;
  MultiViewDataset noise_ds = generate_synthetic(s);
  double colsum = 0.0;
  for (double x : noise_ds.views[1].v) colsum += x;
  CHECK(std::abs(colsum / static_cast<double>(noise_ds.views[1].numel())) < 0.5);
}

TEST_CASE("label mask keeps a stratified fraction and stays deterministic") {
  MultiViewDataset ds = generate_synthetic(tiny_spec());
  MultiViewDataset m1 = apply_label_mask(ds, 0.05, 11);
  MultiViewDataset m2 = apply_label_mask(ds, 0.05, 11);
  CHECK(m1.labels == m2.labels);
  CHECK(m1.true_labels == ds.true_labels);

  std::vector<int> kept(3, 0);
  for (std::size_t i = 0; i < m1.n(); ++i) {
    if (m1.labels[i] == kUnlabeled) continue;
    CHECK(m1.labels[i] == ds.true_labels[i]);
    kept[static_cast<std::size_t>(m1.labels[i])]++;
  }
  const auto total = static_cast<double>(kept[0] + kept[1] + kept[2]);
  CHECK(total >= 0.04 * 600);
  CHECK(total <= 0.06 * 600);
  for (int c : kept) CHECK(c >= 1);

  CHECK(apply_label_mask(ds, 1.0, 3).labels == ds.labels);
  CHECK_THROWS_AS(apply_label_mask(ds, 1.5, 3), ConfigError);

  // tiny fraction still leaves one label per class
  MultiViewDataset m3 = apply_label_mask(ds, 1e-6, 12);
  std::vector<int> kept3(3, 0);
  for (int y : m3.labels)
    if (y != kUnlabeled) kept3[static_cast<std::size_t>(y)]++;
  for (int cnt : kept3) CHECK(cnt == 1);
}

TEST_CASE("view mask hides rows behind NaN and unmask restores them bit-exactly") {
  MultiViewDataset ds = generate_synthetic(tiny_spec());
  const std::vector<double> before = ds.views[1].v;

  MultiViewDataset m = apply_view_mask(ds, 0.4, 1, 21);
  CHECK(m.count_present() == 600 - 240);
  std::size_t nan_rows = 0;
  for (std::size_t i = 0; i < m.n(); ++i) {
    const bool has_nan = std::isnan(m.views[1](i, 0));
    CHECK(has_nan == (m.present[i] == 0));
    nan_rows += has_nan;
    if (!m.present[i])
      for (std::size_t j = 0; j < 4; ++j) CHECK(m.hidden_truth(i, j) == before[i * 4 + j]);
  }
  CHECK(nan_rows == 240);

  MultiViewDataset back = unmask_views(m);
  CHECK(back.views[1].v == before);
  CHECK(back.count_present() == 600);
  CHECK_FALSE(back.has_hidden_truth);
}

TEST_CASE("label and view masks commute") {
  MultiViewDataset ds = generate_synthetic(tiny_spec());
  MultiViewDataset ab = apply_view_mask(apply_label_mask(ds, 0.1, 31), 0.3, 1, 31);
  MultiViewDataset ba = apply_label_mask(apply_view_mask(ds, 0.3, 1, 31), 0.1, 31);
  CHECK(ab.labels == ba.labels);
  CHECK(ab.present == ba.present);
  CHECK(ab.views[0].v == ba.views[0].v);
  CHECK(ab.hidden_truth.v == ba.hidden_truth.v);
}

TEST_CASE("stratified split partitions every class by the requested fractions") {
  MultiViewDataset ds = generate_synthetic(tiny_spec());
  auto [tr, va, te] = split_dataset(ds, 0.8, 0.1, 7);
  CHECK(tr.n() + va.n() + te.n() == 600);
  CHECK(tr.n() > 450);
  CHECK(va.n() > 30);
  CHECK(te.n() > 30);

  // class proportions survive the split
  for (int cls = 0; cls < 3; ++cls) {
    auto count = [&](const MultiViewDataset& d) {
      int c = 0;
      for (int y : d.true_labels) c += y == cls;
      return static_cast<double>(c);
    };
    const double frac_tr = count(tr) / static_cast<double>(tr.n());
    const double frac_all = count(ds) / 600.0;
    CHECK(std::abs(frac_tr - frac_all) < 0.02);
  }

  auto [tr2, va2, te2] = split_dataset(ds, 0.8, 0.1, 7);
  CHECK(tr.views[0].v == tr2.views[0].v);
  auto [tr3, va3, te3] = split_dataset(ds, 0.8, 0.1, 8);
  CHECK(tr.views[0].v != tr3.views[0].v);

  CHECK_THROWS_AS(split_dataset(ds, 0.9, 0.2, 1), ConfigError);
}

TEST_CASE("standardizer fits on observed train rows and transforms the hidden truth too") {
  MultiViewDataset ds = apply_view_mask(generate_synthetic(tiny_spec()), 0.5, 1, 41);
  Standardizer st = Standardizer::fit(ds);
  MultiViewDataset std_ds = ds;
  st.apply(std_ds);

  // observed rows of the maskable view are centered and scaled
  for (std::size_t j = 0; j < 4; ++j) {
    double s = 0.0, s2 = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < std_ds.n(); ++i) {
      if (!std_ds.present[i]) continue;
      s += std_ds.views[1](i, j);
      s2 += std_ds.views[1](i, j) * std_ds.views[1](i, j);
      ++cnt;
    }
    const double mean = s / static_cast<double>(cnt);
    CHECK_THAT(mean, WithinAbs(0.0, 1e-9));
    CHECK_THAT(s2 / static_cast<double>(cnt) - mean * mean, WithinAbs(1.0, 1e-9));
  }

  // hidden truth went through the same transform as its column
  for (std::size_t i = 0; i < ds.n(); ++i) {
    if (ds.present[i]) continue;
    for (std::size_t j = 0; j < 4; ++j)
      CHECK_THAT(std_ds.hidden_truth(i, j),
                 WithinAbs((ds.hidden_truth(i, j) - st.mean[1][j]) / st.sd[1][j], 1e-12));
  }

  // NaN stays NaN; complete view has no NaN
  for (std::size_t i = 0; i < std_ds.n(); ++i)
    CHECK(std::isnan(std_ds.views[1](i, 0)) == (std_ds.present[i] == 0));
  CHECK(std_ds.views[0].all_finite());
}

TEST_CASE("constant columns standardize with unit scale") {
  MultiViewDataset ds;
  ds.views = {Tensor::full({5, 2}, 3.0), Tensor::full({5, 2}, 1.0)};
  ds.labels.assign(5, 0);
  ds.true_labels.assign(5, 0);
  ds.present.assign(5, 1);
  ds.num_classes = 1;
  Standardizer st = Standardizer::fit(ds);
  CHECK(st.sd[0][0] == 1.0);
  st.apply(ds);
  CHECK(ds.views[0](0, 0) == 0.0);
}

TEST_CASE("normalized reconstruction error") {
  Tensor X = Tensor::matrix(1, 2, {3.0, 4.0});
  Tensor Xhat = Tensor::matrix(1, 2, {3.0, 0.0});
  CHECK_THAT(metric_nmse(X, Xhat), WithinAbs(0.8, 1e-12));
  CHECK_THAT(metric_nmse(X, X), WithinAbs(0.0, 0.0));
  CHECK_THROWS_AS(metric_nmse(X, Tensor::matrix(2, 1, {1.0, 2.0})), DimensionError);
  CHECK_THROWS_AS(metric_nmse(Tensor::zeros({1, 2}), Xhat), ContractError);
}

TEST_CASE("strata partition rows by label and presence") {
  MultiViewDataset ds = apply_view_mask(apply_label_mask(generate_synthetic(tiny_spec()), 0.2, 3), 0.5, 1, 3);
  auto strata = strata_indices(ds);
  std::set<int> all;
  for (const auto& s : strata)
    for (int i : s) all.insert(i);
  CHECK(all.size() == 600);

  for (int i : strata[0]) {
    CHECK(ds.labels[static_cast<std::size_t>(i)] != kUnlabeled);
    CHECK(ds.present[static_cast<std::size_t>(i)] == 1);
  }
  for (int i : strata[3]) {
    CHECK(ds.labels[static_cast<std::size_t>(i)] == kUnlabeled);
    CHECK(ds.present[static_cast<std::size_t>(i)] == 0);
  }

  Batch lc = gather_batch(ds, strata[0], true);
  CHECK(lc.rows() == strata[0].size());
  CHECK(lc.labels.size() == strata[0].size());
  CHECK(lc.views[1].all_finite());

  Batch ui = gather_batch(ds, strata[3], false);
  CHECK(ui.views[1].numel() == 0);
  CHECK(ui.labels.empty());
  CHECK(ui.views[0].all_finite());
}

TEST_CASE("csv round trips preserve every bit") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "mvf_csv_test";
  fs::create_directories(dir);

  Tensor X = Tensor::matrix(3, 2, {0.1, -2.5e-17, 3.0, 1.0 / 3.0, -4.75, 6.02e23});
  const std::string vp = (dir / "v.csv").string();
  write_view_csv(vp, X);
  Tensor Y = read_view_csv(vp);
  CHECK(X.v == Y.v);
  CHECK_FALSE(fs::exists(vp + ".tmp"));

  const std::string lp = (dir / "l.csv").string();
  write_labels_csv(lp, {0, -1, 2});
  CHECK(read_labels_csv(lp) == std::vector<int>{0, -1, 2});

  const std::string mp = (dir / "m.csv").string();
  write_mask_csv(mp, {1, 0, 1});
  CHECK(read_mask_csv(mp) == std::vector<std::uint8_t>{1, 0, 1});

  fs::remove_all(dir);
}

TEST_CASE("csv loaders report file and line on malformed input") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "mvf_csv_bad";
  fs::create_directories(dir);

  auto write_raw = [&](const std::string& name, const std::string& body) {
    std::ofstream out(dir / name);
    out << body;
    return (dir / name).string();
  };

  CHECK_THROWS_WITH(read_view_csv(write_raw("h.csv", "a,b\n1,2\n")),
                    Catch::Matchers::ContainsSubstring("f0"));
  CHECK_THROWS_WITH(read_view_csv(write_raw("n.csv", "f0,f1\n1,x\n")),
                    Catch::Matchers::ContainsSubstring(":2"));
  CHECK_THROWS_WITH(read_view_csv(write_raw("w.csv", "f0,f1\n1\n")),
                    Catch::Matchers::ContainsSubstring("columns"));
  CHECK_THROWS_AS(read_view_csv((dir / "missing.csv").string()), ConfigError);
  CHECK_THROWS_WITH(read_labels_csv(write_raw("l.csv", "label\n-2\n")),
                    Catch::Matchers::ContainsSubstring("below -1"));
  CHECK_THROWS_WITH(read_mask_csv(write_raw("p.csv", "present\n2\n")),
                    Catch::Matchers::ContainsSubstring("0 or 1"));

  fs::remove_all(dir);
}
