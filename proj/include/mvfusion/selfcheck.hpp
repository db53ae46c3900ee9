#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mvfusion/bounds.hpp"
#include "mvfusion/finite_diff.hpp"
#include "mvfusion/model.hpp"
#include "mvfusion/probdist.hpp"
#include "mvfusion/rng.hpp"

namespace mvf {

// Numeric validation harness shared by the command line and the release
// gate.  Each family returns one result; sizes are parameters so quick
// console runs and the full-strength gate share one implementation.

struct SelfCheckOptions {
  std::uint64_t seed = 0;

  double grad_h = 1e-5;
  double grad_tol = 1e-4;
  double grad_floor = 1e-2;  // relative-error denominators are clamped up to this
  bool corrupt_gradients = false;  // fault injection for exit-path tests

  std::size_t entropy_mixtures = 200;
  std::size_t entropy_samples = 100000;
  std::size_t entropy_max_dim = 8;
  double entropy_closed_tol = 1e-9;

  double identity_tol = 1e-10;

  std::size_t quad_draws = 20;
  int quad_T = 256;      // latent quantile-midpoint draws
  int quad_Tm = 64;      // imputer quantile-midpoint draws
  std::size_t quad_points_z = 241;
  std::size_t quad_points_xm = 321;
  double quad_margin = -1e-6;
};

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace selfcheck_detail {

inline std::vector<double> affine(const Tensor& W, const Tensor& b, const std::vector<double>& x) {
  std::vector<double> y(W.cols());
  for (std::size_t j = 0; j < W.cols(); ++j) {
    double acc = b(j);
    for (std::size_t i = 0; i < W.rows(); ++i) acc += x[i] * W(i, j);
    y[j] = acc;
  }
  return y;
}

// Plain-loop network evaluation, deliberately sharing nothing with the tape.
inline std::map<std::string, std::vector<double>> forward_plain(const MLPSpec& spec,
                                                                const ParamStore& ps,
                                                                std::vector<double> x) {
  for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
    x = affine(ps.at(spec.prefix + "/W" + std::to_string(l)),
               ps.at(spec.prefix + "/b" + std::to_string(l)), x);
    for (double& v : x) v = std::tanh(v);
  }
  std::map<std::string, std::vector<double>> out;
  for (const HeadSpec& head : spec.heads) {
    std::vector<double> h = affine(ps.at(spec.prefix + "/" + head.name + "_W"),
                                   ps.at(spec.prefix + "/" + head.name + "_b"), x);
    switch (head.act) {
      case Act::Linear:
        break;
      case Act::Tanh:
        for (double& v : h) v = std::tanh(v);
        break;
      case Act::SoftplusFloor:
        for (double& v : h)
          v = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))) + spec.variance_floor;
        break;
      case Act::LogSoftmax: {
        double mx = h[0];
        for (double v : h) mx = std::max(mx, v);
        double s = 0.0;
        for (double v : h) s += std::exp(v - mx);
        const double lse = mx + std::log(s);
        for (double& v : h) v -= lse;
        break;
      }
    }
    out[head.name] = std::move(h);
  }
  return out;
}

inline double logpdf_plain(const std::vector<double>& x, const std::vector<double>& mu,
                           const std::vector<double>& var) {
  double acc = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double d = x[k] - mu[k];
    acc += std::log(var[k]) + d * d / var[k];
  }
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + acc);
}

inline std::vector<double> one_hot(int y, std::size_t K) {
  std::vector<double> v(K, 0.0);
  v[static_cast<std::size_t>(y)] = 1.0;
  return v;
}

struct Grid {
  std::vector<double> x, logw;  // trapezoid weights, log domain
};

inline Grid make_grid(double lo, double hi, std::size_t n) {
  Grid g;
  const double h = (hi - lo) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    g.x.push_back(lo + h * static_cast<double>(i));
    g.logw.push_back(std::log(i == 0 || i + 1 == n ? h / 2.0 : h));
  }
  return g;
}

// log p(x1, x2, y) for the complete-data toy via 1-D latent quadrature.
// The incomplete-data model conditions the observed view's decoder on the
// maskable view, matching its generative factorization.
inline double quad_logp_complete(const Model& m, double x1, double x2, int y, const Grid& gz) {
  const auto y1h = one_hot(y, m.num_classes());
  const std::size_t mv = m.cfg.missing_view;
  std::vector<double> terms;
  for (std::size_t i = 0; i < gz.x.size(); ++i) {
    const double z = gz.x[i];
    std::vector<double> in0 = y1h, in1 = y1h;
    in0.push_back(z);
    in1.push_back(z);
    if (m.cfg.kind == ModelKind::Simvae) (mv == 0 ? in1 : in0).push_back(mv == 0 ? x1 : x2);
    auto d0 = forward_plain(m.dec[0], m.params, in0);
    auto d1 = forward_plain(m.dec[1], m.params, in1);
    const double lp = logpdf_plain({z}, {0.0}, {1.0}) + logpdf_plain({x1}, d0["mu"], d0["var"]) +
                      logpdf_plain({x2}, d1["mu"], d1["var"]);
    terms.push_back(lp + gz.logw[i]);
  }
  return logsumexp(terms) + std::log(m.label_prior().probs[static_cast<std::size_t>(y)]);
}

// log p(x_obs, y) for the incomplete toy via 2-D (latent x missing) quadrature.
inline double quad_logp_incomplete(const Model& m, double x_obs, int y, const Grid& gz,
                                   const Grid& gm) {
  const auto y1h = one_hot(y, m.num_classes());
  const std::size_t mv = m.cfg.missing_view;
  std::vector<double> terms;
  for (std::size_t i = 0; i < gz.x.size(); ++i) {
    const double z = gz.x[i];
    std::vector<double> in_m = y1h;
    in_m.push_back(z);
    auto dm = forward_plain(m.dec[mv], m.params, in_m);
    for (std::size_t j = 0; j < gm.x.size(); ++j) {
      const double xm = gm.x[j];
      std::vector<double> in_o = y1h;
      in_o.push_back(z);
      in_o.push_back(xm);
      auto dobs = forward_plain(m.dec[mv == 0 ? 1 : 0], m.params, in_o);
      const double lp = logpdf_plain({z}, {0.0}, {1.0}) + logpdf_plain({x_obs}, dobs["mu"], dobs["var"]) +
                        logpdf_plain({xm}, dm["mu"], dm["var"]);
      terms.push_back(lp + gz.logw[i] + gm.logw[j]);
    }
  }
  return logsumexp(terms) + std::log(m.label_prior().probs[static_cast<std::size_t>(y)]);
}

inline SampleNoise keyed_noise(std::uint64_t seed, std::uint64_t tag, std::size_t components,
                               int T, std::size_t dz, int Tm, std::size_t dm) {
  SampleNoise n;
  for (std::size_t l = 0; l < components; ++l) {
    std::vector<std::vector<double>> draws;
    for (int t = 0; t < T; ++t) {
      std::vector<double> d(dz);
      for (std::size_t k = 0; k < dz; ++k)
        d[k] = rng::normal({seed, tag, l, static_cast<std::uint64_t>(t), k});
      draws.push_back(std::move(d));
    }
    n.latent.push_back(std::move(draws));
  }
  for (int t = 0; t < Tm; ++t) {
    std::vector<double> d(dm);
    for (std::size_t k = 0; k < dm; ++k)
      d[k] = rng::normal({seed, tag, 77, static_cast<std::uint64_t>(t), k});
    n.missing.push_back(std::move(d));
  }
  return n;
}

inline SampleNoise quantile_noise(std::size_t components, int T, std::size_t dz, int Tm,
                                  std::size_t dm) {
  SampleNoise n;
  for (std::size_t l = 0; l < components; ++l) {
    std::vector<std::vector<double>> draws;
    for (int t = 0; t < T; ++t)
      draws.push_back(std::vector<double>(
          dz, inverse_normal_cdf((static_cast<double>(t) + 0.5) / static_cast<double>(T))));
    n.latent.push_back(std::move(draws));
  }
  for (int t = 0; t < Tm; ++t)
    n.missing.push_back(std::vector<double>(
        dm, inverse_normal_cdf((static_cast<double>(t) + 0.5) / static_cast<double>(Tm))));
  return n;
}

inline void randomize_params(ParamStore& ps, std::uint64_t seed, std::uint64_t draw, double scale) {
  for (const auto& name : ps.names()) {
    Tensor& t = ps.at(name);
    const std::uint64_t nh = rng::name_hash(name);
    for (std::size_t k = 0; k < t.v.size(); ++k)
      t.v[k] = scale * (rng::uniform({seed, 4100, draw, nh, k}) - 0.5) * 2.0;
  }
}

inline void zero_rows(Tensor& W, std::size_t row_begin, std::size_t row_end) {
  for (std::size_t i = row_begin; i < row_end; ++i)
    for (std::size_t j = 0; j < W.cols(); ++j) W(i, j) = 0.0;
}

}  // namespace selfcheck_detail

// ---- family 1: analytic gradients vs central finite differences ----

inline CheckResult check_gradients(const SelfCheckOptions& opts) {
  namespace sd = selfcheck_detail;
  ModelConfig scfg;
  scfg.kind = ModelKind::Smvae;
  scfg.num_classes = 2;
  scfg.latent_dim = 2;
  scfg.view_dims = {3, 2};
  scfg.hidden = {4};
  Model sm = build_model(scfg, opts.seed + 1);
  ModelConfig icfg = scfg;
  icfg.kind = ModelKind::Simvae;
  icfg.missing_view = 1;
  Model im = build_model(icfg, opts.seed + 2);

  std::vector<std::vector<double>> views(2);
  for (std::size_t j = 0; j < 3; ++j) views[0].push_back(rng::normal({opts.seed, 4201, j}));
  for (std::size_t j = 0; j < 2; ++j) views[1].push_back(rng::normal({opts.seed, 4202, j}));
  const int y = 1;
  const SampleNoise noise = sd::keyed_noise(opts.seed, 4203, 2, 1, 2, 1, 2);

  struct Case {
    std::string name;
    const Model* m;
    std::function<BoundBreakdown(const Model&, ParamStore*)> eval;
  };
  std::vector<Case> cases = {
      {"L", &sm, [&](const Model& m, ParamStore* g) { return smvae_labeled_bound(m, views, y, noise, 1, g); }},
      {"U", &sm, [&](const Model& m, ParamStore* g) { return smvae_unlabeled_bound(m, views, noise, 1, g); }},
      {"LC", &im, [&](const Model& m, ParamStore* g) { return simvae_bound_lc(m, views, y, noise, 1, g); }},
      {"LI", &im, [&](const Model& m, ParamStore* g) { return simvae_bound_li(m, views, y, noise, 1, 1, g); }},
      {"UC", &im, [&](const Model& m, ParamStore* g) { return simvae_bound_uc(m, views, noise, 1, g); }},
      {"UI", &im, [&](const Model& m, ParamStore* g) { return simvae_bound_ui(m, views, noise, 1, 1, g); }},
  };

  double worst = 0.0;
  std::string worst_at;
  for (const Case& c : cases) {
    ParamStore grads = ParamStore::zeros_like(c.m->params);
    c.eval(*c.m, &grads);
    if (opts.corrupt_gradients && c.name == "U") grads.at(grads.names().front()).v[0] += 0.5;
    auto value = [&](const ParamStore& p) {
      Model probe = *c.m;
      probe.params = p;
      return c.eval(probe, nullptr).total;
    };
    ParamStore fd = finite_diff_gradient(value, c.m->params, opts.grad_h);
    std::string where;
    const double err = max_relative_error(grads, fd, opts.grad_floor, &where);
    if (err > worst) {
      worst = err;
      worst_at = c.name + " at " + where;
    }
  }

  // probe models must stay small enough for central differences to be cheap
  const bool size_ok = sm.params.total_params() <= 500 && im.params.total_params() <= 500;
  std::ostringstream detail;
  detail << "six bounds x " << sm.params.total_params() << "/" << im.params.total_params()
         << " params (gate 500), h=" << opts.grad_h << ", denominators floored at "
         << opts.grad_floor << ": max rel err " << worst << " (" << worst_at << "), tolerance "
         << opts.grad_tol;
  return {"gradient-vs-finite-difference", worst <= opts.grad_tol && size_ok, detail.str()};
}

// ---- family 2: mixture entropy lower bound vs Monte Carlo ----

inline CheckResult check_entropy_bound(const SelfCheckOptions& opts) {
  const double closed_ref = 0.5 * (std::log(2.0) + kLog2Pi);  // entropy bound of two equal N(0,1)
  const GaussianMixture unit({DiagGaussian({0.0}, {1.0}), DiagGaussian({0.0}, {1.0})}, {0.5, 0.5});
  const double closed_err = std::abs(mog_entropy_lower_bound(unit) - closed_ref);

  std::size_t violations = 0;
  double worst_excess = -1e300;
  for (std::size_t i = 0; i < opts.entropy_mixtures; ++i) {
    const auto d = static_cast<std::size_t>(1 + rng::hash({opts.seed, 4301, i}) % opts.entropy_max_dim);
    std::vector<DiagGaussian> comps;
    for (std::size_t c = 0; c < 2; ++c) {
      std::vector<double> mu(d), var(d);
      for (std::size_t k = 0; k < d; ++k) {
        mu[k] = 2.0 * rng::normal({opts.seed, 4302, i, c, k});
        var[k] = 0.25 + 2.0 * rng::uniform({opts.seed, 4303, i, c, k});
      }
      comps.emplace_back(std::move(mu), std::move(var));
    }
    const double w1 = 0.2 + 0.6 * rng::uniform({opts.seed, 4304, i});
    GaussianMixture mix(std::move(comps), {w1, 1.0 - w1});
    const double bound = mog_entropy_lower_bound(mix);

    double sum = 0.0, sum2 = 0.0;
    const auto N = opts.entropy_samples;
    std::vector<double> inner(2);
    std::vector<double> x(d);
    for (std::size_t s = 0; s < N; ++s) {
      const std::size_t c = rng::uniform({opts.seed, rng::kMc, i, s, 0}) < mix.weights[0] ? 0 : 1;
      for (std::size_t k = 0; k < d; ++k)
        x[k] = mix.components[c].mean[k] +
               std::sqrt(mix.components[c].var[k]) * rng::normal({opts.seed, rng::kMc, i, s, 1 + k});
      for (std::size_t l = 0; l < 2; ++l)
        inner[l] = std::log(mix.weights[l]) + gauss_log_pdf(x, mix.components[l]);
      const double nll = -logsumexp(inner);
      sum += nll;
      sum2 += nll * nll;
    }
    const double mc = sum / static_cast<double>(N);
    const double se = std::sqrt(std::max(0.0, sum2 / static_cast<double>(N) - mc * mc) /
                                static_cast<double>(N));
    const double excess = bound - (mc + 3.0 * se);
    worst_excess = std::max(worst_excess, excess);
    if (excess > 0.0) ++violations;
  }

  std::ostringstream detail;
  detail << violations << "/" << opts.entropy_mixtures << " violations at "
         << opts.entropy_samples << " samples (worst bound - mc - 3se = " << worst_excess
         << "); closed-form |err| = " << closed_err << " vs tolerance " << opts.entropy_closed_tol;
  return {"mixture-entropy-bound", violations == 0 && closed_err <= opts.entropy_closed_tol,
          detail.str()};
}

// ---- family 3: degenerate classifier identities ----

inline CheckResult check_identities(const SelfCheckOptions& opts) {
  namespace sd = selfcheck_detail;
  ModelConfig scfg;
  scfg.kind = ModelKind::Smvae;
  scfg.num_classes = 3;
  scfg.latent_dim = 2;
  scfg.view_dims = {3, 2};
  scfg.hidden = {4};
  Model sm = build_model(scfg, opts.seed + 11);
  ModelConfig icfg = scfg;
  icfg.kind = ModelKind::Simvae;
  icfg.missing_view = 1;
  Model im = build_model(icfg, opts.seed + 12);

  std::vector<std::vector<double>> views(2);
  for (std::size_t j = 0; j < 3; ++j) views[0].push_back(rng::normal({opts.seed, 4401, j}));
  for (std::size_t j = 0; j < 2; ++j) views[1].push_back(rng::normal({opts.seed, 4402, j}));
  const SampleNoise noise = sd::keyed_noise(opts.seed, 4403, 2, 1, 2, 1, 2);
  const int y_star = 2;
  const std::size_t K = 3;

  double worst = 0.0;
  auto track = [&](double gap) { worst = std::max(worst, std::abs(gap)); };

  {  // classifier certain of y*: marginalized and supervised bounds coincide
    Model m1 = sm, m2 = im;
    for (Model* m : {&m1, &m2}) {
      Tensor& W = m->params.at("cls/logp_W");
      for (double& v : W.v) v = 0.0;
      Tensor& b = m->params.at("cls/logp_b");
      for (double& v : b.v) v = 0.0;
      b(static_cast<std::size_t>(y_star)) = 120.0;
    }
    track(smvae_unlabeled_bound(m1, views, noise).total -
          smvae_labeled_bound(m1, views, y_star, noise).total);
    track(simvae_bound_uc(m2, views, noise).total -
          simvae_bound_lc(m2, views, y_star, noise).total);
  }

  {  // label-blind model with uniform classifier: U = L + log K exactly
    Model m1 = sm;
    for (double& v : m1.params.at("cls/logp_W").v) v = 0.0;
    for (double& v : m1.params.at("cls/logp_b").v) v = 0.0;
    for (std::size_t v = 0; v < 2; ++v) {
      sd::zero_rows(m1.params.at("enc" + std::to_string(v) + "/W0"), scfg.view_dims[v],
                    scfg.view_dims[v] + K);
      sd::zero_rows(m1.params.at("dec" + std::to_string(v) + "/W0"), 0, K);
    }
    const double u = smvae_unlabeled_bound(m1, views, noise).total;
    for (int y = 0; y < static_cast<int>(K); ++y)
      track(u - (smvae_labeled_bound(m1, views, y, noise).total + std::log(static_cast<double>(K))));
  }

  std::ostringstream detail;
  detail << "one-hot and uniform-classifier identities: max |gap| " << worst << " vs tolerance "
         << opts.identity_tol;
  return {"degenerate-identities", worst <= opts.identity_tol, detail.str()};
}

// ---- family 4: every bound stays below the quadrature log-evidence ----

inline CheckResult check_quadrature_domination(const SelfCheckOptions& opts) {
  namespace sd = selfcheck_detail;
  ModelConfig scfg;
  scfg.kind = ModelKind::Smvae;
  scfg.num_classes = 2;
  scfg.latent_dim = 1;
  scfg.view_dims = {1, 1};
  scfg.hidden = {3};
  Model sm = build_model(scfg, opts.seed + 21);
  ModelConfig icfg = scfg;
  icfg.kind = ModelKind::Simvae;
  icfg.missing_view = 1;
  Model im = build_model(icfg, opts.seed + 22);

  const sd::Grid gz = sd::make_grid(-9.0, 9.0, opts.quad_points_z);
  const sd::Grid gm = sd::make_grid(-16.0, 16.0, opts.quad_points_xm);
  const SampleNoise qn = sd::quantile_noise(2, opts.quad_T, 1, opts.quad_Tm, 1);

  double min_margin = 1e300;
  std::string min_at;
  auto track = [&](const std::string& name, std::size_t draw, double margin) {
    if (margin < min_margin) {
      min_margin = margin;
      min_at = name + " draw " + std::to_string(draw);
    }
  };

  for (std::size_t j = 0; j < opts.quad_draws; ++j) {
    sd::randomize_params(sm.params, opts.seed, 2 * j, 0.7);
    sd::randomize_params(im.params, opts.seed, 2 * j + 1, 0.7);
    const double x1 = 1.2 * rng::normal({opts.seed, 4501, j, 0});
    const double x2 = 1.2 * rng::normal({opts.seed, 4501, j, 1});
    const int y = static_cast<int>(j % 2);
    const std::vector<std::vector<double>> views = {{x1}, {x2}};

    const double logp_joint_s = sd::quad_logp_complete(sm, x1, x2, y, gz);
    const std::array<double, 2> by_y_s = {sd::quad_logp_complete(sm, x1, x2, 0, gz),
                                          sd::quad_logp_complete(sm, x1, x2, 1, gz)};
    track("L", j, logp_joint_s - smvae_labeled_bound(sm, views, y, qn, opts.quad_T).total);
    track("U", j, logsumexp(by_y_s) - smvae_unlabeled_bound(sm, views, qn, opts.quad_T).total);

    const double logp_joint_i = sd::quad_logp_complete(im, x1, x2, y, gz);
    const std::array<double, 2> by_y_i = {sd::quad_logp_complete(im, x1, x2, 0, gz),
                                          sd::quad_logp_complete(im, x1, x2, 1, gz)};
    track("LC", j, logp_joint_i - simvae_bound_lc(im, views, y, qn, opts.quad_T).total);
    track("UC", j, logsumexp(by_y_i) - simvae_bound_uc(im, views, qn, opts.quad_T).total);

    const double logp_obs_y = sd::quad_logp_incomplete(im, x1, y, gz, gm);
    const std::array<double, 2> by_y_o = {sd::quad_logp_incomplete(im, x1, 0, gz, gm),
                                          sd::quad_logp_incomplete(im, x1, 1, gz, gm)};
    const double logp_obs = logsumexp(by_y_o);
    track("LI", j, logp_obs_y - simvae_bound_li(im, views, y, qn, opts.quad_T, opts.quad_Tm).total);
    track("UI", j, logp_obs - simvae_bound_ui(im, views, qn, opts.quad_T, opts.quad_Tm).total);
  }

  std::ostringstream detail;
  detail << opts.quad_draws << " parameter draws x six bounds, T=" << opts.quad_T
         << ", Tm=" << opts.quad_Tm << ": min (log-evidence - bound) = " << min_margin << " ("
         << min_at << "), tolerance " << opts.quad_margin;
  return {"quadrature-domination", min_margin >= opts.quad_margin, detail.str()};
}

inline std::vector<CheckResult> run_selfchecks(const SelfCheckOptions& opts) {
  return {check_gradients(opts), check_entropy_bound(opts), check_identities(opts),
          check_quadrature_domination(opts)};
}

inline bool all_passed(const std::vector<CheckResult>& results) {
  for (const CheckResult& r : results)
    if (!r.pass) return false;
  return true;
}

}  // namespace mvf
