#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvfusion/mlp.hpp"
#include "mvfusion/param_store.hpp"
#include "mvfusion/probdist.hpp"

namespace mvf {

enum class ModelKind { Mvae, Smvae, Simvae };

inline std::string kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::Mvae: return "mvae";
    case ModelKind::Smvae: return "smvae";
    case ModelKind::Simvae: return "simvae";
  }
  return "?";
}

inline ModelKind kind_from_name(const std::string& s) {
  if (s == "mvae") return ModelKind::Mvae;
  if (s == "smvae") return ModelKind::Smvae;
  if (s == "simvae") return ModelKind::Simvae;
  throw ConfigError("unknown model kind '" + s + "'");
}

struct ModelConfig {
  ModelKind kind = ModelKind::Smvae;
  std::size_t num_classes = 2;
  std::size_t latent_dim = 30;
  std::vector<std::size_t> view_dims;     // one entry per view, at least two
  std::vector<std::size_t> hidden = {100, 50};
  double variance_floor = 1e-6;
  std::size_t missing_view = 1;           // index of the incomplete view (simvae)
  std::vector<double> prior_y;            // empty means uniform
};

// Multi-view generative model: per-view encoders q(z|x_v,y) mixed into one
// Gaussian-mixture posterior, per-view decoders p(x_v|y,z,...), a label
// classifier q(y|X), and for incomplete data an imputer q(x_m|x_o).  Mixture
// weights are a softmax over V logits with the first pinned to zero.
struct Model {
  ModelConfig cfg;
  std::vector<MLPSpec> enc, dec;
  MLPSpec cls, imp;
  bool has_classifier = false, has_imputer = false;
  ParamStore params;

  std::size_t num_views() const { return cfg.view_dims.size(); }
  std::size_t num_classes() const { return cfg.num_classes; }
  std::size_t latent_dim() const { return cfg.latent_dim; }

  CategoricalDist label_prior() const {
    if (cfg.prior_y.empty()) return CategoricalDist::uniform(cfg.num_classes);
    return CategoricalDist(cfg.prior_y);
  }

  std::size_t observed_dim() const {  // total width of the always-present views
    std::size_t d = 0;
    for (std::size_t v = 0; v < num_views(); ++v)
      if (v != cfg.missing_view) d += cfg.view_dims[v];
    return d;
  }

  std::vector<double> mixture_weights() const {
    const Tensor& logits = params.at("mix/logits");
    std::vector<double> full(num_views(), 0.0);
    for (std::size_t l = 1; l < num_views(); ++l) full[l] = logits(l - 1);
    const double lse = logsumexp(full);
    for (double& x : full) x = std::exp(x - lse);
    return full;
  }
};

inline Model build_model(ModelConfig cfg, std::uint64_t seed) {
  if (cfg.view_dims.size() < 2) throw ConfigError("model needs at least two views");
  if (cfg.latent_dim == 0) throw ConfigError("latent_dim must be positive");
  if (cfg.kind == ModelKind::Mvae)
    cfg.num_classes = 1;  // unsupervised case runs with a single vacuous class
  if (cfg.num_classes == 0) throw ConfigError("num_classes must be positive");
  if (cfg.kind == ModelKind::Simvae && cfg.missing_view >= cfg.view_dims.size())
    throw ConfigError("missing_view out of range");
  if (!cfg.prior_y.empty() && cfg.prior_y.size() != cfg.num_classes)
    throw ConfigError("prior_y size must match num_classes");

  Model m;
  m.cfg = cfg;
  const std::size_t V = cfg.view_dims.size();
  const std::size_t K = cfg.num_classes;
  const std::size_t dz = cfg.latent_dim;
  const std::size_t dm = cfg.view_dims[cfg.missing_view];

  std::vector<std::size_t> dec_hidden(cfg.hidden.rbegin(), cfg.hidden.rend());

  for (std::size_t v = 0; v < V; ++v) {
    MLPSpec e;
    e.prefix = "enc" + std::to_string(v);
    e.input_dim = cfg.view_dims[v] + K;
    e.hidden = cfg.hidden;
    e.heads = {{"mu", dz, Act::Linear}, {"var", dz, Act::SoftplusFloor}};
    e.variance_floor = cfg.variance_floor;
    m.enc.push_back(e);

    MLPSpec d;
    d.prefix = "dec" + std::to_string(v);
    d.input_dim = K + dz;
    // observed-view decoders condition on the incomplete view as well
    if (cfg.kind == ModelKind::Simvae && v != cfg.missing_view) d.input_dim += dm;
    d.hidden = dec_hidden;
    d.heads = {{"mu", cfg.view_dims[v], Act::Linear}, {"var", cfg.view_dims[v], Act::SoftplusFloor}};
    d.variance_floor = cfg.variance_floor;
    m.dec.push_back(d);
  }

  if (cfg.kind != ModelKind::Mvae) {
    m.has_classifier = true;
    std::size_t din = 0;
    for (std::size_t d : cfg.view_dims) din += d;
    m.cls.prefix = "cls";
    m.cls.input_dim = din;
    m.cls.hidden = cfg.hidden;
    m.cls.heads = {{"logp", K, Act::LogSoftmax}};
    m.cls.variance_floor = cfg.variance_floor;
  }

  if (cfg.kind == ModelKind::Simvae) {
    m.has_imputer = true;
    m.imp.prefix = "imp";
    m.imp.input_dim = m.observed_dim();
    m.imp.hidden = cfg.hidden;
    m.imp.heads = {{"mu", dm, Act::Linear}, {"var", dm, Act::SoftplusFloor}};
    m.imp.variance_floor = cfg.variance_floor;
  }

  for (const MLPSpec& s : m.enc) add_mlp_params(m.params, s);
  for (const MLPSpec& s : m.dec) add_mlp_params(m.params, s);
  if (m.has_classifier) add_mlp_params(m.params, m.cls);
  if (m.has_imputer) add_mlp_params(m.params, m.imp);
  m.params.add("mix/logits", Tensor::zeros({V - 1}));

  for (const MLPSpec& s : m.enc) init_mlp_params(m.params, s, seed);
  for (const MLPSpec& s : m.dec) init_mlp_params(m.params, s, seed);
  if (m.has_classifier) init_mlp_params(m.params, m.cls, seed);
  if (m.has_imputer) init_mlp_params(m.params, m.imp, seed);
  m.params.ensure_finite("build_model");
  return m;
}

}  // namespace mvf
