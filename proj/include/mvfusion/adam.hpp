#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "mvfusion/param_store.hpp"

namespace mvf {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias-corrected moments.  Moments mirror the parameter
// layout block for block.
struct AdamState {
  AdamConfig cfg;
  long step = 0;
  ParamStore m, v;

  static AdamState init(const ParamStore& params, AdamConfig cfg = {}) {
    AdamState s;
    s.cfg = cfg;
    s.m = ParamStore::zeros_like(params);
    s.v = ParamStore::zeros_like(params);
    return s;
  }
};

inline void adam_step(AdamState& st, ParamStore& params, const ParamStore& grads) {
  params.ensure_same_layout(grads, "adam_step");
  params.ensure_same_layout(st.m, "adam_step moments");
  grads.ensure_finite("adam_step gradients");
  st.step += 1;
  const double b1 = st.cfg.beta1, b2 = st.cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (const std::string& name : params.names()) {
    Tensor& p = params.at(name);
    Tensor& m = st.m.at(name);
    Tensor& v = st.v.at(name);
    const Tensor& g = grads.at(name);
    for (std::size_t k = 0; k < p.numel(); ++k) {
      m.v[k] = b1 * m.v[k] + (1.0 - b1) * g.v[k];
      v.v[k] = b2 * v.v[k] + (1.0 - b2) * g.v[k] * g.v[k];
      p.v[k] -= st.cfg.lr * (m.v[k] / c1) / (std::sqrt(v.v[k] / c2) + st.cfg.eps);
    }
  }
  params.ensure_finite("adam_step parameters");
}

// Scales grads in place so their global L2 norm is at most max_norm.
// max_norm <= 0 disables clipping.
inline void clip_global_norm(ParamStore& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  const double norm = std::sqrt(grads.squared_norm());
  if (norm > max_norm) grads.scale_all(max_norm / norm);
}

}  // namespace mvf
