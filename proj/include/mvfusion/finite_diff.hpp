#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "mvfusion/param_store.hpp"

namespace mvf {

using LossFn = std::function<double(const ParamStore&)>;

// Central finite differences, one coordinate at a time.  The loss must be a
// deterministic function of the parameters (fix all noise outside).
inline ParamStore finite_diff_gradient(const LossFn& loss, const ParamStore& at, double h = 1e-5) {
  ParamStore grads = ParamStore::zeros_like(at);
  ParamStore probe = at;
  for (const std::string& name : at.names()) {
    Tensor& p = probe.at(name);
    Tensor& g = grads.at(name);
    for (std::size_t k = 0; k < p.numel(); ++k) {
      const double orig = p.v[k];
      p.v[k] = orig + h;
      const double up = loss(probe);
      p.v[k] = orig - h;
      const double down = loss(probe);
      p.v[k] = orig;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("finite_diff_gradient: non-finite loss at block " + name + "[" + std::to_string(k) + "]");
      g.v[k] = (up - down) / (2.0 * h);
    }
  }
  return grads;
}

// Largest relative disagreement between two gradient stores.  The denominator
// is floored so near-zero coordinates compare absolutely.
inline double max_relative_error(const ParamStore& a, const ParamStore& b, double floor = 1e-2,
                                 std::string* where = nullptr) {
  a.ensure_same_layout(b, "max_relative_error");
  double worst = 0.0;
  for (const std::string& name : a.names()) {
    const Tensor& ta = a.at(name);
    const Tensor& tb = b.at(name);
    for (std::size_t k = 0; k < ta.numel(); ++k) {
      const double denom = std::max({std::abs(ta.v[k]), std::abs(tb.v[k]), floor});
      const double rel = std::abs(ta.v[k] - tb.v[k]) / denom;
      if (rel > worst) {
        worst = rel;
        if (where) *where = name + "[" + std::to_string(k) + "]";
      }
    }
  }
  return worst;
}

}  // namespace mvf
