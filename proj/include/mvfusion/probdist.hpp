#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvfusion/errors.hpp"

namespace mvf {

inline constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)

// Diagonal-covariance Gaussian.  Variances must be strictly positive and
// finite; callers apply their own floor before construction.
struct DiagGaussian {
  std::vector<double> mean, var;

  DiagGaussian(std::vector<double> mu, std::vector<double> v2)
      : mean(std::move(mu)), var(std::move(v2)) {
    if (mean.size() != var.size() || mean.empty())
      throw std::invalid_argument("DiagGaussian: mean/var size mismatch");
    for (double m : mean)
      if (!std::isfinite(m)) throw std::invalid_argument("DiagGaussian: non-finite mean");
    for (double s : var)
      if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("DiagGaussian: variance must be positive");
  }

  std::size_t dim() const { return mean.size(); }
};

// Finite categorical on {0..K-1}.  Weights off the simplex by more than 1e-9
// are rejected; smaller drift is renormalized silently.
struct CategoricalDist {
  std::vector<double> probs;

  explicit CategoricalDist(std::vector<double> p) : probs(std::move(p)) {
    if (probs.empty()) throw std::invalid_argument("CategoricalDist: empty");
    double s = 0.0;
    for (double x : probs) {
      if (!(x > 0.0) || !std::isfinite(x)) throw std::invalid_argument("CategoricalDist: probabilities must be positive");
      s += x;
    }
    if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("CategoricalDist: weights sum to " + std::to_string(s));
    for (double& x : probs) x /= s;
  }

  static CategoricalDist uniform(std::size_t k) {
    return CategoricalDist(std::vector<double>(k, 1.0 / static_cast<double>(k)));
  }

  std::size_t num_classes() const { return probs.size(); }
};

// Mixture of diagonal Gaussians with one weight per component.
struct GaussianMixture {
  std::vector<DiagGaussian> components;
  std::vector<double> weights;

  GaussianMixture(std::vector<DiagGaussian> comps, std::vector<double> w)
      : components(std::move(comps)), weights(std::move(w)) {
    if (components.empty() || components.size() != weights.size())
      throw std::invalid_argument("GaussianMixture: component/weight count mismatch");
    for (const DiagGaussian& c : components)
      if (c.dim() != components[0].dim()) throw std::invalid_argument("GaussianMixture: mixed dimensions");
    double s = 0.0;
    for (double x : weights) {
      if (!(x > 0.0) || !std::isfinite(x)) throw std::invalid_argument("GaussianMixture: weights must be positive");
      s += x;
    }
    if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("GaussianMixture: weights sum to " + std::to_string(s));
    for (double& x : weights) x /= s;
  }

  std::size_t dim() const { return components[0].dim(); }
  std::size_t size() const { return components.size(); }
};

inline double logsumexp(std::span<const double> xs) {
  if (xs.empty()) throw ContractError("logsumexp of empty span");
  const double m = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(m)) return m;  // all -inf stays -inf
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline double gauss_log_pdf(std::span<const double> x, const DiagGaussian& g) {
  if (x.size() != g.dim()) throw DimensionError("gauss_log_pdf: point dim " + std::to_string(x.size()));
  double acc = 0.0;
  for (std::size_t k = 0; k < g.dim(); ++k) {
    const double d = x[k] - g.mean[k];
    acc += std::log(g.var[k]) + d * d / g.var[k];
  }
  return -0.5 * (acc + static_cast<double>(g.dim()) * kLog2Pi);
}

// Location-scale transform (mean + sqrt(var) * eps) of a standard draw.
inline std::vector<double> gauss_reparam_sample(const DiagGaussian& g, std::span<const double> eps) {
  if (eps.size() != g.dim()) throw DimensionError("gauss_reparam_sample: eps dim " + std::to_string(eps.size()));
  std::vector<double> out(g.dim());
  for (std::size_t k = 0; k < g.dim(); ++k) out[k] = g.mean[k] + std::sqrt(g.var[k]) * eps[k];
  return out;
}

inline double gauss_entropy(const DiagGaussian& g) {
  double acc = 0.0;
  for (double s : g.var) acc += std::log(s);
  return 0.5 * (acc + static_cast<double>(g.dim()) * (kLog2Pi + 1.0));
}

// log of the convolution density N(mu_a ; mu_b, var_a + var_b), the building
// block of the mixture entropy bound.
inline double pair_convolution_logpdf(const DiagGaussian& a, const DiagGaussian& b) {
  if (a.dim() != b.dim()) throw DimensionError("pair_convolution_logpdf: dim mismatch");
  double acc = 0.0;
  for (std::size_t k = 0; k < a.dim(); ++k) {
    const double s = a.var[k] + b.var[k];
    const double d = a.mean[k] - b.mean[k];
    acc += std::log(s) + d * d / s;
  }
  return -0.5 * (acc + static_cast<double>(a.dim()) * kLog2Pi);
}

// Lower bound on the entropy of a Gaussian mixture:
//   H(q) >= -sum_v w_v log sum_l w_l N(mu_v ; mu_l, S_v + S_l).
// Tight when components coincide; never above the true entropy.
inline double mog_entropy_lower_bound(const GaussianMixture& q) {
  const std::size_t n = q.size();
  std::vector<double> inner(n);
  double bound = 0.0;
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t l = 0; l < n; ++l)
      inner[l] = std::log(q.weights[l]) + pair_convolution_logpdf(q.components[v], q.components[l]);
    bound -= q.weights[v] * logsumexp(inner);
  }
  return bound;
}

inline double categorical_log_pmf(std::size_t y, const CategoricalDist& p) {
  if (y >= p.num_classes()) throw DimensionError("categorical_log_pmf: class " + std::to_string(y));
  return std::log(p.probs[y]);
}

inline double categorical_entropy(const CategoricalDist& p) {
  double h = 0.0;
  for (double x : p.probs) h -= x * std::log(x);
  return h;
}

// Standard normal quantile.  Rational approximation refined with one Newton
// step against erfc, good to ~1e-15 away from the extreme tails.
inline double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("inverse_normal_cdf: p outside (0,1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double err = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  x -= err * std::sqrt(2.0 * 3.14159265358979323846) * std::exp(0.5 * x * x);
  return x;
}

}  // namespace mvf
