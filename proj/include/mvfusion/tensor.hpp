#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "mvfusion/errors.hpp"

namespace mvf {

// Dense row-major float64 array, rank 1 or 2.  Scalars are rank-1 with one
// element.  No views, no broadcasting; shape checks live in the operations.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> v;

  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> s) {
    Tensor t;
    t.shape = std::move(s);
    t.v.assign(t.count(t.shape), 0.0);
    return t;
  }

  static Tensor full(std::vector<std::size_t> s, double fill) {
    Tensor t = zeros(std::move(s));
    for (double& x : t.v) x = fill;
    return t;
  }

  static Tensor scalar(double x) {
    Tensor t = zeros({1});
    t.v[0] = x;
    return t;
  }

  static Tensor vec(std::vector<double> data) {
    Tensor t;
    t.shape = {data.size()};
    t.v = std::move(data);
    return t;
  }

  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> data) {
    if (data.size() != r * c)
      throw DimensionError("matrix init: " + std::to_string(data.size()) + " values for " +
                           std::to_string(r) + "x" + std::to_string(c));
    Tensor t;
    t.shape = {r, c};
    t.v = std::move(data);
    return t;
  }

  std::size_t numel() const { return v.size(); }
  std::size_t rank() const { return shape.size(); }

  std::size_t rows() const {
    if (rank() != 2) throw DimensionError("rows() on rank-" + std::to_string(rank()) + " tensor");
    return shape[0];
  }
  std::size_t cols() const {
    if (rank() != 2) throw DimensionError("cols() on rank-" + std::to_string(rank()) + " tensor");
    return shape[1];
  }

  double& operator()(std::size_t i) { return v[i]; }
  double operator()(std::size_t i) const { return v[i]; }
  double& operator()(std::size_t i, std::size_t j) { return v[i * shape[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * shape[1] + j]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }

  void ensure_finite(const std::string& context) const {
    if (!all_finite()) throw NumericError("non-finite value in " + context);
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
  }

private:
  static std::size_t count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }
};

}  // namespace mvf
