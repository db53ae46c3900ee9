#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "mvfusion/errors.hpp"
#include "mvfusion/tensor.hpp"

namespace mvf {

// Named parameter blocks with stable insertion order.  Gradient stores and
// optimizer moments are built with zeros_like so every block lines up by name.
class ParamStore {
public:
  void add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ContractError("duplicate parameter block " + name);
    index_[name] = names_.size();
    names_.push_back(name);
    blocks_.push_back(std::move(t));
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter block " + name);
    return blocks_[it->second];
  }
  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter block " + name);
    return blocks_[it->second];
  }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t num_blocks() const { return names_.size(); }

  std::size_t total_params() const {
    std::size_t n = 0;
    for (const Tensor& b : blocks_) n += b.numel();
    return n;
  }

  static ParamStore zeros_like(const ParamStore& other) {
    ParamStore p;
    for (const std::string& n : other.names_) p.add(n, Tensor::zeros(other.at(n).shape));
    return p;
  }

  void ensure_same_layout(const ParamStore& other, const std::string& context) const {
    if (names_ != other.names_) throw ContractError("parameter layout mismatch in " + context);
    for (const std::string& n : names_)
      if (!at(n).same_shape(other.at(n)))
        throw DimensionError("block " + n + " shape mismatch in " + context);
  }

  void ensure_finite(const std::string& context) const {
    for (const std::string& n : names_)
      if (!at(n).all_finite()) throw NumericError("non-finite values in block " + n + " (" + context + ")");
  }

  double squared_norm() const {
    double s = 0.0;
    for (const Tensor& b : blocks_)
      for (double x : b.v) s += x * x;
    return s;
  }

  void scale_all(double c) {
    for (Tensor& b : blocks_)
      for (double& x : b.v) x *= c;
  }

  void add_scaled(const ParamStore& other, double c) {
    ensure_same_layout(other, "add_scaled");
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      for (std::size_t k = 0; k < blocks_[i].numel(); ++k)
        blocks_[i].v[k] += c * other.blocks_[i].v[k];
  }

private:
  std::vector<std::string> names_;
  std::vector<Tensor> blocks_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace mvf
