#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mvfusion/autodiff.hpp"
#include "mvfusion/param_store.hpp"
#include "mvfusion/rng.hpp"

namespace mvf {

enum class Act { Linear, Tanh, SoftplusFloor, LogSoftmax };

struct HeadSpec {
  std::string name;
  std::size_t dim = 0;
  Act act = Act::Linear;
};

// Fully connected net: shared tanh trunk, one or more named output heads.
// SoftplusFloor heads emit softplus(a) + variance_floor so variances stay
// strictly positive; LogSoftmax heads emit normalized log probabilities.
struct MLPSpec {
  std::string prefix;
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::vector<HeadSpec> heads;
  double variance_floor = 1e-6;

  struct Layer {
    std::string name;
    std::size_t fan_in = 0, fan_out = 0;
    bool is_bias = false;
  };

  std::vector<Layer> layers() const {
    std::vector<Layer> out;
    std::size_t in = input_dim;
    for (std::size_t l = 0; l < hidden.size(); ++l) {
      out.push_back({prefix + "/W" + std::to_string(l), in, hidden[l], false});
      out.push_back({prefix + "/b" + std::to_string(l), in, hidden[l], true});
      in = hidden[l];
    }
    for (const HeadSpec& h : heads) {
      out.push_back({prefix + "/" + h.name + "_W", in, h.dim, false});
      out.push_back({prefix + "/" + h.name + "_b", in, h.dim, true});
    }
    return out;
  }
};

inline void add_mlp_params(ParamStore& params, const MLPSpec& spec) {
  for (const auto& l : spec.layers())
    params.add(l.name, l.is_bias ? Tensor::zeros({l.fan_out}) : Tensor::zeros({l.fan_in, l.fan_out}));
}

// Uniform(-a, a) with a = sqrt(6/(fan_in+fan_out)); biases stay zero.  Draws
// are keyed by block name so layout changes elsewhere do not reshuffle values.
inline void init_mlp_params(ParamStore& params, const MLPSpec& spec, std::uint64_t seed) {
  for (const auto& l : spec.layers()) {
    if (l.is_bias) continue;
    Tensor& t = params.at(l.name);
    const double a = std::sqrt(6.0 / static_cast<double>(l.fan_in + l.fan_out));
    const std::uint64_t nh = rng::name_hash(l.name);
    for (std::size_t k = 0; k < t.numel(); ++k)
      t.v[k] = a * (2.0 * rng::uniform({seed, rng::kInit, nh, k}) - 1.0);
  }
}

// Binds parameter blocks to tape leaves on first use, so a tape only carries
// the blocks the objective actually touched.
class LeafBinder {
public:
  LeafBinder(Tape& tape, const ParamStore& params) : tape_(&tape), params_(&params) {}

  Var operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var v = tape_->leaf(params_->at(name));
    bound_.emplace(name, v);
    return v;
  }

  // Accumulates tape gradients of every bound block into grads (same layout
  // as the source store; untouched blocks keep whatever they held).
  void add_grads_into(ParamStore& grads) const {
    for (const auto& [name, var] : bound_) {
      Tensor& g = grads.at(name);
      const Tensor& tg = tape_->grad(var);
      for (std::size_t k = 0; k < g.numel(); ++k) g.v[k] += tg.v[k];
    }
  }

  Tape& tape() { return *tape_; }

private:
  Tape* tape_;
  const ParamStore* params_;
  std::map<std::string, Var> bound_;
};

// Forward pass for a [B, input_dim] batch; returns one Var per head.
inline std::map<std::string, Var> mlp_forward(Tape& t, LeafBinder& leaf, const MLPSpec& spec, Var input) {
  const Tensor& in = t.val(input);
  if (in.rank() != 2 || in.cols() != spec.input_dim)
    throw DimensionError(spec.prefix + " expects [B," + std::to_string(spec.input_dim) + "], got " + in.shape_str());
  Var h = input;
  for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
    Var a = t.add_rowvec(t.matmul(h, leaf(spec.prefix + "/W" + std::to_string(l))),
                         leaf(spec.prefix + "/b" + std::to_string(l)));
    h = t.tanh_(a);
  }
  std::map<std::string, Var> out;
  for (const HeadSpec& hd : spec.heads) {
    Var a = t.add_rowvec(t.matmul(h, leaf(spec.prefix + "/" + hd.name + "_W")),
                         leaf(spec.prefix + "/" + hd.name + "_b"));
    Var o = a;
    switch (hd.act) {
      case Act::Linear: break;
      case Act::Tanh: o = t.tanh_(a); break;
      case Act::SoftplusFloor: o = t.shift(t.softplus_(a), spec.variance_floor); break;
      case Act::LogSoftmax: o = t.log_softmax_rows(a); break;
    }
    t.val(o).ensure_finite(spec.prefix + "/" + hd.name);
    out.emplace(hd.name, o);
  }
  return out;
}

}  // namespace mvf
