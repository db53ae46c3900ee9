#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mvfusion/errors.hpp"
#include "mvfusion/tensor.hpp"

namespace mvf {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<RowMat> mat_map(Tensor& t) {
  return {t.v.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
inline Eigen::Map<const RowMat> mat_cmap(const Tensor& t) {
  return {t.v.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

// Handle into a Tape.  Default-constructed handles are invalid and reject use.
struct Var {
  int i = -1;
  bool valid() const { return i >= 0; }
};

// Reverse-mode tape.  Nodes are recorded in evaluation order; backward() walks
// them in reverse, so creation order is already a valid topological order.
// One backward pass per tape.
class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }

  Var leaf(Tensor value, bool needs_grad = true) {
    return push(std::move(value), needs_grad, {});
  }
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var constant_scalar(double x) { return constant(Tensor::scalar(x)); }

  const Tensor& val(Var x) const { return node(x).val; }
  const Tensor& grad(Var x) const { return node(x).grad; }

  void backward(Var loss) {
    Node& l = node(loss);
    if (l.val.numel() != 1) throw ContractError("backward on non-scalar of shape " + l.val.shape_str());
    if (ran_backward_) throw ContractError("backward called twice on one tape");
    ran_backward_ = true;
    l.grad.v[0] = 1.0;
    for (std::size_t k = nodes_.size(); k-- > 0;) {
      Node& n = nodes_[k];
      if (!n.back || !n.needs_grad) continue;
      bool live = false;
      for (double g : n.grad.v)
        if (g != 0.0) { live = true; break; }
      if (live) n.back(*this);
    }
  }

  // ---- arithmetic ----

  Var matmul(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
      throw DimensionError("matmul " + A.shape_str() + " * " + B.shape_str());
    Tensor C = Tensor::zeros({A.rows(), B.cols()});
    mat_map(C).noalias() = mat_cmap(A) * mat_cmap(B);
    return push(std::move(C), needs(a) || needs(b), [a, b](Tape& t) {
      Var self = t.last_;
      const Tensor& gC = t.node(self).grad;
      if (t.needs(a))
        mat_map(t.node(a).grad).noalias() += mat_cmap(gC) * mat_cmap(t.val(b)).transpose();
      if (t.needs(b))
        mat_map(t.node(b).grad).noalias() += mat_cmap(t.val(a)).transpose() * mat_cmap(gC);
    });
  }

  Var add(Var a, Var b) {
    return binary(a, b, [](double x, double y) { return x + y; },
                  [](Tape& t, Var aa, Var bb, Var self) {
                    const Tensor& g = t.node(self).grad;
                    t.accum(aa, g);
                    t.accum(bb, g);
                  });
  }

  Var sub(Var a, Var b) {
    return binary(a, b, [](double x, double y) { return x - y; },
                  [](Tape& t, Var aa, Var bb, Var self) {
                    const Tensor& g = t.node(self).grad;
                    t.accum(aa, g);
                    if (t.needs(bb)) {
                      Tensor& gb = t.node(bb).grad;
                      for (std::size_t k = 0; k < g.numel(); ++k) gb.v[k] -= g.v[k];
                    }
                  });
  }

  Var mul(Var a, Var b) {
    return binary(a, b, [](double x, double y) { return x * y; },
                  [](Tape& t, Var aa, Var bb, Var self) {
                    const Tensor& g = t.node(self).grad;
                    if (t.needs(aa)) {
                      Tensor& ga = t.node(aa).grad;
                      const Tensor& vb = t.val(bb);
                      for (std::size_t k = 0; k < g.numel(); ++k) ga.v[k] += g.v[k] * vb.v[k];
                    }
                    if (t.needs(bb)) {
                      Tensor& gb = t.node(bb).grad;
                      const Tensor& va = t.val(aa);
                      for (std::size_t k = 0; k < g.numel(); ++k) gb.v[k] += g.v[k] * va.v[k];
                    }
                  });
  }

  Var div(Var a, Var b) {
    return binary(a, b, [](double x, double y) { return x / y; },
                  [](Tape& t, Var aa, Var bb, Var self) {
                    const Tensor& g = t.node(self).grad;
                    const Tensor& vb = t.val(bb);
                    const Tensor& vc = t.val(self);
                    if (t.needs(aa)) {
                      Tensor& ga = t.node(aa).grad;
                      for (std::size_t k = 0; k < g.numel(); ++k) ga.v[k] += g.v[k] / vb.v[k];
                    }
                    if (t.needs(bb)) {
                      Tensor& gb = t.node(bb).grad;
                      for (std::size_t k = 0; k < g.numel(); ++k)
                        gb.v[k] -= g.v[k] * vc.v[k] / vb.v[k];
                    }
                  });
  }

  // [m,n] plus length-n row vector, broadcast over rows (bias add).
  Var add_rowvec(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (A.rank() != 2 || B.rank() != 1 || A.cols() != B.numel())
      throw DimensionError("add_rowvec " + A.shape_str() + " + " + B.shape_str());
    Tensor C = A;
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < A.cols(); ++j) C(i, j) += B(j);
    return push(std::move(C), needs(a) || needs(b), [a, b](Tape& t) {
      Var self = t.last_;
      const Tensor& g = t.node(self).grad;
      t.accum(a, g);
      if (t.needs(b)) {
        Tensor& gb = t.node(b).grad;
        const std::size_t m = g.rows(), n = g.cols();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb(j) += g(i, j);
      }
    });
  }

  Var scale(Var a, double c) {
    Tensor C = val(a);
    for (double& x : C.v) x *= c;
    return push(std::move(C), needs(a), [a, c](Tape& t) {
      Var self = t.last_;
      const Tensor& g = t.node(self).grad;
      Tensor& ga = t.node(a).grad;
      for (std::size_t k = 0; k < g.numel(); ++k) ga.v[k] += c * g.v[k];
    });
  }

  Var neg(Var a) { return scale(a, -1.0); }

  Var shift(Var a, double c) {
    Tensor C = val(a);
    for (double& x : C.v) x += c;
    return push(std::move(C), needs(a), [a](Tape& t) { t.accum(a, t.node(t.last_).grad); });
  }

  // Broadcast add of a scalar Var over all elements of a.
  Var add_scalar(Var a, Var s) {
    const Tensor& S = val(s);
    if (S.numel() != 1) throw DimensionError("add_scalar expects scalar, got " + S.shape_str());
    Tensor C = val(a);
    const double sv = S.v[0];
    for (double& x : C.v) x += sv;
    return push(std::move(C), needs(a) || needs(s), [a, s](Tape& t) {
      Var self = t.last_;
      const Tensor& g = t.node(self).grad;
      t.accum(a, g);
      if (t.needs(s)) {
        double acc = 0.0;
        for (double x : g.v) acc += x;
        t.node(s).grad.v[0] += acc;
      }
    });
  }

  // Elementwise product with a scalar Var, broadcast over all of a.
  Var scale_by(Var a, Var s) {
    const Tensor& S = val(s);
    if (S.numel() != 1) throw DimensionError("scale_by expects scalar, got " + S.shape_str());
    Tensor C = val(a);
    const double sv = S.v[0];
    for (double& x : C.v) x *= sv;
    return push(std::move(C), needs(a) || needs(s), [a, s](Tape& t) {
      Var self = t.last_;
      const Tensor& g = t.node(self).grad;
      if (t.needs(a)) {
        const double sv = t.val(s).v[0];
        Tensor& ga = t.node(a).grad;
        for (std::size_t k = 0; k < g.numel(); ++k) ga.v[k] += sv * g.v[k];
      }
      if (t.needs(s)) {
        const Tensor& va = t.val(a);
        double acc = 0.0;
        for (std::size_t k = 0; k < g.numel(); ++k) acc += g.v[k] * va.v[k];
        t.node(s).grad.v[0] += acc;
      }
    });
  }

  // ---- elementwise nonlinearities ----

  Var tanh_(Var a) {
    Tensor C = val(a);
    for (double& x : C.v) x = std::tanh(x);
    return push(std::move(C), needs(a), [a](Tape& t) {
      Var self = t.last_;
      const Tensor& g = t.node(self).grad;
      const Tensor& c = t.val(self);
      Tensor& ga = t.node(a).grad;
      for (std::size_t k = 0; k < g.numel(); ++k) ga.v[k] += g.v[k] * (1.0 - c.v[k] * c.v[k]);
    });
  }

  Var softplus_(Var a) {
    Tensor C = val(a);
    for (double& x : C.v) x = softplus_scalar(x);
    return push(std::move(C), needs(a), [a](Tape& t) {
      Var self = t.last_;
      const Tensor& g = t.node(self).grad;
      const Tensor& va = t.val(a);
      Tensor& ga = t.node(a).grad;
      for (std::size_t k = 0; k < g.numel(); ++k) ga.v[k] += g.v[k] * sigmoid_scalar(va.v[k]);
    });
  }

  Var exp_(Var a) {
    Tensor C = val(a);
    for (double& x : C.v) x = std::exp(x);
    return push(std::move(C), needs(a), [a](Tape& t) {
      Var self = t.last_;
      const Tensor& g = t.node(self).grad;
      const Tensor& c = t.val(self);
      Tensor& ga = t.node(a).grad;
      for (std::size_t k = 0; k < g.numel(); ++k) ga.v[k] += g.v[k] * c.v[k];
    });
  }

  Var log_(Var a) {
    Tensor C = val(a);
    for (double& x : C.v) x = std::log(x);
    return push(std::move(C), needs(a), [a](Tape& t) {
      Var self = t.last_;
      const Tensor& g = t.node(self).grad;
      const Tensor& va = t.val(a);
      Tensor& ga = t.node(a).grad;
      for (std::size_t k = 0; k < g.numel(); ++k) ga.v[k] += g.v[k] / va.v[k];
    });
  }

  Var sqrt_(Var a) {
    Tensor C = val(a);
    for (double& x : C.v) x = std::sqrt(x);
    return push(std::move(C), needs(a), [a](Tape& t) {
      Var self = t.last_;
      const Tensor& g = t.node(self).grad;
      const Tensor& c = t.val(self);
      Tensor& ga = t.node(a).grad;
      for (std::size_t k = 0; k < g.numel(); ++k) ga.v[k] += g.v[k] * 0.5 / c.v[k];
    });
  }

  Var square_(Var a) {
    Tensor C = val(a);
    for (double& x : C.v) x *= x;
    return push(std::move(C), needs(a), [a](Tape& t) {
      Var self = t.last_;
      const Tensor& g = t.node(self).grad;
      const Tensor& va = t.val(a);
      Tensor& ga = t.node(a).grad;
      for (std::size_t k = 0; k < g.numel(); ++k) ga.v[k] += 2.0 * g.v[k] * va.v[k];
    });
  }

  // ---- reductions and structure ----

  Var sum(Var a) {
    double s = 0.0;
    for (double x : val(a).v) s += x;
    return push(Tensor::scalar(s), needs(a), [a](Tape& t) {
      const double g = t.node(t.last_).grad.v[0];
      Tensor& ga = t.node(a).grad;
      for (double& x : ga.v) x += g;
    });
  }

  Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(val(a).numel())); }

  Var row_sum(Var a) {
    const Tensor& A = val(a);
    if (A.rank() != 2) throw DimensionError("row_sum on " + A.shape_str());
    Tensor C = Tensor::zeros({A.rows()});
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < A.cols(); ++j) C(i) += A(i, j);
    return push(std::move(C), needs(a), [a](Tape& t) {
      Var self = t.last_;
      const Tensor& g = t.node(self).grad;
      Tensor& ga = t.node(a).grad;
      const std::size_t m = ga.rows(), n = ga.cols();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga(i, j) += g(i);
    });
  }

  // Elementwise log(sum_k exp(x_k)) over a list of same-shape tensors,
  // computed against the running max so no exp overflows.
  Var logsumexp(const std::vector<Var>& xs) {
    if (xs.empty()) throw ContractError("logsumexp of empty list");
    const Tensor& first = val(xs[0]);
    for (Var x : xs)
      if (!val(x).same_shape(first))
        throw DimensionError("logsumexp shape mismatch " + val(x).shape_str());
    const std::size_t n = first.numel();
    Tensor C = first;
    for (std::size_t k = 0; k < n; ++k) {
      double m = val(xs[0]).v[k];
      for (Var x : xs) m = std::max(m, val(x).v[k]);
      double s = 0.0;
      for (Var x : xs) s += std::exp(val(x).v[k] - m);
      C.v[k] = m + std::log(s);
    }
    bool ng = false;
    for (Var x : xs) ng = ng || needs(x);
    std::vector<Var> inputs(xs);
    return push(std::move(C), ng, [inputs](Tape& t) {
      Var self = t.last_;
      const Tensor& g = t.node(self).grad;
      const Tensor& c = t.val(self);
      for (Var x : inputs) {
        if (!t.needs(x)) continue;
        Tensor& gx = t.node(x).grad;
        const Tensor& vx = t.val(x);
        for (std::size_t k = 0; k < g.numel(); ++k)
          gx.v[k] += g.v[k] * std::exp(vx.v[k] - c.v[k]);
      }
    });
  }

  // Row-wise log softmax of [m,K].
  Var log_softmax_rows(Var a) {
    const Tensor& A = val(a);
    if (A.rank() != 2) throw DimensionError("log_softmax_rows on " + A.shape_str());
    Tensor C = A;
    for (std::size_t i = 0; i < A.rows(); ++i) {
      double m = A(i, 0);
      for (std::size_t j = 1; j < A.cols(); ++j) m = std::max(m, A(i, j));
      double s = 0.0;
      for (std::size_t j = 0; j < A.cols(); ++j) s += std::exp(A(i, j) - m);
      const double lse = m + std::log(s);
      for (std::size_t j = 0; j < A.cols(); ++j) C(i, j) = A(i, j) - lse;
    }
    return push(std::move(C), needs(a), [a](Tape& t) {
      Var self = t.last_;
      const Tensor& g = t.node(self).grad;
      const Tensor& c = t.val(self);
      Tensor& ga = t.node(a).grad;
      const std::size_t m = g.rows(), n = g.cols();
      for (std::size_t i = 0; i < m; ++i) {
        double rs = 0.0;
        for (std::size_t j = 0; j < n; ++j) rs += g(i, j);
        for (std::size_t j = 0; j < n; ++j) ga(i, j) += g(i, j) - std::exp(c.v[i * n + j]) * rs;
      }
    });
  }

  // Column-wise concatenation of [m,c_i] blocks.
  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat_cols of empty list");
    const std::size_t m = val(parts[0]).rows();
    std::size_t total = 0;
    bool ng = false;
    for (Var p : parts) {
      if (val(p).rank() != 2 || val(p).rows() != m)
        throw DimensionError("concat_cols row mismatch " + val(p).shape_str());
      total += val(p).cols();
      ng = ng || needs(p);
    }
    Tensor C = Tensor::zeros({m, total});
    std::size_t off = 0;
    for (Var p : parts) {
      const Tensor& P = val(p);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < P.cols(); ++j) C(i, off + j) = P(i, j);
      off += P.cols();
    }
    std::vector<Var> inputs(parts);
    return push(std::move(C), ng, [inputs](Tape& t) {
      Var self = t.last_;
      const Tensor& g = t.node(self).grad;
      std::size_t off = 0;
      for (Var p : inputs) {
        Tensor& gp = t.node(p).grad;
        const std::size_t pm = gp.rows(), pc = gp.cols();
        if (t.needs(p))
          for (std::size_t i = 0; i < pm; ++i)
            for (std::size_t j = 0; j < pc; ++j) gp(i, j) += g(i, off + j);
        off += pc;
      }
    });
  }

  // Concatenation of rank-1 pieces into one rank-1 vector.
  Var concat_vec(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat_vec of empty list");
    std::size_t total = 0;
    bool ng = false;
    for (Var p : parts) {
      if (val(p).rank() != 1) throw DimensionError("concat_vec on " + val(p).shape_str());
      total += val(p).numel();
      ng = ng || needs(p);
    }
    Tensor C = Tensor::zeros({total});
    std::size_t off = 0;
    for (Var p : parts)
      for (double x : val(p).v) C.v[off++] = x;
    std::vector<Var> inputs(parts);
    return push(std::move(C), ng, [inputs](Tape& t) {
      const Tensor& g = t.node(t.last_).grad;
      std::size_t off = 0;
      for (Var p : inputs) {
        Tensor& gp = t.node(p).grad;
        if (t.needs(p))
          for (std::size_t k = 0; k < gp.numel(); ++k) gp.v[k] += g.v[off + k];
        off += gp.numel();
      }
    });
  }

  Var element(Var a, std::size_t k) {
    const Tensor& A = val(a);
    if (k >= A.numel()) throw DimensionError("element " + std::to_string(k) + " of " + A.shape_str());
    return push(Tensor::scalar(A.v[k]), needs(a), [a, k](Tape& t) {
      t.node(a).grad.v[k] += t.node(t.last_).grad.v[0];
    });
  }

  // Column j of [m,n] as a length-m vector.
  Var col(Var a, std::size_t j) {
    const Tensor& A = val(a);
    if (A.rank() != 2 || j >= A.cols()) throw DimensionError("col " + std::to_string(j) + " of " + A.shape_str());
    Tensor C = Tensor::zeros({A.rows()});
    for (std::size_t i = 0; i < A.rows(); ++i) C(i) = A(i, j);
    return push(std::move(C), needs(a), [a, j](Tape& t) {
      const Tensor& g = t.node(t.last_).grad;
      Tensor& ga = t.node(a).grad;
      for (std::size_t i = 0; i < g.numel(); ++i) ga(i, j) += g(i);
    });
  }

  // Per-row gather: out[i] = A[i, idx[i]].
  Var select_cols(Var a, const std::vector<int>& idx) {
    const Tensor& A = val(a);
    if (A.rank() != 2 || idx.size() != A.rows())
      throw DimensionError("select_cols index count " + std::to_string(idx.size()) + " for " + A.shape_str());
    Tensor C = Tensor::zeros({A.rows()});
    for (std::size_t i = 0; i < A.rows(); ++i) {
      if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= A.cols())
        throw DimensionError("select_cols index " + std::to_string(idx[i]) + " out of range");
      C(i) = A(i, static_cast<std::size_t>(idx[i]));
    }
    std::vector<int> ix(idx);
    return push(std::move(C), needs(a), [a, ix](Tape& t) {
      const Tensor& g = t.node(t.last_).grad;
      Tensor& ga = t.node(a).grad;
      for (std::size_t i = 0; i < g.numel(); ++i) ga(i, static_cast<std::size_t>(ix[i])) += g(i);
    });
  }

  static double softplus_scalar(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  }
  static double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }

private:
  struct Node {
    Tensor val;
    Tensor grad;
    bool needs_grad = false;
    std::function<void(Tape&)> back;
  };

  bool needs(Var x) const { return node(x).needs_grad; }

  void accum(Var x, const Tensor& g) {
    if (!needs(x)) return;
    Tensor& gx = node(x).grad;
    for (std::size_t k = 0; k < g.numel(); ++k) gx.v[k] += g.v[k];
  }

  Node& node(Var x) {
    if (!x.valid() || static_cast<std::size_t>(x.i) >= nodes_.size())
      throw ContractError("invalid tape handle");
    return nodes_[static_cast<std::size_t>(x.i)];
  }
  const Node& node(Var x) const {
    if (!x.valid() || static_cast<std::size_t>(x.i) >= nodes_.size())
      throw ContractError("invalid tape handle");
    return nodes_[static_cast<std::size_t>(x.i)];
  }

  template <class FwdOp, class BackOp>
  Var binary(Var a, Var b, FwdOp fwd, BackOp bk) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (!A.same_shape(B))
      throw DimensionError("elementwise op on " + A.shape_str() + " vs " + B.shape_str());
    Tensor C = A;
    for (std::size_t k = 0; k < C.numel(); ++k) C.v[k] = fwd(A.v[k], B.v[k]);
    return push(std::move(C), needs(a) || needs(b),
                [a, b, bk](Tape& t) { bk(t, a, b, t.last_); });
  }

  Var push(Tensor val, bool needs_grad, std::function<void(Tape&)> back) {
    Node n;
    n.grad = Tensor::zeros(val.shape);
    n.val = std::move(val);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    Var v{static_cast<int>(nodes_.size() - 1)};
    // Closures look their own node up through last_ captured at run time; the
    // node vector may reallocate between creation and backward.
    if (needs_grad && back) {
      nodes_.back().back = [v, back](Tape& t) {
        t.last_ = v;
        back(t);
      };
    }
    return v;
  }

  std::vector<Node> nodes_;
  Var last_;
  bool ran_backward_ = false;
};

}  // namespace mvf
