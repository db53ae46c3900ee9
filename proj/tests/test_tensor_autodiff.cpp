#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "mvfusion/autodiff.hpp"
#include "mvfusion/rng.hpp"
#include "mvfusion/tensor.hpp"
#include "test_support.hpp"

using namespace mvf;
using mvftest::graph_grad_error;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t key, double lo = -1.5, double hi = 1.5) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (std::size_t k = 0; k < t.numel(); ++k)
    t.v[k] = lo + (hi - lo) * rng::uniform({key, 77, k});
  return t;
}

}  // namespace

TEST_CASE("tensor shape accessors and bounds") {
  Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m(1, 2) == 6.0);
  CHECK(m.numel() == 6);

  Tensor v = Tensor::vec({1.0, 2.0});
  CHECK(v.rank() == 1);
  CHECK_THROWS_AS(v.rows(), DimensionError);
  CHECK_THROWS_AS(Tensor::matrix(2, 2, {1.0}), DimensionError);

  Tensor bad = Tensor::vec({1.0, std::nan("")});
  CHECK_FALSE(bad.all_finite());
  CHECK_THROWS_AS(bad.ensure_finite("t"), NumericError);
}

TEST_CASE("counter rng reproducibility and independence") {
  CHECK(rng::uniform({1, 2, 3}) == rng::uniform({1, 2, 3}));
  CHECK(rng::uniform({1, 2, 3}) != rng::uniform({1, 2, 4}));
  CHECK(rng::normal({9, 1, 0}) == rng::normal({9, 1, 0}));

  // moments of the keyed normal stream
  double s = 0.0, s2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng::normal({123, 5, static_cast<std::uint64_t>(i)});
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(var - 1.0) < 0.05);

  auto p1 = rng::shuffled_indices(100, {7, 1});
  auto p2 = rng::shuffled_indices(100, {7, 1});
  auto p3 = rng::shuffled_indices(100, {7, 2});
  CHECK(p1 == p2);
  CHECK(p1 != p3);
  std::set<int> seen(p1.begin(), p1.end());
  CHECK(seen.size() == 100);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 99);
}

TEST_CASE("matmul forward value") {
  Tape t;
  Var a = t.leaf(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Var b = t.leaf(Tensor::matrix(3, 2, {7, 8, 9, 10, 11, 12}));
  Var c = t.matmul(a, b);
  const Tensor& C = t.val(c);
  CHECK(C(0, 0) == 58.0);
  CHECK(C(0, 1) == 64.0);
  CHECK(C(1, 0) == 139.0);
  CHECK(C(1, 1) == 154.0);
  CHECK_THROWS_AS(t.matmul(a, a), DimensionError);
}

TEST_CASE("gradients of arithmetic primitives match finite differences") {
  auto A = random_tensor({3, 4}, 1);
  auto B = random_tensor({4, 2}, 2);
  auto C = random_tensor({3, 4}, 3, 0.5, 2.0);
  auto row = random_tensor({4}, 4);

  CHECK(graph_grad_error([](Tape& t, const std::vector<Var>& in) {
          return t.sum(t.matmul(in[0], in[1]));
        }, {A, B}) < 1e-6);

  CHECK(graph_grad_error([](Tape& t, const std::vector<Var>& in) {
          return t.sum(t.mul(t.add(in[0], in[1]), t.sub(in[0], in[1])));
        }, {A, C}) < 1e-6);

  CHECK(graph_grad_error([](Tape& t, const std::vector<Var>& in) {
          return t.sum(t.div(in[0], in[1]));
        }, {A, C}) < 1e-6);

  CHECK(graph_grad_error([](Tape& t, const std::vector<Var>& in) {
          return t.sum(t.add_rowvec(in[0], in[1]));
        }, {A, row}) < 1e-6);

  CHECK(graph_grad_error([](Tape& t, const std::vector<Var>& in) {
          return t.mean(t.scale(t.shift(in[0], 0.7), -2.5));
        }, {A}) < 1e-6);

  CHECK(graph_grad_error([](Tape& t, const std::vector<Var>& in) {
          return t.sum(t.scale_by(in[0], t.element(in[1], 1)));
        }, {A, row}) < 1e-6);
}

TEST_CASE("gradients of nonlinearities match finite differences") {
  auto A = random_tensor({2, 5}, 11);
  auto P = random_tensor({2, 5}, 12, 0.3, 2.5);  // positive, for log/sqrt

  CHECK(graph_grad_error([](Tape& t, const std::vector<Var>& in) {
          return t.sum(t.tanh_(in[0]));
        }, {A}) < 1e-6);
  CHECK(graph_grad_error([](Tape& t, const std::vector<Var>& in) {
          return t.sum(t.softplus_(in[0]));
        }, {A}) < 1e-6);
  CHECK(graph_grad_error([](Tape& t, const std::vector<Var>& in) {
          return t.sum(t.exp_(in[0]));
        }, {A}) < 1e-6);
  CHECK(graph_grad_error([](Tape& t, const std::vector<Var>& in) {
          return t.sum(t.log_(in[0]));
        }, {P}) < 1e-6);
  CHECK(graph_grad_error([](Tape& t, const std::vector<Var>& in) {
          return t.sum(t.sqrt_(in[0]));
        }, {P}) < 1e-6);
  CHECK(graph_grad_error([](Tape& t, const std::vector<Var>& in) {
          return t.sum(t.square_(in[0]));
        }, {A}) < 1e-6);
}

TEST_CASE("gradients of reductions and structure ops match finite differences") {
  auto A = random_tensor({3, 4}, 21);
  auto B = random_tensor({3, 4}, 22);
  auto D = random_tensor({3, 4}, 23);
  auto L = random_tensor({3, 5}, 24);

  CHECK(graph_grad_error([](Tape& t, const std::vector<Var>& in) {
          return t.sum(t.square_(t.row_sum(in[0])));
        }, {A}) < 1e-6);

  CHECK(graph_grad_error([](Tape& t, const std::vector<Var>& in) {
          return t.sum(t.logsumexp({in[0], in[1], in[2]}));
        }, {A, B, D}) < 1e-6);

  CHECK(graph_grad_error([](Tape& t, const std::vector<Var>& in) {
          // weight the log-probabilities so every entry gets a distinct adjoint
          return t.sum(t.mul(t.log_softmax_rows(in[0]), in[1]));
        }, {L, random_tensor({3, 5}, 25)}) < 1e-6);

  CHECK(graph_grad_error([](Tape& t, const std::vector<Var>& in) {
          return t.sum(t.square_(t.concat_cols({in[0], in[1]})));
        }, {A, L}) < 1e-6);

  CHECK(graph_grad_error([](Tape& t, const std::vector<Var>& in) {
          return t.sum(t.square_(t.col(in[0], 2)));
        }, {A}) < 1e-6);

  CHECK(graph_grad_error([](Tape& t, const std::vector<Var>& in) {
          return t.sum(t.square_(t.select_cols(in[0], {1, 3, 0})));
        }, {A}) < 1e-6);

  CHECK(graph_grad_error([](Tape& t, const std::vector<Var>& in) {
          std::vector<Var> parts = {t.element(in[0], 0), t.element(in[0], 2)};
          return t.sum(t.exp_(t.concat_vec(parts)));
        }, {random_tensor({4}, 26)}) < 1e-6);
}

TEST_CASE("logsumexp is overflow safe") {
  Tape t;
  Var a = t.leaf(Tensor::vec({1000.0}));
  Var b = t.leaf(Tensor::vec({1000.0}));
  Var c = t.logsumexp({a, b});
  CHECK_THAT(t.val(c).v[0], Catch::Matchers::WithinAbs(1000.0 + std::log(2.0), 1e-9));
}

TEST_CASE("value reuse in a diamond graph accumulates both paths") {
  // f = sum(x*x) + sum(x)  =>  df/dx = 2x + 1
  Tape t;
  Var x = t.leaf(Tensor::vec({1.0, -2.0, 3.0}));
  Var f = t.add(t.sum(t.mul(x, x)), t.sum(x));
  t.backward(f);
  CHECK_THAT(t.grad(x)(0), Catch::Matchers::WithinAbs(3.0, 1e-12));
  CHECK_THAT(t.grad(x)(1), Catch::Matchers::WithinAbs(-3.0, 1e-12));
  CHECK_THAT(t.grad(x)(2), Catch::Matchers::WithinAbs(7.0, 1e-12));
}

TEST_CASE("backward contract violations") {
  Tape t;
  Var x = t.leaf(Tensor::vec({1.0, 2.0}));
  CHECK_THROWS_AS(t.backward(x), ContractError);

  Tape t2;
  Var y = t2.leaf(Tensor::vec({1.0}));
  Var s = t2.sum(y);
  t2.backward(s);
  CHECK_THROWS_AS(t2.backward(s), ContractError);

  Tape t3;
  CHECK_THROWS_AS(t3.val(Var{}), ContractError);
}

TEST_CASE("constants contribute no gradient") {
  Tape t;
  Var x = t.leaf(Tensor::vec({2.0}));
  Var c = t.constant(Tensor::vec({5.0}));
  Var f = t.sum(t.mul(x, c));
  t.backward(f);
  CHECK(t.grad(x)(0) == 5.0);
  CHECK(t.grad(c)(0) == 0.0);
}
