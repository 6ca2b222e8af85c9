#include <algorithm>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"
#include "taskbot/errors.hpp"
#include "taskbot/tensor.hpp"
#include "taskbot/tensor_io.hpp"

using namespace taskbot;
using tb_test::fd_max_rel_error;
using tb_test::project;
using tb_test::random_tensor;

namespace {

Tensor eval_const(const std::function<Var(Tape&)>& f) {
  Tape tape(false);
  return f(tape).value();
}

}  // namespace

TEST_CASE("tensor shape invariants") {
  Tensor t(Shape{2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{1, 1, 1}), DimensionError);
  t.set_requires_grad(true);
  CHECK(t.grad().size() == t.size());
  t.set_requires_grad(false);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("matmul examples") {
  const Tensor id = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  const Tensor b = Tensor::matrix(2, 2, {5, 6, 7, 8});
  CHECK(eval_const([&](Tape& t) { return matmul(t.constant(id), t.constant(a)); }) == a);
  CHECK(eval_const([&](Tape& t) { return matmul(t.constant(a), t.constant(b)); }) ==
        Tensor::matrix(2, 2, {19, 22, 43, 50}));
  Rng rng(3);
  const Tensor any = random_tensor({3, 4}, rng);
  CHECK(eval_const([&](Tape& t) { return matmul(t.constant(Tensor(Shape{2, 3})), t.constant(any)); }) ==
        Tensor(Shape{2, 4}));
}

TEST_CASE("matmul matches a triple loop") {
  Rng rng(5);
  const Tensor a = random_tensor({4, 7}, rng);
  const Tensor b = random_tensor({7, 3}, rng);
  const Tensor c = eval_const([&](Tape& t) { return matmul(t.constant(a), t.constant(b)); });
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 7; ++k) s += a.at(i, k) * b.at(k, j);
      CHECK(c.at(i, j) == doctest::Approx(s).epsilon(1e-12));
    }
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape tape(false);
  try {
    matmul(tape.constant(Tensor(Shape{2, 3})), tape.constant(Tensor(Shape{2, 3})));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3] x [2x3]") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  auto sm = [](std::vector<double> v) { return softmax(Tensor::vector(std::move(v))); };
  const Tensor half = sm({0, 0});
  CHECK(half[0] == doctest::Approx(0.5));
  CHECK(half[1] == doctest::Approx(0.5));
  const Tensor big = sm({1000, 1000, 1000});
  for (double p : big.data()) CHECK(p == doctest::Approx(1.0 / 3).epsilon(1e-12));
  const Tensor r = sm({1, 2, 3});
  CHECK(r[0] == doctest::Approx(0.09003).epsilon(1e-4));
  CHECK(r[1] == doctest::Approx(0.24473).epsilon(1e-4));
  CHECK(r[2] == doctest::Approx(0.66524).epsilon(1e-4));
  CHECK_THROWS_AS(sm({1, std::numeric_limits<double>::quiet_NaN()}), NumericError);
  CHECK_THROWS_AS(sm({std::numeric_limits<double>::infinity(), 0}), NumericError);
  Tape tape(false);
  CHECK_THROWS_AS(softmax(tape.constant(Tensor::vector({0, std::nan("")}))), NumericError);
}

TEST_CASE("softmax sums to one and is permutation-equivariant") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(1 + rng.below(20));
    for (auto& x : v) x = rng.uniform(-30, 30);
    const Tensor p = softmax(Tensor::vector(v));
    double s = 0;
    for (double x : p.data()) {
      CHECK(x > 0.0);
      s += x;
    }
    CHECK(std::abs(s - 1.0) < 1e-9);
    std::vector<std::size_t> perm(v.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<double> pv(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) pv[i] = v[perm[i]];
    const Tensor pp = softmax(Tensor::vector(pv));
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(pp[i] == doctest::Approx(p[perm[i]]).epsilon(1e-12));
  }
}

TEST_CASE("cross entropy examples") {
  const Tensor u3 = Tensor::vector({1.0 / 3, 1.0 / 3, 1.0 / 3});
  CHECK(cross_entropy(u3, 2) == doctest::Approx(std::log(3.0)));
  CHECK(cross_entropy(Tensor::vector({0, 1, 0}), 1) == 0.0);
  const Tensor u91 = Tensor::vector(std::vector<double>(91, 1.0 / 91));
  CHECK(cross_entropy(u91, 40) == doctest::Approx(4.5109).epsilon(1e-4));
  CHECK_THROWS_AS(cross_entropy(u3, 3), IndexError);

  Tape tape(false);
  const Var loss = softmax_cross_entropy(tape.constant(Tensor(Shape{2, 91})), {5, -1}, {1.0, 1.0});
  CHECK(loss.value().item() == doctest::Approx(std::log(91.0)).epsilon(1e-12));
  CHECK_THROWS_AS(softmax_cross_entropy(tape.constant(Tensor(Shape{1, 3})), {3}, {1.0}), IndexError);
}

TEST_CASE("backward examples") {
  Tensor w(Shape{2, 3}, 0.7);
  w.set_requires_grad(true);
  {
    Tape tape;
    tape.backward(sum(tape.leaf(w)));
  }
  for (double g : w.grad()) CHECK(g == 1.0);

  Tensor v = Tensor::vector({1, 2});
  v.set_requires_grad(true);
  {
    Tape tape;
    const Var x = tape.leaf(v);
    tape.backward(sum(mul(x, x)));
  }
  CHECK(v.grad()[0] == doctest::Approx(2.0));
  CHECK(v.grad()[1] == doctest::Approx(4.0));

  Tape tape;
  CHECK_THROWS_AS(tape.backward(tape.leaf(w)), ContractError);
}

TEST_CASE("backward visits nodes in reverse forward order") {
  Rng rng(2);
  Tensor a = random_tensor({2, 3}, rng);
  Tensor b = random_tensor({3, 2}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tape tape;
  const Var x = tape.leaf(a);
  const Var y = tape.leaf(b);
  const Var loss = sum(tanh(matmul(sigmoid(x), y)));
  tape.backward(loss);
  const auto& order = tape.last_backward_order();
  REQUIRE_FALSE(order.empty());
  CHECK(std::is_sorted(order.rbegin(), order.rend()));
  CHECK(order.front() == loss.id);
  CHECK(a.has_grad());
  CHECK(b.has_grad());
}

TEST_CASE("gradients accumulate across backward passes") {
  Tensor w = Tensor::vector({1, 2, 3});
  w.set_requires_grad(true);
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(sum(tape.leaf(w)));
  }
  for (double g : w.grad()) CHECK(g == 2.0);
  w.zero_grad();
  for (double g : w.grad()) CHECK(g == 0.0);
}

TEST_CASE("finite differences agree for every op") {
  Rng rng(7);
  const double tol = 1e-4;
  auto check = [&](std::vector<Tensor> in, const tb_test::Builder& f) {
    CHECK(fd_max_rel_error(in, f) < tol);
  };
  SUBCASE("matmul") {
    check({random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
          [](Tape& t, const std::vector<Var>& v) { return project(t, matmul(v[0], v[1])); });
  }
  SUBCASE("linear") {
    check({random_tensor({3, 4}, rng), random_tensor({5, 4}, rng), random_tensor({5}, rng)},
          [](Tape& t, const std::vector<Var>& v) { return project(t, linear(v[0], v[1], v[2])); });
    check({random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)},
          [](Tape& t, const std::vector<Var>& v) { return project(t, linear(v[0], v[1])); });
  }
  SUBCASE("add / add_row / mul / scale_rows") {
    check({random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
          [](Tape& t, const std::vector<Var>& v) { return project(t, add(v[0], v[1])); });
    check({random_tensor({3, 4}, rng), random_tensor({4}, rng)},
          [](Tape& t, const std::vector<Var>& v) { return project(t, add_row(v[0], v[1])); });
    check({random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
          [](Tape& t, const std::vector<Var>& v) { return project(t, mul(v[0], v[1])); });
    check({random_tensor({3, 4}, rng)},
          [](Tape& t, const std::vector<Var>& v) { return project(t, scale_rows(v[0], {0.5, -2.0, 0.0})); });
  }
  SUBCASE("sigmoid / tanh") {
    check({random_tensor({3, 5}, rng, 3.0)},
          [](Tape& t, const std::vector<Var>& v) { return project(t, sigmoid(v[0])); });
    check({random_tensor({3, 5}, rng, 3.0)},
          [](Tape& t, const std::vector<Var>& v) { return project(t, tanh(v[0])); });
  }
  SUBCASE("concat / slice / gather") {
    check({random_tensor({2, 3}, rng), random_tensor({2, 2}, rng)},
          [](Tape& t, const std::vector<Var>& v) { return project(t, concat_cols({v[0], v[1], v[0]})); });
    check({random_tensor({2, 3}, rng), random_tensor({1, 3}, rng)},
          [](Tape& t, const std::vector<Var>& v) { return project(t, concat_rows({v[0], v[1]})); });
    check({random_tensor({3, 6}, rng)},
          [](Tape& t, const std::vector<Var>& v) { return project(t, slice_cols(v[0], 1, 4)); });
    check({random_tensor({5, 2}, rng)},
          [](Tape& t, const std::vector<Var>& v) { return project(t, slice_rows(v[0], 2, 5)); });
    check({random_tensor({4, 3}, rng)},
          [](Tape& t, const std::vector<Var>& v) { return project(t, gather_rows(v[0], {3, 0, 3, 1})); });
  }
  SUBCASE("softmax / softmax_cross_entropy / sum") {
    check({random_tensor({3, 4}, rng, 2.0)},
          [](Tape& t, const std::vector<Var>& v) { return project(t, softmax(v[0])); });
    check({random_tensor({3, 4}, rng, 2.0)}, [](Tape&, const std::vector<Var>& v) {
      return softmax_cross_entropy(v[0], {2, -1, 0}, {1.0, 1.0, 0.3});
    });
    check({random_tensor({3, 4}, rng)}, [](Tape&, const std::vector<Var>& v) { return sum(v[0]); });
  }
  SUBCASE("two-layer MLP") {
    check({random_tensor({4, 6}, rng), random_tensor({5, 6}, rng, 0.5), random_tensor({5}, rng, 0.5),
           random_tensor({3, 5}, rng, 0.5), random_tensor({3}, rng, 0.5)},
          [](Tape&, const std::vector<Var>& v) {
            const Var h = tanh(linear(v[0], v[1], v[2]));
            return softmax_cross_entropy(linear(h, v[3], v[4]), {0, 2, 1, 1}, {1, 1, 1, 1});
          });
  }
}

TEST_CASE("corrupted backward rule is caught by finite differences") {
  Rng rng(8);
  std::vector<Tensor> in = {random_tensor({3, 4}, rng)};
  auto f = [](Tape& t, const std::vector<Var>& v) {
    t.corrupt_backward(Op::Tanh);
    return project(t, tanh(v[0]));
  };
  CHECK(fd_max_rel_error(in, f) > 1e-2);
}

TEST_CASE("forward results are bit-identical across runs") {
  Rng rng(9);
  const Tensor a = random_tensor({16, 33}, rng);
  const Tensor b = random_tensor({33, 17}, rng);
  auto run = [&] {
    Tape tape(false);
    return softmax(tanh(matmul(tape.constant(a), tape.constant(b)))).value();
  };
  const Tensor first = run();
  for (int i = 0; i < 3; ++i) CHECK(run() == first);
}

TEST_CASE("param file round trip") {
  Rng rng(1);
  ParamFile file;
  file.metadata = "{\"hello\": 1}";
  file.tensors.emplace_back("a", random_tensor({2, 3}, rng));
  file.tensors.emplace_back("b", random_tensor({4}, rng));
  file.tensors.emplace_back("c", Tensor::scalar(-0.125));
  const std::string bytes = encode_param_file(file);
  CHECK(bytes.substr(0, 8) == "TBPARAMS");
  const ParamFile back = decode_param_file(bytes);
  CHECK(back.metadata == file.metadata);
  REQUIRE(back.tensors.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.tensors[i].first == file.tensors[i].first);
    CHECK(back.tensors[i].second == file.tensors[i].second);
  }
  CHECK(encode_param_file(back) == bytes);
  CHECK_THROWS_AS(decode_param_file(bytes.substr(0, bytes.size() - 3)), ParseError);
  CHECK_THROWS_AS(decode_param_file("NOTPARAMS..."), ParseError);
}
