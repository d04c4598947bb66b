/* Copyright 2026 The EmbraceNet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <cmath>
#include <limits>

#include "doctest.h"
#include "embrace/autodiff.hpp"
#include "embrace/errors.hpp"
#include "grad_cases.hpp"
#include "oracles.hpp"

using namespace embrace;

namespace {

Tensord make(Shape s, std::vector<double> v) { return Tensord(std::move(s), std::move(v)); }

Tensord eval(const std::function<Var<double>(Graph<double>&)>& f) {
  Graph<double> g(false);
  return f(g).value();
}

}  // namespace

TEST_CASE("tensor rejects inconsistent data and zero dimensions") {
  CHECK_THROWS_AS(make({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensord(Shape{2, 0}), DimensionError);
  Tensord t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  t.set_requires_grad(true);
  CHECK(t.grad().size() == t.size());
  CHECK_THROWS_AS(t.reshaped({4}), DimensionError);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
}

TEST_CASE("matmul examples") {
  const auto a = make({2, 2}, {1, 2, 3, 4});
  const auto b = make({2, 1}, {5, 6});
  const auto eye = make({2, 2}, {1, 0, 0, 1});
  auto r = eval([&](Graph<double>& g) { return ag::matmul(g.constant(eye), g.constant(b)); });
  CHECK(r == b);
  r = eval([&](Graph<double>& g) { return ag::matmul(g.constant(a), g.constant(b)); });
  CHECK(r == make({2, 1}, {17, 39}));
  r = eval([&](Graph<double>& g) {
    return ag::matmul(g.constant(a), g.constant(Tensord({2, 3}, 0.0)));
  });
  CHECK(r == Tensord({2, 3}, 0.0));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Graph<double> g;
  try {
    ag::matmul(g.constant(Tensord({2, 3})), g.constant(Tensord({2, 3})));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("conv2d examples") {
  oracle::Rng rng(3);
  const auto x = oracle::random_tensor({1, 4, 5, 1}, rng);
  auto y = eval([&](Graph<double>& g) {
    return ag::conv2d(g.constant(x), g.constant(Tensord({1, 1, 1, 1}, 1.0)), Padding::kSame);
  });
  CHECK(y == x);

  const double v = 0.7;
  y = eval([&](Graph<double>& g) {
    return ag::conv2d(g.constant(Tensord({1, 5, 5, 1}, v)), g.constant(Tensord({3, 3, 1, 1}, 1.0)),
                      Padding::kValid);
  });
  CHECK(y.shape() == Shape{1, 3, 3, 1});
  for (double e : y.storage()) CHECK(e == doctest::Approx(9 * v).epsilon(1e-15));

  const auto x5 = oracle::random_tensor({1, 5, 5, 1}, rng);
  const auto k5 = oracle::random_tensor({5, 5, 1, 2}, rng);
  for (bool same : {true, false}) {
    y = eval([&](Graph<double>& g) {
      return ag::conv2d(g.constant(x5), g.constant(k5), same ? Padding::kSame : Padding::kValid);
    });
    const auto ref = oracle::conv2d(x5, k5, same);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - ref[i]) < 1e-10);
  }
}

TEST_CASE("conv2d matches the naive oracle on every shape up to 8x8x3x3") {
  oracle::Rng rng(11);
  for (int draw = 0; draw < 20; ++draw) {
    const std::size_t h = rng.between(1, 8), w = rng.between(1, 8);
    const std::size_t cin = rng.between(1, 3), cout = rng.between(1, 3);
    const std::size_t k = rng.bernoulli(0.5) ? 1 : 3;
    const bool same = rng.bernoulli(0.5) || h < k || w < k;
    const auto x = oracle::random_tensor({2, h, w, cin}, rng);
    const auto kern = oracle::random_tensor({k, k, cin, cout}, rng);
    const auto y = eval([&](Graph<double>& g) {
      return ag::conv2d(g.constant(x), g.constant(kern), same ? Padding::kSame : Padding::kValid);
    });
    const auto ref = oracle::conv2d(x, kern, same);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - ref[i]) < 1e-10);
  }
}

TEST_CASE("conv2d rejects oversized kernels and even kernels") {
  Graph<double> g;
  CHECK_THROWS_AS(ag::conv2d(g.constant(Tensord({1, 2, 2, 1})), g.constant(Tensord({3, 3, 1, 1})),
                             Padding::kValid),
                  DimensionError);
  CHECK_THROWS(ag::conv2d(g.constant(Tensord({1, 4, 4, 1})), g.constant(Tensord({2, 2, 1, 1})),
                          Padding::kSame));
  CHECK_THROWS_AS(ag::conv2d(g.constant(Tensord({1, 4, 4, 2})), g.constant(Tensord({3, 3, 1, 1})),
                             Padding::kSame),
                  DimensionError);
}

TEST_CASE("maxpool2d examples") {
  auto y = eval([](Graph<double>& g) {
    return ag::maxpool2d(g.constant(make({1, 2, 2, 1}, {1, 2, 3, 4})), 2, 2);
  });
  CHECK(y == make({1, 1, 1, 1}, {4}));
  y = eval([](Graph<double>& g) { return ag::maxpool2d(g.constant(Tensord({1, 4, 6, 2}, 3.25)), 2, 3); });
  CHECK(y == Tensord({1, 2, 2, 2}, 3.25));

  Graph<double> g0;
  CHECK_THROWS_AS(ag::maxpool2d(g0.constant(Tensord({1, 2, 2, 1})), 0, 2), ParameterError);

  // ceil mode: 3x3 with a 2x2 window gives 2x2
  y = eval([](Graph<double>& g) {
    return ag::maxpool2d(g.constant(make({1, 3, 3, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9})), 2, 2);
  });
  CHECK(y == make({1, 2, 2, 1}, {5, 6, 8, 9}));

  // gradient reaches the argmax only; ties go to the first occurrence
  Graph<double> g;
  auto x = g.variable(make({1, 2, 2, 1}, {7, 7, 1, 2}));
  g.backward(ag::sum(ag::maxpool2d(x, 2, 2)));
  const auto grad = g.grad_of(x);
  CHECK(grad[0] == 1.0);
  CHECK(grad[1] == 0.0);
  CHECK(grad[2] == 0.0);
  CHECK(grad[3] == 0.0);
}

TEST_CASE("activation examples") {
  auto y = eval([](Graph<double>& g) {
    return ag::activation(g.constant(make({3}, {-1, 0, 2})), Activation::kRelu);
  });
  CHECK(y == make({3}, {0, 0, 2}));
  y = eval([](Graph<double>& g) {
    return ag::activation(g.constant(make({1}, {0})), Activation::kSigmoid);
  });
  CHECK(y[0] == 0.5);
  CHECK_THROWS_AS(parse_activation("swish"), ParameterError);
  CHECK(parse_activation("tanh") == Activation::kTanh);

  oracle::Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const auto r = oracle::check_gradients(
        {oracle::random_tensor({6}, rng, -3, 3)},
        [](Graph<double>&, const std::vector<Var<double>>& x) {
          return ag::activation(x[0], Activation::kTanh);
        },
        rng, 1e-4);
    CHECK(r.max_rel_error < 1e-5);
  }
}

TEST_CASE("softmax cross-entropy examples") {
  std::vector<int> labels{3};
  auto y = eval([&](Graph<double>& g) {
    return ag::softmax_cross_entropy(g.constant(Tensord({1, 10}, 0.25)), std::span<const int>(labels));
  });
  CHECK(y[0] == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  labels = {0};
  y = eval([&](Graph<double>& g) {
    return ag::softmax_cross_entropy(g.constant(make({1, 3}, {10, 0, 0})), std::span<const int>(labels));
  });
  CHECK(y[0] == doctest::Approx(std::log1p(2 * std::exp(-10.0))).epsilon(1e-9));
  CHECK(y[0] == doctest::Approx(9.08e-5).epsilon(1e-3));

  labels = {3};
  Graph<double> g;
  CHECK_THROWS_AS(ag::softmax_cross_entropy(g.constant(Tensord({1, 3})), std::span<const int>(labels)),
                  DataError);
  labels = {-1};
  CHECK_THROWS_AS(ag::softmax_cross_entropy(g.constant(Tensord({1, 3})), std::span<const int>(labels)),
                  DataError);
}

TEST_CASE("backward examples") {
  {
    Graph<double> g;
    auto x = g.variable(Tensord({2, 3}, 0.3));
    g.backward(ag::sum(x));
    for (double v : g.grad_of(x)) CHECK(v == 1.0);
  }
  {
    Graph<double> g;
    auto x = g.variable(make({3}, {1, 2, 3}));
    g.backward(ag::sum(ag::mul(x, x)));
    const auto grad = g.grad_of(x);
    CHECK(grad[0] == 2.0);
    CHECK(grad[1] == 4.0);
    CHECK(grad[2] == 6.0);
  }
  {
    Graph<double> g;
    auto x = g.variable(Tensord({4}, -1.0));
    g.backward(ag::add(ag::sum(x), ag::sum(x)));
    for (double v : g.grad_of(x)) CHECK(v == 2.0);
  }
  {
    Graph<double> g;
    auto x = g.variable(Tensord({2}, 1.0));
    CHECK_THROWS_AS(g.backward(ag::scale(x, 2.0)), UsageError);
  }
}

TEST_CASE("backward accumulates into bound parameters") {
  Tensord w({2}, 1.0);
  w.set_requires_grad(true);
  for (int pass = 0; pass < 2; ++pass) {
    Graph<double> g;
    g.backward(ag::sum(ag::scale(g.param(w), 3.0)));
  }
  for (double v : w.grad()) CHECK(v == 6.0);
  w.zero_grad();
  for (double v : w.grad()) CHECK(v == 0.0);
}

TEST_CASE("graph nodes are recorded in topological order") {
  Graph<double> g;
  auto a = g.variable(Tensord({2, 2}, 1.0));
  auto b = g.variable(Tensord({2, 2}, 2.0));
  auto c = ag::matmul(a, ag::activation(b, Activation::kTanh));
  ag::sum(ag::add(c, a));
  for (std::size_t id = 0; id < g.size(); ++id) {
    for (std::size_t in : g.inputs(id)) CHECK(in < id);
  }
}

TEST_CASE("forward is deterministic") {
  oracle::Rng rng(9);
  const auto x = oracle::random_tensor({2, 6, 6, 2}, rng);
  const auto k = oracle::random_tensor({3, 3, 2, 4}, rng);
  auto run = [&] {
    return eval([&](Graph<double>& g) {
      return ag::maxpool2d(ag::activation(ag::conv2d(g.constant(x), g.constant(k), Padding::kSame),
                                          Activation::kRelu),
                           2, 2);
    });
  };
  CHECK(run() == run());
}

TEST_CASE("finite inputs give finite outputs") {
  oracle::Rng rng(4);
  for (const auto& c : oracle::gradient_cases()) {
    const auto inst = c.make(rng);
    Graph<double> g(false);
    std::vector<Var<double>> leaves;
    for (const auto& t : inst.inputs) leaves.push_back(g.constant(t));
    CHECK_MESSAGE(inst.fn(g, leaves).value().all_finite(), c.name);
  }
}

TEST_CASE("every differentiable op passes central finite differences") {
  oracle::Rng rng(2024);
  for (const auto& c : oracle::gradient_cases()) {
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const auto inst = c.make(rng);
      worst = std::max(worst, oracle::check_gradients(inst.inputs, inst.fn, rng).max_rel_error);
    }
    CHECK_MESSAGE(worst < 1e-4, c.name << " max relative error " << worst);
  }
}

TEST_CASE("softmax_rows and argmax_rows") {
  const auto p = softmax_rows(make({2, 3}, {0, 0, 0, 1000, 0, 1000}));
  CHECK(p[0] == doctest::Approx(1.0 / 3));
  CHECK(p[3] == doctest::Approx(0.5));
  CHECK(p[4] == 0.0);
  const auto idx = argmax_rows(make({2, 3}, {1, 3, 3, 5, 1, 2}));
  CHECK(idx == std::vector<int>{1, 0});
}

TEST_CASE("gemm honours transposition flags") {
  const std::vector<double> a{1, 2, 3, 4, 5, 6};  // 2x3
  const std::vector<double> b{1, 0, 2, 1, 0, 3};  // 3x2
  std::vector<double> c(4, 0.0);
  gemm<double>(false, false, 2, 2, 3, a.data(), b.data(), c.data(), false);
  CHECK(c == std::vector<double>{5, 11, 14, 23});
  // A^T (3x2 stored as 2x3) times A (2x3) -> 3x3
  std::vector<double> d(9, 0.0);
  gemm<double>(true, false, 3, 3, 2, a.data(), a.data(), d.data(), false);
  CHECK(d == std::vector<double>{17, 22, 27, 22, 29, 36, 27, 36, 45});
  gemm<double>(false, true, 2, 2, 3, a.data(), a.data(), c.data(), true);
  CHECK(c == std::vector<double>{19, 43, 46, 100});
}
