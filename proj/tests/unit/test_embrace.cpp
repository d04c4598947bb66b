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
#include "embrace/embrace.hpp"
#include "embrace/errors.hpp"
#include "embrace/layers.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace embrace;

namespace {

std::vector<double> frequencies(const SelectionMatrix& r) {
  std::vector<double> f(r.modalities(), 0.0);
  for (std::size_t i = 0; i < r.rows(); ++i) f[r.selected(i)] += 1.0;
  for (auto& v : f) v /= static_cast<double>(r.rows());
  return f;
}

}  // namespace

TEST_CASE("embrace config validation") {
  auto cfg = EmbraceConfig::uniform(16, 4);
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.p == std::vector<double>(4, 0.25));
  cfg.p = {0.5, 0.5, 0.5, -0.5};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.p = {0.3, 0.3, 0.3, 0.3};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = EmbraceConfig::uniform(0, 2);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(parse_inference_mode("stochastic") == InferenceMode::kStochastic);
  CHECK_THROWS_AS(parse_inference_mode("mode"), ConfigError);
  CHECK(ModalityDropout::parse("single:0.5").kind == ModalityDropout::Kind::kSingle);
  CHECK(ModalityDropout::parse("independent:0.25").rate == 0.25);
  CHECK(ModalityDropout::parse("none").kind == ModalityDropout::Kind::kNone);
  CHECK(ModalityDropout::parse("single:0.5").str() == "single:0.5");
  CHECK_THROWS_AS(ModalityDropout::parse("single:1.5"), ConfigError);
  CHECK_THROWS_AS(ModalityDropout::parse("all:0.5"), ConfigError);
}

TEST_CASE("dock") {
  Rng rng(1);
  auto layer = DenseLayer<double>::create(3, 3, Activation::kRelu, rng);
  {
    for (auto& v : layer.weights.storage()) v = rng.normal();
    Graph<double> g(false);
    const auto d = dock(g, g.constant(Tensord({2, 3}, 0.0)), layer, 3).value();
    CHECK(d == Tensord({2, 3}, 0.0));
  }
  {
    layer.weights = Tensord({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
    const Tensord x({1, 3}, std::vector<double>{0.5, 0.0, 2.0});
    Graph<double> g(false);
    CHECK(dock(g, g.constant(x), layer, 3).value() == x);
  }
  {
    auto l = DenseLayer<double>::create(4, 5, Activation::kRelu, rng);
    for (auto& v : l.bias.storage()) v = rng.normal();
    const auto x = oracle::random_tensor({3, 4}, rng);
    Graph<double> g(false);
    const auto d = dock(g, g.constant(x), l, 5).value();
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t j = 0; j < 5; ++j) {
        double z = l.bias[j];
        for (std::size_t i = 0; i < 4; ++i) z += x.at(b, i) * l.weights.at(i, j);
        CHECK(d.at(b, j) == doctest::Approx(std::max(z, 0.0)).epsilon(1e-14));
      }
    Graph<double> g2;
    CHECK_THROWS_AS(dock(g2, g2.constant(x), l, 6), ConfigError);
  }
}

TEST_CASE("adjust_probabilities") {
  const std::vector<double> uniform(4, 0.25);
  CHECK(adjust_probabilities(uniform, {1, 1, 1, 1}) == uniform);

  const std::vector<double> p{0.2, 0.3, 0.5};
  const auto ph = adjust_probabilities(p, {1, 0, 1});
  CHECK(ph[0] == doctest::Approx(2.0 / 7).epsilon(1e-15));
  CHECK(ph[1] == 0.0);
  CHECK(ph[2] == doctest::Approx(5.0 / 7).epsilon(1e-15));

  for (std::size_t k = 0; k < 3; ++k) {
    PresenceVector u(3, 0);
    u[k] = 1;
    const auto one = adjust_probabilities(p, u);
    for (std::size_t j = 0; j < 3; ++j) CHECK(one[j] == (j == k ? 1.0 : 0.0));
  }

  CHECK_THROWS_AS(adjust_probabilities(p, {0, 0, 0}), UnrecoverableInputError);
  CHECK_THROWS_AS(adjust_probabilities(std::vector<double>{0.0, 1.0}, {1, 0}),
                  UnrecoverableInputError);

  // idempotent
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> q(5);
    double s = 0.0;
    for (auto& v : q) s += v = rng.uniform(0.01, 1.0);
    for (auto& v : q) v /= s;
    PresenceVector u(5);
    for (auto& b : u) b = rng.bernoulli(0.6);
    u[rng.index(5)] = 1;
    const auto once = adjust_probabilities(q, u);
    const auto twice = adjust_probabilities(once, u);
    for (std::size_t k = 0; k < 5; ++k) CHECK(std::abs(twice[k] - once[k]) <= 1e-15);
    double total = 0.0;
    for (double v : once) total += v;
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("sample_selection") {
  Rng rng(3);
  const auto degenerate = sample_selection(std::vector<double>{0, 1, 0}, 500, rng);
  for (std::size_t i = 0; i < degenerate.rows(); ++i) CHECK(degenerate.selected(i) == 1);

  const auto half = sample_selection(std::vector<double>{0.5, 0.5}, 100000, rng);
  CHECK(std::abs(frequencies(half)[0] - 0.5) < 0.01);

  const auto r = sample_selection(std::vector<double>{0.1, 0.6, 0.3}, 1000, rng);
  for (std::size_t i = 0; i < r.rows(); ++i) {
    int ones = 0;
    for (std::size_t k = 0; k < 3; ++k) ones += r(i, k);
    CHECK(ones == 1);
  }
}

TEST_CASE("embracement sampling law") {
  Rng rng(4);
  const std::vector<double> ph{0.2, 0.3, 0.5};
  const auto r = sample_selection(ph, 100000, rng);
  const auto f = frequencies(r);
  for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(f[k] - ph[k]) < 0.01);
}

TEST_CASE("embrace examples") {
  const std::vector<Tensord> d{Tensord({2}, std::vector<double>{1, 2}),
                               Tensord({2}, std::vector<double>{10, 20})};
  SelectionMatrix r(2, 2);
  r.select(0, 0);
  r.select(1, 1);
  CHECK(embrace<double>(d, r) == Tensord({2}, std::vector<double>{1, 20}));

  Rng rng(5);
  std::vector<Tensord> many;
  for (int k = 0; k < 3; ++k) many.push_back(oracle::random_tensor({6}, rng));
  SelectionMatrix first(6, 3);
  for (std::size_t i = 0; i < 6; ++i) first.select(i, i == 3 ? 0 : rng.index(3));
  CHECK(embrace<double>(many, first)[3] == many[0][3]);

  const std::vector<Tensord> single{oracle::random_tensor({5}, rng)};
  CHECK(embrace<double>(single, sample_selection(std::vector<double>{1.0}, 5, rng)) == single[0]);

  const std::vector<Tensord> bad{Tensord({2}), Tensord({3})};
  CHECK_THROWS_AS(embrace<double>(bad, SelectionMatrix(2, 2)), UsageError);
}

TEST_CASE("embrace output width is c for any m") {
  Rng rng(6);
  for (std::size_t m = 1; m <= 6; ++m) {
    std::vector<Tensord> d;
    for (std::size_t k = 0; k < m; ++k) d.push_back(oracle::random_tensor({9}, rng));
    std::vector<double> p(m, 1.0 / m);
    CHECK(embrace<double>(d, sample_selection(p, 9, rng)).size() == 9);
    CHECK(embrace_expected<double>(d, p).size() == 9);
  }
}

TEST_CASE("embrace_expected") {
  Rng rng(7);
  std::vector<Tensord> d{oracle::random_tensor({4}, rng), oracle::random_tensor({4}, rng)};
  CHECK(embrace_expected<double>(d, std::vector<double>{0, 1}) == d[1]);
  const std::vector<Tensord> e{Tensord({2}, std::vector<double>{2, 0}),
                               Tensord({2}, std::vector<double>{0, 2})};
  CHECK(embrace_expected<double>(e, std::vector<double>{0.5, 0.5}) ==
        Tensord({2}, std::vector<double>{1, 1}));

  // Monte Carlo mean of stochastic draws
  std::vector<Tensord> pos;
  for (int k = 0; k < 3; ++k) pos.push_back(oracle::random_tensor({4}, rng, 0.5, 2.0));
  const std::vector<double> ph{0.2, 0.3, 0.5};
  std::vector<double> mean(4, 0.0);
  const int draws = 100000;
  for (int t = 0; t < draws; ++t) {
    const auto s = embrace<double>(pos, sample_selection(ph, 4, rng));
    for (std::size_t i = 0; i < 4; ++i) mean[i] += s[i] / draws;
  }
  const auto ex = embrace_expected<double>(pos, ph);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(mean[i] - ex[i]) / ex[i] < 0.01);
}

TEST_CASE("stochastic embrace routes gradient to the selected modality only") {
  Rng rng(8);
  const std::size_t B = 3, c = 10, m = 3;
  const std::vector<PresenceVector> presence(B, PresenceVector(m, 1));
  const auto w = selection_weights<double>(std::vector<double>(m, 1.0 / m), presence, c,
                                           InferenceMode::kStochastic, rng);
  Graph<double> g;
  std::vector<Var<double>> d;
  for (std::size_t k = 0; k < m; ++k) d.push_back(g.variable(oracle::random_tensor({B, c}, rng)));
  g.backward(ag::sum(ag::embrace<double>(d, w)));
  for (std::size_t k = 0; k < m; ++k) {
    const auto grad = g.grad_of(d[k]);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < c; ++i) {
        const double sel = w[(b * c + i) * m + k];
        CHECK((sel == 1.0 || sel == 0.0));
        CHECK(grad[b * c + i] == sel);
      }
  }
}

TEST_CASE("selection weights zero absent modalities in both modes") {
  Rng rng(9);
  const std::vector<double> p{0.2, 0.3, 0.5};
  const std::vector<PresenceVector> presence{{1, 0, 1}, {0, 1, 0}};
  for (auto mode : {InferenceMode::kExpected, InferenceMode::kStochastic}) {
    const auto w = selection_weights<double>(p, presence, 6, mode, rng);
    CHECK(w.shape() == Shape{2, 6, 3});
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < 6; ++i) {
        double row = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
          const double v = w[(b * 6 + i) * 3 + k];
          if (!presence[b][k]) CHECK(v == 0.0);
          row += v;
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
      }
  }
}

TEST_CASE("graph embrace ignores non-finite absent inputs") {
  Rng rng(10);
  const std::vector<PresenceVector> presence{{1, 0}};
  const auto w = selection_weights<double>(std::vector<double>{0.5, 0.5}, presence, 4,
                                           InferenceMode::kExpected, rng);
  Graph<double> g(false);
  auto a = g.constant(oracle::random_tensor({1, 4}, rng));
  auto b = g.constant(Tensord({1, 4}, std::numeric_limits<double>::quiet_NaN()));
  const std::vector<Var<double>> d{a, b};
  const Tensord e = ag::embrace<double>(d, w).value();
  CHECK(e == a.value());
}

TEST_CASE("modality_dropout") {
  Rng rng(11);
  const PresenceVector u{1, 1, 1, 1};
  CHECK(modality_dropout(u, ModalityDropout{ModalityDropout::Kind::kSingle, 0.0}, rng) == u);
  CHECK(modality_dropout(u, ModalityDropout{ModalityDropout::Kind::kIndependent, 0.0}, rng) == u);
  CHECK(modality_dropout(u, ModalityDropout{}, rng) == u);

  std::size_t first = 0;
  const int trials = 100000;
  for (int t = 0; t < trials; ++t) {
    const auto v = modality_dropout({1, 1}, ModalityDropout{ModalityDropout::Kind::kSingle, 1.0}, rng);
    REQUIRE(v[0] + v[1] == 1);
    first += v[0];
  }
  CHECK(std::abs(static_cast<double>(first) / trials - 0.5) < 0.01);

  for (std::size_t m = 1; m <= 8; ++m) {
    for (int t = 0; t < 2000; ++t) {
      const auto v = modality_dropout(PresenceVector(m, 1),
                                      ModalityDropout{ModalityDropout::Kind::kIndependent, 0.99}, rng);
      std::size_t alive = 0;
      for (auto b : v) alive += b;
      REQUIRE(alive >= 1);
    }
  }

  // an absent modality never comes back
  for (int t = 0; t < 1000; ++t) {
    const auto v = modality_dropout({1, 0, 1}, ModalityDropout{ModalityDropout::Kind::kSingle, 0.7}, rng);
    CHECK(v[1] == 0);
    const auto w = modality_dropout({0, 1, 1}, ModalityDropout{ModalityDropout::Kind::kIndependent, 0.5}, rng);
    CHECK(w[0] == 0);
  }
}

TEST_CASE("calibrate_probabilities") {
  CHECK(calibrate_probabilities(std::vector<double>{0.8, 0.8, 0.8, 0.8}) ==
        std::vector<double>(4, 0.25));
  const auto p = calibrate_probabilities(std::vector<double>{90.89, 90.92});
  const double total = 90.89 + 90.92;
  CHECK(p[0] == doctest::Approx(90.89 / total).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(90.92 / total).epsilon(1e-15));
  CHECK(std::abs(p[0] - 0.499918) < 1e-6);
  CHECK(std::abs(p[1] - 0.500082) < 1e-6);
  CHECK(calibrate_probabilities(std::vector<double>{0.0, 0.4})[0] == 0.0);
  CHECK_THROWS_AS(calibrate_probabilities(std::vector<double>{0.0, 0.0}), ConfigError);
}

TEST_CASE("absent modalities cannot influence an embracenet model") {
  Rng rng(12);
  for (auto mode : {InferenceMode::kExpected, InferenceMode::kStochastic}) {
    auto spec = fixture::small_spec(Strategy::kEmbrace, 3);
    spec.inference = mode;
    const auto model = FusionModel::create(spec);
    const auto base = fixture::random_batch(spec, 20, rng);
    for (std::uint32_t mask = 1; mask < 8; ++mask) {
      const auto masked = apply_missing_modalities(base, mask);
      auto perturbed = masked;
      for (std::size_t k = 0; k < 3; ++k) {
        if (mask & (1u << k)) continue;
        for (auto& v : perturbed.inputs[k].storage()) v = static_cast<float>(rng.normal(0, 100));
      }
      CHECK(model.embraced(masked, 7) == model.embraced(perturbed, 7));
      CHECK(model.probabilities(masked, 7) == model.probabilities(perturbed, 7));
      CHECK(model.predict(masked, 7) == model.predict(perturbed, 7));
    }
  }
}
