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
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "embrace/errors.hpp"
#include "embrace/harness.hpp"
#include "embrace/metrics.hpp"
#include "fixtures.hpp"

using namespace embrace;

namespace {

SyntheticSpec eight_modalities() {
  SyntheticSpec s;
  s.modalities = 8;
  s.classes = 4;
  s.latent = 6;
  s.width = 4;
  s.train = 400;
  s.val = 100;
  s.test = 60;
  s.stream = 4000;
  s.seed = 21;
  return s;
}

struct Zoo {
  SyntheticSpec spec = eight_modalities();
  SyntheticData data = fixture::normalized_synthetic(spec);
  std::vector<FusionModel> models;

  Zoo() {
    for (auto s : {Strategy::kEarly, Strategy::kLate, Strategy::kIntermediate, Strategy::kCmp,
                   Strategy::kMae, Strategy::kEmbrace}) {
      models.push_back(fixture::train_synthetic(s, spec, data, 1));
    }
  }

  std::vector<NamedModel> named() const {
    std::vector<NamedModel> out;
    for (const auto& m : models) out.push_back({strategy_name(m.strategy()), &m, "digest"});
    return out;
  }
};

const Zoo& zoo() {
  static const Zoo z;
  return z;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_CASE("the none scenario reproduces plain test F1") {
  const auto& z = zoo();
  ScenarioSpec none;
  const auto report = run_scenario(z.named(), none, z.data.test, z.data.stream, "d");
  CHECK(report.rows.size() == z.models.size());
  for (const auto& m : z.models) {
    const auto pred = m.predict(z.data.test);
    CHECK(report.f1(strategy_name(m.strategy()), "full") ==
          weighted_f1(pred, z.data.test.labels, z.spec.classes));
  }
}

TEST_CASE("the m=8 missing-modality sweep has 255 rows per strategy") {
  const auto& z = zoo();
  ScenarioSpec sweep;
  sweep.kind = ScenarioKind::kModalities;
  sweep.workers = 2;
  const auto report = run_scenario(z.named(), sweep, z.data.test, z.data.stream, "d");
  CHECK(report.points == 255);
  for (const auto& m : z.models) {
    const auto name = strategy_name(m.strategy());
    std::size_t rows = 0;
    for (const auto& r : report.rows) rows += r.strategy == name;
    CHECK(rows == 255);
    const auto agg = report.aggregate(name);
    CHECK(agg.size() == 8);
    CHECK(agg.at(8) == report.f1(name, "11111111"));
  }
}

TEST_CASE("reports are reproducible and evaluation is read-only") {
  const auto& z = zoo();
  std::vector<std::uint64_t> before;
  for (const auto& m : z.models) before.push_back(m.param_digest());

  ScenarioSpec blockwise;
  blockwise.kind = ScenarioKind::kBlockwise;
  blockwise.rates = {0.0, 0.3};
  blockwise.seed = 5;
  const auto tmp = std::filesystem::temp_directory_path() / "embrace_test_harness";
  std::filesystem::remove_all(tmp);
  for (std::size_t workers : {1u, 3u}) {
    blockwise.workers = workers;
    const auto report = run_scenario(z.named(), blockwise, z.data.test, z.data.stream, "d");
    write_report(report, tmp / std::to_string(workers));
    for (const auto& r : report.rows) {
      if (r.target_rate > 0.0) CHECK(std::abs(r.realized_rate - 0.3) <= 0.01);
    }
  }
  CHECK(slurp(tmp / "1" / "report.csv") == slurp(tmp / "3" / "report.csv"));
  CHECK(slurp(tmp / "1" / "summary.json") == slurp(tmp / "3" / "summary.json"));
  CHECK_FALSE(slurp(tmp / "1" / "report.csv").empty());
  std::filesystem::remove_all(tmp);

  for (std::size_t i = 0; i < z.models.size(); ++i) CHECK(z.models[i].param_digest() == before[i]);
}

TEST_CASE("untrained models are rejected") {
  const auto& z = zoo();
  const auto fresh = FusionModel::create(fixture::synthetic_model_spec(Strategy::kEarly, z.spec));
  ScenarioSpec none;
  CHECK_THROWS_AS(run_scenario({{"early", &fresh, ""}}, none, z.data.test, z.data.stream, "d"),
                  UsageError);
}

TEST_CASE("rates parsing") {
  CHECK(parse_rates("10..90:10").size() == 9);
  CHECK(parse_rates("0,50") == std::vector<double>{0.0, 0.5});
  CHECK_THROWS_AS(parse_rates("0,100"), ConfigError);
  CHECK_THROWS_AS(parse_rates("abc"), ConfigError);
}

TEST_CASE("consistency metrics") {
  CHECK(degradation("x", 0.5, 0.5).reduction == 0.0);
  CHECK(std::round(degradation("early", 0.897, 0.287).reduction * 1000) / 10 == 68.0);
  CHECK(std::round(degradation("embracenet", 0.912, 0.810).reduction * 1000) / 10 == 11.2);
  const auto zero = degradation("x", 0.0, 0.1);
  CHECK(zero.flagged);
  CHECK(std::isnan(zero.reduction));

  ExperimentReport report;
  report.scenario = ScenarioKind::kModalities;
  report.strategies = {"a"};
  report.rows = {{"a", "11", 2, 0, 0, 0.9, 10}, {"a", "01", 1, 0, 0, 0.4, 10},
                 {"a", "10", 1, 0, 0, 0.6, 10}};
  const auto table = consistency_metrics(report, 1);
  REQUIRE(table.size() == 1);
  CHECK(table[0].full == 0.9);
  CHECK(table[0].degraded == doctest::Approx(0.5));
  CHECK(table[0].reduction == doctest::Approx(0.4 / 0.9));
  CHECK_THROWS_AS(consistency_metrics(report, 5), UsageError);
}

TEST_CASE("embraced activation grids") {
  SyntheticSpec spec;
  spec.modalities = 2;
  spec.classes = 3;
  spec.width = 4;
  spec.train = 64;
  spec.val = 0;
  spec.test = 10;
  spec.stream = 0;
  const auto data = fixture::normalized_synthetic(spec);
  auto model = FusionModel::create(fixture::synthetic_model_spec(Strategy::kEmbrace, spec, 1024));
  TrainOptions options;
  options.epochs = 0;
  model.train(data.train, nullptr, options);

  const auto one = data.test.slice(0, 1);
  const auto cells = embraced_activations(model, one, 1000, 0);
  const auto e = model.embraced(one);
  for (const auto& cell : cells) {
    if (cell.modalities != 2) continue;
    CHECK(cell.samples == 1);
    for (std::size_t i = 0; i < 1024; ++i) CHECK(cell.mean[i] == doctest::Approx(e.at(0, i)));
  }

  const auto tmp = std::filesystem::temp_directory_path() / "embrace_test_grids";
  std::filesystem::remove_all(tmp);
  write_activation_grids(cells, tmp);
  std::ifstream grid(tmp / ("class" + std::to_string(one.labels[0]) + "_mods2.csv"));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(grid, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 31);
  }
  CHECK(rows == 32);
  std::filesystem::remove_all(tmp);

  const auto early = fixture::train_synthetic(Strategy::kEarly, spec, data, 0);
  CHECK_THROWS_AS(embraced_activations(early, one, 1000, 0), UsageError);
}

TEST_CASE("single-modality activations resemble the full-modality cell of the same class") {
  SyntheticSpec spec;
  spec.modalities = 3;
  spec.classes = 4;
  spec.width = 6;
  spec.train = 1200;
  spec.val = 100;
  spec.test = 1000;
  spec.stream = 0;
  spec.seed = 4;
  const auto data = fixture::normalized_synthetic(spec);
  const auto model = fixture::train_synthetic(Strategy::kEmbrace, spec, data, 5, 64);
  const auto cells = embraced_activations(model, data.test, 1000, 0);
  auto cell = [&](int cls, std::size_t mods) -> const std::vector<double>& {
    for (const auto& c : cells)
      if (c.cls == cls && c.modalities == mods) return c.mean;
    FAIL("missing cell");
    return cells[0].mean;
  };
  for (int a = 0; a < 4; ++a) {
    const double same = cosine(cell(a, 3), cell(a, 1));
    for (int b = 0; b < 4; ++b) {
      if (b != a) CHECK(same > cosine(cell(a, 3), cell(b, 1)));
    }
  }
}
