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

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "embrace/model.hpp"
#include "fixtures.hpp"
#include "json.hpp"

using namespace embrace;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("embrace_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::map<std::string, std::string> base_config(const std::string& strategy) {
  return {
      {"run.name", strategy},
      {"data.source", "synthetic"},
      {"data.train_limit", "0"},
      {"data.normalize", "0,1"},
      {"synthetic.modalities", "3"},
      {"synthetic.classes", "3"},
      {"synthetic.latent", "4"},
      {"synthetic.width", "4"},
      {"synthetic.class_separation", "1.0"},
      {"synthetic.noise", "0.3"},
      {"synthetic.correlation", "0.5"},
      {"synthetic.run_min", "20"},
      {"synthetic.run_max", "100"},
      {"synthetic.train", "256"},
      {"synthetic.val", "64"},
      {"synthetic.test", "64"},
      {"synthetic.stream", "0"},
      {"synthetic.seed", "1"},
      {"model.strategy", strategy},
      {"model.encoder", "dense:8"},
      {"model.feature_width", "8"},
      {"model.fusion_width", "16"},
      {"model.head", "8"},
      {"model.dropout_keep", "1.0"},
      {"model.fill", "mean"},
      {"model.seed", "2"},
      {"embrace.p", "uniform"},
      {"embrace.inference", "expected"},
      {"embrace.modality_dropout", "none"},
      {"mae.corrupt_rate", "0.5"},
      {"mae.pretrain_epochs", "1"},
      {"train.epochs", "1"},
      {"train.batch_size", "64"},
      {"train.learning_rate", "0.001"},
      {"train.beta1", "0.9"},
      {"train.beta2", "0.999"},
      {"train.epsilon", "0.01"},
      {"train.seed", "3"},
      {"train.log_every", "100"},
      {"output.dir", "unused"},
  };
}

fs::path write_config(const fs::path& dir, const std::map<std::string, std::string>& cfg) {
  const auto path = dir / (cfg.at("run.name") + ".conf");
  std::ofstream out(path);
  for (const auto& [k, v] : cfg) out << k << " = " << v << "\n";
  return path;
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "embracenet");
  args.push_back("--log-level");
  args.push_back("warn");
  return cli::run(args);
}

int train(const fs::path& config, const fs::path& out) {
  return run({"train", "--config", config.string(), "--out", out.string(), "--overwrite"});
}

std::size_t csv_rows(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) n += !line.empty();
  return n - 1;  // header
}

}  // namespace

TEST_CASE("train: zero epochs writes initialized parameters") {
  TempDir tmp("zero");
  auto cfg = base_config("embracenet");
  cfg["train.epochs"] = "0";
  const auto conf = write_config(tmp.path, cfg);
  CHECK(train(conf, tmp.path) == cli::kExitOk);
  const auto model = FusionModel::load(tmp.path / "embracenet.embr");
  CHECK_FALSE(model.trained());
  CHECK(fs::exists(tmp.path / "embracenet.metrics.json"));
  CHECK(fs::exists(tmp.path / "embracenet.log"));
}

TEST_CASE("train: same config twice gives identical parameters") {
  TempDir tmp("repeat");
  const auto conf = write_config(tmp.path, base_config("intermediate"));
  REQUIRE(train(conf, tmp.path / "a") == cli::kExitOk);
  REQUIRE(train(conf, tmp.path / "b") == cli::kExitOk);
  const auto a = FusionModel::load(tmp.path / "a" / "intermediate.embr");
  const auto b = FusionModel::load(tmp.path / "b" / "intermediate.embr");
  CHECK(a.param_digest() == b.param_digest());
  std::ifstream ja(tmp.path / "a" / "intermediate.metrics.json");
  std::ifstream jb(tmp.path / "b" / "intermediate.metrics.json");
  CHECK(nlohmann::json::parse(ja) == nlohmann::json::parse(jb));
}

TEST_CASE("train: refuses to overwrite without the flag") {
  TempDir tmp("overwrite");
  const auto conf = write_config(tmp.path, base_config("early"));
  REQUIRE(train(conf, tmp.path) == cli::kExitOk);
  CHECK(run({"train", "--config", conf.string(), "--out", tmp.path.string()}) == cli::kExitUsage);
}

TEST_CASE("train: configuration errors exit 2") {
  TempDir tmp("bad");
  auto cfg = base_config("early");
  cfg["model.strategy"] = "bogus";
  CHECK(train(write_config(tmp.path, cfg), tmp.path) == cli::kExitUsage);
  cfg = base_config("early");
  cfg.erase("train.seed");
  CHECK(train(write_config(tmp.path, cfg), tmp.path) == cli::kExitUsage);
  cfg = base_config("early");
  cfg["data.source"] = "mnist";
  cfg["data.path"] = "does/not/exist";
  CHECK(train(write_config(tmp.path, cfg), tmp.path) == cli::kExitUsage);
  CHECK(train(tmp.path / "missing.conf", tmp.path) == cli::kExitUsage);
  CHECK(run({"train"}) == cli::kExitUsage);
  CHECK(run({"frobnicate"}) == cli::kExitUsage);
}

TEST_CASE("train: a diverging loss exits 3") {
  TempDir tmp("nan");
  auto cfg = base_config("intermediate");
  cfg["train.learning_rate"] = "1e30";
  cfg["train.epochs"] = "3";
  CHECK(train(write_config(tmp.path, cfg), tmp.path) == cli::kExitNumeric);
}

TEST_CASE("calibrate") {
  TempDir tmp("calibrate");
  auto cfg = base_config("embracenet");
  cfg["synthetic.train"] = "512";
  cfg["synthetic.val"] = "300";
  cfg["train.epochs"] = "3";
  const auto emb = write_config(tmp.path, cfg);
  const auto late = write_config(tmp.path, base_config("late"));
  REQUIRE(train(emb, tmp.path) == cli::kExitOk);
  REQUIRE(train(late, tmp.path) == cli::kExitOk);

  const auto model_path = tmp.path / "embracenet.embr";
  const auto before = FusionModel::load(model_path);
  CHECK(run({"calibrate", "--model", model_path.string(), "--metric", "accuracy"}) == cli::kExitOk);
  const auto after = FusionModel::load(model_path);
  CHECK(after.param_digest() == before.param_digest());
  double sum = 0.0;
  for (double p : after.selection_probabilities()) sum += p;
  CHECK(sum == doctest::Approx(1.0));

  const auto val = fixture::normalized_synthetic([] {
                     SyntheticSpec s;
                     s.modalities = 3;
                     s.classes = 3;
                     s.latent = 4;
                     s.width = 4;
                     s.train = 512;
                     s.val = 300;
                     s.test = 64;
                     s.stream = 0;
                     s.seed = 1;
                     return s;
                   }()).val;
  const auto scores = before.modality_scores(val, ScoreMetric::kAccuracy);
  double total = 0.0;
  for (double s : scores) total += s;
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(after.selection_probabilities()[k] == doctest::Approx(scores[k] / total));
  }

  CHECK(run({"calibrate", "--model", (tmp.path / "late.embr").string()}) == cli::kExitUsage);
  CHECK(run({"calibrate", "--model", model_path.string(), "--metric", "auc"}) == cli::kExitUsage);
}

TEST_CASE("evaluate: none and modalities scenarios") {
  TempDir tmp("evaluate");
  auto cfg = base_config("embracenet");
  cfg["synthetic.modalities"] = "8";
  const auto emb = write_config(tmp.path, cfg);
  cfg["run.name"] = cfg["model.strategy"] = "early";
  const auto early = write_config(tmp.path, cfg);
  REQUIRE(train(emb, tmp.path) == cli::kExitOk);
  REQUIRE(train(early, tmp.path) == cli::kExitOk);
  const std::string m1 = (tmp.path / "embracenet.embr").string();
  const std::string m2 = (tmp.path / "early.embr").string();

  CHECK(run({"evaluate", "--models", m1, m2, "--scenario", "none", "--out", (tmp.path / "none").string()}) ==
        cli::kExitOk);
  CHECK(csv_rows(tmp.path / "none" / "report.csv") == 2);

  CHECK(run({"evaluate", "--models", m1, m2, "--scenario", "modalities", "--out",
             (tmp.path / "mods").string()}) == cli::kExitOk);
  CHECK(csv_rows(tmp.path / "mods" / "report.csv") == 2 * 255);
  std::ifstream js(tmp.path / "mods" / "summary.json");
  const auto summary = nlohmann::json::parse(js);
  REQUIRE(summary.at("models").size() == 2);
  CHECK(summary["models"][0]["config_digest"].is_string());
  CHECK(summary["points"] == 255);

  CHECK(run({"evaluate", "--models", m1, "--scenario", "none", "--out", (tmp.path / "none").string()}) ==
        cli::kExitUsage);
}

TEST_CASE("evaluate: blockwise rates 10..90:10 give nine points") {
  TempDir tmp("blockwise");
  auto cfg = base_config("embracenet");
  cfg["synthetic.modalities"] = "19";
  cfg["synthetic.width"] = "2";
  cfg["synthetic.stream"] = "3000";
  const auto conf = write_config(tmp.path, cfg);
  REQUIRE(train(conf, tmp.path) == cli::kExitOk);
  CHECK(run({"evaluate", "--models", (tmp.path / "embracenet.embr").string(), "--scenario", "blockwise",
             "--rates", "10..90:10", "--out", (tmp.path / "report").string()}) == cli::kExitOk);
  CHECK(csv_rows(tmp.path / "report" / "report.csv") == 9);
}

TEST_CASE("evaluate: models trained on different data are refused") {
  TempDir tmp("mismatch");
  auto cfg = base_config("embracenet");
  const auto a = write_config(tmp.path, cfg);
  cfg["run.name"] = "other";
  cfg["synthetic.seed"] = "99";
  const auto b = write_config(tmp.path, cfg);
  cfg["run.name"] = "wide";
  cfg["synthetic.seed"] = "1";
  cfg["synthetic.modalities"] = "4";
  const auto c = write_config(tmp.path, cfg);
  REQUIRE(train(a, tmp.path) == cli::kExitOk);
  REQUIRE(train(b, tmp.path) == cli::kExitOk);
  REQUIRE(train(c, tmp.path) == cli::kExitOk);
  const auto out = (tmp.path / "r").string();
  CHECK(run({"evaluate", "--models", (tmp.path / "embracenet.embr").string(), (tmp.path / "other.embr").string(),
             "--out", out}) == cli::kExitUsage);
  CHECK(run({"evaluate", "--models", (tmp.path / "embracenet.embr").string(), (tmp.path / "wide.embr").string(),
             "--out", out}) == cli::kExitUsage);
}

TEST_CASE("generate writes a dataset that a file-backed config can train on") {
  TempDir tmp("generate");
  auto cfg = base_config("embracenet");
  const auto conf = write_config(tmp.path, cfg);
  const auto data = tmp.path / "synthetic.embd";
  CHECK(run({"generate", "--config", conf.string(), "--out", data.string()}) == cli::kExitOk);
  const auto file = load_dataset(data);
  CHECK(file.classes == 3);
  CHECK(file.split("train").size() == 256);
  CHECK(run({"generate", "--config", conf.string(), "--out", data.string()}) == cli::kExitUsage);

  std::erase_if(cfg, [](const auto& kv) { return kv.first.starts_with("synthetic."); });
  cfg["data.source"] = "file";
  cfg["data.path"] = data.string();
  cfg["run.name"] = "from_file";
  CHECK(train(write_config(tmp.path, cfg), tmp.path) == cli::kExitOk);
  CHECK(run({"dump-activations", "--model", (tmp.path / "from_file.embr").string(), "--out",
             (tmp.path / "grids").string()}) == cli::kExitOk);
  CHECK_FALSE(fs::is_empty(tmp.path / "grids"));
}
