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

#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <spdlog/sinks/basic_file_sink.h>

#include "CLI11.hpp"
#include "embrace/harness.hpp"
#include "embrace/log.hpp"
#include "embrace/run.hpp"
#include "json.hpp"

namespace embrace::cli {

namespace fs = std::filesystem;

namespace {

void refuse_overwrite(const fs::path& path, bool overwrite) {
  if (fs::exists(path) && !overwrite) {
    throw UsageError(path.string() + " exists; pass --overwrite to replace it");
  }
}

// Data for a stored model: its embedded run config, optionally replaced by
// a config file whose data section must carry the same digest.
PreparedData data_for(const std::vector<FusionModel::FileMeta>& metas,
                      const std::string& data_config) {
  const std::string& digest = metas.front().data_digest;
  for (const auto& meta : metas) {
    if (meta.data_digest != digest) {
      throw UsageError("models were trained on different datasets (" + digest + " vs " +
                       meta.data_digest + ")");
    }
  }
  DataSpec spec = data_config.empty()
                      ? RunConfig::parse(metas.front().config_text).data
                      : DataSpec::from_config(ConfigFile::load(data_config));
  if (spec.digest() != digest) {
    throw UsageError("dataset digest " + spec.digest() + " conflicts with the model's " + digest);
  }
  return prepare_data(spec);
}

void print_p(const char* label, const std::vector<double>& p) {
  std::printf("%s p = [", label);
  for (std::size_t k = 0; k < p.size(); ++k) std::printf("%s%.6f", k ? ", " : "", p[k]);
  std::printf("]\n");
}

int cmd_train(const std::string& config_path, const std::string& out_override, bool overwrite) {
  RunConfig cfg = RunConfig::load(config_path);
  if (!out_override.empty()) cfg.output_dir = out_override;
  fs::create_directories(cfg.output_dir);
  const fs::path model_path = cfg.output_dir / (cfg.name + ".embr");
  refuse_overwrite(model_path, overwrite);
  auto file_sink = std::make_shared<spdlog::sinks::basic_file_sink_mt>(
      (cfg.output_dir / (cfg.name + ".log")).string(), true);
  file_sink->set_pattern("%v");
  logger()->sinks().push_back(file_sink);

  const PreparedData data = prepare_data(cfg.data);
  TrainedRun run = train_run(cfg, data);
  run.model.save(model_path, run.meta);

  nlohmann::ordered_json metrics;
  metrics["name"] = cfg.name;
  metrics["strategy"] = strategy_name(run.model.strategy());
  metrics["config_digest"] = cfg.digest;
  metrics["data_digest"] = data.digest;
  metrics["param_digest"] = hex64(run.model.param_digest());
  metrics["steps"] = run.result.steps;
  metrics["final_loss"] = run.result.final_loss;
  metrics["train_f1"] = run.result.train_f1;
  if (run.result.has_val) metrics["val_f1"] = run.result.val_f1;
  std::ofstream(cfg.output_dir / (cfg.name + ".metrics.json")) << metrics.dump(2) << '\n';
  logger()->sinks().pop_back();
  std::printf("model %s param_digest=%s train_f1=%.6f\n", model_path.string().c_str(),
              hex64(run.model.param_digest()).c_str(), run.result.train_f1);
  return kExitOk;
}

int cmd_calibrate(const std::string& model_path, const std::string& data_config,
                  const std::string& metric_text, const std::string& split) {
  const ScoreMetric metric = parse_metric(metric_text);
  FusionModel::FileMeta meta;
  FusionModel model = FusionModel::load(model_path, &meta);
  if (model.strategy() != Strategy::kEmbrace) {
    throw UsageError("calibrate needs an embracenet model, " + model_path + " is " +
                     strategy_name(model.strategy()));
  }
  const PreparedData data = data_for({meta}, data_config);
  const ModalityBatch& source =
      split == "val" && data.val.size() == 0 ? data.train : data.split(split);
  const std::uint64_t before = model.param_digest();
  const auto scores = model.modality_scores(source, metric);
  const auto old_p = model.selection_probabilities();
  model.set_selection_probabilities(calibrate_probabilities(scores));
  if (model.param_digest() != before) throw UsageError("calibration changed network weights");
  model.save(model_path, meta);
  std::printf("metric %s on %zu samples\n", metric_name(metric).c_str(), source.size());
  print_p("old", old_p);
  print_p("new", model.selection_probabilities());
  return kExitOk;
}

int cmd_evaluate(const std::vector<std::string>& model_paths, const std::string& scenario_text,
                 std::size_t cap, const std::string& rates, std::uint64_t seed,
                 std::size_t workers, const std::string& data_config, const std::string& out,
                 bool overwrite) {
  ScenarioSpec scenario;
  scenario.kind = parse_scenario(scenario_text);
  scenario.cap = cap;
  scenario.seed = seed;
  scenario.workers = workers;
  if (scenario.kind == ScenarioKind::kBlockwise) scenario.rates = parse_rates(rates);
  refuse_overwrite(fs::path(out) / "report.csv", overwrite);

  std::vector<FusionModel> models;
  std::vector<FusionModel::FileMeta> metas;
  for (const auto& path : model_paths) {
    FusionModel::FileMeta meta;
    models.push_back(FusionModel::load(path, &meta));
    metas.push_back(std::move(meta));
  }
  const PreparedData data = data_for(metas, data_config);
  std::vector<NamedModel> named;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const RunConfig cfg = RunConfig::parse(metas[i].config_text);
    named.push_back({cfg.name, &models[i], metas[i].config_digest});
  }
  const ExperimentReport report = run_scenario(named, scenario, data.test, data.stream, data.digest);
  write_report(report, out);
  for (const auto& name : report.strategies) {
    std::printf("%s:", name.c_str());
    for (const auto& [key, f1] : report.aggregate(name)) std::printf(" %zu=%.4f", key, f1);
    std::printf("\n");
  }
  return kExitOk;
}

int cmd_dump(const std::string& model_path, const std::string& data_config, const std::string& out,
             std::size_t cap, std::uint64_t seed, const std::string& split) {
  FusionModel::FileMeta meta;
  FusionModel model = FusionModel::load(model_path, &meta);
  if (model.strategy() != Strategy::kEmbrace) {
    throw UsageError("dump-activations needs an embracenet model, " + model_path + " is " +
                     strategy_name(model.strategy()));
  }
  const PreparedData data = data_for({meta}, data_config);
  const auto cells = embraced_activations(model, data.split(split), cap, seed);
  write_activation_grids(cells, out);
  std::printf("wrote %zu activation grids to %s\n", cells.size(), out.c_str());
  return kExitOk;
}

int cmd_generate(const std::string& config_path, const std::string& out, bool overwrite) {
  const ConfigFile cfg = ConfigFile::load(config_path);
  const DataSpec spec = DataSpec::from_config(cfg);
  if (spec.source != "synthetic") throw UsageError("generate needs data.source = synthetic");
  refuse_overwrite(out, overwrite);
  SyntheticData d = generate_synthetic(spec.synthetic);
  DatasetFile file;
  file.classes = spec.synthetic.classes;
  file.spec_digest = spec.digest();
  file.splits.emplace_back("train", std::move(d.train));
  if (d.val.size()) file.splits.emplace_back("val", std::move(d.val));
  file.splits.emplace_back("test", std::move(d.test));
  if (d.stream.size()) file.splits.emplace_back("stream", std::move(d.stream));
  save_dataset(out, file);
  std::printf("wrote %s digest=%s\n", out.c_str(), file.spec_digest.c_str());
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"EmbraceNet multimodal fusion: training, calibration and evaluation", "embracenet"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

  bool overwrite = false;
  std::string config, out, model, data, metric = "f1", scenario = "none", rates = "10..90:10";
  std::string split = "val";
  std::vector<std::string> models;
  std::size_t cap = 1000, workers = 1;
  std::uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "Train the strategy described by a run config");
  train->add_option("--config", config, "Run config file")->required();
  train->add_option("--out", out, "Output directory (overrides output.dir)");
  train->add_flag("--overwrite", overwrite, "Replace an existing model file");

  auto* calibrate = app.add_subcommand("calibrate", "Set p from per-modality scores");
  calibrate->add_option("--model", model, "EmbraceNet model file")->required();
  calibrate->add_option("--data", data, "Config whose data section selects the dataset");
  calibrate->add_option("--metric", metric, "f1|accuracy");
  calibrate->add_option("--split", split, "Split to score (val falls back to train when empty)");

  auto* evaluate = app.add_subcommand("evaluate", "Run a missing-data scenario");
  evaluate->add_option("--models", models, "Model files")->required();
  evaluate->add_option("--scenario", scenario, "none|modalities|blockwise");
  evaluate->add_option("--cap", cap, "Combinations per subset size");
  evaluate->add_option("--rates", rates, "Blockwise rates in percent, lo..hi:step or a list");
  evaluate->add_option("--seed", seed, "Scenario seed");
  evaluate->add_option("--workers", workers, "Parallel evaluation threads");
  evaluate->add_option("--data", data, "Config whose data section selects the dataset");
  evaluate->add_option("--out", out, "Report directory")->required();
  evaluate->add_flag("--overwrite", overwrite, "Replace an existing report");

  std::string dump_split = "test";
  std::size_t dump_cap = 10;
  auto* dump = app.add_subcommand("dump-activations", "Average embracement outputs per cell");
  dump->add_option("--model", model, "EmbraceNet model file")->required();
  dump->add_option("--data", data, "Config whose data section selects the dataset");
  dump->add_option("--out", out, "Output directory")->required();
  dump->add_option("--cap", dump_cap, "Modality subsets per size");
  dump->add_option("--seed", seed, "Subset sampling seed");
  dump->add_option("--split", dump_split, "Split to average over");

  auto* generate = app.add_subcommand("generate", "Write a synthetic dataset container");
  generate->add_option("--config", config, "Config with data/synthetic sections")->required();
  generate->add_option("--out", out, "Container path")->required();
  generate->add_flag("--overwrite", overwrite, "Replace an existing file");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  argv_rev.pop_back();
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    const auto level = spdlog::level::from_str(log_level);
    logger()->sinks().front()->set_level(level);
    logger()->set_level(std::min(level, spdlog::level::info));
    if (*train) return cmd_train(config, out, overwrite);
    if (*calibrate) return cmd_calibrate(model, data, metric, split);
    if (*evaluate) {
      return cmd_evaluate(models, scenario, cap, rates, seed, workers, data, out, overwrite);
    }
    if (*dump) return cmd_dump(model, data, out, dump_cap, seed, dump_split);
    if (*generate) return cmd_generate(config, out, overwrite);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s (step %zu)\n", e.what(), e.step());
    return kExitNumeric;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace embrace::cli
