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

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "embrace/data.hpp"
#include "embrace/model.hpp"

namespace embrace {

enum class ScenarioKind : std::uint8_t { kNone, kModalities, kBlockwise };

ScenarioKind parse_scenario(const std::string& name);
std::string scenario_name(ScenarioKind kind);

// "10..90:10" (inclusive range with step) or "0,50,90"; values in percent.
std::vector<double> parse_rates(const std::string& text);

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::kNone;
  std::size_t cap = 1000;          // combinations per subset size
  std::uint64_t seed = 0;          // combination sampling and block placement
  std::vector<double> rates;       // blockwise target rates in [0, 1)
  BlockRange blocks;
  std::size_t workers = 1;
};

struct NamedModel {
  std::string name;
  const FusionModel* model = nullptr;
  std::string config_digest;
};

struct ReportRow {
  std::string strategy;
  std::string point;          // bitmask string, "full", or "rate=0.50"
  std::size_t modalities = 0; // present modalities (missing-modality scenario)
  double target_rate = 0.0;
  double realized_rate = 0.0;
  double f1 = 0.0;
  std::size_t n = 0;
};

struct ExperimentReport {
  ScenarioKind scenario = ScenarioKind::kNone;
  std::vector<std::string> strategies;
  std::vector<std::string> config_digests;
  std::string data_digest;
  std::uint64_t seed = 0;
  std::size_t cap = 0;
  std::size_t points = 0;
  std::vector<ReportRow> rows;  // point-major, strategies in input order
  double seconds = 0.0;

  // Mean F1 over the rows of one strategy, keyed by present-modality count
  // (missing-modality scenario) or by target rate in percent (blockwise).
  std::map<std::size_t, double> aggregate(const std::string& strategy) const;
  double f1(const std::string& strategy, const std::string& point) const;
};

// Evaluates every model at every scenario point. Models must be trained.
// `test` serves the none/modalities scenarios and `stream` the blockwise one.
ExperimentReport run_scenario(const std::vector<NamedModel>& models, const ScenarioSpec& scenario,
                              const ModalityBatch& test, const ModalityBatch& stream,
                              const std::string& data_digest);

struct DegradationRow {
  std::string strategy;
  double full = 0.0;
  double degraded = 0.0;
  double reduction = 0.0;  // (full - degraded) / full
  bool flagged = false;    // full == 0
};

DegradationRow degradation(const std::string& strategy, double full, double degraded);

// Per strategy: the full point (all modalities / rate 0) against the
// aggregate at `degraded_key` (modality count, or rate in percent).
std::vector<DegradationRow> consistency_metrics(const ExperimentReport& report,
                                                std::size_t degraded_key);

// report.csv, summary.json (deterministic) and timing.json (wall-clock).
void write_report(const ExperimentReport& report, const std::filesystem::path& dir);

struct ActivationCell {
  int cls = 0;
  std::size_t modalities = 0;
  std::size_t samples = 0;
  std::vector<double> mean;  // length c
};

// Averages the embracement output over test samples per (class, number of
// present modalities); subsets are taken from enumerate_combinations(m, cap).
std::vector<ActivationCell> embraced_activations(const FusionModel& model,
                                                 const ModalityBatch& data, std::size_t cap,
                                                 std::uint64_t seed);

// One CSV grid per cell, sqrt(c) x sqrt(c) when c is a square, else 1 x c.
void write_activation_grids(const std::vector<ActivationCell>& cells,
                            const std::filesystem::path& dir);

}  // namespace embrace
