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

#include <filesystem>
#include <optional>
#include <string>

#include "embrace/config.hpp"
#include "embrace/data.hpp"
#include "embrace/model.hpp"

namespace embrace {

// Environment variable that relative data paths are resolved against.
inline constexpr const char* kDataRootEnv = "EMBRACE_DATA_ROOT";

std::filesystem::path resolve_data_path(const std::filesystem::path& path);

// data.* and synthetic.* keys of a run config.
struct DataSpec {
  std::string source = "synthetic";  // synthetic | mnist | fashion-mnist | file
  std::filesystem::path path;
  std::size_t train_limit = 0;       // 0 keeps every training sample
  bool normalize = false;
  float lo = 0.0f, hi = 1.0f;
  SyntheticSpec synthetic;

  static DataSpec from_config(const ConfigFile& cfg);
  ConfigFile to_config() const;
  std::string digest() const;
};

struct PreparedData {
  std::size_t classes = 0;
  ModalityBatch train, val, test, stream;
  std::optional<NormalizationStats> stats;
  std::string digest;

  const ModalityBatch& split(const std::string& name) const;
};

// Loads or generates the splits and applies training-split normalization.
PreparedData prepare_data(const DataSpec& spec);

struct RunConfig {
  std::string name;
  DataSpec data;
  ModelSpec model;
  TrainOptions train;
  std::filesystem::path output_dir;
  std::string canonical;
  std::string digest;

  static RunConfig from_config(const ConfigFile& cfg);
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig parse(const std::string& text);
};

struct TrainedRun {
  FusionModel model;
  TrainResult result;
  FusionModel::FileMeta meta;
};

// Builds the model for the prepared data and trains it.
TrainedRun train_run(const RunConfig& cfg, const PreparedData& data);

}  // namespace embrace
