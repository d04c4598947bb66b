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

#include "embrace/run.hpp"

#include <cstdlib>

#include "embrace/log.hpp"

namespace embrace {

std::filesystem::path resolve_data_path(const std::filesystem::path& path) {
  if (path.empty() || path.is_absolute()) return path;
  if (const char* root = std::getenv(kDataRootEnv); root && *root) {
    return std::filesystem::path(root) / path;
  }
  return path;
}

DataSpec DataSpec::from_config(const ConfigFile& cfg) {
  DataSpec spec;
  spec.source = cfg.get("data.source");
  if (spec.source != "synthetic" && spec.source != "mnist" && spec.source != "fashion-mnist" &&
      spec.source != "file") {
    throw ConfigError("data.source must be synthetic, mnist, fashion-mnist or file, got '" +
                      spec.source + "'");
  }
  spec.train_limit = cfg.get_size("data.train_limit");
  const std::string norm = cfg.get("data.normalize");
  if (norm != "none") {
    const auto range = cfg.get_doubles("data.normalize");
    if (range.size() != 2 || !(range[0] < range[1])) {
      throw ConfigError("data.normalize must be 'none' or 'lo,hi' with lo < hi");
    }
    spec.normalize = true;
    spec.lo = static_cast<float>(range[0]);
    spec.hi = static_cast<float>(range[1]);
  }
  if (spec.source == "synthetic") {
    auto& s = spec.synthetic;
    s.modalities = cfg.get_size("synthetic.modalities");
    s.classes = cfg.get_size("synthetic.classes");
    s.latent = cfg.get_size("synthetic.latent");
    s.width = cfg.get_size("synthetic.width");
    s.class_separation = cfg.get_double("synthetic.class_separation");
    s.noise = cfg.get_double("synthetic.noise");
    s.correlation = cfg.get_double("synthetic.correlation");
    s.run_min = cfg.get_size("synthetic.run_min");
    s.run_max = cfg.get_size("synthetic.run_max");
    s.train = cfg.get_size("synthetic.train");
    s.val = cfg.get_size("synthetic.val");
    s.test = cfg.get_size("synthetic.test");
    s.stream = cfg.get_size("synthetic.stream");
    s.seed = cfg.get_u64("synthetic.seed");
    s.validate();
  } else {
    spec.path = cfg.get("data.path");
    if (!std::filesystem::exists(resolve_data_path(spec.path))) {
      throw ConfigError("data.path " + resolve_data_path(spec.path).string() + " does not exist");
    }
  }
  return spec;
}

ConfigFile DataSpec::to_config() const {
  ConfigFile cfg;
  cfg.set("data.source", source);
  cfg.set("data.train_limit", std::to_string(train_limit));
  cfg.set("data.normalize",
          normalize ? std::to_string(lo) + "," + std::to_string(hi) : std::string("none"));
  if (source == "synthetic") {
    const auto& s = synthetic;
    cfg.set("synthetic.modalities", std::to_string(s.modalities));
    cfg.set("synthetic.classes", std::to_string(s.classes));
    cfg.set("synthetic.latent", std::to_string(s.latent));
    cfg.set("synthetic.width", std::to_string(s.width));
    cfg.set("synthetic.class_separation", std::to_string(s.class_separation));
    cfg.set("synthetic.noise", std::to_string(s.noise));
    cfg.set("synthetic.correlation", std::to_string(s.correlation));
    cfg.set("synthetic.run_min", std::to_string(s.run_min));
    cfg.set("synthetic.run_max", std::to_string(s.run_max));
    cfg.set("synthetic.train", std::to_string(s.train));
    cfg.set("synthetic.val", std::to_string(s.val));
    cfg.set("synthetic.test", std::to_string(s.test));
    cfg.set("synthetic.stream", std::to_string(s.stream));
    cfg.set("synthetic.seed", std::to_string(s.seed));
  } else {
    cfg.set("data.path", path.generic_string());
  }
  return cfg;
}

std::string DataSpec::digest() const { return hex64(fnv1a(to_config().canonical())); }

const ModalityBatch& PreparedData::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  if (name == "stream") return stream;
  throw UsageError("unknown split '" + name + "' (train|val|test|stream)");
}

namespace {

ModalityBatch mnist_split(const std::filesystem::path& dir, const std::string& prefix) {
  auto [images, labels] = load_idx_pair(dir / (prefix + "-images-idx3-ubyte"),
                                        dir / (prefix + "-labels-idx1-ubyte"));
  auto [left, right] = split_bimodal(images);
  std::vector<Tensorf> inputs;
  inputs.push_back(std::move(left));
  inputs.push_back(std::move(right));
  return ModalityBatch::from_inputs(std::move(inputs), std::move(labels));
}

std::size_t max_label(const ModalityBatch& b) {
  int top = -1;
  for (int y : b.labels) top = std::max(top, y);
  return static_cast<std::size_t>(top + 1);
}

}  // namespace

PreparedData prepare_data(const DataSpec& spec) {
  PreparedData out;
  out.digest = spec.digest();
  if (spec.source == "synthetic") {
    SyntheticData d = generate_synthetic(spec.synthetic);
    out.classes = spec.synthetic.classes;
    out.train = std::move(d.train);
    out.val = std::move(d.val);
    out.test = std::move(d.test);
    out.stream = std::move(d.stream);
  } else if (spec.source == "file") {
    DatasetFile f = load_dataset(resolve_data_path(spec.path));
    out.classes = f.classes;
    for (auto& [name, batch] : f.splits) {
      if (name == "train") out.train = std::move(batch);
      else if (name == "val") out.val = std::move(batch);
      else if (name == "test") out.test = std::move(batch);
      else if (name == "stream") out.stream = std::move(batch);
    }
  } else {
    const auto dir = resolve_data_path(spec.path);
    out.train = mnist_split(dir, "train");
    out.test = mnist_split(dir, "t10k");
    out.classes = std::max<std::size_t>(10, std::max(max_label(out.train), max_label(out.test)));
  }
  if (out.train.size() == 0 || out.test.size() == 0) {
    throw ConfigError("dataset needs non-empty train and test splits");
  }
  if (spec.train_limit && spec.train_limit < out.train.size()) {
    out.train = out.train.slice(0, spec.train_limit);
  }
  if (out.stream.size() == 0) out.stream = out.test;
  if (spec.normalize) {
    out.stats = fit_normalization(out.train, spec.lo, spec.hi);
    out.train = normalize(out.train, *out.stats);
    if (out.val.size()) out.val = normalize(out.val, *out.stats);
    out.test = normalize(out.test, *out.stats);
    out.stream = normalize(out.stream, *out.stats);
  }
  logger()->info("event=data source={} digest={} train={} val={} test={} stream={} m={} classes={}",
                 spec.source, out.digest, out.train.size(), out.val.size(), out.test.size(),
                 out.stream.size(), out.train.modalities(), out.classes);
  return out;
}

RunConfig RunConfig::from_config(const ConfigFile& cfg) {
  RunConfig run;
  run.name = cfg.get("run.name");
  run.data = DataSpec::from_config(cfg);
  run.model = ModelSpec::from_config(cfg);
  run.train.epochs = cfg.get_size("train.epochs");
  run.train.batch_size = cfg.get_size("train.batch_size");
  run.train.adam.learning_rate = cfg.get_double("train.learning_rate");
  run.train.adam.beta1 = cfg.get_double("train.beta1");
  run.train.adam.beta2 = cfg.get_double("train.beta2");
  run.train.adam.epsilon = cfg.get_double("train.epsilon");
  run.train.seed = cfg.get_u64("train.seed");
  run.train.log_every = cfg.get_size("train.log_every");
  run.output_dir = cfg.get("output.dir");
  cfg.finish();
  if (run.train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(run.train.adam.beta1 >= 0.0 && run.train.adam.beta1 < 1.0 &&
        run.train.adam.beta2 >= 0.0 && run.train.adam.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(run.train.adam.learning_rate > 0.0) || !(run.train.adam.epsilon > 0.0)) {
    throw ConfigError("train.learning_rate and train.epsilon must be positive");
  }
  run.canonical = cfg.canonical();
  run.digest = hex64(fnv1a(run.canonical));
  return run;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  return from_config(ConfigFile::load(path));
}

RunConfig RunConfig::parse(const std::string& text) {
  return from_config(ConfigFile::parse(text));
}

TrainedRun train_run(const RunConfig& cfg, const PreparedData& data) {
  ModelSpec spec = cfg.model;
  spec.classes = data.classes;
  spec.input_shapes.clear();
  for (std::size_t k = 0; k < data.train.modalities(); ++k) {
    spec.input_shapes.push_back(data.train.sample_shape(k));
  }
  TrainedRun run{FusionModel::create(spec), {}, {cfg.canonical, cfg.digest, data.digest}};
  logger()->info("event=model name={} strategy={} params={} config_digest={}", cfg.name,
                 strategy_name(spec.strategy), run.model.param_count(), cfg.digest);
  run.result = run.model.train(data.train, data.val.size() ? &data.val : nullptr, cfg.train);
  return run;
}

}  // namespace embrace
