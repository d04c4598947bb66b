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
#include <optional>
#include <string>
#include <vector>

#include "embrace/baselines.hpp"
#include "embrace/config.hpp"
#include "embrace/data.hpp"
#include "embrace/embrace.hpp"
#include "embrace/layers.hpp"
#include "embrace/sketch.hpp"

namespace embrace {

enum class Strategy : std::uint8_t { kEarly, kLate, kIntermediate, kCmp, kMae, kEmbrace };

Strategy parse_strategy(const std::string& name);
std::string strategy_name(Strategy strategy);

// One encoder stage: "conv:<channels>:<kernel>", "pool:<h>x<w>" (or
// "pool:<n>") or "dense:<width>".
struct LayerSpec {
  enum class Kind : std::uint8_t { kConv, kPool, kDense };
  Kind kind = Kind::kDense;
  std::size_t units = 0;
  std::size_t kernel = 3;
  std::size_t pool_h = 2, pool_w = 2;

  static LayerSpec parse(const std::string& text);
  std::string str() const;
};

std::vector<LayerSpec> parse_layers(const std::string& list);
std::string layers_str(const std::vector<LayerSpec>& layers);

enum class FillPolicy : std::uint8_t { kMean, kZero };
FillPolicy parse_fill(const std::string& name);
std::string fill_name(FillPolicy fill);

enum class ScoreMetric : std::uint8_t { kF1, kAccuracy };
ScoreMetric parse_metric(const std::string& name);
std::string metric_name(ScoreMetric metric);

struct ModelSpec {
  Strategy strategy = Strategy::kEmbrace;
  std::size_t classes = 0;
  std::vector<Shape> input_shapes;  // per-modality sample shape
  std::vector<LayerSpec> encoder;   // per branch; early and mae run it on the concatenated input
  std::size_t feature_width = 128;  // branch projection width of the non-embrace strategies
  std::size_t fusion_width = 1024;  // c for embracenet, sketch width d for cmp
  std::vector<std::size_t> head;    // hidden widths between fusion and the softmax layer
  double dropout_keep = 0.5;
  FillPolicy fill = FillPolicy::kMean;
  std::vector<double> p;            // empty = uniform
  InferenceMode inference = InferenceMode::kExpected;
  ModalityDropout modality_dropout;
  double mae_corrupt_rate = 0.5;
  std::size_t mae_pretrain_epochs = 1;
  std::uint64_t seed = 0;

  std::size_t modalities() const { return input_shapes.size(); }
  void validate() const;
  // model.*, embrace.* and mae.* keys; input shapes and classes included.
  ConfigFile to_config() const;
  static ModelSpec from_config(const ConfigFile& cfg);
};

struct TrainOptions {
  std::size_t epochs = 1;
  std::size_t batch_size = 64;
  AdamOptions adam;
  std::size_t log_every = 100;
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::size_t steps = 0;
  double final_loss = 0.0;
  double train_f1 = 0.0;
  double val_f1 = 0.0;
  bool has_val = false;
};

// Convolution, pooling and dense stages over a [B x ...] input.
struct Encoder {
  struct Stage {
    LayerSpec spec;
    Shape in_shape;   // per sample
    Shape out_shape;  // per sample
    std::optional<Conv2dLayer<float>> conv;
    std::optional<DenseLayer<float>> dense;
  };
  Shape input_shape;
  Shape output_shape;
  std::vector<Stage> stages;

  static Encoder create(const std::vector<LayerSpec>& layers, const Shape& input, Rng& rng);
  std::size_t output_width() const { return shape_size(output_shape); }
};

// Mirror image of an encoder plus projection, used by the autoencoder.
struct Decoder {
  struct Stage {
    enum class Kind : std::uint8_t { kDense, kConv, kUpsample, kReshape };
    Kind kind = Kind::kDense;
    Shape out_shape;  // per sample
    std::size_t ph = 1, pw = 1;
    std::optional<Conv2dLayer<float>> conv;
    std::optional<DenseLayer<float>> dense;
  };
  std::vector<Stage> stages;
};

class FusionModel {
 public:
  static FusionModel create(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  Strategy strategy() const { return spec_.strategy; }
  bool trained() const { return trained_; }
  const TrainResult& train_result() const { return result_; }

  // Fits fill statistics, trains with Adam, and for late fusion sets the
  // per-modality weights from validation (or training) F1. Throws
  // NumericError with the step index on a non-finite loss.
  TrainResult train(const ModalityBatch& train, const ModalityBatch* val,
                    const TrainOptions& options);

  // Class predictions under the strategy's own missing-data handling.
  // Read-only; safe to call concurrently.
  std::vector<int> predict(const ModalityBatch& batch, std::uint64_t eval_seed = 0) const;
  // Softmax probabilities [B x K] (late fusion: the fused, normalized scores).
  Tensorf probabilities(const ModalityBatch& batch, std::uint64_t eval_seed = 0) const;
  double score(const ModalityBatch& batch, ScoreMetric metric, std::uint64_t eval_seed = 0) const;

  // Embracement output e [B x c]; UsageError for other strategies.
  Tensorf embraced(const ModalityBatch& batch, std::uint64_t eval_seed = 0) const;

  // Score of each modality evaluated alone.
  std::vector<double> modality_scores(const ModalityBatch& batch, ScoreMetric metric) const;

  const std::vector<double>& selection_probabilities() const { return p_; }
  void set_selection_probabilities(std::vector<double> p);

  const ModalityMeans& means() const { return means_; }
  const LateFusionWeights& late_weights() const { return late_weights_; }
  void set_late_weights(LateFusionWeights w);
  const std::vector<CountSketchPlan>& sketch_plans() const { return plans_; }

  std::vector<std::pair<std::string, Tensorf*>> named_params();
  std::vector<std::pair<std::string, const Tensorf*>> named_params() const;
  // FNV-1a over parameter names, shapes and values; excludes p.
  std::uint64_t param_digest() const;

  // Parameters are counted in floats.
  std::size_t param_count() const;

  struct FileMeta {
    std::string config_text;
    std::string config_digest;
    std::string data_digest;
  };
  void save(const std::filesystem::path& path, const FileMeta& meta) const;
  static FusionModel load(const std::filesystem::path& path, FileMeta* meta = nullptr);

 private:
  FusionModel() = default;
  void build();
  ModalityBatch prepare_inputs(const ModalityBatch& batch) const;
  std::vector<Var<float>> forward(Graph<float>& g, const ModalityBatch& batch,
                                  const Tensorf* embrace_weights, bool training, Rng& rng,
                                  Var<float>* embraced_out = nullptr,
                                  Var<float>* reconstruction = nullptr) const;
  Var<float> encode(Graph<float>& g, const Encoder& enc, Var<float> x, bool training,
                    Rng& rng) const;
  Var<float> decode(Graph<float>& g, Var<float> code) const;
  Var<float> run_head(Graph<float>& g, const std::vector<DenseLayer<float>>& head, Var<float> x,
                      bool training, Rng& rng) const;
  Var<float> hidden_dense(Graph<float>& g, const DenseLayer<float>& layer, Var<float> x,
                          bool training, Rng& rng) const;
  Var<float> early_input(Graph<float>& g, const ModalityBatch& batch) const;
  Tensorf early_target(const ModalityBatch& batch) const;
  std::vector<Tensorf*> trainable(bool include_decoder, bool include_classifier);

  ModelSpec spec_;
  std::vector<Encoder> branches_;
  std::vector<DenseLayer<float>> projections_;
  std::vector<std::vector<DenseLayer<float>>> heads_;  // one per branch for late fusion
  Decoder decoder_;
  std::vector<CountSketchPlan> plans_;
  std::vector<double> p_;
  ModalityMeans means_;
  LateFusionWeights late_weights_;
  TrainResult result_;
  bool trained_ = false;
};

}  // namespace embrace
