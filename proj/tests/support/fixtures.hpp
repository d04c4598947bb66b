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

#include <vector>

#include "embrace/data.hpp"
#include "embrace/model.hpp"

namespace fixture {

// A small m-modality dense model, cheap enough to build in every test.
inline embrace::ModelSpec small_spec(embrace::Strategy strategy, std::size_t m,
                                     std::size_t classes = 3) {
  embrace::ModelSpec spec;
  spec.strategy = strategy;
  spec.classes = classes;
  for (std::size_t k = 0; k < m; ++k) spec.input_shapes.push_back({3 + k});
  spec.encoder = embrace::parse_layers("dense:6");
  spec.feature_width = 5;
  spec.fusion_width = 8;
  spec.head = {7};
  spec.dropout_keep = 1.0;
  spec.mae_pretrain_epochs = 1;
  spec.seed = 5;
  return spec;
}

inline embrace::ModalityBatch random_batch(const embrace::ModelSpec& spec, std::size_t n,
                                           embrace::Rng& rng) {
  std::vector<embrace::Tensorf> inputs;
  for (const auto& shape : spec.input_shapes) {
    embrace::Shape full{n};
    full.insert(full.end(), shape.begin(), shape.end());
    embrace::Tensorf t(full);
    for (auto& v : t.storage()) v = static_cast<float>(rng.uniform());
    inputs.push_back(std::move(t));
  }
  std::vector<int> labels(n);
  for (auto& y : labels) y = static_cast<int>(rng.index(spec.classes));
  return embrace::ModalityBatch::from_inputs(std::move(inputs), std::move(labels));
}

}  // namespace fixture

namespace fixture {

// Dense-only model spec matched to a synthetic dataset.
inline embrace::ModelSpec synthetic_model_spec(embrace::Strategy strategy,
                                               const embrace::SyntheticSpec& data,
                                               std::size_t fusion_width = 16) {
  embrace::ModelSpec spec;
  spec.strategy = strategy;
  spec.classes = data.classes;
  for (std::size_t k = 0; k < data.modalities; ++k) spec.input_shapes.push_back({data.width});
  spec.encoder = embrace::parse_layers("dense:16");
  spec.feature_width = 16;
  spec.fusion_width = fusion_width;
  spec.head = {16};
  spec.dropout_keep = 1.0;
  spec.mae_pretrain_epochs = 1;
  if (strategy == embrace::Strategy::kEmbrace) {
    spec.modality_dropout = {embrace::ModalityDropout::Kind::kIndependent, 0.5};
  }
  spec.seed = 11;
  return spec;
}

// Synthetic splits rescaled to [0, 1] with training statistics.
inline embrace::SyntheticData normalized_synthetic(const embrace::SyntheticSpec& spec) {
  auto data = embrace::generate_synthetic(spec);
  const auto stats = embrace::fit_normalization(data.train, 0.0f, 1.0f);
  for (auto* split : {&data.train, &data.val, &data.test, &data.stream}) {
    if (split->size()) *split = embrace::normalize(*split, stats);
  }
  return data;
}

inline embrace::FusionModel train_synthetic(embrace::Strategy strategy,
                                            const embrace::SyntheticSpec& data_spec,
                                            const embrace::SyntheticData& data,
                                            std::size_t epochs = 2, std::size_t fusion_width = 16) {
  auto model = embrace::FusionModel::create(synthetic_model_spec(strategy, data_spec, fusion_width));
  embrace::TrainOptions options;
  options.epochs = epochs;
  options.seed = 3;
  model.train(data.train, &data.val, options);
  return model;
}

}  // namespace fixture
