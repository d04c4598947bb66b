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
#include <span>
#include <string>
#include <vector>

#include "embrace/autodiff.hpp"
#include "embrace/data.hpp"
#include "embrace/rng.hpp"

namespace embrace {

enum class FusionStage : std::uint8_t { kEarly, kIntermediate };

// Flattens each [B x ...] feature to [B x w_k] and concatenates along the
// feature axis in modality order. Early fusion passes raw inputs,
// intermediate fusion passes encoder outputs; the operation is the same.
template <typename T>
Tensor<T> concat_fuse(std::span<const Tensor<T>> features, FusionStage stage);

// Per-modality, per-channel (trailing axis) training means.
struct ModalityMeans {
  std::vector<std::vector<float>> channels;
};

ModalityMeans fit_means(const ModalityBatch& train);

// Absent modalities take their per-channel training mean; presence becomes
// all ones.
ModalityBatch mean_fill_missing(const ModalityBatch& batch, const ModalityMeans& means);

// Absent entries of a time-ordered stream repeat the previous present value
// of the same modality. A modality absent from the first step falls back to
// its training mean. Presence becomes all ones.
ModalityBatch hold_fill_missing(const ModalityBatch& stream, const ModalityMeans& means);

struct LateFusionWeights {
  std::vector<double> weights;
  std::string source = "val_f1";

  void validate() const;
};

// argmax_j sum_k u_k w_k prob_k[j]; lowest class wins ties.
int late_fuse(std::span<const std::vector<double>> class_probs, const LateFusionWeights& weights,
              const PresenceVector& u);

// Row-wise late_fuse over [B x K] probability tensors.
std::vector<int> late_fuse_batch(std::span<const Tensorf> class_probs,
                                 const LateFusionWeights& weights,
                                 std::span<const PresenceVector> presence);

inline constexpr float kCorruptValue = -1.0f;

// Each modality of each sample is replaced wholesale by -1 with probability
// `rate`. Presence vectors are left alone.
ModalityBatch mae_corrupt(const ModalityBatch& batch, double rate, Rng& rng);

// Sets every absent modality to -1, the autoencoder's missing-data marker.
ModalityBatch mae_mark_missing(const ModalityBatch& batch);

// Mean binary cross-entropy of a sigmoid reconstruction against its target.
template <typename T>
Var<T> reconstruction_loss(Var<T> reconstruction, const Tensor<T>& target) {
  return ag::binary_cross_entropy(reconstruction, target);
}

template <typename T>
double reconstruction_loss(const Tensor<T>& reconstruction, const Tensor<T>& target);

}  // namespace embrace
