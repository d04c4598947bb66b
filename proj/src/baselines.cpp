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

#include "embrace/baselines.hpp"

#include <algorithm>

namespace embrace {

template <typename T>
Tensor<T> concat_fuse(std::span<const Tensor<T>> features, FusionStage) {
  if (features.empty()) throw UsageError("concat_fuse: no features");
  const std::size_t batch = features[0].dim(0);
  std::size_t total = 0;
  for (std::size_t k = 0; k < features.size(); ++k) {
    if (features[k].rank() < 2 || features[k].dim(0) != batch) {
      throw UsageError("concat_fuse: modality " + std::to_string(k) + " has shape " +
                       shape_str(features[k].shape()) + ", batch size " +
                       std::to_string(batch) + " expected");
    }
    total += features[k].size() / batch;
  }
  Tensor<T> out({batch, total});
  T* dst = out.data().data();
  std::size_t offset = 0;
  for (const auto& f : features) {
    const std::size_t w = f.size() / batch;
    const T* src = f.data().data();
    for (std::size_t b = 0; b < batch; ++b) std::copy(src + b * w, src + (b + 1) * w, dst + b * total + offset);
    offset += w;
  }
  return out;
}

ModalityMeans fit_means(const ModalityBatch& train) {
  ModalityMeans means;
  for (std::size_t k = 0; k < train.modalities(); ++k) {
    const std::size_t channels = train.sample_shape(k).back();
    std::vector<double> acc(channels, 0.0);
    std::vector<std::size_t> count(channels, 0);
    const std::size_t w = train.sample_width(k);
    auto d = train.inputs[k].data();
    for (std::size_t n = 0; n < train.size(); ++n) {
      if (!train.presence[n][k]) continue;
      for (std::size_t i = 0; i < w; ++i) {
        acc[i % channels] += d[n * w + i];
        ++count[i % channels];
      }
    }
    std::vector<float> mean(channels, 0.0f);
    for (std::size_t c = 0; c < channels; ++c) {
      if (count[c]) mean[c] = static_cast<float>(acc[c] / static_cast<double>(count[c]));
    }
    means.channels.push_back(std::move(mean));
  }
  return means;
}

namespace {

void check_means(const ModalityBatch& batch, const ModalityMeans& means) {
  if (means.channels.size() != batch.modalities()) {
    throw ConfigError("training means cover " + std::to_string(means.channels.size()) +
                      " modalities, batch has " + std::to_string(batch.modalities()));
  }
  for (std::size_t k = 0; k < batch.modalities(); ++k) {
    if (means.channels[k].size() != batch.sample_shape(k).back()) {
      throw ConfigError("training means for modality " + std::to_string(k) +
                        " have the wrong channel count");
    }
  }
}

void fill_row(float* row, std::size_t width, const std::vector<float>& mean) {
  for (std::size_t i = 0; i < width; ++i) row[i] = mean[i % mean.size()];
}

}  // namespace

ModalityBatch mean_fill_missing(const ModalityBatch& batch, const ModalityMeans& means) {
  check_means(batch, means);
  ModalityBatch out = batch;
  for (std::size_t k = 0; k < out.modalities(); ++k) {
    const std::size_t w = out.sample_width(k);
    float* x = out.inputs[k].data().data();
    for (std::size_t n = 0; n < out.size(); ++n) {
      if (!out.presence[n][k]) fill_row(x + n * w, w, means.channels[k]);
    }
  }
  for (auto& u : out.presence) std::fill(u.begin(), u.end(), 1);
  return out;
}

ModalityBatch hold_fill_missing(const ModalityBatch& stream, const ModalityMeans& means) {
  check_means(stream, means);
  ModalityBatch out = stream;
  for (std::size_t k = 0; k < out.modalities(); ++k) {
    const std::size_t w = out.sample_width(k);
    float* x = out.inputs[k].data().data();
    for (std::size_t n = 0; n < out.size(); ++n) {
      if (out.presence[n][k]) continue;
      if (n == 0) {
        fill_row(x, w, means.channels[k]);
      } else {
        std::copy(x + (n - 1) * w, x + n * w, x + n * w);
      }
    }
  }
  for (auto& u : out.presence) std::fill(u.begin(), u.end(), 1);
  return out;
}

void LateFusionWeights::validate() const {
  bool any = false;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ConfigError("late fusion weights must be non-negative");
    any = any || w > 0.0;
  }
  if (!any) throw ConfigError("late fusion needs at least one positive weight");
}

int late_fuse(std::span<const std::vector<double>> class_probs, const LateFusionWeights& weights,
              const PresenceVector& u) {
  const std::size_t m = class_probs.size();
  if (m == 0 || weights.weights.size() != m || u.size() != m) {
    throw UsageError("late_fuse: probabilities, weights and presence disagree on m");
  }
  bool any = false;
  for (std::size_t k = 0; k < m; ++k) any = any || u[k];
  if (!any) throw UnrecoverableInputError("late_fuse: no modality is present");
  const std::size_t classes = class_probs[0].size();
  std::vector<double> combined(classes, 0.0);
  for (std::size_t k = 0; k < m; ++k) {
    if (!u[k] || weights.weights[k] == 0.0) continue;
    if (class_probs[k].size() != classes) throw UsageError("late_fuse: class counts disagree");
    for (std::size_t j = 0; j < classes; ++j) combined[j] += weights.weights[k] * class_probs[k][j];
  }
  return static_cast<int>(std::max_element(combined.begin(), combined.end()) - combined.begin());
}

std::vector<int> late_fuse_batch(std::span<const Tensorf> class_probs,
                                 const LateFusionWeights& weights,
                                 std::span<const PresenceVector> presence) {
  const std::size_t m = class_probs.size();
  if (m == 0) throw UsageError("late_fuse_batch: no modalities");
  const std::size_t batch = class_probs[0].dim(0), classes = class_probs[0].dim(1);
  std::vector<std::vector<double>> rows(m, std::vector<double>(classes));
  std::vector<int> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t j = 0; j < classes; ++j) rows[k][j] = class_probs[k].at(b, j);
    out[b] = late_fuse(rows, weights, presence[b]);
  }
  return out;
}

ModalityBatch mae_corrupt(const ModalityBatch& batch, double rate, Rng& rng) {
  ModalityBatch out = batch;
  if (rate <= 0.0) return out;
  for (std::size_t n = 0; n < out.size(); ++n) {
    for (std::size_t k = 0; k < out.modalities(); ++k) {
      if (!rng.bernoulli(rate)) continue;
      const std::size_t w = out.sample_width(k);
      float* x = out.inputs[k].data().data() + n * w;
      std::fill(x, x + w, kCorruptValue);
    }
  }
  return out;
}

ModalityBatch mae_mark_missing(const ModalityBatch& batch) {
  ModalityBatch out = batch;
  for (std::size_t k = 0; k < out.modalities(); ++k) {
    const std::size_t w = out.sample_width(k);
    float* x = out.inputs[k].data().data();
    for (std::size_t n = 0; n < out.size(); ++n) {
      if (!out.presence[n][k]) std::fill(x + n * w, x + (n + 1) * w, kCorruptValue);
    }
  }
  return out;
}

template <typename T>
double reconstruction_loss(const Tensor<T>& reconstruction, const Tensor<T>& target) {
  Graph<T> g(false);
  return static_cast<double>(
      ag::binary_cross_entropy(g.constant(reconstruction), target).value()[0]);
}

template Tensor<float> concat_fuse<float>(std::span<const Tensor<float>>, FusionStage);
template Tensor<double> concat_fuse<double>(std::span<const Tensor<double>>, FusionStage);
template double reconstruction_loss<float>(const Tensor<float>&, const Tensor<float>&);
template double reconstruction_loss<double>(const Tensor<double>&, const Tensor<double>&);

}  // namespace embrace
