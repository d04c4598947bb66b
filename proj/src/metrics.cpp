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

#include "embrace/metrics.hpp"

#include <string>

#include "embrace/errors.hpp"

namespace embrace {

ConfusionAccumulator::ConfusionAccumulator(std::size_t classes)
    : classes_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw UsageError("confusion matrix needs at least one class");
}

void ConfusionAccumulator::add(int truth, int prediction) {
  const auto k = static_cast<int>(classes_);
  if (truth < 0 || truth >= k || prediction < 0 || prediction >= k) {
    throw DataError("class index outside [0, " + std::to_string(classes_) + "): truth " +
                    std::to_string(truth) + ", prediction " + std::to_string(prediction));
  }
  ++counts_[static_cast<std::size_t>(truth) * classes_ + static_cast<std::size_t>(prediction)];
  ++total_;
}

void ConfusionAccumulator::add(std::span<const int> truth, std::span<const int> predictions) {
  if (truth.size() != predictions.size()) {
    throw UsageError("confusion matrix: " + std::to_string(truth.size()) + " labels vs " +
                     std::to_string(predictions.size()) + " predictions");
  }
  for (std::size_t i = 0; i < truth.size(); ++i) add(truth[i], predictions[i]);
}

std::uint64_t ConfusionAccumulator::support(std::size_t cls) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < classes_; ++j) s += count(cls, j);
  return s;
}

std::uint64_t ConfusionAccumulator::predicted(std::size_t cls) const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < classes_; ++i) s += count(i, cls);
  return s;
}

double ConfusionAccumulator::precision(std::size_t cls) const {
  const auto p = predicted(cls);
  return p ? static_cast<double>(count(cls, cls)) / static_cast<double>(p) : 0.0;
}

double ConfusionAccumulator::recall(std::size_t cls) const {
  const auto s = support(cls);
  return s ? static_cast<double>(count(cls, cls)) / static_cast<double>(s) : 0.0;
}

double ConfusionAccumulator::weighted_f1() const {
  if (total_ == 0) throw UsageError("weighted F1 of an empty sample");
  double score = 0.0;
  for (std::size_t i = 0; i < classes_; ++i) {
    const auto n_i = support(i);
    if (n_i == 0) continue;
    const double p = precision(i), r = recall(i);
    if (p + r == 0.0) continue;
    score += 2.0 * (static_cast<double>(n_i) / static_cast<double>(total_)) * (p * r) / (p + r);
  }
  return score;
}

double ConfusionAccumulator::accuracy() const {
  if (total_ == 0) throw UsageError("accuracy of an empty sample");
  std::uint64_t hit = 0;
  for (std::size_t i = 0; i < classes_; ++i) hit += count(i, i);
  return static_cast<double>(hit) / static_cast<double>(total_);
}

double weighted_f1(std::span<const int> predictions, std::span<const int> labels,
                   std::size_t classes) {
  if (labels.empty()) throw UsageError("weighted F1 of an empty sample");
  ConfusionAccumulator acc(classes);
  acc.add(labels, predictions);
  return acc.weighted_f1();
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (labels.empty()) throw UsageError("accuracy of an empty sample");
  if (labels.size() != predictions.size()) throw UsageError("accuracy: length mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += labels[i] == predictions[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace embrace
