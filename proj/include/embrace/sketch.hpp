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
#include <span>
#include <vector>

#include "embrace/autodiff.hpp"

namespace embrace {

// Spectrum magnitude above which compact multi-linear pooling logs a warning.
inline constexpr double kSpectrumWarnThreshold = 1e6;

// Hash h: [n] -> [d] and sign s: [n] -> {+1, -1}, fixed at model creation.
struct CountSketchPlan {
  std::size_t input_width = 0;  // n
  std::size_t sketch_width = 0;  // d, a power of two
  std::vector<std::uint32_t> hash;
  std::vector<std::int8_t> sign;
  std::uint64_t seed = 0;

  static CountSketchPlan create(std::size_t n, std::size_t d, std::uint64_t seed);
  void validate() const;
};

// sketch[j] = sum_{i : h(i) = j} s(i) v[i]. Accepts [n] or [B x n].
template <typename T>
Tensor<T> count_sketch(const Tensor<T>& v, const CountSketchPlan& plan);

// Compact multi-linear pooling of m feature vectors (or [B x n_k] batches):
// L2-normalize, count-sketch, multiply spectra, inverse transform.
template <typename T>
Tensor<T> cmp_fuse(std::span<const Tensor<T>> features, std::span<const CountSketchPlan> plans);

// Graph form. Logs a diagnostic when a spectrum bin exceeds
// kSpectrumWarnThreshold; `max_bin` receives the largest magnitude.
template <typename T>
Var<T> cmp_fuse(std::span<const Var<T>> features, std::span<const CountSketchPlan> plans,
                double* max_bin = nullptr);

}  // namespace embrace
