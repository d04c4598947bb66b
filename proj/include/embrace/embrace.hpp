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
#include <string>
#include <vector>

#include "embrace/autodiff.hpp"
#include "embrace/layers.hpp"
#include "embrace/rng.hpp"

namespace embrace {

enum class InferenceMode : std::uint8_t { kExpected, kStochastic };

InferenceMode parse_inference_mode(const std::string& name);
std::string inference_mode_name(InferenceMode mode);

// Training-time removal of whole modalities.
struct ModalityDropout {
  enum class Kind : std::uint8_t { kNone, kSingle, kIndependent };
  Kind kind = Kind::kNone;
  double rate = 0.0;

  // "none", "single:0.5", "independent:0.5"
  static ModalityDropout parse(const std::string& text);
  std::string str() const;
};

struct EmbraceConfig {
  std::size_t width = 1;       // c
  std::size_t modalities = 1;  // m
  std::vector<double> p;       // selection probabilities, length m
  InferenceMode inference = InferenceMode::kExpected;
  ModalityDropout modality_dropout;

  static EmbraceConfig uniform(std::size_t width, std::size_t modalities);
  void validate() const;
};

// u_k = 1 when modality k carries data for the sample.
using PresenceVector = std::vector<std::uint8_t>;

// c x m matrix of {0,1}; every row holds exactly one 1.
class SelectionMatrix {
 public:
  SelectionMatrix(std::size_t rows, std::size_t modalities)
      : rows_(rows), modalities_(modalities), selected_(rows, 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t modalities() const { return modalities_; }
  std::size_t selected(std::size_t row) const { return selected_[row]; }
  void select(std::size_t row, std::size_t modality) { selected_[row] = static_cast<std::uint32_t>(modality); }
  std::uint8_t operator()(std::size_t row, std::size_t modality) const {
    return selected_[row] == modality ? 1 : 0;
  }

 private:
  std::size_t rows_;
  std::size_t modalities_;
  std::vector<std::uint32_t> selected_;
};

// d = f(W x + b) with the layer's activation; the layer must produce c values.
template <typename T>
Var<T> dock(Graph<T>& g, Var<T> x, DenseLayer<T>& layer, std::size_t width);

// p_hat_k = u_k p_k / sum_j u_j p_j. Throws UnrecoverableInputError when no
// present modality carries probability mass.
std::vector<double> adjust_probabilities(std::span<const double> p,
                                         const PresenceVector& u);

// Each of the c rows is an independent Multinomial(1, p_hat) draw.
SelectionMatrix sample_selection(std::span<const double> p_hat, std::size_t c, Rng& rng);

// e_i = sum_k r_i^(k) d_i^(k) for single vectors d^(k) of length c.
template <typename T>
Tensor<T> embrace(std::span<const Tensor<T>> docked, const SelectionMatrix& r);

// e_i = sum_k p_hat_k d_i^(k), the expectation of embrace() under p_hat.
template <typename T>
Tensor<T> embrace_expected(std::span<const Tensor<T>> docked, std::span<const double> p_hat);

// Per-sample selection weights [B x c x m] for the graph-level embrace op.
// Stochastic mode samples one SelectionMatrix per sample; expected mode uses
// p_hat directly.
template <typename T>
Tensor<T> selection_weights(std::span<const double> p, std::span<const PresenceVector> presence,
                            std::size_t c, InferenceMode mode, Rng& rng);

PresenceVector modality_dropout(const PresenceVector& u, const ModalityDropout& policy,
                                Rng& rng);

// p_k = score_k / sum_j score_j.
std::vector<double> calibrate_probabilities(std::span<const double> scores);

}  // namespace embrace
