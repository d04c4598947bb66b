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
#include "embrace/rng.hpp"

namespace embrace {

// He initialization: N(0, sqrt(2 / fan_in)).
template <typename T>
Tensor<T> init_params(Shape shape, std::size_t fan_in, Rng& rng);

template <typename T>
Tensor<T> init_bias(std::size_t width) {
  return Tensor<T>({width}, T{0});
}

// y = f(x W + b) over a leading batch axis. x is [B x in].
template <typename T>
struct DenseLayer {
  Tensor<T> weights;  // [in x out]
  Tensor<T> bias;     // [out]
  Activation activation = Activation::kRelu;

  static DenseLayer create(std::size_t in, std::size_t out, Activation act, Rng& rng);

  std::size_t in_width() const { return weights.dim(0); }
  std::size_t out_width() const { return weights.dim(1); }

  Var<T> forward(Graph<T>& g, Var<T> x);
};

// 'same'-padded cross-correlation with per-channel bias. x is [B x H x W x Cin].
template <typename T>
struct Conv2dLayer {
  Tensor<T> kernels;  // [kh x kw x Cin x Cout]
  Tensor<T> bias;     // [Cout]
  Activation activation = Activation::kRelu;
  Padding padding = Padding::kSame;

  static Conv2dLayer create(std::size_t kernel, std::size_t in_channels,
                            std::size_t out_channels, Activation act, Rng& rng);

  Var<T> forward(Graph<T>& g, Var<T> x);
};

struct DropoutPolicy {
  double keep = 1.0;
  bool training = false;
  std::uint64_t stream = 0;

  void validate() const;
};

// Inverted dropout: survivors are scaled by 1/keep while training; identity at
// inference.
template <typename T>
Tensor<T> dropout_apply(const Tensor<T>& x, const DropoutPolicy& policy, Rng& rng);

// Graph form of dropout_apply.
template <typename T>
Var<T> dropout(Var<T> x, const DropoutPolicy& policy, Rng& rng);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-2;
};

template <typename T>
struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

// One Adam update with bias correction, applied to every parameter from its
// accumulated gradient:  p -= lr * m_hat / (sqrt(v_hat) + eps).
// The step counter is incremented before the update.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, AdamState<T>& state);

}  // namespace embrace
