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

#include "embrace/layers.hpp"

#include <cmath>
#include <string>

namespace embrace {

template <typename T>
Tensor<T> init_params(Shape shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw ParameterError("init_params: fan_in must be positive");
  Tensor<T> out(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : out.data()) v = static_cast<T>(rng.normal(0.0, stddev));
  return out;
}

template <typename T>
DenseLayer<T> DenseLayer<T>::create(std::size_t in, std::size_t out, Activation act,
                                    Rng& rng) {
  DenseLayer layer{init_params<T>({in, out}, in, rng), init_bias<T>(out), act};
  layer.weights.set_requires_grad(true);
  layer.bias.set_requires_grad(true);
  return layer;
}

template <typename T>
Var<T> DenseLayer<T>::forward(Graph<T>& g, Var<T> x) {
  if (x.shape().size() != 2 || x.shape()[1] != in_width()) {
    throw DimensionError("dense layer expects [Bx" + std::to_string(in_width()) +
                         "], got " + shape_str(x.shape()));
  }
  auto y = ag::add_bias(ag::matmul(x, g.param(weights)), g.param(bias));
  return activation == Activation::kIdentity ? y : ag::activation(y, activation);
}

template <typename T>
Conv2dLayer<T> Conv2dLayer<T>::create(std::size_t kernel, std::size_t in_channels,
                                      std::size_t out_channels, Activation act,
                                      Rng& rng) {
  Conv2dLayer layer{
      init_params<T>({kernel, kernel, in_channels, out_channels},
                     kernel * kernel * in_channels, rng),
      init_bias<T>(out_channels), act, Padding::kSame};
  layer.kernels.set_requires_grad(true);
  layer.bias.set_requires_grad(true);
  return layer;
}

template <typename T>
Var<T> Conv2dLayer<T>::forward(Graph<T>& g, Var<T> x) {
  auto y = ag::add_bias(ag::conv2d(x, g.param(kernels), padding), g.param(bias));
  return activation == Activation::kIdentity ? y : ag::activation(y, activation);
}

void DropoutPolicy::validate() const {
  if (!(keep > 0.0 && keep <= 1.0)) {
    throw ParameterError("dropout keep probability must lie in (0, 1], got " +
                         std::to_string(keep));
  }
}

namespace {

template <typename T>
Tensor<T> dropout_mask(const Shape& shape, double keep, Rng& rng) {
  Tensor<T> mask(shape);
  const T scale = static_cast<T>(1.0 / keep);
  for (auto& v : mask.data()) v = rng.bernoulli(keep) ? scale : T{0};
  return mask;
}

}  // namespace

template <typename T>
Tensor<T> dropout_apply(const Tensor<T>& x, const DropoutPolicy& policy, Rng& rng) {
  policy.validate();
  if (!policy.training || policy.keep == 1.0) return x;
  Tensor<T> out = dropout_mask<T>(x.shape(), policy.keep, rng);
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= xd[i];
  return out;
}

template <typename T>
Var<T> dropout(Var<T> x, const DropoutPolicy& policy, Rng& rng) {
  policy.validate();
  if (!policy.training || policy.keep == 1.0) return x;
  return ag::mul_const(x, dropout_mask<T>(x.shape(), policy.keep, rng));
}

template <typename T>
void adam_step(std::span<Tensor<T>* const> params, AdamState<T>& state) {
  const AdamOptions& o = state.options;
  if (state.first_moment.empty()) {
    for (const Tensor<T>* p : params) {
      state.first_moment.emplace_back(p->size(), T{0});
      state.second_moment.emplace_back(p->size(), T{0});
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw UsageError("adam_step: optimizer state tracks " +
                     std::to_string(state.first_moment.size()) + " parameters, got " +
                     std::to_string(params.size()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = *params[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != p.size() || (p.has_grad() && p.grad().size() != p.size())) {
      throw UsageError("adam_step: parameter " + std::to_string(k) + " changed shape to " +
                       shape_str(p.shape()));
    }
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = o.beta1 * m[i] + (1.0 - o.beta1) * gi;
      const double vi = o.beta2 * v[i] + (1.0 - o.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / correction1;
      const double v_hat = vi / correction2;
      w[i] = static_cast<T>(w[i] - o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon));
    }
  }
}

#define EMBRACE_INSTANTIATE(T)                                                      \
  template Tensor<T> init_params<T>(Shape, std::size_t, Rng&);                      \
  template struct DenseLayer<T>;                                                    \
  template struct Conv2dLayer<T>;                                                   \
  template Tensor<T> dropout_apply<T>(const Tensor<T>&, const DropoutPolicy&, Rng&); \
  template Var<T> dropout<T>(Var<T>, const DropoutPolicy&, Rng&);                   \
  template void adam_step<T>(std::span<Tensor<T>* const>, AdamState<T>&);

EMBRACE_INSTANTIATE(float)
EMBRACE_INSTANTIATE(double)

#undef EMBRACE_INSTANTIATE

}  // namespace embrace
