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

#include "embrace/sketch.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <tuple>

#include "embrace/fft.hpp"
#include "embrace/log.hpp"
#include "embrace/rng.hpp"

namespace embrace {

CountSketchPlan CountSketchPlan::create(std::size_t n, std::size_t d, std::uint64_t seed) {
  CountSketchPlan plan;
  plan.input_width = n;
  plan.sketch_width = d;
  plan.seed = seed;
  if (n < 1) throw ParameterError("count sketch needs n >= 1");
  if (!is_power_of_two(d)) {
    throw ParameterError("count sketch width " + std::to_string(d) + " is not a power of two");
  }
  Rng rng = Rng::stream(seed, 0x5e7c);
  plan.hash.resize(n);
  plan.sign.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    plan.hash[i] = static_cast<std::uint32_t>(rng.index(d));
    plan.sign[i] = rng.bernoulli(0.5) ? 1 : -1;
  }
  return plan;
}

void CountSketchPlan::validate() const {
  if (!is_power_of_two(sketch_width)) {
    throw ConfigError("count sketch width " + std::to_string(sketch_width) +
                      " is not a power of two");
  }
  if (hash.size() != input_width || sign.size() != input_width) {
    throw ConfigError("count sketch tables do not match the input width");
  }
  for (std::size_t i = 0; i < input_width; ++i) {
    if (hash[i] >= sketch_width) throw ConfigError("count sketch hash out of range");
    if (sign[i] != 1 && sign[i] != -1) throw ConfigError("count sketch sign must be +-1");
  }
}

namespace {

template <typename T>
Var<T> as_rows(Var<T> v) {
  if (v.shape().size() == 1) return ag::reshape(v, Shape{1, v.shape()[0]});
  return v;
}

void check_plans(std::span<const CountSketchPlan> plans, std::size_t m) {
  if (m == 0) throw UsageError("cmp_fuse: no modalities");
  if (plans.size() != m) {
    throw ConfigError("cmp_fuse: " + std::to_string(plans.size()) + " sketch plans for " +
                      std::to_string(m) + " modalities");
  }
  for (const auto& plan : plans) {
    if (plan.sketch_width != plans[0].sketch_width) {
      throw ConfigError("cmp_fuse: sketch widths disagree (" +
                        std::to_string(plans[0].sketch_width) + " vs " +
                        std::to_string(plan.sketch_width) + ")");
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> count_sketch(const Tensor<T>& v, const CountSketchPlan& plan) {
  Graph<T> g(false);
  Var<T> x = as_rows(g.constant(v));
  if (x.shape()[1] != plan.input_width) {
    throw DimensionError("count sketch expects width " + std::to_string(plan.input_width) +
                         ", got " + shape_str(v.shape()));
  }
  Tensor<T> out = ag::count_sketch(x, plan.hash, plan.sign, plan.sketch_width).value();
  return v.rank() == 1 ? out.reshaped({plan.sketch_width}) : out;
}

template <typename T>
Var<T> cmp_fuse(std::span<const Var<T>> features, std::span<const CountSketchPlan> plans,
                double* max_bin) {
  check_plans(plans, features.size());
  // Multiply spectra in an order fixed by the plans rather than by modality
  // position, so permuting (feature, plan) pairs gives bitwise equal output.
  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(plans[a].hash, plans[a].sign, plans[a].seed) <
           std::tie(plans[b].hash, plans[b].sign, plans[b].seed);
  });
  std::vector<Var<T>> sketches;
  for (std::size_t k : order) {
    Var<T> x = as_rows(features[k]);
    if (x.shape()[1] != plans[k].input_width) {
      throw DimensionError("cmp_fuse: modality " + std::to_string(k) + " has width " +
                           std::to_string(x.shape()[1]) + ", plan expects " +
                           std::to_string(plans[k].input_width));
    }
    Var<T> unit = ag::l2_normalize(x, static_cast<T>(1e-12));
    sketches.push_back(
        ag::count_sketch(unit, plans[k].hash, plans[k].sign, plans[k].sketch_width));
  }
  double peak = 0.0;
  Var<T> out = ag::spectral_product<T>(sketches, &peak);
  if (peak > kSpectrumWarnThreshold) {
    logger()->warn("event=cmp_spectrum_overflow max_bin={:.6g} threshold={:.6g}", peak,
                   kSpectrumWarnThreshold);
  }
  if (max_bin) *max_bin = peak;
  return out;
}

template <typename T>
Tensor<T> cmp_fuse(std::span<const Tensor<T>> features, std::span<const CountSketchPlan> plans) {
  check_plans(plans, features.size());
  Graph<T> g(false);
  std::vector<Var<T>> vars;
  for (const auto& f : features) vars.push_back(g.constant(f));
  Tensor<T> out = cmp_fuse<T>(vars, plans).value();
  return features[0].rank() == 1 ? out.reshaped({plans[0].sketch_width}) : out;
}

#define EMBRACE_INSTANTIATE(T)                                                                 \
  template Tensor<T> count_sketch<T>(const Tensor<T>&, const CountSketchPlan&);                \
  template Tensor<T> cmp_fuse<T>(std::span<const Tensor<T>>, std::span<const CountSketchPlan>); \
  template Var<T> cmp_fuse<T>(std::span<const Var<T>>, std::span<const CountSketchPlan>,       \
                              double*);

EMBRACE_INSTANTIATE(float)
EMBRACE_INSTANTIATE(double)

#undef EMBRACE_INSTANTIATE

}  // namespace embrace
