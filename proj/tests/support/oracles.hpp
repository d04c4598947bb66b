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

// Independent reference implementations used by the unit and acceptance
// tests. Nothing here calls into the library's numeric kernels.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <map>
#include <numbers>
#include <vector>

#include "embrace/autodiff.hpp"
#include "embrace/rng.hpp"
#include "embrace/tensor.hpp"

namespace oracle {

using embrace::Rng;
using embrace::Shape;
using embrace::Tensord;

inline Tensord random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensord t(std::move(shape));
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

// Values whose magnitude stays at least `gap` away from zero, for ops with a
// kink at the origin.
inline Tensord away_from_zero(Shape shape, Rng& rng, double gap = 0.05) {
  Tensord t(std::move(shape));
  for (auto& v : t.storage()) {
    const double mag = rng.uniform(gap, 1.0);
    v = rng.bernoulli(0.5) ? mag : -mag;
  }
  return t;
}

// A random permutation of well separated values, so max-type ops have a
// unique winner that survives a +-h perturbation.
inline Tensord distinct_values(Shape shape, Rng& rng, double spacing = 0.01) {
  Tensord t(std::move(shape));
  std::vector<std::size_t> order(t.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng.engine());
  for (std::size_t i = 0; i < order.size(); ++i) {
    t[i] = (static_cast<double>(order[i]) - order.size() / 2.0) * spacing;
  }
  return t;
}

// Builds a graph output from leaf variables.
using GraphFn = std::function<embrace::Var<double>(embrace::Graph<double>&,
                                                   const std::vector<embrace::Var<double>>&)>;

struct GradCheck {
  // max_i |a_i - n_i| / max_i max(|a_i|, |n_i|), per input tensor, worst over
  // inputs. Normwise, so entries whose gradient happens to be near zero are
  // judged against the scale of the whole gradient.
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

// Compares backward() against central differences of L = sum(w * f(x)) for
// a fixed random weighting w of the output.
inline GradCheck check_gradients(const std::vector<Tensord>& inputs, const GraphFn& fn, Rng& rng,
                                 double h = 1e-3) {
  using namespace embrace;
  Tensord weights;
  auto loss_of = [&](const std::vector<Tensord>& xs) {
    Graph<double> g(false);
    std::vector<Var<double>> leaves;
    for (const auto& x : xs) leaves.push_back(g.constant(x));
    const Tensord& y = fn(g, leaves).value();
    if (weights.empty()) weights = random_tensor(y.shape(), rng, 0.5, 1.5);
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) total += weights[i] * y[i];
    return total;
  };
  loss_of(inputs);

  Graph<double> g;
  std::vector<Var<double>> leaves;
  for (const auto& x : inputs) leaves.push_back(g.variable(x));
  Var<double> y = fn(g, leaves);
  Var<double> loss = ag::sum(ag::mul_const(y, weights));
  g.backward(loss);

  GradCheck out;
  std::vector<Tensord> probe = inputs;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    const auto grad = g.grad_of(leaves[a]);
    double worst = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      const double analytic = grad.empty() ? 0.0 : grad[i];
      probe[a][i] = inputs[a][i] + h;
      const double up = loss_of(probe);
      probe[a][i] = inputs[a][i] - h;
      const double down = loss_of(probe);
      probe[a][i] = inputs[a][i];
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(analytic - numeric));
      scale = std::max({scale, std::abs(analytic), std::abs(numeric)});
    }
    out.max_abs_error = std::max(out.max_abs_error, worst);
    if (scale > 0.0) out.max_rel_error = std::max(out.max_rel_error, worst / scale);
  }
  return out;
}

// Quadruple loop cross-correlation over [B x H x W x Cin] with kernels
// [kh x kw x Cin x Cout]; 'same' pads with zeros symmetrically.
inline Tensord conv2d(const Tensord& x, const Tensord& k, bool same) {
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const std::size_t kh = k.dim(0), kw = k.dim(1), O = k.dim(3);
  const long ph = same ? static_cast<long>(kh / 2) : 0;
  const long pw = same ? static_cast<long>(kw / 2) : 0;
  const std::size_t oh = same ? H : H - kh + 1;
  const std::size_t ow = same ? W : W - kw + 1;
  Tensord y({B, oh, ow, O});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t o = 0; o < O; ++o) {
          double acc = 0.0;
          for (std::size_t u = 0; u < kh; ++u)
            for (std::size_t v = 0; v < kw; ++v) {
              const long r = static_cast<long>(i + u) - ph;
              const long c = static_cast<long>(j + v) - pw;
              if (r < 0 || c < 0 || r >= static_cast<long>(H) || c >= static_cast<long>(W)) continue;
              for (std::size_t ci = 0; ci < C; ++ci) {
                acc += x[((b * H + r) * W + c) * C + ci] * k[((u * kw + v) * C + ci) * O + o];
              }
            }
          y[((b * oh + i) * ow + j) * O + o] = acc;
        }
  return y;
}

inline std::vector<std::complex<double>> dft(const std::vector<std::complex<double>>& x,
                                             bool inverse) {
  const std::size_t n = x.size();
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(k * t) / n;
      acc += x[t] * std::polar(1.0, angle);
    }
    out[k] = inverse ? acc / static_cast<double>(n) : acc;
  }
  return out;
}

inline std::vector<double> count_sketch(const std::vector<double>& v,
                                        const std::vector<std::uint32_t>& hash,
                                        const std::vector<std::int8_t>& sign, std::size_t d) {
  std::vector<double> s(d, 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) s[hash[i]] += sign[i] * v[i];
  return s;
}

// TensorSketch of a two-way outer product, computed explicitly: entry (i, j)
// lands in bin (h1(i) + h2(j)) mod d with sign s1(i) s2(j).
inline std::vector<double> outer_product_sketch(const std::vector<double>& a,
                                                const std::vector<double>& b,
                                                const std::vector<std::uint32_t>& h1,
                                                const std::vector<std::int8_t>& s1,
                                                const std::vector<std::uint32_t>& h2,
                                                const std::vector<std::int8_t>& s2,
                                                std::size_t d) {
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      out[(h1[i] + h2[j]) % d] += s1[i] * s2[j] * a[i] * b[j];
    }
  return out;
}

// Weighted F1 straight from the definition, class by class.
inline double weighted_f1(const std::vector<int>& pred, const std::vector<int>& truth, int classes) {
  const double n = static_cast<double>(truth.size());
  double total = 0.0;
  for (int c = 0; c < classes; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (pred[i] == c && truth[i] == c) ++tp;
      else if (pred[i] == c) ++fp;
      else if (truth[i] == c) ++fn;
    }
    const double support = tp + fn;
    if (support == 0) continue;
    const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double recall = tp / support;
    if (precision + recall == 0) continue;
    total += (support / n) * 2.0 * precision * recall / (precision + recall);
  }
  return total;
}

// Textbook Adam with epsilon added after the square root.
struct Adam {
  double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-2;
  double m = 0.0, v = 0.0;
  int t = 0;
  double step(double x, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return x - lr * mh / (std::sqrt(vh) + eps);
  }
};

}  // namespace oracle
