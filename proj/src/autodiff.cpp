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

#include "embrace/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <type_traits>

#include "embrace/fft.hpp"

namespace embrace {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kParam: return "param";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kMul: return "mul";
    case OpKind::kMulConst: return "mul_const";
    case OpKind::kScale: return "scale";
    case OpKind::kActivation: return "activation";
    case OpKind::kSum: return "sum";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kMaxPool2d: return "maxpool2d";
    case OpKind::kUpsample2d: return "upsample2d";
    case OpKind::kReshape: return "reshape";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kEmbrace: return "embrace";
    case OpKind::kL2Normalize: return "l2_normalize";
    case OpKind::kCountSketch: return "count_sketch";
    case OpKind::kSpectralProduct: return "spectral_product";
    case OpKind::kBinaryCrossEntropy: return "binary_cross_entropy";
  }
  return "unknown";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "tanh") return Activation::kTanh;
  if (name == "identity" || name == "none") return Activation::kIdentity;
  throw ParameterError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation kind) {
  switch (kind) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kTanh: return "tanh";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Graph

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node n{OpKind::kConstant, {}, std::move(value), nullptr, {}, {}, false};
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::variable(Tensor<T> value) {
  Node n{OpKind::kConstant, {}, std::move(value), nullptr, {}, {}, grad_enabled_};
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::param(Tensor<T>& tensor) {
  Node n{OpKind::kParam, {}, Tensor<T>{}, &tensor, {}, {},
         grad_enabled_ && tensor.requires_grad()};
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::record(OpKind kind, std::vector<std::size_t> inputs,
                        Tensor<T> value, BackwardFn backward) {
  bool needs = false;
  if (grad_enabled_) {
    for (auto id : inputs) needs = needs || nodes_[id].needs_grad;
  }
  Node n{kind, std::move(inputs), std::move(value), nullptr, {},
         needs ? std::move(backward) : BackwardFn{}, needs};
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
std::vector<T>& Graph<T>::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(value(id).size(), T{0});
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  if (loss.graph != this) throw UsageError("backward: loss belongs to another graph");
  if (value(loss.id).size() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " +
                     shape_str(value(loss.id).shape()));
  }
  if (!nodes_[loss.id].needs_grad) return;
  grad(loss.id)[0] = T{1};
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.kind == OpKind::kParam) {
      Tensor<T>& p = *n.external;
      if (!p.has_grad()) p.set_requires_grad(true);
      auto pg = p.grad();
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    } else if (n.backward) {
      n.backward(*this, id);
    }
  }
}

// ---------------------------------------------------------------------------
// GEMM

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const Mat>;
  const auto em = static_cast<Eigen::Index>(m);
  const auto en = static_cast<Eigen::Index>(n);
  const auto ek = static_cast<Eigen::Index>(k);
  Eigen::Map<Mat> cm(c, em, en);
  if (!accumulate) cm.setZero();
  ConstMap am(a, trans_a ? ek : em, trans_a ? em : ek);
  ConstMap bm(b, trans_b ? en : ek, trans_b ? ek : en);
  if (!trans_a && !trans_b) {
    cm.noalias() += am * bm;
  } else if (trans_a && !trans_b) {
    cm.noalias() += am.transpose() * bm;
  } else if (!trans_a && trans_b) {
    cm.noalias() += am * bm.transpose();
  } else {
    cm.noalias() += am.transpose() * bm.transpose();
  }
}

namespace {

template <typename T>
void require_same_graph(Var<T> a, Var<T> b, const char* op) {
  if (a.graph != b.graph) {
    throw UsageError(std::string(op) + ": operands recorded on different graphs");
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// Splits a shape around `axis` into (outer, extent, inner) counts.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

template <typename T>
constexpr T bce_eps() {
  return std::is_same_v<T, float> ? T(1e-7) : T(1e-12);
}

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

namespace ag {

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_same_graph(a, b, "matmul");
  Graph<T>& g = *a.graph;
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(av.shape()) +
                         " by " + shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  gemm<T>(false, false, m, n, k, av.data().data(), bv.data().data(),
          out.data().data(), false);
  const std::size_t ia = a.id, ib = b.id;
  return g.record(OpKind::kMatmul, {ia, ib}, std::move(out),
                  [ia, ib, m, n, k](Graph<T>& gr, std::size_t self) {
                    const auto& go = gr.grad(self);
                    if (gr.needs_grad(ia)) {
                      // dA = dC * B^T
                      gemm<T>(false, true, m, k, n, go.data(),
                              gr.value(ib).data().data(), gr.grad(ia).data(), true);
                    }
                    if (gr.needs_grad(ib)) {
                      // dB = A^T * dC
                      gemm<T>(true, false, k, n, m, gr.value(ia).data().data(),
                              go.data(), gr.grad(ib).data(), true);
                    }
                  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_graph(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  out.set_requires_grad(false);
  auto od = out.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(OpKind::kAdd, {ia, ib}, std::move(out),
                         [ia, ib](Graph<T>& gr, std::size_t self) {
                           const auto& go = gr.grad(self);
                           for (auto id : {ia, ib}) {
                             if (!gr.needs_grad(id)) continue;
                             auto& gi = gr.grad(id);
                             for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
                           }
                         });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  require_same_graph(x, bias, "add_bias");
  const Tensor<T>& xv = x.value();
  const Tensor<T>& bv = bias.value();
  const std::size_t n = bv.size();
  if (xv.shape().back() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bv.shape()) +
                         " does not match trailing axis of " + shape_str(xv.shape()));
  }
  Tensor<T> out(xv.shape(), std::vector<T>(xv.data().begin(), xv.data().end()));
  auto od = out.data();
  auto bd = bv.data();
  const std::size_t rows = od.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = od.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) row[j] += bd[j];
  }
  const std::size_t ix = x.id, ib = bias.id;
  return x.graph->record(OpKind::kAddBias, {ix, ib}, std::move(out),
                         [ix, ib, n, rows](Graph<T>& gr, std::size_t self) {
                           const auto& go = gr.grad(self);
                           if (gr.needs_grad(ix)) {
                             auto& gx = gr.grad(ix);
                             for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
                           }
                           if (gr.needs_grad(ib)) {
                             auto& gb = gr.grad(ib);
                             for (std::size_t r = 0; r < rows; ++r) {
                               const T* row = go.data() + r * n;
                               for (std::size_t j = 0; j < n; ++j) gb[j] += row[j];
                             }
                           }
                         });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_graph(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  auto ad = a.value().data();
  auto bd = b.value().data();
  Tensor<T> out(a.value().shape());
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->record(OpKind::kMul, {ia, ib}, std::move(out),
                         [ia, ib](Graph<T>& gr, std::size_t self) {
                           const auto& go = gr.grad(self);
                           auto av = gr.value(ia).data();
                           auto bv = gr.value(ib).data();
                           if (gr.needs_grad(ia)) {
                             auto& ga = gr.grad(ia);
                             for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
                           }
                           if (gr.needs_grad(ib)) {
                             auto& gb = gr.grad(ib);
                             for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
                           }
                         });
}

template <typename T>
Var<T> mul_const(Var<T> x, Tensor<T> mask) {
  require_same_shape(x.value(), mask, "mul_const");
  auto xd = x.value().data();
  Tensor<T> out(x.value().shape());
  auto od = out.data();
  auto md = mask.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = xd[i] * md[i];
  const std::size_t ix = x.id;
  auto saved = std::make_shared<Tensor<T>>(std::move(mask));
  return x.graph->record(OpKind::kMulConst, {ix}, std::move(out),
                         [ix, saved](Graph<T>& gr, std::size_t self) {
                           const auto& go = gr.grad(self);
                           auto& gx = gr.grad(ix);
                           auto md2 = saved->data();
                           for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * md2[i];
                         });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  auto xd = x.value().data();
  Tensor<T> out(x.value().shape());
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = xd[i] * factor;
  const std::size_t ix = x.id;
  return x.graph->record(OpKind::kScale, {ix}, std::move(out),
                         [ix, factor](Graph<T>& gr, std::size_t self) {
                           const auto& go = gr.grad(self);
                           auto& gx = gr.grad(ix);
                           for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * factor;
                         });
}

template <typename T>
Var<T> activation(Var<T> x, Activation kind) {
  auto xd = x.value().data();
  Tensor<T> out(x.value().shape());
  auto od = out.data();
  switch (kind) {
    case Activation::kIdentity:
      std::copy(xd.begin(), xd.end(), od.begin());
      break;
    case Activation::kRelu:
      for (std::size_t i = 0; i < od.size(); ++i) od[i] = xd[i] > T{0} ? xd[i] : T{0};
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < od.size(); ++i) od[i] = T{1} / (T{1} + std::exp(-xd[i]));
      break;
    case Activation::kTanh:
      for (std::size_t i = 0; i < od.size(); ++i) od[i] = std::tanh(xd[i]);
      break;
    default:
      throw ParameterError("activation: unknown kind");
  }
  const std::size_t ix = x.id;
  return x.graph->record(
      OpKind::kActivation, {ix}, std::move(out),
      [ix, kind](Graph<T>& gr, std::size_t self) {
        const auto& go = gr.grad(self);
        auto y = gr.value(self).data();
        auto& gx = gr.grad(ix);
        switch (kind) {
          case Activation::kIdentity:
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
            break;
          case Activation::kRelu:
            for (std::size_t i = 0; i < go.size(); ++i)
              if (y[i] > T{0}) gx[i] += go[i];
            break;
          case Activation::kSigmoid:
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * y[i] * (T{1} - y[i]);
            break;
          case Activation::kTanh:
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * (T{1} - y[i] * y[i]);
            break;
        }
      });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T total{0};
  for (T v : x.value().data()) total += v;
  const std::size_t ix = x.id;
  return x.graph->record(OpKind::kSum, {ix}, Tensor<T>({1}, std::vector<T>{total}),
                         [ix](Graph<T>& gr, std::size_t self) {
                           const T go = gr.grad(self)[0];
                           auto& gx = gr.grad(ix);
                           for (auto& v : gx) v += go;
                         });
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels) {
  const Tensor<T>& lv = logits.value();
  if (lv.rank() != 2 || lv.dim(0) != labels.size()) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_str(lv.shape()) +
                         " do not match " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = lv.dim(0), classes = lv.dim(1);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw DataError("softmax_cross_entropy: label " + std::to_string(y) +
                      " outside [0, " + std::to_string(classes) + ")");
    }
  }
  Tensor<T> probs = softmax_rows(lv);
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = lv.data().data() + b * classes;
    const T mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t j = 0; j < classes; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    loss += std::log(z) - static_cast<double>(row[labels[b]] - mx);
  }
  loss /= static_cast<double>(batch);
  std::vector<int> saved_labels(labels.begin(), labels.end());
  auto saved = std::make_shared<Tensor<T>>(std::move(probs));
  const std::size_t il = logits.id;
  return logits.graph->record(
      OpKind::kSoftmaxCrossEntropy, {il},
      Tensor<T>({1}, std::vector<T>{static_cast<T>(loss)}),
      [il, saved, labels = std::move(saved_labels), batch, classes](Graph<T>& gr,
                                                                    std::size_t self) {
        const T go = gr.grad(self)[0] / static_cast<T>(batch);
        auto& gl = gr.grad(il);
        auto p = saved->data();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t j = 0; j < classes; ++j) {
            const T onehot = static_cast<std::size_t>(labels[b]) == j ? T{1} : T{0};
            gl[b * classes + j] += go * (p[b * classes + j] - onehot);
          }
        }
      });
}

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernels, Padding padding) {
  require_same_graph(input, kernels, "conv2d");
  const Tensor<T>& xv = input.value();
  const Tensor<T>& kv = kernels.value();
  if (xv.rank() != 4 || kv.rank() != 4) {
    throw DimensionError("conv2d: expected input [BxHxWxC] and kernels [khxkwxCinxCout], got " +
                         shape_str(xv.shape()) + " and " + shape_str(kv.shape()));
  }
  const std::size_t batch = xv.dim(0), h = xv.dim(1), w = xv.dim(2), cin = xv.dim(3);
  const std::size_t kh = kv.dim(0), kw = kv.dim(1), cout = kv.dim(3);
  if (kv.dim(2) != cin) {
    throw DimensionError("conv2d: kernel input channels " + shape_str(kv.shape()) +
                         " do not match input " + shape_str(xv.shape()));
  }
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ParameterError("conv2d: kernel extents must be odd, got " + shape_str(kv.shape()));
  }
  const std::size_t pad_h = padding == Padding::kSame ? kh / 2 : 0;
  const std::size_t pad_w = padding == Padding::kSame ? kw / 2 : 0;
  if (kh > h + 2 * pad_h || kw > w + 2 * pad_w) {
    throw DimensionError("conv2d: kernel " + shape_str(kv.shape()) +
                         " larger than padded input " + shape_str(xv.shape()));
  }
  const std::size_t oh = h + 2 * pad_h - kh + 1;
  const std::size_t ow = w + 2 * pad_w - kw + 1;
  const std::size_t patch = kh * kw * cin;
  const std::size_t rows = batch * oh * ow;

  // im2col: one row per output pixel, columns ordered (dy, dx, c) to match
  // the kernel layout flattened to [kh*kw*Cin x Cout].
  auto cols = std::make_shared<std::vector<T>>(rows * patch, T{0});
  const T* x = xv.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T* dst = cols->data() + ((b * oh + oy) * ow + ox) * patch;
        for (std::size_t dy = 0; dy < kh; ++dy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + dy) -
                                    static_cast<std::ptrdiff_t>(pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t dx = 0; dx < kw; ++dx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + dx) -
                                      static_cast<std::ptrdiff_t>(pad_w);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const T* src = x + ((b * h + static_cast<std::size_t>(iy)) * w +
                                static_cast<std::size_t>(ix)) * cin;
            std::copy(src, src + cin, dst + (dy * kw + dx) * cin);
          }
        }
      }
    }
  }
  Tensor<T> out({batch, oh, ow, cout});
  gemm<T>(false, false, rows, cout, patch, cols->data(), kv.data().data(),
          out.data().data(), false);

  Graph<T>& g = *input.graph;
  const std::size_t ix_id = input.id, ik = kernels.id;
  if (!g.grad_enabled()) cols.reset();
  return g.record(
      OpKind::kConv2d, {ix_id, ik}, std::move(out),
      [=](Graph<T>& gr, std::size_t self) {
        const auto& go = gr.grad(self);
        if (gr.needs_grad(ik)) {
          gemm<T>(true, false, patch, cout, rows, cols->data(), go.data(),
                  gr.grad(ik).data(), true);
        }
        if (gr.needs_grad(ix_id)) {
          std::vector<T> dcols(rows * patch);
          gemm<T>(false, true, rows, patch, cout, go.data(),
                  gr.value(ik).data().data(), dcols.data(), false);
          auto& gx = gr.grad(ix_id);
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t oy = 0; oy < oh; ++oy) {
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const T* src = dcols.data() + ((b * oh + oy) * ow + ox) * patch;
                for (std::size_t dy = 0; dy < kh; ++dy) {
                  const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + dy) -
                                            static_cast<std::ptrdiff_t>(pad_h);
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                  for (std::size_t dx = 0; dx < kw; ++dx) {
                    const std::ptrdiff_t ixx = static_cast<std::ptrdiff_t>(ox + dx) -
                                               static_cast<std::ptrdiff_t>(pad_w);
                    if (ixx < 0 || ixx >= static_cast<std::ptrdiff_t>(w)) continue;
                    T* dst = gx.data() + ((b * h + static_cast<std::size_t>(iy)) * w +
                                          static_cast<std::size_t>(ixx)) * cin;
                    const T* s = src + (dy * kw + dx) * cin;
                    for (std::size_t c = 0; c < cin; ++c) dst[c] += s[c];
                  }
                }
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> maxpool2d(Var<T> input, std::size_t ph, std::size_t pw) {
  if (ph == 0 || pw == 0) throw ParameterError("maxpool2d: window must be non-empty");
  const Tensor<T>& xv = input.value();
  if (xv.rank() != 4) {
    throw DimensionError("maxpool2d: expected [BxHxWxC], got " + shape_str(xv.shape()));
  }
  const std::size_t batch = xv.dim(0), h = xv.dim(1), w = xv.dim(2), ch = xv.dim(3);
  const std::size_t oh = (h + ph - 1) / ph, ow = (w + pw - 1) / pw;
  Tensor<T> out({batch, oh, ow, ch});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const T* x = xv.data().data();
  T* o = out.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        for (std::size_t c = 0; c < ch; ++c) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_idx = 0;
          bool first = true;
          // row-major scan; strict '>' keeps the first maximum on ties
          for (std::size_t y = oy * ph; y < std::min(h, (oy + 1) * ph); ++y) {
            for (std::size_t xx = ox * pw; xx < std::min(w, (ox + 1) * pw); ++xx) {
              const std::size_t idx = ((b * h + y) * w + xx) * ch + c;
              if (first || x[idx] > best) {
                best = x[idx];
                best_idx = idx;
                first = false;
              }
            }
          }
          const std::size_t oidx = ((b * oh + oy) * ow + ox) * ch + c;
          o[oidx] = best;
          (*argmax)[oidx] = best_idx;
        }
      }
    }
  }
  const std::size_t ix = input.id;
  return input.graph->record(OpKind::kMaxPool2d, {ix}, std::move(out),
                             [ix, argmax](Graph<T>& gr, std::size_t self) {
                               const auto& go = gr.grad(self);
                               auto& gx = gr.grad(ix);
                               for (std::size_t i = 0; i < go.size(); ++i) {
                                 gx[(*argmax)[i]] += go[i];
                               }
                             });
}

template <typename T>
Var<T> upsample2d(Var<T> input, std::size_t ph, std::size_t pw, std::size_t out_h,
                  std::size_t out_w) {
  if (ph == 0 || pw == 0) throw ParameterError("upsample2d: factor must be positive");
  const Tensor<T>& xv = input.value();
  if (xv.rank() != 4) {
    throw DimensionError("upsample2d: expected [BxHxWxC], got " + shape_str(xv.shape()));
  }
  const std::size_t batch = xv.dim(0), h = xv.dim(1), w = xv.dim(2), ch = xv.dim(3);
  if (out_h > h * ph || out_w > w * pw) {
    throw DimensionError("upsample2d: target exceeds upsampled extent of " +
                         shape_str(xv.shape()));
  }
  Tensor<T> out({batch, out_h, out_w, ch});
  const T* x = xv.data().data();
  T* o = out.data().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t xx = 0; xx < out_w; ++xx) {
        const T* src = x + ((b * h + y / ph) * w + xx / pw) * ch;
        std::copy(src, src + ch, o + ((b * out_h + y) * out_w + xx) * ch);
      }
  const std::size_t ix = input.id;
  return input.graph->record(
      OpKind::kUpsample2d, {ix}, std::move(out),
      [=](Graph<T>& gr, std::size_t self) {
        const auto& go = gr.grad(self);
        auto& gx = gr.grad(ix);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t y = 0; y < out_h; ++y)
            for (std::size_t xx = 0; xx < out_w; ++xx) {
              const T* src = go.data() + ((b * out_h + y) * out_w + xx) * ch;
              T* dst = gx.data() + ((b * h + y / ph) * w + xx / pw) * ch;
              for (std::size_t c = 0; c < ch; ++c) dst[c] += src[c];
            }
      });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id;
  return x.graph->record(OpKind::kReshape, {ix}, std::move(out),
                         [ix](Graph<T>& gr, std::size_t self) {
                           const auto& go = gr.grad(self);
                           auto& gx = gr.grad(ix);
                           for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
                         });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
  if (parts.empty()) throw UsageError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    require_same_graph(parts[0], p, "concat");
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw UsageError("concat: inconsistent shapes " + shape_str(first) + " and " +
                       shape_str(s) + " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
    extents.push_back(s[axis]);
  }
  const AxisSplit split = split_axis(out_shape, axis);
  Tensor<T> out(out_shape);
  T* o = out.data().data();
  std::size_t offset = 0;
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].value().data().data();
    const std::size_t block = extents[k] * split.inner;
    for (std::size_t outer = 0; outer < split.outer; ++outer) {
      std::copy(src + outer * block, src + (outer + 1) * block,
                o + outer * split.extent * split.inner + offset);
    }
    offset += block;
    ids.push_back(parts[k].id);
  }
  return parts[0].graph->record(
      OpKind::kConcat, ids, std::move(out),
      [ids, extents, split](Graph<T>& gr, std::size_t self) {
        const auto& go = gr.grad(self);
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const std::size_t block = extents[k] * split.inner;
          if (gr.needs_grad(ids[k])) {
            auto& gk = gr.grad(ids[k]);
            for (std::size_t outer = 0; outer < split.outer; ++outer) {
              const T* src = go.data() + outer * split.extent * split.inner + off;
              T* dst = gk.data() + outer * block;
              for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
            }
          }
          off += block;
        }
      });
}

template <typename T>
Var<T> slice(Var<T> x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& in_shape = x.shape();
  if (axis >= in_shape.size() || begin >= end || end > in_shape[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid on axis " +
                         std::to_string(axis) + " of " + shape_str(in_shape));
  }
  const AxisSplit split = split_axis(in_shape, axis);
  Shape out_shape = in_shape;
  out_shape[axis] = end - begin;
  Tensor<T> out(out_shape);
  const std::size_t block = (end - begin) * split.inner;
  const std::size_t offset = begin * split.inner;
  const T* src = x.value().data().data();
  T* o = out.data().data();
  for (std::size_t outer = 0; outer < split.outer; ++outer) {
    const T* s = src + outer * split.extent * split.inner + offset;
    std::copy(s, s + block, o + outer * block);
  }
  const std::size_t ix = x.id;
  return x.graph->record(OpKind::kSlice, {ix}, std::move(out),
                         [ix, split, block, offset](Graph<T>& gr, std::size_t self) {
                           const auto& go = gr.grad(self);
                           auto& gx = gr.grad(ix);
                           for (std::size_t outer = 0; outer < split.outer; ++outer) {
                             T* d = gx.data() + outer * split.extent * split.inner + offset;
                             const T* s = go.data() + outer * block;
                             for (std::size_t i = 0; i < block; ++i) d[i] += s[i];
                           }
                         });
}

template <typename T>
Var<T> embrace(std::span<const Var<T>> docked, const Tensor<T>& weights) {
  if (docked.empty()) throw UsageError("embrace: no modalities");
  const std::size_t m = docked.size();
  const Shape& s0 = docked[0].shape();
  if (s0.size() != 2) {
    throw DimensionError("embrace: docked outputs must be [Bxc], got " + shape_str(s0));
  }
  const std::size_t batch = s0[0], c = s0[1];
  for (const auto& d : docked) {
    require_same_graph(docked[0], d, "embrace");
    if (d.shape() != s0) {
      throw UsageError("embrace: docked widths disagree: " + shape_str(s0) + " vs " +
                       shape_str(d.shape()));
    }
  }
  if (weights.shape() != Shape{batch, c, m}) {
    throw UsageError("embrace: weights " + shape_str(weights.shape()) + " do not match " +
                     shape_str(Shape{batch, c, m}));
  }
  Tensor<T> out({batch, c});
  T* o = out.data().data();
  const T* wd = weights.data().data();
  std::vector<const T*> ds(m);
  for (std::size_t k = 0; k < m; ++k) ds[k] = docked[k].value().data().data();
  for (std::size_t j = 0; j < batch * c; ++j) {
    T acc{0};
    const T* wj = wd + j * m;
    for (std::size_t k = 0; k < m; ++k) {
      if (wj[k] != T{0}) acc += wj[k] * ds[k][j];
    }
    o[j] = acc;
  }
  std::vector<std::size_t> ids;
  for (const auto& d : docked) ids.push_back(d.id);
  auto saved = std::make_shared<Tensor<T>>(weights);
  return docked[0].graph->record(
      OpKind::kEmbrace, ids, std::move(out),
      [ids, saved, m](Graph<T>& gr, std::size_t self) {
        const auto& go = gr.grad(self);
        const T* w = saved->data().data();
        for (std::size_t k = 0; k < m; ++k) {
          if (!gr.needs_grad(ids[k])) continue;
          auto& gk = gr.grad(ids[k]);
          for (std::size_t j = 0; j < go.size(); ++j) {
            const T wk = w[j * m + k];
            if (wk != T{0}) gk[j] += wk * go[j];
          }
        }
      });
}

template <typename T>
Var<T> l2_normalize(Var<T> x, T eps) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 2) {
    throw DimensionError("l2_normalize: expected [Bxn], got " + shape_str(xv.shape()));
  }
  const std::size_t batch = xv.dim(0), n = xv.dim(1);
  Tensor<T> out(xv.shape());
  auto norms = std::make_shared<std::vector<T>>(batch);
  const T* xd = xv.data().data();
  T* o = out.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    T ss{0};
    for (std::size_t i = 0; i < n; ++i) ss += xd[b * n + i] * xd[b * n + i];
    const T nrm = std::max(std::sqrt(ss), eps);
    (*norms)[b] = nrm;
    for (std::size_t i = 0; i < n; ++i) o[b * n + i] = xd[b * n + i] / nrm;
  }
  const std::size_t ix = x.id;
  return x.graph->record(
      OpKind::kL2Normalize, {ix}, std::move(out),
      [ix, norms, n, batch, eps](Graph<T>& gr, std::size_t self) {
        const auto& go = gr.grad(self);
        auto y = gr.value(self).data();
        auto& gx = gr.grad(ix);
        for (std::size_t b = 0; b < batch; ++b) {
          const T nrm = (*norms)[b];
          if (nrm <= eps) {
            for (std::size_t i = 0; i < n; ++i) gx[b * n + i] += go[b * n + i] / nrm;
            continue;
          }
          T dot{0};
          for (std::size_t i = 0; i < n; ++i) dot += y[b * n + i] * go[b * n + i];
          for (std::size_t i = 0; i < n; ++i) {
            gx[b * n + i] += (go[b * n + i] - y[b * n + i] * dot) / nrm;
          }
        }
      });
}

template <typename T>
Var<T> count_sketch(Var<T> x, std::span<const std::uint32_t> hash,
                    std::span<const std::int8_t> sign, std::size_t d) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 2 || xv.dim(1) != hash.size() || sign.size() != hash.size()) {
    throw DimensionError("count_sketch: input " + shape_str(xv.shape()) +
                         " does not match sketch tables of length " +
                         std::to_string(hash.size()));
  }
  const std::size_t batch = xv.dim(0), n = xv.dim(1);
  Tensor<T> out({batch, d});
  const T* xd = xv.data().data();
  T* o = out.data().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < n; ++i)
      o[b * d + hash[i]] += static_cast<T>(sign[i]) * xd[b * n + i];
  std::vector<std::uint32_t> h(hash.begin(), hash.end());
  std::vector<std::int8_t> s(sign.begin(), sign.end());
  const std::size_t ix = x.id;
  return x.graph->record(
      OpKind::kCountSketch, {ix}, std::move(out),
      [ix, h = std::move(h), s = std::move(s), batch, n, d](Graph<T>& gr, std::size_t self) {
        const auto& go = gr.grad(self);
        auto& gx = gr.grad(ix);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t i = 0; i < n; ++i)
            gx[b * n + i] += static_cast<T>(s[i]) * go[b * d + h[i]];
      });
}

template <typename T>
Var<T> spectral_product(std::span<const Var<T>> sketches, double* max_bin) {
  if (sketches.empty()) throw UsageError("spectral_product: no inputs");
  const Shape& s0 = sketches[0].shape();
  if (s0.size() != 2) {
    throw DimensionError("spectral_product: expected [Bxd], got " + shape_str(s0));
  }
  const std::size_t batch = s0[0], d = s0[1], m = sketches.size();
  for (const auto& s : sketches) {
    if (s.shape() != s0) {
      throw ConfigError("spectral_product: sketch widths disagree: " + shape_str(s0) +
                        " vs " + shape_str(s.shape()));
    }
  }
  if (!is_power_of_two(d)) {
    throw ParameterError("spectral_product: sketch width " + std::to_string(d) +
                         " is not a power of two");
  }
  // spectra[(k * batch + b) * d + f]
  auto spectra = std::make_shared<std::vector<Complex>>(m * batch * d);
  std::vector<Complex> prod(d);
  Tensor<T> out({batch, d});
  double peak = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    std::fill(prod.begin(), prod.end(), Complex(1.0, 0.0));
    for (std::size_t k = 0; k < m; ++k) {
      const T* src = sketches[k].value().data().data() + b * d;
      Complex* f = spectra->data() + (k * batch + b) * d;
      for (std::size_t i = 0; i < d; ++i) f[i] = Complex(static_cast<double>(src[i]), 0.0);
      fft_inplace(std::span<Complex>(f, d), false);
      for (std::size_t i = 0; i < d; ++i) prod[i] *= f[i];
    }
    for (const auto& v : prod) peak = std::max(peak, std::abs(v));
    fft_inplace(prod, true);
    T* o = out.data().data() + b * d;
    for (std::size_t i = 0; i < d; ++i) o[i] = static_cast<T>(prod[i].real());
  }
  if (max_bin) *max_bin = peak;
  std::vector<std::size_t> ids;
  for (const auto& s : sketches) ids.push_back(s.id);
  Graph<T>& g = *sketches[0].graph;
  if (!g.grad_enabled()) spectra.reset();
  return g.record(
      OpKind::kSpectralProduct, ids, std::move(out),
      [ids, spectra, batch, d, m](Graph<T>& gr, std::size_t self) {
        const auto& go = gr.grad(self);
        std::vector<Complex> gspec(d), prefix(d), others(d);
        std::vector<std::vector<Complex>> suffix(m + 1, std::vector<Complex>(d));
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t i = 0; i < d; ++i) gspec[i] = Complex(static_cast<double>(go[b * d + i]), 0.0);
          fft_inplace(gspec, false);
          std::fill(suffix[m].begin(), suffix[m].end(), Complex(1.0, 0.0));
          for (std::size_t k = m; k-- > 0;) {
            const Complex* f = spectra->data() + (k * batch + b) * d;
            for (std::size_t i = 0; i < d; ++i) suffix[k][i] = suffix[k + 1][i] * f[i];
          }
          std::fill(prefix.begin(), prefix.end(), Complex(1.0, 0.0));
          for (std::size_t k = 0; k < m; ++k) {
            const Complex* f = spectra->data() + (k * batch + b) * d;
            if (gr.needs_grad(ids[k])) {
              // correlation of the upstream gradient with the product of the
              // other sketches' circular convolution
              for (std::size_t i = 0; i < d; ++i) {
                others[i] = gspec[i] * std::conj(prefix[i] * suffix[k + 1][i]);
              }
              fft_inplace(others, true);
              auto& gk = gr.grad(ids[k]);
              for (std::size_t i = 0; i < d; ++i) gk[b * d + i] += static_cast<T>(others[i].real());
            }
            for (std::size_t i = 0; i < d; ++i) prefix[i] *= f[i];
          }
        }
      });
}

template <typename T>
Var<T> binary_cross_entropy(Var<T> reconstruction, const Tensor<T>& target) {
  require_same_shape(reconstruction.value(), target, "binary_cross_entropy");
  for (T t : target.data()) {
    if (!(t >= T{0} && t <= T{1})) {
      throw DataError("binary_cross_entropy: target value " + std::to_string(t) +
                      " outside [0, 1]");
    }
  }
  // Saturated sigmoid outputs are pulled back inside (0, 1).
  constexpr T kEps = bce_eps<T>();
  auto r = reconstruction.value().data();
  auto t = target.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double ri = std::clamp<double>(r[i], kEps, 1.0 - kEps);
    loss -= t[i] * std::log(ri) + (1.0 - t[i]) * std::log(1.0 - ri);
  }
  const std::size_t n = r.size();
  loss /= static_cast<double>(n);
  auto saved = std::make_shared<Tensor<T>>(target);
  const std::size_t ir = reconstruction.id;
  return reconstruction.graph->record(
      OpKind::kBinaryCrossEntropy, {ir},
      Tensor<T>({1}, std::vector<T>{static_cast<T>(loss)}),
      [ir, saved, n](Graph<T>& gr, std::size_t self) {
        const T go = gr.grad(self)[0] / static_cast<T>(n);
        auto rv = gr.value(ir).data();
        auto tv = saved->data();
        auto& gx = gr.grad(ir);
        for (std::size_t i = 0; i < n; ++i) {
          const T ri = std::clamp<T>(rv[i], bce_eps<T>(), T{1} - bce_eps<T>());
          gx[i] += go * (ri - tv[i]) / (ri * (T{1} - ri));
        }
      });
}

}  // namespace ag

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) {
    throw DimensionError("softmax_rows: expected [BxK], got " + shape_str(logits.shape()));
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = logits.data().data() + b * classes;
    T* o = out.data().data() + b * classes;
    const T mx = *std::max_element(row, row + classes);
    T z{0};
    for (std::size_t j = 0; j < classes; ++j) z += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < classes; ++j) o[j] /= z;
  }
  return out;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& scores) {
  if (scores.rank() != 2) {
    throw DimensionError("argmax_rows: expected [BxK], got " + shape_str(scores.shape()));
  }
  const std::size_t batch = scores.dim(0), classes = scores.dim(1);
  std::vector<int> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = scores.data().data() + b * classes;
    out[b] = static_cast<int>(std::max_element(row, row + classes) - row);
  }
  return out;
}

#define EMBRACE_INSTANTIATE(T)                                                        \
  template class Graph<T>;                                                            \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*,  \
                        const T*, T*, bool);                                          \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                               \
  template std::vector<int> argmax_rows<T>(const Tensor<T>&);                         \
  namespace ag {                                                                      \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                          \
  template Var<T> add<T>(Var<T>, Var<T>);                                             \
  template Var<T> add_bias<T>(Var<T>, Var<T>);                                        \
  template Var<T> mul<T>(Var<T>, Var<T>);                                             \
  template Var<T> mul_const<T>(Var<T>, Tensor<T>);                                    \
  template Var<T> scale<T>(Var<T>, T);                                                \
  template Var<T> activation<T>(Var<T>, Activation);                                  \
  template Var<T> sum<T>(Var<T>);                                                     \
  template Var<T> softmax_cross_entropy<T>(Var<T>, std::span<const int>);             \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Padding);                                 \
  template Var<T> maxpool2d<T>(Var<T>, std::size_t, std::size_t);                     \
  template Var<T> upsample2d<T>(Var<T>, std::size_t, std::size_t, std::size_t,        \
                                std::size_t);                                         \
  template Var<T> reshape<T>(Var<T>, Shape);                                          \
  template Var<T> concat<T>(std::span<const Var<T>>, std::size_t);                    \
  template Var<T> slice<T>(Var<T>, std::size_t, std::size_t, std::size_t);            \
  template Var<T> embrace<T>(std::span<const Var<T>>, const Tensor<T>&);              \
  template Var<T> l2_normalize<T>(Var<T>, T);                                         \
  template Var<T> count_sketch<T>(Var<T>, std::span<const std::uint32_t>,             \
                                  std::span<const std::int8_t>, std::size_t);         \
  template Var<T> spectral_product<T>(std::span<const Var<T>>, double*);              \
  template Var<T> binary_cross_entropy<T>(Var<T>, const Tensor<T>&);                  \
  }

EMBRACE_INSTANTIATE(float)
EMBRACE_INSTANTIATE(double)

#undef EMBRACE_INSTANTIATE

}  // namespace embrace
