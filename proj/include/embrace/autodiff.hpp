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
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <deque>
#include <vector>

#include "embrace/tensor.hpp"

namespace embrace {

enum class OpKind : std::uint8_t {
  kConstant,
  kParam,
  kMatmul,
  kAdd,
  kAddBias,
  kMul,
  kMulConst,
  kScale,
  kActivation,
  kSum,
  kSoftmaxCrossEntropy,
  kConv2d,
  kMaxPool2d,
  kUpsample2d,
  kReshape,
  kConcat,
  kSlice,
  kEmbrace,
  kL2Normalize,
  kCountSketch,
  kSpectralProduct,
  kBinaryCrossEntropy,
};

std::string_view op_name(OpKind kind);

enum class Activation : std::uint8_t { kIdentity, kRelu, kSigmoid, kTanh };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation kind);

enum class Padding : std::uint8_t { kSame, kValid };

template <typename T>
class Graph;

// Handle to a value recorded on a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(id); }
  const Shape& shape() const { return value().shape(); }
};

// Tape of operations recorded during one forward pass. Nodes are appended in
// execution order, so the node list is already topologically sorted and
// backward is a single reverse sweep.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  // Leaf that never receives a gradient.
  Var<T> constant(Tensor<T> value);
  // Leaf with gradient tracking, for gradient checks on free-standing values.
  Var<T> variable(Tensor<T> value);
  // Leaf bound to an external parameter. The value is read in place and
  // backward accumulates into tensor.grad() when tensor.requires_grad().
  Var<T> param(Tensor<T>& tensor);

  Var<T> record(OpKind kind, std::vector<std::size_t> inputs, Tensor<T> value,
                BackwardFn backward);

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  OpKind kind(std::size_t id) const { return nodes_[id].kind; }
  const std::vector<std::size_t>& inputs(std::size_t id) const {
    return nodes_[id].inputs;
  }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of a node, allocated zeroed on first access.
  std::vector<T>& grad(std::size_t id);
  // Gradient after backward; empty when the node received none.
  std::span<const T> grad_of(Var<T> v) const { return nodes_[v.id].grad; }

  // Reverse sweep from a scalar loss.
  void backward(Var<T> loss);

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    Tensor<T>* external = nullptr;
    std::vector<T> grad;
    BackwardFn backward;
    bool needs_grad = false;
  };

  std::deque<Node> nodes_;  // stable addresses: Var::value() references survive later records
  bool grad_enabled_;
};

namespace ag {

// C = A·B for A[M×K], B[K×N].
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

// x[..., N] + bias[N], broadcast over all leading axes.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias);

// Elementwise product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

// Elementwise product with a constant mask (dropout, masking).
template <typename T>
Var<T> mul_const(Var<T> x, Tensor<T> mask);

template <typename T>
Var<T> scale(Var<T> x, T factor);

template <typename T>
Var<T> activation(Var<T> x, Activation kind);

template <typename T>
Var<T> sum(Var<T> x);

// Mean over the batch of -log softmax(logits)[label]. logits is [B×K].
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels);

// Batched cross-correlation. input [B×H×W×Cin], kernels [kh×kw×Cin×Cout].
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernels, Padding padding);

// Max pooling over [B×H×W×C] with ceil-mode padding by -inf.
template <typename T>
Var<T> maxpool2d(Var<T> input, std::size_t ph, std::size_t pw);

// Nearest-neighbour upsampling by (ph, pw), cropped to (out_h, out_w).
template <typename T>
Var<T> upsample2d(Var<T> input, std::size_t ph, std::size_t pw,
                  std::size_t out_h, std::size_t out_w);

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);

// Concatenation along `axis`; all other axes must agree.
template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis);

// x[..., begin:end, ...] along `axis`.
template <typename T>
Var<T> slice(Var<T> x, std::size_t axis, std::size_t begin, std::size_t end);

// e[b,i] = sum_k weights[b,i,k] * d_k[b,i] for d_k of shape [B×c] and
// weights [B×c×m]. Terms with zero weight are skipped entirely, so absent
// modalities cannot leak into e even through non-finite values.
template <typename T>
Var<T> embrace(std::span<const Var<T>> docked, const Tensor<T>& weights);

// Row-wise x / max(||x||_2, eps) for x[B×n].
template <typename T>
Var<T> l2_normalize(Var<T> x, T eps);

// sketch[b, hash[i]] += sign[i] * x[b, i] for x[B×n]; output [B×d].
template <typename T>
Var<T> count_sketch(Var<T> x, std::span<const std::uint32_t> hash,
                    std::span<const std::int8_t> sign, std::size_t d);

// Re(ifft(prod_k fft(s_k))) row by row for sketches s_k[B×d], d a power of
// two. Products are formed in double precision. `max_bin`, when given,
// receives the largest spectrum magnitude seen.
template <typename T>
Var<T> spectral_product(std::span<const Var<T>> sketches,
                        double* max_bin = nullptr);

// Mean of -[t ln r + (1-t) ln(1-r)] for reconstruction r in (0,1).
template <typename T>
Var<T> binary_cross_entropy(Var<T> reconstruction, const Tensor<T>& target);

}  // namespace ag

// Row-wise softmax of [B×K] logits.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

// Row-wise argmax of [B×K], lowest index on ties.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& scores);

// Dense matrix product kernel, C[M×N] (+)= A[M×K]·B[K×N], with optional
// transposition of either operand (row-major storage throughout).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const T* a, const T* b, T* c, bool accumulate);

}  // namespace embrace
