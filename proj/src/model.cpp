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

#include "embrace/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <sstream>

#include "binary_io.hpp"
#include "embrace/log.hpp"
#include "embrace/metrics.hpp"

namespace embrace {

namespace {

constexpr char kModelMagic[4] = {'E', 'M', 'B', 'R'};
constexpr std::uint8_t kModelVersion = 1;
constexpr std::size_t kEvalChunk = 256;

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <typename L>
L& mut(const L& layer) {
  return const_cast<L&>(layer);
}

std::vector<std::size_t> rows_of(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> rows(end - begin);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = begin + i;
  return rows;
}

}  // namespace

// ---------------------------------------------------------------------------
// Names and specs

Strategy parse_strategy(const std::string& name) {
  if (name == "early") return Strategy::kEarly;
  if (name == "late") return Strategy::kLate;
  if (name == "intermediate") return Strategy::kIntermediate;
  if (name == "cmp") return Strategy::kCmp;
  if (name == "mae") return Strategy::kMae;
  if (name == "embracenet") return Strategy::kEmbrace;
  throw ConfigError("unknown fusion strategy '" + name +
                    "' (early|late|intermediate|cmp|mae|embracenet)");
}

std::string strategy_name(Strategy strategy) {
  switch (strategy) {
    case Strategy::kEarly: return "early";
    case Strategy::kLate: return "late";
    case Strategy::kIntermediate: return "intermediate";
    case Strategy::kCmp: return "cmp";
    case Strategy::kMae: return "mae";
    case Strategy::kEmbrace: return "embracenet";
  }
  return "?";
}

LayerSpec LayerSpec::parse(const std::string& text) {
  const auto parts = split(text, ':');
  auto number = [&](const std::string& s) -> std::size_t {
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(s, &used);
      if (used != s.size() || v == 0) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("layer '" + text + "': '" + s + "' is not a positive integer");
    }
  };
  LayerSpec spec;
  if (parts.size() == 3 && parts[0] == "conv") {
    spec.kind = Kind::kConv;
    spec.units = number(parts[1]);
    spec.kernel = number(parts[2]);
    if (spec.kernel % 2 == 0) throw ConfigError("layer '" + text + "': kernel must be odd");
    return spec;
  }
  if (parts.size() == 2 && parts[0] == "pool") {
    spec.kind = Kind::kPool;
    const auto x = parts[1].find('x');
    if (x == std::string::npos) {
      spec.pool_h = spec.pool_w = number(parts[1]);
    } else {
      spec.pool_h = number(parts[1].substr(0, x));
      spec.pool_w = number(parts[1].substr(x + 1));
    }
    return spec;
  }
  if (parts.size() == 2 && parts[0] == "dense") {
    spec.kind = Kind::kDense;
    spec.units = number(parts[1]);
    return spec;
  }
  throw ConfigError("cannot parse layer '" + text + "' (conv:C:K, pool:HxW, dense:N)");
}

std::string LayerSpec::str() const {
  switch (kind) {
    case Kind::kConv: return "conv:" + std::to_string(units) + ":" + std::to_string(kernel);
    case Kind::kPool: return "pool:" + std::to_string(pool_h) + "x" + std::to_string(pool_w);
    case Kind::kDense: return "dense:" + std::to_string(units);
  }
  return "?";
}

std::vector<LayerSpec> parse_layers(const std::string& list) {
  std::vector<LayerSpec> out;
  for (const auto& part : split(list, ',')) out.push_back(LayerSpec::parse(part));
  return out;
}

std::string layers_str(const std::vector<LayerSpec>& layers) {
  std::string out;
  for (std::size_t i = 0; i < layers.size(); ++i) out += (i ? "," : "") + layers[i].str();
  return out;
}

FillPolicy parse_fill(const std::string& name) {
  if (name == "mean") return FillPolicy::kMean;
  if (name == "zero") return FillPolicy::kZero;
  throw ConfigError("unknown fill policy '" + name + "' (mean|zero)");
}

std::string fill_name(FillPolicy fill) { return fill == FillPolicy::kMean ? "mean" : "zero"; }

ScoreMetric parse_metric(const std::string& name) {
  if (name == "f1") return ScoreMetric::kF1;
  if (name == "accuracy") return ScoreMetric::kAccuracy;
  throw ConfigError("unknown metric '" + name + "' (f1|accuracy)");
}

std::string metric_name(ScoreMetric metric) {
  return metric == ScoreMetric::kF1 ? "f1" : "accuracy";
}

void ModelSpec::validate() const {
  if (classes < 2) throw ConfigError("model needs at least two classes");
  if (input_shapes.empty()) throw ConfigError("model needs at least one modality");
  for (const auto& s : input_shapes) {
    if (s.empty() || s.size() > 3) throw ConfigError("modality shapes must have rank 1 to 3");
  }
  if (feature_width < 1 || fusion_width < 1) throw ConfigError("model widths must be >= 1");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) {
    throw ConfigError("model.dropout_keep must lie in (0, 1]");
  }
  if (!p.empty()) {
    EmbraceConfig cfg{fusion_width, modalities(), p, inference, modality_dropout};
    cfg.validate();
  }
  if (!(mae_corrupt_rate >= 0.0 && mae_corrupt_rate <= 1.0)) {
    throw ConfigError("mae.corrupt_rate must lie in [0, 1]");
  }
}

ConfigFile ModelSpec::to_config() const {
  ConfigFile cfg;
  cfg.set("model.strategy", strategy_name(strategy));
  cfg.set("model.classes", std::to_string(classes));
  std::string shapes;
  for (std::size_t k = 0; k < input_shapes.size(); ++k) {
    if (k) shapes += ";";
    for (std::size_t i = 0; i < input_shapes[k].size(); ++i) {
      shapes += (i ? "x" : "") + std::to_string(input_shapes[k][i]);
    }
  }
  cfg.set("model.inputs", shapes);
  cfg.set("model.encoder", layers_str(encoder));
  cfg.set("model.feature_width", std::to_string(feature_width));
  cfg.set("model.fusion_width", std::to_string(fusion_width));
  std::string h;
  for (std::size_t i = 0; i < head.size(); ++i) h += (i ? "," : "") + std::to_string(head[i]);
  cfg.set("model.head", h);
  cfg.set("model.dropout_keep", format_double(dropout_keep));
  cfg.set("model.fill", fill_name(fill));
  cfg.set("model.seed", std::to_string(seed));
  std::string ps;
  for (std::size_t i = 0; i < p.size(); ++i) ps += (i ? "," : "") + format_double(p[i]);
  cfg.set("embrace.p", p.empty() ? "uniform" : ps);
  cfg.set("embrace.inference", inference_mode_name(inference));
  cfg.set("embrace.modality_dropout", modality_dropout.str());
  cfg.set("mae.corrupt_rate", format_double(mae_corrupt_rate));
  cfg.set("mae.pretrain_epochs", std::to_string(mae_pretrain_epochs));
  return cfg;
}

ModelSpec ModelSpec::from_config(const ConfigFile& cfg) {
  ModelSpec spec;
  spec.strategy = parse_strategy(cfg.get("model.strategy"));
  if (cfg.has("model.classes")) spec.classes = cfg.get_size("model.classes");
  if (cfg.has("model.inputs")) {
    for (const auto& part : split(cfg.get("model.inputs"), ';')) {
      Shape s;
      for (const auto& d : split(part, 'x')) s.push_back(std::stoul(d));
      spec.input_shapes.push_back(s);
    }
  }
  spec.encoder = parse_layers(cfg.get("model.encoder"));
  spec.feature_width = cfg.get_size("model.feature_width");
  spec.fusion_width = cfg.get_size("model.fusion_width");
  spec.head = cfg.get_sizes("model.head");
  spec.dropout_keep = cfg.get_double("model.dropout_keep");
  spec.fill = parse_fill(cfg.get("model.fill"));
  spec.seed = cfg.get_u64("model.seed");
  if (cfg.get("embrace.p") != "uniform") spec.p = cfg.get_doubles("embrace.p");
  spec.inference = parse_inference_mode(cfg.get("embrace.inference"));
  spec.modality_dropout = ModalityDropout::parse(cfg.get("embrace.modality_dropout"));
  spec.mae_corrupt_rate = cfg.get_double("mae.corrupt_rate");
  spec.mae_pretrain_epochs = cfg.get_size("mae.pretrain_epochs");
  return spec;
}

// ---------------------------------------------------------------------------
// Encoder and decoder construction

namespace {

bool has_spatial(const std::vector<LayerSpec>& layers) {
  return std::any_of(layers.begin(), layers.end(),
                     [](const LayerSpec& l) { return l.kind != LayerSpec::Kind::kDense; });
}

Shape encoder_input_shape(const std::vector<LayerSpec>& layers, const Shape& sample) {
  if (!has_spatial(layers)) return sample;
  if (sample.size() == 2) return {sample[0], sample[1], 1};
  if (sample.size() == 3) return sample;
  throw ConfigError("convolution and pooling need [H x W] or [H x W x C] inputs, got " +
                    shape_str(sample));
}

}  // namespace

Encoder Encoder::create(const std::vector<LayerSpec>& layers, const Shape& input, Rng& rng) {
  Encoder enc;
  enc.input_shape = encoder_input_shape(layers, input);
  Shape cur = enc.input_shape;
  for (const auto& spec : layers) {
    Stage st;
    st.spec = spec;
    st.in_shape = cur;
    switch (spec.kind) {
      case LayerSpec::Kind::kConv:
        if (cur.size() != 3) throw ConfigError("conv stage after a dense stage");
        st.conv = Conv2dLayer<float>::create(spec.kernel, cur[2], spec.units, Activation::kRelu, rng);
        cur = {cur[0], cur[1], spec.units};
        break;
      case LayerSpec::Kind::kPool:
        if (cur.size() != 3) throw ConfigError("pool stage after a dense stage");
        cur = {(cur[0] + spec.pool_h - 1) / spec.pool_h, (cur[1] + spec.pool_w - 1) / spec.pool_w,
               cur[2]};
        break;
      case LayerSpec::Kind::kDense:
        st.dense = DenseLayer<float>::create(shape_size(cur), spec.units, Activation::kRelu, rng);
        cur = {spec.units};
        break;
    }
    st.out_shape = cur;
    enc.stages.push_back(std::move(st));
  }
  enc.output_shape = cur;
  return enc;
}

namespace {

// Builds the mirrored decoder of `enc` preceded by the inverse of its
// projection to `code_width`.
Decoder mirror(const Encoder& enc, std::size_t code_width, Rng& rng) {
  Decoder dec;
  using Kind = Decoder::Stage::Kind;
  Shape cur{enc.output_width()};
  {
    Decoder::Stage st;
    st.kind = Kind::kDense;
    st.dense = DenseLayer<float>::create(code_width, enc.output_width(), Activation::kRelu, rng);
    st.out_shape = cur;
    dec.stages.push_back(std::move(st));
  }
  for (auto it = enc.stages.rbegin(); it != enc.stages.rend(); ++it) {
    const auto& s = *it;
    if (s.spec.kind != LayerSpec::Kind::kDense && cur.size() == 1) {
      Decoder::Stage st;
      st.kind = Kind::kReshape;
      st.out_shape = s.out_shape;
      dec.stages.push_back(std::move(st));
      cur = s.out_shape;
    }
    Decoder::Stage st;
    switch (s.spec.kind) {
      case LayerSpec::Kind::kDense:
        st.kind = Kind::kDense;
        st.dense = DenseLayer<float>::create(s.spec.units, shape_size(s.in_shape),
                                             Activation::kRelu, rng);
        st.out_shape = {shape_size(s.in_shape)};
        break;
      case LayerSpec::Kind::kConv:
        st.kind = Kind::kConv;
        st.conv = Conv2dLayer<float>::create(s.spec.kernel, s.spec.units, s.in_shape[2],
                                             Activation::kRelu, rng);
        st.out_shape = s.in_shape;
        break;
      case LayerSpec::Kind::kPool:
        st.kind = Kind::kUpsample;
        st.ph = s.spec.pool_h;
        st.pw = s.spec.pool_w;
        st.out_shape = s.in_shape;
        break;
    }
    cur = st.out_shape;
    dec.stages.push_back(std::move(st));
  }
  if (cur.size() != enc.input_shape.size()) {
    Decoder::Stage st;
    st.kind = Kind::kReshape;
    st.out_shape = enc.input_shape;
    dec.stages.push_back(std::move(st));
  }
  auto& last = enc.stages.empty() ? dec.stages.front() : dec.stages.back();
  if (last.dense) {
    last.dense->activation = Activation::kSigmoid;
  } else if (last.conv) {
    last.conv->activation = Activation::kSigmoid;
  } else {
    throw ConfigError("the autoencoder encoder must start with a conv or dense stage");
  }
  return dec;
}

Shape early_shape(const std::vector<Shape>& inputs) {
  Shape out = inputs[0];
  for (std::size_t k = 1; k < inputs.size(); ++k) {
    const Shape& s = inputs[k];
    if (s.size() != out.size() || !std::equal(s.begin(), s.end() - 1, out.begin())) {
      throw ConfigError("early fusion needs modality shapes that differ only in the last axis");
    }
    out.back() += s.back();
  }
  return out;
}

}  // namespace

FusionModel FusionModel::create(const ModelSpec& spec) {
  spec.validate();
  FusionModel model;
  model.spec_ = spec;
  model.build();
  return model;
}

void FusionModel::build() {
  const std::size_t m = spec_.modalities();
  Rng rng = Rng::stream(spec_.seed, 0x6d6f64);
  branches_.clear();
  projections_.clear();
  heads_.clear();
  decoder_ = {};
  plans_.clear();

  auto make_head = [&](std::size_t in) {
    std::vector<DenseLayer<float>> head;
    for (std::size_t w : spec_.head) {
      head.push_back(DenseLayer<float>::create(in, w, Activation::kRelu, rng));
      in = w;
    }
    head.push_back(DenseLayer<float>::create(in, spec_.classes, Activation::kIdentity, rng));
    return head;
  };

  switch (spec_.strategy) {
    case Strategy::kEarly:
    case Strategy::kMae: {
      branches_.push_back(Encoder::create(spec_.encoder, early_shape(spec_.input_shapes), rng));
      projections_.push_back(DenseLayer<float>::create(branches_[0].output_width(),
                                                       spec_.feature_width, Activation::kRelu, rng));
      heads_.push_back(make_head(spec_.feature_width));
      if (spec_.strategy == Strategy::kMae) decoder_ = mirror(branches_[0], spec_.feature_width, rng);
      break;
    }
    case Strategy::kLate:
    case Strategy::kIntermediate:
    case Strategy::kCmp:
    case Strategy::kEmbrace: {
      const std::size_t width =
          spec_.strategy == Strategy::kEmbrace ? spec_.fusion_width : spec_.feature_width;
      for (std::size_t k = 0; k < m; ++k) {
        branches_.push_back(Encoder::create(spec_.encoder, spec_.input_shapes[k], rng));
        projections_.push_back(DenseLayer<float>::create(branches_[k].output_width(), width,
                                                         Activation::kRelu, rng));
      }
      if (spec_.strategy == Strategy::kLate) {
        for (std::size_t k = 0; k < m; ++k) heads_.push_back(make_head(width));
      } else if (spec_.strategy == Strategy::kIntermediate) {
        heads_.push_back(make_head(width * m));
      } else if (spec_.strategy == Strategy::kCmp) {
        for (std::size_t k = 0; k < m; ++k) {
          plans_.push_back(CountSketchPlan::create(width, spec_.fusion_width,
                                                   spec_.seed * 1000003ULL + k));
        }
        heads_.push_back(make_head(spec_.fusion_width));
      } else {
        heads_.push_back(make_head(spec_.fusion_width));
      }
      break;
    }
  }
  p_ = spec_.p.empty() ? std::vector<double>(m, 1.0 / static_cast<double>(m)) : spec_.p;
  late_weights_.weights.assign(m, 1.0);
  late_weights_.source = "uniform";
}

// ---------------------------------------------------------------------------
// Forward pass

Var<float> FusionModel::hidden_dense(Graph<float>& g, const DenseLayer<float>& layer,
                                     Var<float> x, bool training, Rng& rng) const {
  if (x.shape().size() != 2) x = ag::reshape(x, Shape{x.shape()[0], shape_size(x.shape()) / x.shape()[0]});
  Var<float> y = mut(layer).forward(g, x);
  if (training && spec_.dropout_keep < 1.0) {
    DropoutPolicy policy{spec_.dropout_keep, true, 0};
    y = dropout(y, policy, rng);
  }
  return y;
}

Var<float> FusionModel::encode(Graph<float>& g, const Encoder& enc, Var<float> x, bool training,
                               Rng& rng) const {
  const std::size_t batch = x.shape()[0];
  Shape full{batch};
  full.insert(full.end(), enc.input_shape.begin(), enc.input_shape.end());
  if (x.shape() != full) x = ag::reshape(x, full);
  for (const auto& st : enc.stages) {
    switch (st.spec.kind) {
      case LayerSpec::Kind::kConv: x = mut(*st.conv).forward(g, x); break;
      case LayerSpec::Kind::kPool: x = ag::maxpool2d(x, st.spec.pool_h, st.spec.pool_w); break;
      case LayerSpec::Kind::kDense: x = hidden_dense(g, *st.dense, x, training, rng); break;
    }
  }
  return x;
}

Var<float> FusionModel::decode(Graph<float>& g, Var<float> code) const {
  using Kind = Decoder::Stage::Kind;
  const std::size_t batch = code.shape()[0];
  Var<float> x = code;
  for (const auto& st : decoder_.stages) {
    Shape full{batch};
    full.insert(full.end(), st.out_shape.begin(), st.out_shape.end());
    switch (st.kind) {
      case Kind::kDense: {
        if (x.shape().size() != 2) x = ag::reshape(x, Shape{batch, shape_size(x.shape()) / batch});
        x = mut(*st.dense).forward(g, x);
        break;
      }
      case Kind::kConv: x = mut(*st.conv).forward(g, x); break;
      case Kind::kUpsample: x = ag::upsample2d(x, st.ph, st.pw, st.out_shape[0], st.out_shape[1]); break;
      case Kind::kReshape: x = ag::reshape(x, full); break;
    }
  }
  return x;
}

Var<float> FusionModel::run_head(Graph<float>& g, const std::vector<DenseLayer<float>>& head,
                                 Var<float> x, bool training, Rng& rng) const {
  for (std::size_t i = 0; i + 1 < head.size(); ++i) x = hidden_dense(g, head[i], x, training, rng);
  if (x.shape().size() != 2) x = ag::reshape(x, Shape{x.shape()[0], shape_size(x.shape()) / x.shape()[0]});
  return mut(head.back()).forward(g, x);
}

Var<float> FusionModel::early_input(Graph<float>& g, const ModalityBatch& batch) const {
  std::vector<Var<float>> parts;
  for (const auto& x : batch.inputs) parts.push_back(g.constant(x));
  if (parts.size() == 1) return parts[0];
  return ag::concat<float>(parts, parts[0].shape().size() - 1);
}

Tensorf FusionModel::early_target(const ModalityBatch& batch) const {
  Graph<float> g(false);
  Tensorf t = early_input(g, batch).value();
  Shape full{batch.size()};
  full.insert(full.end(), branches_[0].input_shape.begin(), branches_[0].input_shape.end());
  return t.reshaped(full);
}

std::vector<Var<float>> FusionModel::forward(Graph<float>& g, const ModalityBatch& batch,
                                             const Tensorf* embrace_weights, bool training,
                                             Rng& rng, Var<float>* embraced_out,
                                             Var<float>* reconstruction) const {
  const std::size_t m = spec_.modalities();
  std::vector<Var<float>> logits;
  switch (spec_.strategy) {
    case Strategy::kEarly:
    case Strategy::kMae: {
      Var<float> h = encode(g, branches_[0], early_input(g, batch), training, rng);
      Var<float> z = hidden_dense(g, projections_[0], h, training, rng);
      if (reconstruction) {
        *reconstruction = decode(g, z);
        return {};
      }
      logits.push_back(run_head(g, heads_[0], z, training, rng));
      break;
    }
    case Strategy::kLate: {
      for (std::size_t k = 0; k < m; ++k) {
        Var<float> h = encode(g, branches_[k], g.constant(batch.inputs[k]), training, rng);
        Var<float> z = hidden_dense(g, projections_[k], h, training, rng);
        logits.push_back(run_head(g, heads_[k], z, training, rng));
      }
      break;
    }
    case Strategy::kIntermediate:
    case Strategy::kCmp:
    case Strategy::kEmbrace: {
      std::vector<Var<float>> feats;
      for (std::size_t k = 0; k < m; ++k) {
        Var<float> h = encode(g, branches_[k], g.constant(batch.inputs[k]), training, rng);
        feats.push_back(hidden_dense(g, projections_[k], h, training, rng));
      }
      Var<float> fused;
      if (spec_.strategy == Strategy::kIntermediate) {
        fused = m == 1 ? feats[0] : ag::concat<float>(feats, 1);
      } else if (spec_.strategy == Strategy::kCmp) {
        fused = cmp_fuse<float>(feats, plans_);
      } else {
        fused = ag::embrace<float>(feats, *embrace_weights);
        if (embraced_out) *embraced_out = fused;
      }
      logits.push_back(run_head(g, heads_[0], fused, training, rng));
      break;
    }
  }
  return logits;
}

// ---------------------------------------------------------------------------
// Inference

ModalityBatch FusionModel::prepare_inputs(const ModalityBatch& batch) const {
  if (batch.modalities() != spec_.modalities()) {
    throw UsageError("model expects " + std::to_string(spec_.modalities()) +
                     " modalities, batch has " + std::to_string(batch.modalities()));
  }
  for (std::size_t k = 0; k < batch.modalities(); ++k) {
    if (batch.sample_shape(k) != spec_.input_shapes[k]) {
      throw UsageError("modality " + std::to_string(k) + " has sample shape " +
                       shape_str(batch.sample_shape(k)) + ", model expects " +
                       shape_str(spec_.input_shapes[k]));
    }
  }
  switch (spec_.strategy) {
    case Strategy::kEarly:
    case Strategy::kIntermediate:
    case Strategy::kCmp:
      if (batch.all_present()) return batch;
      if (spec_.fill == FillPolicy::kMean) return mean_fill_missing(batch, means_);
      {
        ModalityBatch out = batch;
        for (std::size_t k = 0; k < out.modalities(); ++k) {
          const std::size_t w = out.sample_width(k);
          float* x = out.inputs[k].data().data();
          for (std::size_t n = 0; n < out.size(); ++n) {
            if (!out.presence[n][k]) std::fill(x + n * w, x + (n + 1) * w, 0.0f);
          }
        }
        for (auto& u : out.presence) std::fill(u.begin(), u.end(), 1);
        return out;
      }
    case Strategy::kMae:
      return mae_mark_missing(batch);
    case Strategy::kLate:
    case Strategy::kEmbrace: {
      ModalityBatch out = batch;
      for (std::size_t k = 0; k < out.modalities(); ++k) {
        const std::size_t w = out.sample_width(k);
        float* x = out.inputs[k].data().data();
        for (std::size_t n = 0; n < out.size(); ++n) {
          if (!out.presence[n][k]) std::fill(x + n * w, x + (n + 1) * w, 0.0f);
        }
      }
      return out;
    }
  }
  return batch;
}

Tensorf FusionModel::probabilities(const ModalityBatch& batch, std::uint64_t eval_seed) const {
  const ModalityBatch ready = prepare_inputs(batch);
  const std::size_t n = ready.size(), K = spec_.classes, m = spec_.modalities();
  Tensorf out({n, K});
  for (std::size_t begin = 0, chunk = 0; begin < n; begin += kEvalChunk, ++chunk) {
    const std::size_t end = std::min(n, begin + kEvalChunk);
    const auto rows = rows_of(begin, end);
    const ModalityBatch part = ready.select(rows);
    Rng rng = Rng::stream(eval_seed, chunk);
    Graph<float> g(false);
    std::optional<Tensorf> weights;
    if (spec_.strategy == Strategy::kEmbrace) {
      weights = selection_weights<float>(p_, part.presence, spec_.fusion_width, spec_.inference, rng);
    }
    auto logits = forward(g, part, weights ? &*weights : nullptr, false, rng);
    if (spec_.strategy == Strategy::kLate) {
      std::vector<Tensorf> probs;
      for (auto& l : logits) probs.push_back(softmax_rows(l.value()));
      for (std::size_t b = 0; b < rows.size(); ++b) {
        double total = 0.0;
        std::vector<double> fused(K, 0.0);
        for (std::size_t k = 0; k < m; ++k) {
          if (!part.presence[b][k]) continue;
          for (std::size_t j = 0; j < K; ++j) fused[j] += late_weights_.weights[k] * probs[k].at(b, j);
        }
        for (double v : fused) total += v;
        for (std::size_t j = 0; j < K; ++j) {
          out.at(begin + b, j) = static_cast<float>(total > 0.0 ? fused[j] / total : 1.0 / K);
        }
      }
    } else {
      Tensorf probs = softmax_rows(logits[0].value());
      std::copy(probs.data().begin(), probs.data().end(), out.data().begin() + begin * K);
    }
  }
  return out;
}

std::vector<int> FusionModel::predict(const ModalityBatch& batch, std::uint64_t eval_seed) const {
  if (spec_.strategy != Strategy::kLate) return argmax_rows(probabilities(batch, eval_seed));
  const ModalityBatch ready = prepare_inputs(batch);
  std::vector<int> out;
  out.reserve(ready.size());
  for (std::size_t begin = 0; begin < ready.size(); begin += kEvalChunk) {
    const auto rows = rows_of(begin, std::min(ready.size(), begin + kEvalChunk));
    const ModalityBatch part = ready.select(rows);
    Graph<float> g(false);
    Rng rng(0);
    std::vector<Tensorf> probs;
    for (auto& l : forward(g, part, nullptr, false, rng)) probs.push_back(softmax_rows(l.value()));
    const auto fused = late_fuse_batch(probs, late_weights_, part.presence);
    out.insert(out.end(), fused.begin(), fused.end());
  }
  return out;
}

double FusionModel::score(const ModalityBatch& batch, ScoreMetric metric,
                          std::uint64_t eval_seed) const {
  const auto pred = predict(batch, eval_seed);
  return metric == ScoreMetric::kF1 ? weighted_f1(pred, batch.labels, spec_.classes)
                                    : accuracy(pred, batch.labels);
}

Tensorf FusionModel::embraced(const ModalityBatch& batch, std::uint64_t eval_seed) const {
  if (spec_.strategy != Strategy::kEmbrace) {
    throw UsageError("embracement activations need an embracenet model, got " +
                     strategy_name(spec_.strategy));
  }
  const ModalityBatch ready = prepare_inputs(batch);
  const std::size_t n = ready.size(), c = spec_.fusion_width;
  Tensorf out({n, c});
  for (std::size_t begin = 0, chunk = 0; begin < n; begin += kEvalChunk, ++chunk) {
    const auto rows = rows_of(begin, std::min(n, begin + kEvalChunk));
    const ModalityBatch part = ready.select(rows);
    Rng rng = Rng::stream(eval_seed, chunk);
    Graph<float> g(false);
    Tensorf weights = selection_weights<float>(p_, part.presence, c, spec_.inference, rng);
    Var<float> e;
    forward(g, part, &weights, false, rng, &e);
    std::copy(e.value().data().begin(), e.value().data().end(), out.data().begin() + begin * c);
  }
  return out;
}

std::vector<double> FusionModel::modality_scores(const ModalityBatch& batch,
                                                 ScoreMetric metric) const {
  std::vector<double> scores;
  for (std::size_t k = 0; k < spec_.modalities(); ++k) {
    scores.push_back(score(apply_missing_modalities(batch, 1u << k), metric));
  }
  return scores;
}

void FusionModel::set_selection_probabilities(std::vector<double> p) {
  EmbraceConfig cfg{spec_.fusion_width, spec_.modalities(), p, spec_.inference,
                    spec_.modality_dropout};
  cfg.validate();
  p_ = std::move(p);
}

void FusionModel::set_late_weights(LateFusionWeights w) {
  if (w.weights.size() != spec_.modalities()) {
    throw ConfigError("late fusion weights do not match the modality count");
  }
  w.validate();
  late_weights_ = std::move(w);
}

// ---------------------------------------------------------------------------
// Parameters

std::vector<std::pair<std::string, const Tensorf*>> FusionModel::named_params() const {
  std::vector<std::pair<std::string, const Tensorf*>> out;
  auto dense = [&](const std::string& name, const DenseLayer<float>& l) {
    out.emplace_back(name + ".weights", &l.weights);
    out.emplace_back(name + ".bias", &l.bias);
  };
  auto conv = [&](const std::string& name, const Conv2dLayer<float>& l) {
    out.emplace_back(name + ".kernels", &l.kernels);
    out.emplace_back(name + ".bias", &l.bias);
  };
  for (std::size_t k = 0; k < branches_.size(); ++k) {
    for (std::size_t i = 0; i < branches_[k].stages.size(); ++i) {
      const auto& st = branches_[k].stages[i];
      const std::string name = "branch" + std::to_string(k) + ".stage" + std::to_string(i);
      if (st.conv) conv(name, *st.conv);
      if (st.dense) dense(name, *st.dense);
    }
  }
  for (std::size_t k = 0; k < projections_.size(); ++k) {
    dense("projection" + std::to_string(k), projections_[k]);
  }
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    for (std::size_t i = 0; i < heads_[h].size(); ++i) {
      dense("head" + std::to_string(h) + ".layer" + std::to_string(i), heads_[h][i]);
    }
  }
  for (std::size_t i = 0; i < decoder_.stages.size(); ++i) {
    const auto& st = decoder_.stages[i];
    const std::string name = "decoder.stage" + std::to_string(i);
    if (st.conv) conv(name, *st.conv);
    if (st.dense) dense(name, *st.dense);
  }
  return out;
}

std::vector<std::pair<std::string, Tensorf*>> FusionModel::named_params() {
  std::vector<std::pair<std::string, Tensorf*>> out;
  for (auto& [name, t] : std::as_const(*this).named_params()) {
    out.emplace_back(name, const_cast<Tensorf*>(t));
  }
  return out;
}

std::uint64_t FusionModel::param_digest() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, t] : named_params()) {
    h = fnv1a(name, h);
    h = fnv1a(shape_str(t->shape()), h);
    auto d = t->data();
    h = fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(d.data()), d.size_bytes()), h);
  }
  return h;
}

std::size_t FusionModel::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_params()) n += t->size();
  return n;
}

std::vector<Tensorf*> FusionModel::trainable(bool include_decoder, bool include_classifier) {
  std::vector<Tensorf*> out;
  for (auto& [name, t] : named_params()) {
    const bool is_decoder = name.starts_with("decoder.");
    const bool is_head = name.starts_with("head");
    if (is_decoder && !include_decoder) continue;
    if (is_head && !include_classifier) continue;
    out.push_back(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  return perm;
}

}  // namespace

TrainResult FusionModel::train(const ModalityBatch& train, const ModalityBatch* val,
                               const TrainOptions& options) {
  train.validate(spec_.classes);
  prepare_inputs(train.slice(0, std::min<std::size_t>(train.size(), 1)));
  if (options.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  means_ = fit_means(train);

  const auto t0 = std::chrono::steady_clock::now();
  auto wall = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  Rng shuffle = Rng::stream(options.seed, 1);
  Rng noise = Rng::stream(options.seed, 2);
  Rng corrupt = Rng::stream(options.seed, 3);
  std::size_t step = 0;
  double last_loss = 0.0;
  const std::size_t n = train.size();
  const std::string name = strategy_name(spec_.strategy);

  auto run_phase = [&](const std::string& phase, std::size_t epochs, bool pretrain) {
    auto params = trainable(pretrain, !pretrain);
    AdamState<float> adam;
    adam.options = options.adam;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
      const auto perm = permutation(n, shuffle);
      double epoch_loss = 0.0;
      std::size_t batches = 0;
      for (std::size_t begin = 0; begin < n; begin += options.batch_size) {
        const std::size_t end = std::min(n, begin + options.batch_size);
        std::vector<std::size_t> rows(perm.begin() + static_cast<std::ptrdiff_t>(begin),
                                      perm.begin() + static_cast<std::ptrdiff_t>(end));
        ModalityBatch batch = train.select(rows);
        ++step;

        Graph<float> g(true);
        Var<float> loss;
        if (spec_.strategy == Strategy::kMae) {
          const Tensorf target = early_target(batch);
          const ModalityBatch noisy = mae_corrupt(batch, spec_.mae_corrupt_rate, corrupt);
          if (pretrain) {
            Var<float> recon;
            forward(g, noisy, nullptr, true, noise, nullptr, &recon);
            loss = reconstruction_loss(recon, target);
          } else {
            loss = ag::softmax_cross_entropy(forward(g, noisy, nullptr, true, noise)[0],
                                             std::span<const int>(batch.labels));
          }
        } else if (spec_.strategy == Strategy::kEmbrace) {
          for (auto& u : batch.presence) u = modality_dropout(u, spec_.modality_dropout, noise);
          batch = prepare_inputs(batch);
          const Tensorf weights = selection_weights<float>(p_, batch.presence, spec_.fusion_width,
                                                           InferenceMode::kStochastic, noise);
          loss = ag::softmax_cross_entropy(forward(g, batch, &weights, true, noise)[0],
                                           std::span<const int>(batch.labels));
        } else {
          auto logits = forward(g, batch, nullptr, true, noise);
          loss = ag::softmax_cross_entropy(logits[0], std::span<const int>(batch.labels));
          for (std::size_t k = 1; k < logits.size(); ++k) {
            loss = ag::add(loss, ag::softmax_cross_entropy(logits[k],
                                                           std::span<const int>(batch.labels)));
          }
        }
        const double value = loss.value()[0];
        if (!std::isfinite(value)) {
          throw NumericError("non-finite loss " + std::to_string(value) + " at step " +
                                 std::to_string(step),
                             step);
        }
        for (auto* p : params) p->zero_grad();
        g.backward(loss);
        adam_step<float>(params, adam);
        last_loss = value;
        epoch_loss += value;
        ++batches;
        if (options.log_every && step % options.log_every == 0) {
          logger()->info("event=train strategy={} phase={} epoch={} step={} loss={:.6f} lr={:g} wall={:.2f}",
                         name, phase, epoch, step, value, options.adam.learning_rate, wall());
        }
      }
      logger()->info("event=epoch strategy={} phase={} epoch={} mean_loss={:.6f} wall={:.2f}", name,
                     phase, epoch, batches ? epoch_loss / static_cast<double>(batches) : 0.0, wall());
    }
  };

  if (spec_.strategy == Strategy::kMae) run_phase("pretrain", options.epochs ? spec_.mae_pretrain_epochs : 0, true);
  run_phase("train", options.epochs, false);

  if (spec_.strategy == Strategy::kLate) {
    const ModalityBatch& source = val && val->size() ? *val : train;
    LateFusionWeights w;
    w.source = val && val->size() ? "val_f1" : "train_f1";
    w.weights = modality_scores(source, ScoreMetric::kF1);
    if (std::all_of(w.weights.begin(), w.weights.end(), [](double v) { return v <= 0.0; })) {
      w.weights.assign(spec_.modalities(), 1.0);
    }
    late_weights_ = w;
  }

  result_ = {};
  result_.steps = step;
  result_.final_loss = last_loss;
  result_.train_f1 = score(train, ScoreMetric::kF1);
  if (val && val->size()) {
    result_.val_f1 = score(*val, ScoreMetric::kF1);
    result_.has_val = true;
  }
  trained_ = step > 0;
  logger()->info("event=trained strategy={} steps={} train_f1={:.6f} val_f1={:.6f} wall={:.2f}", name,
                 step, result_.train_f1, result_.val_f1, wall());
  return result_;
}

// ---------------------------------------------------------------------------
// Persistence

void FusionModel::save(const std::filesystem::path& path, const FileMeta& meta) const {
  io::Writer w;
  w.raw(kModelMagic, 4);
  w.u8(kModelVersion);
  w.str(meta.config_digest);
  w.str(meta.data_digest);
  w.str(meta.config_text);
  w.str(spec_.to_config().canonical());
  const auto params = named_params();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t->rank()));
    for (auto d : t->shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t->data()) w.f32(v);
  }
  w.u32(static_cast<std::uint32_t>(p_.size()));
  for (double v : p_) w.f64(v);
  w.u32(static_cast<std::uint32_t>(plans_.size()));
  for (const auto& plan : plans_) {
    w.u32(static_cast<std::uint32_t>(plan.input_width));
    w.u32(static_cast<std::uint32_t>(plan.sketch_width));
    w.u64(plan.seed);
    for (auto h : plan.hash) w.u32(h);
    for (auto s : plan.sign) w.u8(static_cast<std::uint8_t>(s));
  }
  w.str(late_weights_.source);
  w.u32(static_cast<std::uint32_t>(late_weights_.weights.size()));
  for (double v : late_weights_.weights) w.f64(v);
  w.u32(static_cast<std::uint32_t>(means_.channels.size()));
  for (const auto& ch : means_.channels) {
    w.u32(static_cast<std::uint32_t>(ch.size()));
    for (float v : ch) w.f32(v);
  }
  w.u8(trained_ ? 1 : 0);
  w.u64(result_.steps);
  w.f64(result_.final_loss);
  w.f64(result_.train_f1);
  w.f64(result_.val_f1);
  w.u8(result_.has_val ? 1 : 0);
  w.save(path);
}

FusionModel FusionModel::load(const std::filesystem::path& path, FileMeta* meta) {
  const auto bytes = io::read_file(path);
  io::Reader r(bytes, path.string());
  const auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), kModelMagic)) {
    throw FormatError(path.string() + ": not a model file");
  }
  const auto version = r.u8();
  if (version != kModelVersion) {
    throw FormatError(path.string() + ": unsupported model version " + std::to_string(version));
  }
  FileMeta m;
  m.config_digest = r.str();
  m.data_digest = r.str();
  m.config_text = r.str();
  const ConfigFile spec_cfg = ConfigFile::parse(r.str(), path.string() + "#spec");
  FusionModel model = create(ModelSpec::from_config(spec_cfg));

  auto params = model.named_params();
  const std::size_t count = r.u32();
  if (count != params.size()) {
    throw FormatError(path.string() + ": " + std::to_string(count) + " parameter blobs, model has " +
                      std::to_string(params.size()));
  }
  for (auto& [name, t] : params) {
    const std::string stored = r.str();
    if (stored != name) throw FormatError(path.string() + ": expected blob '" + name + "', found '" + stored + "'");
    Shape s(r.u32());
    for (auto& d : s) d = r.u32();
    if (s != t->shape()) {
      throw FormatError(path.string() + ": blob '" + name + "' has shape " + shape_str(s) +
                        ", expected " + shape_str(t->shape()));
    }
    for (auto& v : t->data()) v = r.f32();
  }
  std::vector<double> p(r.u32());
  for (auto& v : p) v = r.f64();
  model.p_ = p;
  const std::size_t nplans = r.u32();
  if (nplans != model.plans_.size()) throw FormatError(path.string() + ": sketch plan count mismatch");
  for (auto& plan : model.plans_) {
    plan.input_width = r.u32();
    plan.sketch_width = r.u32();
    plan.seed = r.u64();
    plan.hash.resize(plan.input_width);
    plan.sign.resize(plan.input_width);
    for (auto& h : plan.hash) h = r.u32();
    for (auto& s : plan.sign) s = static_cast<std::int8_t>(r.u8());
    plan.validate();
  }
  model.late_weights_.source = r.str();
  model.late_weights_.weights.resize(r.u32());
  for (auto& v : model.late_weights_.weights) v = r.f64();
  model.means_.channels.resize(r.u32());
  for (auto& ch : model.means_.channels) {
    ch.resize(r.u32());
    for (auto& v : ch) v = r.f32();
  }
  model.trained_ = r.u8() != 0;
  model.result_.steps = r.u64();
  model.result_.final_loss = r.f64();
  model.result_.train_f1 = r.f64();
  model.result_.val_f1 = r.f64();
  model.result_.has_val = r.u8() != 0;
  if (!r.done()) throw FormatError(path.string() + ": trailing bytes after model");
  if (meta) *meta = std::move(m);
  return model;
}

}  // namespace embrace
