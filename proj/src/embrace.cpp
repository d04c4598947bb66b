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

#include "embrace/embrace.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace embrace {

InferenceMode parse_inference_mode(const std::string& name) {
  if (name == "expected") return InferenceMode::kExpected;
  if (name == "stochastic") return InferenceMode::kStochastic;
  throw ConfigError("unknown inference mode '" + name + "' (expected|stochastic)");
}

std::string inference_mode_name(InferenceMode mode) {
  return mode == InferenceMode::kExpected ? "expected" : "stochastic";
}

ModalityDropout ModalityDropout::parse(const std::string& text) {
  if (text == "none") return {};
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw ConfigError("modality dropout '" + text +
                      "' must be none, single:<rate> or independent:<rate>");
  }
  const std::string kind = text.substr(0, colon);
  double rate = 0.0;
  try {
    std::size_t used = 0;
    rate = std::stod(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("modality dropout rate in '" + text + "' is not a number");
  }
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw ConfigError("modality dropout rate must lie in [0, 1], got " + text);
  }
  if (kind == "single") return {Kind::kSingle, rate};
  if (kind == "independent") return {Kind::kIndependent, rate};
  throw ConfigError("unknown modality dropout kind '" + kind + "'");
}

std::string ModalityDropout::str() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::kNone: return "none";
    case Kind::kSingle: os << "single:" << rate; break;
    case Kind::kIndependent: os << "independent:" << rate; break;
  }
  return os.str();
}

EmbraceConfig EmbraceConfig::uniform(std::size_t width, std::size_t modalities) {
  EmbraceConfig cfg;
  cfg.width = width;
  cfg.modalities = modalities;
  cfg.p.assign(modalities, 1.0 / static_cast<double>(modalities));
  return cfg;
}

void EmbraceConfig::validate() const {
  if (width < 1 || modalities < 1) {
    throw ConfigError("embrace config needs c >= 1 and m >= 1");
  }
  if (p.size() != modalities) {
    throw ConfigError("embrace config: p has " + std::to_string(p.size()) +
                      " entries for " + std::to_string(modalities) + " modalities");
  }
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw ConfigError("embrace config: probabilities must be non-negative");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("embrace config: probabilities sum to " + std::to_string(total));
  }
}

template <typename T>
Var<T> dock(Graph<T>& g, Var<T> x, DenseLayer<T>& layer, std::size_t width) {
  if (layer.out_width() != width) {
    throw ConfigError("docking layer produces " + std::to_string(layer.out_width()) +
                      " values, embracement expects c = " + std::to_string(width));
  }
  return layer.forward(g, x);
}

std::vector<double> adjust_probabilities(std::span<const double> p, const PresenceVector& u) {
  if (p.size() != u.size()) {
    throw UsageError("adjust_probabilities: p has " + std::to_string(p.size()) +
                     " entries, presence vector " + std::to_string(u.size()));
  }
  double mass = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) mass += u[k] ? p[k] : 0.0;
  if (!(mass > 0.0)) {
    throw UnrecoverableInputError(
        "adjust_probabilities: no present modality carries selection probability");
  }
  std::vector<double> out(p.size(), 0.0);
  for (std::size_t k = 0; k < p.size(); ++k) out[k] = u[k] ? p[k] / mass : 0.0;
  return out;
}

namespace {

// Inverse-CDF draw; zero-probability entries are never returned.
std::size_t draw_category(std::span<const double> p, double r) {
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] <= 0.0) continue;
    acc += p[k];
    last = k;
    if (r < acc) return k;
  }
  return last;
}

}  // namespace

SelectionMatrix sample_selection(std::span<const double> p_hat, std::size_t c, Rng& rng) {
  SelectionMatrix r(c, p_hat.size());
  for (std::size_t i = 0; i < c; ++i) r.select(i, draw_category(p_hat, rng.uniform()));
  return r;
}

namespace {

template <typename T>
void check_docked(std::span<const Tensor<T>> docked, std::size_t modalities) {
  if (docked.empty()) throw UsageError("embrace: no modalities");
  if (docked.size() != modalities) {
    throw UsageError("embrace: " + std::to_string(docked.size()) +
                     " docked vectors for " + std::to_string(modalities) + " modalities");
  }
  for (const auto& d : docked) {
    if (d.size() != docked[0].size()) {
      throw UsageError("embrace: docked widths disagree: " + shape_str(docked[0].shape()) +
                       " vs " + shape_str(d.shape()));
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> embrace(std::span<const Tensor<T>> docked, const SelectionMatrix& r) {
  check_docked(docked, r.modalities());
  const std::size_t c = docked[0].size();
  if (r.rows() != c) {
    throw UsageError("embrace: selection has " + std::to_string(r.rows()) +
                     " rows for width " + std::to_string(c));
  }
  Tensor<T> e({c});
  for (std::size_t i = 0; i < c; ++i) e[i] = docked[r.selected(i)][i];
  return e;
}

template <typename T>
Tensor<T> embrace_expected(std::span<const Tensor<T>> docked, std::span<const double> p_hat) {
  check_docked(docked, p_hat.size());
  const std::size_t c = docked[0].size();
  Tensor<T> e({c});
  for (std::size_t i = 0; i < c; ++i) {
    T acc{0};
    for (std::size_t k = 0; k < docked.size(); ++k) {
      if (p_hat[k] != 0.0) acc += static_cast<T>(p_hat[k]) * docked[k][i];
    }
    e[i] = acc;
  }
  return e;
}

template <typename T>
Tensor<T> selection_weights(std::span<const double> p, std::span<const PresenceVector> presence,
                            std::size_t c, InferenceMode mode, Rng& rng) {
  const std::size_t batch = presence.size(), m = p.size();
  Tensor<T> w({batch, c, m});
  T* out = w.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::vector<double> p_hat = adjust_probabilities(p, presence[b]);
    T* row = out + b * c * m;
    if (mode == InferenceMode::kExpected) {
      for (std::size_t i = 0; i < c; ++i)
        for (std::size_t k = 0; k < m; ++k) row[i * m + k] = static_cast<T>(p_hat[k]);
    } else {
      for (std::size_t i = 0; i < c; ++i) row[i * m + draw_category(p_hat, rng.uniform())] = T{1};
    }
  }
  return w;
}

PresenceVector modality_dropout(const PresenceVector& u, const ModalityDropout& policy,
                                Rng& rng) {
  if (policy.kind == ModalityDropout::Kind::kNone || policy.rate <= 0.0) return u;
  std::vector<std::size_t> present;
  for (std::size_t k = 0; k < u.size(); ++k)
    if (u[k]) present.push_back(k);
  if (present.size() <= 1) return u;

  if (policy.kind == ModalityDropout::Kind::kSingle) {
    if (!rng.bernoulli(policy.rate)) return u;
    PresenceVector out(u.size(), 0);
    out[present[rng.index(present.size())]] = 1;
    return out;
  }
  // independent: redraw until at least one present modality survives
  PresenceVector out(u.size(), 0);
  for (;;) {
    bool any = false;
    for (std::size_t k : present) {
      out[k] = rng.bernoulli(policy.rate) ? 0 : 1;
      any = any || out[k];
    }
    if (any) return out;
  }
}

std::vector<double> calibrate_probabilities(std::span<const double> scores) {
  double total = 0.0;
  for (double s : scores) {
    if (!(s >= 0.0)) throw ConfigError("calibrate_probabilities: scores must be non-negative");
    total += s;
  }
  if (!(total > 0.0)) throw ConfigError("calibrate_probabilities: all scores are zero");
  std::vector<double> p(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) p[k] = scores[k] / total;
  return p;
}

#define EMBRACE_INSTANTIATE(T)                                                          \
  template Var<T> dock<T>(Graph<T>&, Var<T>, DenseLayer<T>&, std::size_t);              \
  template Tensor<T> embrace<T>(std::span<const Tensor<T>>, const SelectionMatrix&);    \
  template Tensor<T> embrace_expected<T>(std::span<const Tensor<T>>,                    \
                                         std::span<const double>);                      \
  template Tensor<T> selection_weights<T>(std::span<const double>,                      \
                                          std::span<const PresenceVector>, std::size_t, \
                                          InferenceMode, Rng&);

EMBRACE_INSTANTIATE(float)
EMBRACE_INSTANTIATE(double)

#undef EMBRACE_INSTANTIATE

}  // namespace embrace
