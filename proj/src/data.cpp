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

#include "embrace/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "binary_io.hpp"

namespace embrace {

// ---------------------------------------------------------------------------
// ModalityBatch

Shape ModalityBatch::sample_shape(std::size_t k) const {
  const Shape& s = inputs.at(k).shape();
  return Shape(s.begin() + 1, s.end());
}

void ModalityBatch::validate(std::size_t classes) const {
  if (inputs.empty()) throw UsageError("modality batch has no modalities");
  const std::size_t n = labels.size();
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (inputs[k].rank() < 2 || inputs[k].dim(0) != n) {
      throw UsageError("modality " + std::to_string(k) + " has shape " +
                       shape_str(inputs[k].shape()) + " for " + std::to_string(n) +
                       " samples");
    }
  }
  if (presence.size() != n) throw UsageError("presence vectors do not cover every sample");
  for (const auto& u : presence) {
    if (u.size() != inputs.size()) throw UsageError("presence vector has the wrong length");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw DataError("label " + std::to_string(y) + " outside [0, " +
                      std::to_string(classes) + ")");
    }
  }
}

ModalityBatch ModalityBatch::select(std::span<const std::size_t> rows) const {
  ModalityBatch out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Shape s = inputs[k].shape();
    const std::size_t w = shape_size(s) / s[0];
    s[0] = rows.size();
    Tensorf t(s);
    const float* src = inputs[k].data().data();
    float* dst = t.data().data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy(src + rows[i] * w, src + (rows[i] + 1) * w, dst + i * w);
    }
    out.inputs.push_back(std::move(t));
  }
  for (std::size_t r : rows) {
    out.presence.push_back(presence[r]);
    out.labels.push_back(labels[r]);
  }
  return out;
}

ModalityBatch ModalityBatch::slice(std::size_t begin, std::size_t end) const {
  std::vector<std::size_t> rows(end - begin);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = begin + i;
  return select(rows);
}

bool ModalityBatch::all_present() const {
  return std::all_of(presence.begin(), presence.end(), [](const PresenceVector& u) {
    return std::all_of(u.begin(), u.end(), [](std::uint8_t v) { return v != 0; });
  });
}

ModalityBatch ModalityBatch::from_inputs(std::vector<Tensorf> inputs, std::vector<int> labels) {
  ModalityBatch out;
  const std::size_t m = inputs.size();
  out.inputs = std::move(inputs);
  out.presence.assign(labels.size(), PresenceVector(m, 1));
  out.labels = std::move(labels);
  return out;
}

// ---------------------------------------------------------------------------
// IDX

Tensorf IdxFile::pixels() const {
  Tensorf out(dims);
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>(payload[i]) / 255.0f;
  return out;
}

std::vector<int> IdxFile::labels() const {
  return std::vector<int>(payload.begin(), payload.end());
}

IdxFile parse_idx(std::span<const std::uint8_t> bytes, const std::string& origin) {
  if (bytes.size() < 4) {
    throw FormatError(origin + ": too short for an IDX header (" +
                      std::to_string(bytes.size()) + " bytes)");
  }
  IdxFile f;
  f.magic = (std::uint32_t{bytes[0]} << 24) | (std::uint32_t{bytes[1]} << 16) |
            (std::uint32_t{bytes[2]} << 8) | bytes[3];
  std::size_t ndims = 0;
  if (f.magic == kIdxImagesMagic) {
    ndims = 3;
  } else if (f.magic == kIdxLabelsMagic) {
    ndims = 1;
  } else {
    char hex[11];
    std::snprintf(hex, sizeof hex, "0x%08x", f.magic);
    throw FormatError(origin + ": unexpected IDX magic " + hex);
  }
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header) {
    throw FormatError(origin + ": truncated header, expected " + std::to_string(header) +
                      " bytes, got " + std::to_string(bytes.size()));
  }
  for (std::size_t i = 0; i < ndims; ++i) {
    const auto* p = bytes.data() + 4 + 4 * i;
    const std::size_t d = (std::size_t{p[0]} << 24) | (std::size_t{p[1]} << 16) |
                          (std::size_t{p[2]} << 8) | p[3];
    if (d == 0) throw FormatError(origin + ": zero-sized IDX dimension");
    f.dims.push_back(d);
  }
  const std::size_t expected = shape_size(f.dims);
  const std::size_t available = bytes.size() - header;
  if (available < expected) {
    throw FormatError(origin + ": truncated payload, expected " + std::to_string(expected) +
                      " bytes, got " + std::to_string(available));
  }
  f.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header),
                   bytes.begin() + static_cast<std::ptrdiff_t>(header + expected));
  return f;
}

IdxFile load_idx(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return parse_idx(bytes, path.string());
}

std::pair<Tensorf, std::vector<int>> load_idx_pair(const std::filesystem::path& images,
                                                   const std::filesystem::path& labels) {
  IdxFile img = load_idx(images);
  IdxFile lab = load_idx(labels);
  if (!img.is_images()) throw FormatError(images.string() + ": not an IDX image file");
  if (lab.is_images()) throw FormatError(labels.string() + ": not an IDX label file");
  if (img.dims[0] != lab.dims[0]) {
    throw FormatError("IDX count mismatch: " + std::to_string(img.dims[0]) + " images in " +
                      images.string() + " vs " + std::to_string(lab.dims[0]) +
                      " labels in " + labels.string());
  }
  return {img.pixels(), lab.labels()};
}

std::pair<Tensorf, Tensorf> split_bimodal(const Tensorf& images) {
  if (images.rank() != 3 || images.dim(2) != 28) {
    throw UsageError("split_bimodal expects [Bx28x28] images, got " + shape_str(images.shape()));
  }
  const std::size_t batch = images.dim(0), rows = images.dim(1), half = 14;
  Tensorf left({batch, rows, half}), right({batch, rows, half});
  const float* src = images.data().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < rows; ++r) {
      const float* row = src + (b * rows + r) * 28;
      std::copy(row, row + half, left.data().data() + (b * rows + r) * half);
      std::copy(row + half, row + 28, right.data().data() + (b * rows + r) * half);
    }
  return {std::move(left), std::move(right)};
}

// ---------------------------------------------------------------------------
// Synthetic data

void SyntheticSpec::validate() const {
  if (modalities < 1 || modalities > 32) throw ConfigError("synthetic: m must be in [1, 32]");
  if (classes < 1) throw ConfigError("synthetic: need at least one class");
  if (latent < 1 || width < 1) throw ConfigError("synthetic: widths must be >= 1");
  if (!(noise >= 0.0)) throw ConfigError("synthetic: noise must be >= 0");
  if (!(correlation >= 0.0 && correlation <= 1.0)) {
    throw ConfigError("synthetic: correlation must lie in [0, 1]");
  }
  if (!(class_separation > 0.0)) throw ConfigError("synthetic: class_separation must be > 0");
  if (run_min < 1 || run_max < run_min) throw ConfigError("synthetic: bad class-run range");
  if (train < 1 || test < 1) throw ConfigError("synthetic: train and test splits must be non-empty");
}

namespace {

ModalityBatch sample_split(const SyntheticSpec& spec, const Tensord& protos,
                           const std::vector<Tensord>& mixing, std::size_t count, Rng rng) {
  const std::size_t m = spec.modalities, L = spec.latent, W = spec.width;
  std::vector<int> labels;
  labels.reserve(count);
  while (labels.size() < count) {
    const int y = static_cast<int>(rng.index(spec.classes));
    const std::size_t run = rng.between(spec.run_min, spec.run_max);
    for (std::size_t i = 0; i < run && labels.size() < count; ++i) labels.push_back(y);
  }
  std::vector<Tensorf> inputs(m, Tensorf({count, W}));
  const double shared = std::sqrt(spec.correlation);
  const double own = std::sqrt(1.0 - spec.correlation);
  std::vector<double> eta(L), z(L);
  for (std::size_t n = 0; n < count; ++n) {
    for (auto& v : eta) v = rng.normal();
    const double* proto = protos.data().data() + static_cast<std::size_t>(labels[n]) * L;
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t l = 0; l < L; ++l) {
        z[l] = proto[l] + spec.noise * (shared * eta[l] + own * rng.normal());
      }
      const double* a = mixing[k].data().data();
      float* x = inputs[k].data().data() + n * W;
      for (std::size_t w = 0; w < W; ++w) {
        double acc = 0.0;
        for (std::size_t l = 0; l < L; ++l) acc += a[w * L + l] * z[l];
        x[w] = static_cast<float>(acc + spec.noise * rng.normal());
      }
    }
  }
  return ModalityBatch::from_inputs(std::move(inputs), std::move(labels));
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t m = spec.modalities, K = spec.classes, L = spec.latent, W = spec.width;
  Rng structure = Rng::stream(spec.seed, 0);
  Tensord protos({K, L});
  for (auto& v : protos.data()) v = structure.normal(0.0, spec.class_separation);
  std::vector<Tensord> mixing;
  const double scale = 1.0 / std::sqrt(static_cast<double>(L));
  for (std::size_t k = 0; k < m; ++k) {
    Tensord a({W, L});
    for (auto& v : a.data()) v = structure.normal(0.0, scale);
    mixing.push_back(std::move(a));
  }

  SyntheticData out;
  out.train = sample_split(spec, protos, mixing, spec.train, Rng::stream(spec.seed, 1));
  if (spec.val) out.val = sample_split(spec, protos, mixing, spec.val, Rng::stream(spec.seed, 2));
  out.test = sample_split(spec, protos, mixing, spec.test, Rng::stream(spec.seed, 3));
  if (spec.stream) {
    out.stream = sample_split(spec, protos, mixing, spec.stream, Rng::stream(spec.seed, 4));
  }
  for (std::size_t k = 0; k < m; ++k) {
    Tensorf p({K, W});
    for (std::size_t c = 0; c < K; ++c)
      for (std::size_t w = 0; w < W; ++w) {
        double acc = 0.0;
        for (std::size_t l = 0; l < L; ++l) acc += mixing[k].at(w, l) * protos.at(c, l);
        p.at(c, w) = static_cast<float>(acc);
      }
    out.prototypes.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Combinations and missing modalities

std::size_t popcount(std::uint32_t mask) { return static_cast<std::size_t>(std::popcount(mask)); }

std::string mask_str(std::uint32_t mask, std::size_t m) {
  std::string s(m, '0');
  for (std::size_t k = 0; k < m; ++k)
    if (mask & (1u << k)) s[k] = '1';
  return s;
}

namespace {

double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return std::round(r);
}

}  // namespace

std::vector<std::uint32_t> enumerate_combinations(std::size_t m, std::size_t cap,
                                                  std::uint64_t seed) {
  if (m < 1 || m > 31) throw UsageError("enumerate_combinations: m must lie in [1, 31]");
  if (cap < 1) throw UsageError("enumerate_combinations: cap must be >= 1");
  std::vector<std::uint32_t> out;
  Rng rng = Rng::stream(seed, 0xc0b);
  const std::uint32_t limit = 1u << m;
  for (std::size_t i = 1; i <= m; ++i) {
    const double total = binomial(m, i);
    std::vector<std::uint32_t> level;
    if (total <= 2.0e6) {
      // Gosper's hack walks the size-i subsets in ascending order.
      for (std::uint32_t v = (1u << i) - 1; v < limit;) {
        level.push_back(v);
        const std::uint32_t t = v | (v - 1);
        const std::uint32_t w = (t + 1) | (((~t & -~t) - 1) >> (std::countr_zero(v) + 1));
        if (w <= v) break;
        v = w;
      }
      if (level.size() > cap) {
        for (std::size_t j = 0; j < cap; ++j) {
          std::swap(level[j], level[j + rng.index(level.size() - j)]);
        }
        level.resize(cap);
      }
    } else {
      std::set<std::uint32_t> picked;
      std::vector<std::uint32_t> idx(m);
      while (picked.size() < cap) {
        for (std::uint32_t j = 0; j < m; ++j) idx[j] = j;
        std::uint32_t mask = 0;
        for (std::size_t j = 0; j < i; ++j) {
          std::swap(idx[j], idx[j + rng.index(m - j)]);
          mask |= 1u << idx[j];
        }
        picked.insert(mask);
      }
      level.assign(picked.begin(), picked.end());
    }
    std::sort(level.begin(), level.end());
    out.insert(out.end(), level.begin(), level.end());
  }
  return out;
}

ModalityBatch apply_missing_modalities(const ModalityBatch& batch, std::uint32_t mask) {
  const std::size_t m = batch.modalities();
  if ((mask & ((m >= 32 ? 0u : (1u << m)) - 1u)) == 0) {
    throw UsageError("apply_missing_modalities: combination keeps no modality");
  }
  ModalityBatch out = batch;
  for (std::size_t k = 0; k < m; ++k) {
    const bool present = mask & (1u << k);
    if (!present) std::fill(out.inputs[k].data().begin(), out.inputs[k].data().end(), 0.0f);
    for (auto& u : out.presence) u[k] = present ? 1 : 0;
  }
  return out;
}

std::pair<ModalityBatch, MissingPattern> apply_blockwise_missing(const ModalityBatch& stream,
                                                                 double target_rate, Rng& rng,
                                                                 BlockRange range) {
  const std::size_t steps = stream.size(), m = stream.modalities();
  if (!(target_rate >= 0.0 && target_rate < 1.0)) {
    throw ConfigError("blockwise missing rate must lie in [0, 1)");
  }
  if (range.min < 1 || range.max < range.min) throw ConfigError("blockwise: bad block range");
  MissingPattern pattern;
  pattern.target_rate = target_rate;
  pattern.total_steps = steps * m;
  pattern.presence = stream.presence;
  if (target_rate == 0.0) return {stream, pattern};
  if (steps <= range.max) {
    throw ConfigError("blockwise: stream of " + std::to_string(steps) +
                      " steps is not longer than the maximum block " + std::to_string(range.max));
  }
  const double tolerance = 0.01;
  const double lo = target_rate - tolerance, hi = target_rate + tolerance;
  const double max_rate = static_cast<double>(m - 1) / static_cast<double>(m);
  if (lo > max_rate) {
    throw ConfigError("blockwise: rate " + std::to_string(target_rate) +
                      " is unreachable while keeping one modality per step");
  }
  std::vector<std::size_t> present_count(steps, 0);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t k = 0; k < m; ++k) present_count[t] += pattern.presence[t][k];
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t k = 0; k < m; ++k) pattern.missing_steps += pattern.presence[t][k] ? 0 : 1;

  const double total = static_cast<double>(pattern.total_steps);
  std::size_t attempts = 0;
  while (static_cast<double>(pattern.missing_steps) / total < lo) {
    if (++attempts > 1000000) {
      throw ConfigError("blockwise: could not reach rate " + std::to_string(target_rate) +
                        " on a stream of " + std::to_string(steps) + " steps");
    }
    const std::size_t k = rng.index(m);
    const std::size_t len = rng.between(range.min, range.max);
    const std::size_t start = rng.index(steps - len + 1);
    std::size_t fresh = 0;
    bool empties_a_step = false;
    for (std::size_t t = start; t < start + len; ++t) {
      if (!pattern.presence[t][k]) continue;
      ++fresh;
      if (present_count[t] == 1) {
        empties_a_step = true;
        break;
      }
    }
    if (empties_a_step) continue;
    if (static_cast<double>(pattern.missing_steps + fresh) / total > hi) continue;
    for (std::size_t t = start; t < start + len; ++t) {
      if (!pattern.presence[t][k]) continue;
      pattern.presence[t][k] = 0;
      --present_count[t];
    }
    pattern.missing_steps += fresh;
    pattern.blocks.push_back({k, start, len});
  }
  pattern.realized_rate = static_cast<double>(pattern.missing_steps) / total;

  ModalityBatch out = stream;
  out.presence = pattern.presence;
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t w = out.sample_width(k);
    float* x = out.inputs[k].data().data();
    for (std::size_t t = 0; t < steps; ++t)
      if (!out.presence[t][k]) std::fill(x + t * w, x + (t + 1) * w, 0.0f);
  }
  return {std::move(out), std::move(pattern)};
}

// ---------------------------------------------------------------------------
// Normalization

NormalizationStats fit_normalization(const ModalityBatch& train, float lo, float hi) {
  NormalizationStats stats;
  stats.lo = lo;
  stats.hi = hi;
  for (std::size_t k = 0; k < train.modalities(); ++k) {
    const Shape s = train.sample_shape(k);
    const std::size_t channels = s.back();
    std::vector<float> mn(channels, std::numeric_limits<float>::infinity());
    std::vector<float> mx(channels, -std::numeric_limits<float>::infinity());
    auto d = train.inputs[k].data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const std::size_t c = i % channels;
      mn[c] = std::min(mn[c], d[i]);
      mx[c] = std::max(mx[c], d[i]);
    }
    stats.min.push_back(std::move(mn));
    stats.max.push_back(std::move(mx));
  }
  return stats;
}

ModalityBatch normalize(const ModalityBatch& batch, const NormalizationStats& stats) {
  if (stats.min.size() != batch.modalities()) {
    throw ConfigError("normalization statistics cover " + std::to_string(stats.min.size()) +
                      " modalities, batch has " + std::to_string(batch.modalities()));
  }
  ModalityBatch out = batch;
  const float mid = 0.5f * (stats.lo + stats.hi);
  for (std::size_t k = 0; k < out.modalities(); ++k) {
    const auto& mn = stats.min[k];
    const auto& mx = stats.max[k];
    const std::size_t channels = mn.size();
    auto d = out.inputs[k].data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const std::size_t c = i % channels;
      if (mx[c] > mn[c]) {
        d[i] = stats.lo + (stats.hi - stats.lo) * (d[i] - mn[c]) / (mx[c] - mn[c]);
      } else {
        d[i] = mid;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Container

namespace {
constexpr char kDatasetMagic[4] = {'E', 'M', 'B', 'D'};
constexpr std::uint8_t kDatasetVersion = 1;
}  // namespace

const ModalityBatch& DatasetFile::split(const std::string& name) const {
  for (const auto& [n, b] : splits)
    if (n == name) return b;
  throw ConfigError("dataset has no split named '" + name + "'");
}

void save_dataset(const std::filesystem::path& path, const DatasetFile& data) {
  if (data.splits.empty()) throw UsageError("save_dataset: no splits");
  const ModalityBatch& first = data.splits.front().second;
  const std::size_t m = first.modalities();
  io::Writer w;
  w.raw(kDatasetMagic, 4);
  w.u8(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(m));
  w.u32(static_cast<std::uint32_t>(data.classes));
  w.str(data.spec_digest);
  for (std::size_t k = 0; k < m; ++k) {
    const Shape s = first.sample_shape(k);
    w.u32(static_cast<std::uint32_t>(s.size()));
    for (auto d : s) w.u32(static_cast<std::uint32_t>(d));
  }
  w.u32(static_cast<std::uint32_t>(data.splits.size()));
  for (const auto& [name, batch] : data.splits) {
    if (batch.modalities() != m) throw UsageError("save_dataset: splits disagree on m");
    w.str(name);
    w.u64(batch.size());
    for (std::size_t k = 0; k < m; ++k) {
      if (batch.sample_shape(k) != first.sample_shape(k)) {
        throw UsageError("save_dataset: splits disagree on modality widths");
      }
      for (float v : batch.inputs[k].data()) w.f32(v);
    }
    for (int y : batch.labels) w.i32(y);
    for (const auto& u : batch.presence) w.bytes(u);
  }
  w.save(path);
}

DatasetFile load_dataset(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::Reader r(bytes, path.string());
  auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), kDatasetMagic)) {
    throw FormatError(path.string() + ": not a dataset container");
  }
  const std::uint8_t version = r.u8();
  if (version != kDatasetVersion) {
    throw FormatError(path.string() + ": unsupported dataset version " + std::to_string(version));
  }
  DatasetFile out;
  const std::size_t m = r.u32();
  out.classes = r.u32();
  out.spec_digest = r.str();
  std::vector<Shape> shapes(m);
  for (auto& s : shapes) {
    const std::size_t rank = r.u32();
    for (std::size_t i = 0; i < rank; ++i) s.push_back(r.u32());
  }
  const std::size_t nsplits = r.u32();
  for (std::size_t i = 0; i < nsplits; ++i) {
    std::string name = r.str();
    const std::size_t n = r.u64();
    ModalityBatch b;
    for (std::size_t k = 0; k < m; ++k) {
      Shape s{n};
      s.insert(s.end(), shapes[k].begin(), shapes[k].end());
      Tensorf t(s);
      for (auto& v : t.data()) v = r.f32();
      b.inputs.push_back(std::move(t));
    }
    b.labels.resize(n);
    for (auto& y : b.labels) y = r.i32();
    b.presence.resize(n);
    for (auto& u : b.presence) {
      auto raw = r.take(m);
      u.assign(raw.begin(), raw.end());
    }
    b.validate(out.classes);
    out.splits.emplace_back(std::move(name), std::move(b));
  }
  if (!r.done()) throw FormatError(path.string() + ": trailing bytes after dataset");
  return out;
}

}  // namespace embrace
