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
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "embrace/embrace.hpp"
#include "embrace/rng.hpp"
#include "embrace/tensor.hpp"

namespace embrace {

// Per-modality inputs x^(k) with per-sample presence vectors and labels.
struct ModalityBatch {
  std::vector<Tensorf> inputs;           // x^(k), leading axis = sample
  std::vector<PresenceVector> presence;  // one length-m vector per sample
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t modalities() const { return inputs.size(); }
  // Per-sample shape of modality k (without the batch axis).
  Shape sample_shape(std::size_t k) const;
  std::size_t sample_width(std::size_t k) const { return shape_size(sample_shape(k)); }

  // Throws UsageError/DataError when the invariants do not hold.
  void validate(std::size_t classes) const;
  ModalityBatch select(std::span<const std::size_t> rows) const;
  ModalityBatch slice(std::size_t begin, std::size_t end) const;
  bool all_present() const;

  static ModalityBatch from_inputs(std::vector<Tensorf> inputs, std::vector<int> labels);
};

// ---------------------------------------------------------------------------
// IDX ingestion

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxFile {
  std::uint32_t magic = 0;
  Shape dims;
  std::vector<std::uint8_t> payload;

  bool is_images() const { return magic == kIdxImagesMagic; }
  // Pixels scaled to [0, 1]; shape = dims.
  Tensorf pixels() const;
  std::vector<int> labels() const;
};

IdxFile parse_idx(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");
IdxFile load_idx(const std::filesystem::path& path);
// Loads an image/label file pair and checks that their counts agree.
std::pair<Tensorf, std::vector<int>> load_idx_pair(const std::filesystem::path& images,
                                                   const std::filesystem::path& labels);

// [B x 28 x 28] -> left columns 0..13 and right columns 14..27, each [B x 28 x 14].
std::pair<Tensorf, Tensorf> split_bimodal(const Tensorf& images);

// ---------------------------------------------------------------------------
// Synthetic m-modality data

struct SyntheticSpec {
  std::size_t modalities = 8;     // m
  std::size_t classes = 10;       // K
  std::size_t latent = 16;        // L
  std::size_t width = 32;         // observation width per modality
  double class_separation = 1.0;  // std of the class prototypes
  double noise = 0.3;             // sigma
  double correlation = 0.5;       // rho, share of latent noise common to all modalities
  std::size_t run_min = 20;       // class-run length range of the ordered splits
  std::size_t run_max = 100;
  std::size_t train = 8000;
  std::size_t val = 1000;
  std::size_t test = 2000;
  std::size_t stream = 8000;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticData {
  ModalityBatch train, val, test, stream;
  // A_k z evaluated at each class prototype: [K x width] per modality.
  std::vector<Tensorf> prototypes;
};

// Per sample: z_k = proto(y) + sigma (sqrt(rho) eta + sqrt(1 - rho) eta_k),
// x_k = A_k z_k + sigma eps_k. Labels come in runs so every split can also be
// read as a time-ordered stream.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

// ---------------------------------------------------------------------------
// Missing-data scenarios

// For every subset size i = 1..m, all size-i modality subsets or, when there
// are more than `cap`, `cap` of them sampled without replacement. Within a
// size the masks are in ascending order. Bit k set = modality k present.
std::vector<std::uint32_t> enumerate_combinations(std::size_t m, std::size_t cap,
                                                  std::uint64_t seed = 0);

std::size_t popcount(std::uint32_t mask);
std::string mask_str(std::uint32_t mask, std::size_t m);

// Sets u_k = bit k on every sample and zeroes the absent tensors.
ModalityBatch apply_missing_modalities(const ModalityBatch& batch, std::uint32_t mask);

struct BlockRange {
  std::size_t min = 300;
  std::size_t max = 900;
};

struct MissingBlock {
  std::size_t modality;
  std::size_t start;
  std::size_t length;
};

struct MissingPattern {
  double target_rate = 0.0;
  double realized_rate = 0.0;
  std::size_t missing_steps = 0;  // missing (step, modality) cells after merging
  std::size_t total_steps = 0;    // steps x modalities
  std::vector<MissingBlock> blocks;
  std::vector<PresenceVector> presence;
};

// Removes random blocks of one modality at a time until the realized rate is
// within +-1% of the target. Blocks that would leave a step with no modality,
// or overshoot the window, are redrawn. Absent entries are zeroed.
std::pair<ModalityBatch, MissingPattern> apply_blockwise_missing(const ModalityBatch& stream,
                                                                 double target_rate, Rng& rng,
                                                                 BlockRange range = {});

// ---------------------------------------------------------------------------
// Normalization

struct NormalizationStats {
  // per modality, per channel (trailing axis)
  std::vector<std::vector<float>> min, max;
  float lo = 0.0f, hi = 1.0f;
};

NormalizationStats fit_normalization(const ModalityBatch& train, float lo, float hi);
// Affine map onto [lo, hi] with the stored statistics; constant channels map
// to the midpoint.
ModalityBatch normalize(const ModalityBatch& batch, const NormalizationStats& stats);

// ---------------------------------------------------------------------------
// Binary dataset container

struct DatasetFile {
  std::size_t classes = 0;
  std::string spec_digest;
  std::vector<std::pair<std::string, ModalityBatch>> splits;

  const ModalityBatch& split(const std::string& name) const;
};

void save_dataset(const std::filesystem::path& path, const DatasetFile& data);
DatasetFile load_dataset(const std::filesystem::path& path);

}  // namespace embrace
