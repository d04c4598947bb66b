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
#include <vector>

namespace embrace {

// K x K counts indexed [truth][prediction].
class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(std::size_t classes);

  void add(int truth, int prediction);
  void add(std::span<const int> truth, std::span<const int> predictions);

  std::size_t classes() const { return classes_; }
  std::uint64_t count(std::size_t truth, std::size_t prediction) const {
    return counts_[truth * classes_ + prediction];
  }
  std::uint64_t total() const { return total_; }
  std::uint64_t support(std::size_t cls) const;    // n_i
  std::uint64_t predicted(std::size_t cls) const;

  double precision(std::size_t cls) const;
  double recall(std::size_t cls) const;
  // sum_i (n_i / n) * 2 P_i R_i / (P_i + R_i); 0/0 terms contribute 0.
  double weighted_f1() const;
  double accuracy() const;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

double weighted_f1(std::span<const int> predictions, std::span<const int> labels,
                   std::size_t classes);
double accuracy(std::span<const int> predictions, std::span<const int> labels);

}  // namespace embrace
