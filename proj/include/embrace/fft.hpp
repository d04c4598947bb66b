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

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace embrace {

using Complex = std::complex<double>;

inline bool is_power_of_two(std::size_t n) { return n && !(n & (n - 1)); }

// In-place iterative radix-2 Cooley-Tukey transform. The inverse includes
// the 1/n normalization. Throws ParameterError unless the length is a power
// of two.
void fft_inplace(std::span<Complex> x, bool inverse);

inline std::vector<Complex> fft(std::vector<Complex> x, bool inverse = false) {
  fft_inplace(x, inverse);
  return x;
}

}  // namespace embrace
