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
#include <stdexcept>
#include <string>

namespace embrace {

// Base of every error the library throws. The category maps onto the CLI exit
// codes: numeric failures exit 3, everything else exits 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that cannot be combined.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-domain argument (zero window, unknown activation, bad FFT length).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Values that violate a data precondition (labels, targets).
class DataError : public Error {
 public:
  using Error::Error;
};

// API misuse (non-scalar backward, empty input, wrong call order).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Inconsistent or incomplete configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Every modality is absent, so no prediction can be made.
class UnrecoverableInputError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or division by a zero reference value.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::size_t step = 0)
      : Error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

}  // namespace embrace
