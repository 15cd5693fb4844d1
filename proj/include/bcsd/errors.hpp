// Copyright 2026 The bcsd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef BCSD_ERRORS_HPP
#define BCSD_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace bcsd {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed input text (dataset lines, vocabulary files, config files).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input whose content violates a contract (duplicate keys, missing
// files, ids out of range, too few families for a pool...).
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite gradients or losses.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace bcsd

#endif  // BCSD_ERRORS_HPP
