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

// Cosine-margin pair loss:
//   y = +1  ->  1 - cos(E1, E2)
//   y = -1  ->  max(0, cos(E1, E2) - margin)
// At cos == margin the negative branch takes the flat side: loss 0, gradient 0.

#ifndef BCSD_LOSS_HPP
#define BCSD_LOSS_HPP

#include <span>
#include <string>

#include "bcsd/autograd.hpp"
#include "bcsd/errors.hpp"
#include "bcsd/kernels.hpp"

namespace bcsd {

inline constexpr double kDefaultMargin = 0.9;

struct LossConfig {
  double margin = kDefaultMargin;

  void validate() const {
    if (!(margin >= 0.0 && margin <= 1.0)) throw Error("margin must be in [0, 1]");
  }
};

inline void check_label(int label) {
  if (label != 1 && label != -1) {
    throw Error("pair label must be +1 or -1, got " + std::to_string(label));
  }
}

// Loss as a function of a precomputed cosine.
inline double cosine_margin_loss(double cos, int label, double margin = kDefaultMargin) {
  check_label(label);
  if (label == 1) return 1.0 - cos;
  return cos > margin ? cos - margin : 0.0;
}

template <typename T>
double cosine_pair_loss(std::span<const T> e1, std::span<const T> e2, int label,
                        double margin = kDefaultMargin) {
  check_label(label);
  return cosine_margin_loss(cosine(e1, e2).value, label, margin);
}

// Differentiable form on a [1] cosine node.
template <typename T>
Var<T> cosine_margin_loss(const Var<T>& cos, int label, double margin = kDefaultMargin) {
  check_label(label);
  const T c = cos.value()[0];
  const T m = T(margin);
  T value;
  T slope;
  if (label == 1) {
    value = T{1} - c;
    slope = T{-1};
  } else if (c > m) {
    value = c - m;
    slope = T{1};
  } else {
    value = T{0};
    slope = T{0};
  }
  return cos.tape().record(Tensor<T>(Shape{1}, {value}), {cos},
                           [ci = cos.id(), slope](Tape<T>& t, std::size_t self) {
                             if (!t.requires_grad(ci)) return;
                             t.grad(ci)[0] += slope * t.grad(self)[0];
                           });
}

template <typename T>
Var<T> cosine_pair_loss(const Var<T>& e1, const Var<T>& e2, int label,
                        double margin = kDefaultMargin) {
  return cosine_margin_loss(cosine(e1, e2), label, margin);
}

}  // namespace bcsd

#endif  // BCSD_LOSS_HPP
