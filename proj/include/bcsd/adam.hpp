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

#ifndef BCSD_ADAM_HPP
#define BCSD_ADAM_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bcsd/autograd.hpp"
#include "bcsd/errors.hpp"

namespace bcsd {

struct AdamOptions {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;

  AdamState() = default;
  AdamState(const ParameterSet<T>& params, AdamOptions opts) : options(opts) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      first_moment.emplace_back(params[i].value.size(), T{0});
      second_moment.emplace_back(params[i].value.size(), T{0});
    }
  }
};

// One bias-corrected adaptive-moment step using the gradients stored in
// `params`. Nothing is modified when any gradient is non-finite.
template <typename T>
void adam_update(ParameterSet<T>& params, AdamState<T>& state) {
  if (state.first_moment.size() != params.size()) {
    throw Error("optimizer state does not match the parameter set");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter<T>& p = params[i];
    if (state.first_moment[i].size() != p.value.size()) {
      throw ShapeError("optimizer accumulator for '" + p.name +
                       "' does not match the parameter shape");
    }
    for (T g : p.grad) {
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient in parameter '" + p.name + "'");
      }
    }
  }

  const AdamOptions& o = state.options;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T c1 = T(1.0 / (1.0 - std::pow(o.beta1, t)));
  const T c2 = T(1.0 / (1.0 - std::pow(o.beta2, t)));
  const T b1 = T(o.beta1), b2 = T(o.beta2);
  const T lr = T(o.learning_rate), eps = T(o.epsilon);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    auto values = p.value.data();
    std::size_t skip_begin = 0, skip_end = 0;
    if (p.frozen_row) {
      const std::size_t row = p.value.size() / p.value.dim(0);
      skip_begin = *p.frozen_row * row;
      skip_end = skip_begin + row;
    }
    for (std::size_t k = 0; k < values.size(); ++k) {
      if (k >= skip_begin && k < skip_end) continue;
      const T g = p.grad[k];
      m[k] = b1 * m[k] + (T{1} - b1) * g;
      v[k] = b2 * v[k] + (T{1} - b2) * g * g;
      const T m_hat = m[k] * c1;
      const T v_hat = v[k] * c2;
      values[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

}  // namespace bcsd

#endif  // BCSD_ADAM_HPP
