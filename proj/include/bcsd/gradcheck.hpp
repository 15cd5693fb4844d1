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

// Central finite-difference verification of reverse-mode gradients.

#ifndef BCSD_GRADCHECK_HPP
#define BCSD_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "bcsd/autograd.hpp"

namespace bcsd {

struct GradCheckOptions {
  double step = 1e-6;
  double rel_tolerance = 1e-4;
  // Gradients smaller than this are compared absolutely: the relative error
  // denominator never drops below it.
  double magnitude_floor = 1e-5;
  // 0 checks every entry; otherwise an evenly strided subset of this size.
  std::size_t max_entries_per_param = 0;
};

struct ParamGradCheck {
  std::string name;
  std::size_t entries_checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamGradCheck> params;
  bool passed() const {
    return std::all_of(params.begin(), params.end(),
                       [](const ParamGradCheck& p) { return p.passed; });
  }
  double max_rel_error() const {
    double m = 0;
    for (const auto& p : params) m = std::max(m, p.max_rel_error);
    return m;
  }
};

// `loss` builds a scalar on the given tape from the parameters in `params`.
// It is evaluated once with backward() for the analytic gradient and twice
// per checked entry for the central difference.
template <typename T>
GradCheckReport finite_diff_check(
    const std::function<Var<T>(Tape<T>&)>& loss, ParameterSet<T>& params,
    const GradCheckOptions& options = {}) {
  params.zero_grad();
  {
    Tape<T> tape;
    Var<T> out = loss(tape);
    tape.backward(out);
    tape.accumulate_param_grads();
  }
  auto evaluate = [&]() {
    Tape<T> tape;
    return static_cast<double>(loss(tape).value()[0]);
  };

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter<T>& p = params[pi];
    ParamGradCheck check;
    check.name = p.name;
    const std::size_t n = p.value.size();
    std::size_t stride = 1;
    if (options.max_entries_per_param > 0 && n > options.max_entries_per_param) {
      stride = (n + options.max_entries_per_param - 1) / options.max_entries_per_param;
    }
    std::size_t row_len = p.value.size() / p.value.dim(0);
    for (std::size_t k = 0; k < n; k += stride) {
      if (p.frozen_row && k / row_len == *p.frozen_row) continue;
      const T saved = p.value[k];
      p.value[k] = saved + T(options.step);
      const double up = evaluate();
      p.value[k] = saved - T(options.step);
      const double down = evaluate();
      p.value[k] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = static_cast<double>(p.grad[k]);
      const double abs_err = std::abs(numeric - analytic);
      const double denom = std::max({std::abs(numeric), std::abs(analytic),
                                     options.magnitude_floor});
      check.max_abs_error = std::max(check.max_abs_error, abs_err);
      check.max_rel_error = std::max(check.max_rel_error, abs_err / denom);
      ++check.entries_checked;
    }
    check.passed = check.max_rel_error <= options.rel_tolerance;
    report.params.push_back(std::move(check));
  }
  return report;
}

}  // namespace bcsd

#endif  // BCSD_GRADCHECK_HPP
