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

// Differentiable kernels. Each function computes its forward value eagerly and
// records a backward closure on the operand tape. Matrices are rank-2 tensors
// in row-major order; vectors are rank-1.

#ifndef BCSD_KERNELS_HPP
#define BCSD_KERNELS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bcsd/autograd.hpp"
#include "bcsd/errors.hpp"
#include "bcsd/random.hpp"
#include "bcsd/tensor.hpp"

namespace bcsd {

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

// (rows, cols) of a rank-1 (as a single row) or rank-2 tensor.
template <typename T>
std::pair<std::size_t, std::size_t> as_rows_cols(const Tensor<T>& t,
                                                 const char* op) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  throw ShapeError(std::string(op) + " expects a vector or matrix, got " +
                   to_string(t.shape()));
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary(const Var<T>& x, Fwd fwd, Deriv deriv) {
  Tensor<T> out = x.value();
  for (T& v : out.data()) v = fwd(v);
  return x.tape().record(
      std::move(out), {x}, [xi = x.id(), deriv](Tape<T>& t, std::size_t self) {
        if (!t.requires_grad(xi)) return;
        const auto& xv = t.value(xi).data();
        const auto& yv = t.value(self).data();
        auto g = t.grad(self);
        auto gx = t.grad(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) {
          gx[i] += g[i] * deriv(xv[i], yv[i]);
        }
      });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

// [m x k] * [k x n] -> [m x n]
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::require(a.value().rank() == 2 && b.value().rank() == 2,
                  "matmul expects matrices");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  detail::require(b.dim(0) == k, "matmul inner extents differ: " +
                                     to_string(a.shape()) + " * " +
                                     to_string(b.shape()));
  Tensor<T> out(Shape{m, n});
  as_matrix(out.data(), m, n).noalias() =
      as_matrix(a.value().data(), m, k) * as_matrix(b.value().data(), k, n);
  return a.tape().record(
      std::move(out), {a, b},
      [ai = a.id(), bi = b.id(), m, k, n](Tape<T>& t, std::size_t self) {
        auto g = as_matrix(std::span<const T>(t.grad(self)), m, n);
        if (t.requires_grad(ai)) {
          as_matrix(t.grad(ai), m, k).noalias() +=
              g * as_matrix(t.value(bi).data(), k, n).transpose();
        }
        if (t.requires_grad(bi)) {
          as_matrix(t.grad(bi), k, n).noalias() +=
              as_matrix(t.value(ai).data(), m, k).transpose() * g;
        }
      });
}

// x W + b with x either [k] or [m x k], W [k x n], b [n].
template <typename T>
Var<T> affine(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  auto [m, k] = detail::as_rows_cols(x.value(), "affine");
  detail::require(w.value().rank() == 2 && w.dim(0) == k,
                  "affine weight " + to_string(w.shape()) +
                      " does not accept input " + to_string(x.shape()));
  const std::size_t n = w.dim(1);
  detail::require(b.value().rank() == 1 && b.dim(0) == n,
                  "affine bias " + to_string(b.shape()) + " needs extent " +
                      std::to_string(n));
  Tensor<T> out(x.value().rank() == 1 ? Shape{n} : Shape{m, n});
  auto o = as_matrix(out.data(), m, n);
  o.noalias() =
      as_matrix(x.value().data(), m, k) * as_matrix(w.value().data(), k, n);
  o.rowwise() += as_matrix(b.value().data(), 1, n).row(0);
  return x.tape().record(
      std::move(out), {x, w, b},
      [xi = x.id(), wi = w.id(), bi = b.id(), m, k, n](Tape<T>& t,
                                                        std::size_t self) {
        auto g = as_matrix(std::span<const T>(t.grad(self)), m, n);
        if (t.requires_grad(xi)) {
          as_matrix(t.grad(xi), m, k).noalias() +=
              g * as_matrix(t.value(wi).data(), k, n).transpose();
        }
        if (t.requires_grad(wi)) {
          as_matrix(t.grad(wi), k, n).noalias() +=
              as_matrix(t.value(xi).data(), m, k).transpose() * g;
        }
        if (t.requires_grad(bi)) {
          as_matrix(t.grad(bi), 1, n).row(0) += g.colwise().sum();
        }
      });
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
  detail::require(x.value().rank() == 2, "transpose expects a matrix");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor<T> out(Shape{n, m});
  as_matrix(out.data(), n, m) = as_matrix(x.value().data(), m, n).transpose();
  return x.tape().record(std::move(out), {x},
                         [xi = x.id(), m, n](Tape<T>& t, std::size_t self) {
                           if (!t.requires_grad(xi)) return;
                           as_matrix(t.grad(xi), m, n) +=
                               as_matrix(std::span<const T>(t.grad(self)), n, m)
                                   .transpose();
                         });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x},
                         [xi = x.id()](Tape<T>& t, std::size_t self) {
                           if (!t.requires_grad(xi)) return;
                           auto g = t.grad(self);
                           auto gx = t.grad(xi);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                         });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require(a.shape() == b.shape(), "add of " + to_string(a.shape()) +
                                              " and " + to_string(b.shape()));
  Tensor<T> out = a.value();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape().record(std::move(out), {a, b},
                         [ai = a.id(), bi = b.id()](Tape<T>& t, std::size_t self) {
                           auto g = t.grad(self);
                           for (std::size_t id : {ai, bi}) {
                             if (!t.requires_grad(id)) continue;
                             auto gx = t.grad(id);
                             for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                           }
                         });
}

// Elementwise (Hadamard) product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require(a.shape() == b.shape(), "mul of " + to_string(a.shape()) +
                                              " and " + to_string(b.shape()));
  Tensor<T> out = a.value();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape().record(
      std::move(out), {a, b}, [ai = a.id(), bi = b.id()](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        if (t.requires_grad(ai)) {
          auto gx = t.grad(ai);
          auto bv = t.value(bi).data();
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * bv[i];
        }
        if (t.requires_grad(bi)) {
          auto gx = t.grad(bi);
          auto av = t.value(ai).data();
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * av[i];
        }
      });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  return detail::unary(
      x, [factor](T v) { return v * factor; },
      [factor](T, T) { return factor; });
}

template <typename T>
T sigmoid_value(T v) {
  return v >= T{0} ? T{1} / (T{1} + std::exp(-v))
                   : std::exp(v) / (T{1} + std::exp(v));
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return sigmoid_value(v); },
      [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return v > T{0} ? v : T{0}; },
      [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

// Exact (erf) GELU.
template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
  return detail::unary(
      x, [](T v) { return T(0.5) * v * (T{1} + std::erf(v * kInvSqrt2)); },
      [](T v, T) {
        return T(0.5) * (T{1} + std::erf(v * kInvSqrt2)) +
               v * kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
      });
}

// Inverted dropout; identity when not training or rate == 0.
template <typename T>
Var<T> dropout(const Var<T>& x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw Error("dropout rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  const T keep_scale = T(1.0 / (1.0 - rate));
  Buffer<T> mask(x.value().size());
  for (T& m : mask) m = uniform_unit(rng) < rate ? T{0} : keep_scale;
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return x.tape().record(std::move(out), {x},
                         [xi = x.id(), mask = std::move(mask)](Tape<T>& t,
                                                               std::size_t self) {
                           if (!t.requires_grad(xi)) return;
                           auto g = t.grad(self);
                           auto gx = t.grad(xi);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                         });
}

// ---------------------------------------------------------------------------
// Normalization

// Normalizes every row (the last axis) to zero mean and unit variance. A
// constant row has zero variance and maps to all zeros.
template <typename T>
Var<T> layer_norm(const Var<T>& x, T eps = T(1e-5)) {
  auto [m, n] = detail::as_rows_cols(x.value(), "layer_norm");
  Tensor<T> out(x.shape());
  Buffer<T> inv_std(m);
  auto xv = x.value().data();
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = xv.data() + r * n;
    T mean{0};
    for (std::size_t c = 0; c < n; ++c) mean += row[c];
    mean /= T(n);
    T var{0};
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= T(n);
    inv_std[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = (row[c] - mean) * inv_std[r];
  }
  return x.tape().record(
      std::move(out), {x},
      [xi = x.id(), m, n, inv_std = std::move(inv_std)](Tape<T>& t, std::size_t self) {
        if (!t.requires_grad(xi)) return;
        auto g = t.grad(self);
        auto y = t.value(self).data();
        auto gx = t.grad(xi);
        for (std::size_t r = 0; r < m; ++r) {
          T mean_g{0}, mean_gy{0};
          for (std::size_t c = 0; c < n; ++c) {
            mean_g += g[r * n + c];
            mean_gy += g[r * n + c] * y[r * n + c];
          }
          mean_g /= T(n);
          mean_gy /= T(n);
          for (std::size_t c = 0; c < n; ++c) {
            gx[r * n + c] += inv_std[r] * (g[r * n + c] - mean_g - y[r * n + c] * mean_gy);
          }
        }
      });
}

// Per-feature gain and shift: x[r, c] * gamma[c] + beta[c].
template <typename T>
Var<T> scale_shift(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta) {
  auto [m, n] = detail::as_rows_cols(x.value(), "scale_shift");
  detail::require(gamma.shape() == Shape{n} && beta.shape() == Shape{n},
                  "scale_shift parameters must have extent " + std::to_string(n));
  Tensor<T> out(x.shape());
  auto xv = x.value().data();
  auto gv = gamma.value().data();
  auto bv = beta.value().data();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = xv[r * n + c] * gv[c] + bv[c];
  }
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [xi = x.id(), gi = gamma.id(), bi = beta.id(), m, n](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        if (t.requires_grad(xi)) {
          auto gx = t.grad(xi);
          auto gv = t.value(gi).data();
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[r * n + c] * gv[c];
        }
        if (t.requires_grad(gi)) {
          auto gg = t.grad(gi);
          auto xv = t.value(xi).data();
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gg[c] += g[r * n + c] * xv[r * n + c];
        }
        if (t.requires_grad(bi)) {
          auto gb = t.grad(bi);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
        }
      });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  T eps = T(1e-5)) {
  return scale_shift(layer_norm(x, eps), gamma, beta);
}

// ---------------------------------------------------------------------------
// Pooling, slicing, concatenation

// [C x L] -> [C]: maximum of each row. Gradient flows to the first maximum.
template <typename T>
Var<T> max_pool_time(const Var<T>& x) {
  detail::require(x.value().rank() == 2, "max_pool_time expects [channels x time]");
  const std::size_t c = x.dim(0), l = x.dim(1);
  Tensor<T> out(Shape{c});
  std::vector<std::size_t> argmax(c);
  auto xv = x.value().data();
  for (std::size_t i = 0; i < c; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < l; ++j) {
      if (xv[i * l + j] > xv[i * l + best]) best = j;
    }
    argmax[i] = best;
    out[i] = xv[i * l + best];
  }
  return x.tape().record(std::move(out), {x},
                         [xi = x.id(), l, argmax = std::move(argmax)](Tape<T>& t,
                                                                      std::size_t self) {
                           if (!t.requires_grad(xi)) return;
                           auto g = t.grad(self);
                           auto gx = t.grad(xi);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i * l + argmax[i]] += g[i];
                         });
}

// [L x C] -> [C]: mean over rows.
template <typename T>
Var<T> mean_rows(const Var<T>& x) {
  detail::require(x.value().rank() == 2, "mean_rows expects a matrix");
  const std::size_t l = x.dim(0), c = x.dim(1);
  Tensor<T> out(Shape{c});
  as_matrix(out.data(), 1, c).row(0) =
      as_matrix(x.value().data(), l, c).colwise().sum() / T(l);
  return x.tape().record(std::move(out), {x},
                         [xi = x.id(), l, c](Tape<T>& t, std::size_t self) {
                           if (!t.requires_grad(xi)) return;
                           auto g = as_matrix(std::span<const T>(t.grad(self)), 1, c);
                           as_matrix(t.grad(xi), l, c).rowwise() += g.row(0) / T(l);
                         });
}

// Sum of all elements -> [1].
template <typename T>
Var<T> sum(const Var<T>& x) {
  T total{0};
  for (T v : x.value().data()) total += v;
  return x.tape().record(Tensor<T>(Shape{1}, {total}), {x},
                         [xi = x.id()](Tape<T>& t, std::size_t self) {
                           if (!t.requires_grad(xi)) return;
                           const T g = t.grad(self)[0];
                           for (T& gx : t.grad(xi)) gx += g;
                         });
}

// Rows [begin, begin + count) of a matrix.
template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t count) {
  detail::require(x.value().rank() == 2, "slice_rows expects a matrix");
  const std::size_t n = x.dim(1);
  detail::require(count > 0 && begin + count <= x.dim(0),
                  "slice_rows range out of bounds for " + to_string(x.shape()));
  auto xv = x.value().data();
  Tensor<T> out(Shape{count, n},
                Buffer<T>(xv.begin() + begin * n, xv.begin() + (begin + count) * n));
  return x.tape().record(std::move(out), {x},
                         [xi = x.id(), begin, n](Tape<T>& t, std::size_t self) {
                           if (!t.requires_grad(xi)) return;
                           auto g = t.grad(self);
                           auto gx = t.grad(xi);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[begin * n + i] += g[i];
                         });
}

// Truncates or zero-pads a matrix along its first axis to exactly `rows`.
template <typename T>
Var<T> resize_rows(const Var<T>& x, std::size_t rows) {
  detail::require(x.value().rank() == 2, "resize_rows expects a matrix");
  const std::size_t have = x.dim(0), n = x.dim(1);
  if (have == rows) return x;
  Tensor<T> out(Shape{rows, n});
  const std::size_t keep = std::min(have, rows);
  std::copy_n(x.value().data().begin(), keep * n, out.data().begin());
  return x.tape().record(std::move(out), {x},
                         [xi = x.id(), keep, n](Tape<T>& t, std::size_t self) {
                           if (!t.requires_grad(xi)) return;
                           auto g = t.grad(self);
                           auto gx = t.grad(xi);
                           for (std::size_t i = 0; i < keep * n; ++i) gx[i] += g[i];
                         });
}

// Concatenation along `axis`; every other extent must agree.
template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
  detail::require(!parts.empty(), "concat of nothing");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    throw ShapeError("concat axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(first.size()));
  }
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    detail::require(s.size() == first.size(), "concat of tensors with different ranks");
    for (std::size_t a = 0; a < s.size(); ++a) {
      if (a != axis && s[a] != first[a]) {
        throw ShapeError("concat along axis " + std::to_string(axis) +
                         " of mismatched shapes " + to_string(first) + " and " +
                         to_string(s));
      }
    }
    shape[axis] += s[axis];
  }
  // View every tensor as [outer x (extent(axis) * inner)].
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= first[a];
  for (std::size_t a = axis + 1; a < first.size(); ++a) inner *= first[a];
  const std::size_t out_row = shape[axis] * inner;

  Tensor<T> out(shape);
  std::vector<std::size_t> offsets, widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[axis] * inner;
    auto pv = p.value().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.begin() + o * w, w, out.data().begin() + o * out_row + offset);
    }
    offsets.push_back(offset);
    widths.push_back(w);
    offset += w;
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return parts[0].tape().record(
      std::move(out), parts,
      [ids = std::move(ids), offsets = std::move(offsets), widths = std::move(widths),
       outer, out_row](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          auto gx = t.grad(ids[k]);
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < widths[k]; ++i) {
              gx[o * widths[k] + i] += g[o * out_row + offsets[k] + i];
            }
          }
        }
      });
}

template <typename T>
Var<T> concat(std::initializer_list<Var<T>> parts, std::size_t axis) {
  return concat(std::span<const Var<T>>(parts.begin(), parts.size()), axis);
}

// Rows of `table` selected by `ids` -> [ids.size() x d]. Rows equal to
// `padding_id` receive no gradient.
template <typename T>
Var<T> embedding_lookup(const Var<T>& table, std::span<const std::int32_t> ids,
                        std::optional<std::int32_t> padding_id = std::nullopt) {
  detail::require(table.value().rank() == 2, "embedding table must be a matrix");
  detail::require(!ids.empty(), "embedding lookup of zero ids");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  Tensor<T> out(Shape{ids.size(), d});
  auto tv = table.value().data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw DataError("embedding id " + std::to_string(ids[i]) +
                      " out of range for a table of " + std::to_string(rows) +
                      " rows (vocabulary and model do not match)");
    }
    std::copy_n(tv.begin() + ids[i] * d, d, out.data().begin() + i * d);
  }
  return table.tape().record(
      std::move(out), {table},
      [ti = table.id(), ids = std::vector<std::int32_t>(ids.begin(), ids.end()), d,
       padding_id](Tape<T>& t, std::size_t self) {
        if (!t.requires_grad(ti)) return;
        auto g = t.grad(self);
        auto gt = t.grad(ti);
        for (std::size_t i = 0; i < ids.size(); ++i) {
          if (padding_id && ids[i] == *padding_id) continue;
          T* dst = gt.data() + ids[i] * d;
          const T* src = g.data() + i * d;
          for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
        }
      });
}

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

// cols[(c * W + w), j] = x[c, j + w] for the valid positions j.
template <typename T>
void im2col(std::span<const T> x, std::size_t c_in, std::size_t len, std::size_t width,
            std::size_t out_len, std::span<T> cols) {
  for (std::size_t c = 0; c < c_in; ++c) {
    const T* src = x.data() + c * len;
    for (std::size_t w = 0; w < width; ++w) {
      std::copy_n(src + w, out_len, cols.data() + (c * width + w) * out_len);
    }
  }
}

template <typename T>
void col2im_add(std::span<const T> cols, std::size_t c_in, std::size_t len,
                std::size_t width, std::size_t out_len, std::span<T> x) {
  for (std::size_t c = 0; c < c_in; ++c) {
    T* dst = x.data() + c * len;
    for (std::size_t w = 0; w < width; ++w) {
      const T* src = cols.data() + (c * width + w) * out_len;
      for (std::size_t j = 0; j < out_len; ++j) dst[j + w] += src[j];
    }
  }
}

}  // namespace detail

// Valid, stride-1 cross-correlation.
//   input   [C_in x L]
//   kernels [C_out x C_in x W]
//   bias    [C_out]
//   output  [C_out x (L - W + 1)]
template <typename T>
Var<T> conv1d(const Var<T>& input, const Var<T>& kernels, const Var<T>& bias) {
  detail::require(input.value().rank() == 2, "conv1d input must be [channels x length]");
  detail::require(kernels.value().rank() == 3,
                  "conv1d kernels must be [out x in x width]");
  const std::size_t c_in = input.dim(0), len = input.dim(1);
  const std::size_t c_out = kernels.dim(0), width = kernels.dim(2);
  if (kernels.dim(1) != c_in) {
    throw ShapeError("conv1d kernels expect " + std::to_string(kernels.dim(1)) +
                     " input channels, input has " + std::to_string(c_in));
  }
  detail::require(bias.shape() == Shape{c_out}, "conv1d bias must have extent " +
                                                    std::to_string(c_out));
  if (len < width) {
    throw ShapeError("conv1d input length " + std::to_string(len) +
                     " is shorter than kernel width " + std::to_string(width));
  }
  const std::size_t out_len = len - width + 1;
  const std::size_t patch = c_in * width;
  Buffer<T> cols(patch * out_len);
  detail::im2col<T>(input.value().data(), c_in, len, width, out_len, cols);
  Tensor<T> out(Shape{c_out, out_len});
  auto o = as_matrix(out.data(), c_out, out_len);
  o.noalias() = as_matrix(kernels.value().data(), c_out, patch) *
                as_matrix(std::span<const T>(cols), patch, out_len);
  o.colwise() += as_matrix(bias.value().data(), c_out, 1).col(0);
  // The column buffer is rebuilt in backward rather than kept alive.
  return input.tape().record(
      std::move(out), {input, kernels, bias},
      [xi = input.id(), ki = kernels.id(), bi = bias.id(), c_in, len, c_out, width,
       out_len, patch](Tape<T>& t, std::size_t self) {
        auto g = as_matrix(std::span<const T>(t.grad(self)), c_out, out_len);
        if (t.requires_grad(ki)) {
          Buffer<T> cols(patch * out_len);
          detail::im2col<T>(t.value(xi).data(), c_in, len, width, out_len, cols);
          as_matrix(t.grad(ki), c_out, patch).noalias() +=
              g * as_matrix(std::span<const T>(cols), patch, out_len).transpose();
        }
        if (t.requires_grad(bi)) {
          as_matrix(t.grad(bi), c_out, 1).col(0) += g.rowwise().sum();
        }
        if (t.requires_grad(xi)) {
          Buffer<T> gcols(patch * out_len);
          as_matrix(std::span<T>(gcols), patch, out_len).noalias() =
              as_matrix(t.value(ki).data(), c_out, patch).transpose() * g;
          detail::col2im_add<T>(gcols, c_in, len, width, out_len, t.grad(xi));
        }
      });
}

// Batched valid convolution over time-major segments.
//   input   [sum(lengths) x C_in], segment s occupies `lengths[s]` rows
//   kernels [C_out x C_in x W]
//   bias    [C_out]
//   output  [sum(lengths[s] - W + 1) x C_out]
// Equivalent to conv1d on each transposed segment, with the outputs stacked.
inline constexpr std::size_t kConvChunkRows = 512;

namespace detail {

inline std::vector<std::size_t> window_starts(std::span<const std::size_t> lengths,
                                              std::size_t width) {
  std::vector<std::size_t> starts;
  std::size_t offset = 0;
  for (std::size_t len : lengths) {
    if (len < width) {
      throw ShapeError("conv1d segment length " + std::to_string(len) +
                       " is shorter than kernel width " + std::to_string(width));
    }
    for (std::size_t t = 0; t + width <= len; ++t) starts.push_back(offset + t);
    offset += len;
  }
  return starts;
}

// [C_out x C_in x W] -> [(W * C_in) x C_out], matching a time-major window.
template <typename T>
Buffer<T> window_kernels(std::span<const T> k, std::size_t c_out, std::size_t c_in,
                              std::size_t width) {
  Buffer<T> kp(k.size());
  for (std::size_t o = 0; o < c_out; ++o) {
    for (std::size_t c = 0; c < c_in; ++c) {
      for (std::size_t w = 0; w < width; ++w) {
        kp[(w * c_in + c) * c_out + o] = k[(o * c_in + c) * width + w];
      }
    }
  }
  return kp;
}

template <typename T>
void gather_windows(std::span<const T> x, std::span<const std::size_t> starts,
                    std::size_t c_in, std::size_t patch, std::size_t r0, std::size_t r1,
                    Buffer<T>& cols) {
  cols.resize((r1 - r0) * patch);
  for (std::size_t r = r0; r < r1; ++r) {
    std::copy_n(x.data() + starts[r] * c_in, patch, cols.data() + (r - r0) * patch);
  }
}

}  // namespace detail

template <typename T>
Var<T> conv1d_segments(const Var<T>& input, std::span<const std::size_t> lengths,
                       const Var<T>& kernels, const Var<T>& bias) {
  detail::require(input.value().rank() == 2, "conv1d_segments input must be [time x channels]");
  detail::require(kernels.value().rank() == 3,
                  "conv1d kernels must be [out x in x width]");
  const std::size_t c_in = input.dim(1);
  const std::size_t c_out = kernels.dim(0), width = kernels.dim(2);
  if (kernels.dim(1) != c_in) {
    throw ShapeError("conv1d kernels expect " + std::to_string(kernels.dim(1)) +
                     " input channels, input has " + std::to_string(c_in));
  }
  detail::require(bias.shape() == Shape{c_out}, "conv1d bias must have extent " +
                                                    std::to_string(c_out));
  std::size_t total = 0;
  for (std::size_t len : lengths) total += len;
  detail::require(total == input.dim(0), "conv1d segment lengths do not cover the input");
  std::vector<std::size_t> starts = detail::window_starts(lengths, width);
  detail::require(!starts.empty(), "conv1d_segments needs at least one segment");

  const std::size_t rows = starts.size();
  const std::size_t patch = width * c_in;
  Buffer<T> kp = detail::window_kernels(kernels.value().data(), c_out, c_in, width);
  const auto kp_map = as_matrix(std::span<const T>(kp), patch, c_out);
  Tensor<T> out(Shape{rows, c_out});
  Buffer<T> cols;
  for (std::size_t r0 = 0; r0 < rows; r0 += kConvChunkRows) {
    const std::size_t r1 = std::min(rows, r0 + kConvChunkRows);
    detail::gather_windows(input.value().data(), std::span<const std::size_t>(starts), c_in,
                           patch, r0, r1, cols);
    as_matrix(out.data().subspan(r0 * c_out, (r1 - r0) * c_out), r1 - r0, c_out).noalias() =
        as_matrix(std::span<const T>(cols), r1 - r0, patch) * kp_map;
  }
  as_matrix(out.data(), rows, c_out).rowwise() +=
      as_matrix(bias.value().data(), 1, c_out).row(0);

  return input.tape().record(
      std::move(out), {input, kernels, bias},
      [xi = input.id(), ki = kernels.id(), bi = bias.id(), starts = std::move(starts),
       kp = std::move(kp), c_in, c_out, width, patch](Tape<T>& t, std::size_t self) {
        const std::size_t rows = starts.size();
        std::span<const T> g = t.grad(self);
        if (t.requires_grad(bi)) {
          as_matrix(t.grad(bi), 1, c_out).row(0) += as_matrix(g, rows, c_out).colwise().sum();
        }
        const bool need_k = t.requires_grad(ki);
        const bool need_x = t.requires_grad(xi);
        if (!need_k && !need_x) return;
        Buffer<T> dkp(need_k ? patch * c_out : 0, T{0});
        Buffer<T> cols;
        Buffer<T> dcols;
        for (std::size_t r0 = 0; r0 < rows; r0 += kConvChunkRows) {
          const std::size_t r1 = std::min(rows, r0 + kConvChunkRows);
          const auto g_chunk = as_matrix(g.subspan(r0 * c_out, (r1 - r0) * c_out), r1 - r0, c_out);
          if (need_k) {
            detail::gather_windows(t.value(xi).data(), std::span<const std::size_t>(starts),
                                   c_in, patch, r0, r1, cols);
            as_matrix(std::span<T>(dkp), patch, c_out).noalias() +=
                as_matrix(std::span<const T>(cols), r1 - r0, patch).transpose() * g_chunk;
          }
          if (need_x) {
            dcols.resize((r1 - r0) * patch);
            as_matrix(std::span<T>(dcols), r1 - r0, patch).noalias() =
                g_chunk * as_matrix(std::span<const T>(kp), patch, c_out).transpose();
            auto gx = t.grad(xi);
            for (std::size_t r = r0; r < r1; ++r) {
              T* dst = gx.data() + starts[r] * c_in;
              const T* src = dcols.data() + (r - r0) * patch;
              for (std::size_t j = 0; j < patch; ++j) dst[j] += src[j];
            }
          }
        }
        if (need_k) {
          auto gk = t.grad(ki);
          for (std::size_t o = 0; o < c_out; ++o) {
            for (std::size_t c = 0; c < c_in; ++c) {
              for (std::size_t w = 0; w < width; ++w) {
                gk[(o * c_in + c) * width + w] += dkp[(w * c_in + c) * c_out + o];
              }
            }
          }
        }
      });
}

// [sum(lengths) x C] -> [segments x C]: per-segment max over time, first
// maximum on ties.
template <typename T>
Var<T> max_pool_segments(const Var<T>& x, std::span<const std::size_t> lengths) {
  detail::require(x.value().rank() == 2, "max_pool_segments expects [time x channels]");
  const std::size_t c = x.dim(1);
  std::size_t total = 0;
  for (std::size_t len : lengths) {
    detail::require(len > 0, "max_pool_segments segments must be non-empty");
    total += len;
  }
  detail::require(total == x.dim(0) && !lengths.empty(),
                  "max_pool_segments lengths do not cover the input");
  Tensor<T> out(Shape{lengths.size(), c});
  std::vector<std::size_t> argmax(lengths.size() * c);
  auto xv = x.value().data();
  std::size_t offset = 0;
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    for (std::size_t i = 0; i < c; ++i) {
      std::size_t best = offset;
      for (std::size_t r = offset + 1; r < offset + lengths[s]; ++r) {
        if (xv[r * c + i] > xv[best * c + i]) best = r;
      }
      argmax[s * c + i] = best * c + i;
      out[s * c + i] = xv[best * c + i];
    }
    offset += lengths[s];
  }
  return x.tape().record(std::move(out), {x},
                         [xi = x.id(), argmax = std::move(argmax)](Tape<T>& t,
                                                                   std::size_t self) {
                           if (!t.requires_grad(xi)) return;
                           auto g = t.grad(self);
                           auto gx = t.grad(xi);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
                         });
}

// ---------------------------------------------------------------------------
// Cosine similarity

struct CosineResult {
  double value = 0.0;
  // Set when either vector has norm below the epsilon; value is then 0.
  bool degenerate = false;
};

inline constexpr double kCosineEps = 1e-12;

template <typename T>
CosineResult cosine(std::span<const T> u, std::span<const T> v) {
  if (u.size() != v.size()) {
    throw ShapeError("cosine of vectors with lengths " + std::to_string(u.size()) +
                     " and " + std::to_string(v.size()));
  }
  double dot = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += double(u[i]) * double(v[i]);
    uu += double(u[i]) * double(u[i]);
    vv += double(v[i]) * double(v[i]);
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  if (nu < kCosineEps || nv < kCosineEps) return {0.0, true};
  double c = dot / (nu * nv);
  return {std::clamp(c, -1.0, 1.0), false};
}

template <typename T, typename A, typename B>
CosineResult cosine(const std::vector<T, A>& u, const std::vector<T, B>& v) {
  return cosine(std::span<const T>(u), std::span<const T>(v));
}

// Differentiable cosine -> [1]. A degenerate pair yields 0 with zero gradient.
template <typename T>
Var<T> cosine(const Var<T>& u, const Var<T>& v) {
  detail::require(u.shape() == v.shape(), "cosine operands differ in shape");
  auto uv = u.value().data();
  auto vv = v.value().data();
  T dot{0}, nu2{0}, nv2{0};
  for (std::size_t i = 0; i < uv.size(); ++i) {
    dot += uv[i] * vv[i];
    nu2 += uv[i] * uv[i];
    nv2 += vv[i] * vv[i];
  }
  const T nu = std::sqrt(nu2), nv = std::sqrt(nv2);
  const bool degenerate = nu < T(kCosineEps) || nv < T(kCosineEps);
  const T c = degenerate ? T{0} : dot / (nu * nv);
  return u.tape().record(
      Tensor<T>(Shape{1}, {c}), {u, v},
      [ui = u.id(), vi = v.id(), nu, nv, c, degenerate](Tape<T>& t, std::size_t self) {
        if (degenerate) return;
        const T g = t.grad(self)[0];
        auto uv = t.value(ui).data();
        auto vv = t.value(vi).data();
        // d cos / du = v / (|u||v|) - cos * u / |u|^2
        if (t.requires_grad(ui)) {
          auto gu = t.grad(ui);
          for (std::size_t i = 0; i < uv.size(); ++i)
            gu[i] += g * (vv[i] / (nu * nv) - c * uv[i] / (nu * nu));
        }
        if (t.requires_grad(vi)) {
          auto gv = t.grad(vi);
          for (std::size_t i = 0; i < vv.size(); ++i)
            gv[i] += g * (uv[i] / (nu * nv) - c * vv[i] / (nv * nv));
        }
      });
}

}  // namespace bcsd

#endif  // BCSD_KERNELS_HPP
