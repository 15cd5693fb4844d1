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

// Tape-based reverse-mode differentiation.
//
// A Tape records every operation in creation order, which is already a
// topological order, so backward() is a single reverse sweep. Parameters live
// outside the tape: Tape::param() creates (once per tape) a leaf that reads the
// parameter's value in place and collects its gradient, which is later added
// to Parameter::grad by accumulate_param_grads().

#ifndef BCSD_AUTOGRAD_HPP
#define BCSD_AUTOGRAD_HPP

#include <bit>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bcsd/errors.hpp"
#include "bcsd/tensor.hpp"

namespace bcsd {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Buffer<T> grad;
  // Row pinned to zero and never updated (the PAD embedding).
  std::optional<std::size_t> frozen_row;

  std::size_t trainable_count() const {
    std::size_t n = value.size();
    if (frozen_row) n -= value.size() / value.dim(0);
    return n;
  }
};

template <typename T>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other) { *this = other; }
  ParameterSet& operator=(const ParameterSet& other) {
    if (this == &other) return *this;
    params_.clear();
    for (const auto& p : other.params_) {
      params_.push_back(std::make_unique<Parameter<T>>(*p));
    }
    return *this;
  }
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter<T>& add(std::string name, Tensor<T> value) {
    if (find(name) != nullptr) {
      throw Error("duplicate parameter name '" + name + "'");
    }
    auto p = std::make_unique<Parameter<T>>();
    p->name = std::move(name);
    p->grad.assign(value.size(), T{0});
    p->value = std::move(value);
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_) {
      if (p->name == name) return p.get();
    }
    return nullptr;
  }
  const Parameter<T>* find(const std::string& name) const {
    for (const auto& p : params_) {
      if (p->name == name) return p.get();
    }
    return nullptr;
  }

  Parameter<T>& at(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw Error("no parameter named '" + name + "'");
  }
  const Parameter<T>& at(const std::string& name) const {
    if (const auto* p = find(name)) return *p;
    throw Error("no parameter named '" + name + "'");
  }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad() {
    for (auto& p : params_) std::fill(p->grad.begin(), p->grad.end(), T{0});
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->trainable_count();
    return n;
  }

  // FNV-1a over names, shapes and value bits.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& p : params_) {
      for (char c : p->name) mix(static_cast<unsigned char>(c));
      for (std::size_t extent : p->value.shape()) mix(extent);
      for (T v : p->value.data()) {
        if constexpr (sizeof(T) == 4) {
          mix(std::bit_cast<std::uint32_t>(v));
        } else {
          mix(std::bit_cast<std::uint64_t>(v));
        }
      }
    }
    return h;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
};

template <typename T>
class Tape;

// Handle to one value recorded on a tape.
template <typename T>
class Var {
 public:
  Var() = default;

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) {
    Node node;
    node.value = std::move(value);
    return push(std::move(node));
  }

  // Owned leaf whose gradient is readable after backward().
  Var<T> input(Tensor<T> value) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = true;
    return push(std::move(node));
  }

  // Leaf bound to a parameter; one leaf per parameter per tape.
  Var<T> param(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
      return Var<T>(this, it->second);
    }
    Node node;
    node.external = &p.value;
    node.param = &p;
    node.requires_grad = true;
    Var<T> v = push(std::move(node));
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  // Records an operation result. The backward closure is kept only when at
  // least one input needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs,
                BackwardFn backward) {
    return record(std::move(value), std::span<const Var<T>>(inputs.begin(),
                                                            inputs.size()),
                  std::move(backward));
  }

  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs,
                BackwardFn backward) {
    Node node;
    node.value = std::move(value);
    for (const Var<T>& in : inputs) {
      if (in.tape_ != this) throw Error("operands recorded on different tapes");
      node.requires_grad = node.requires_grad || requires_grad(in.id_);
    }
    if (node.requires_grad) node.backward = std::move(backward);
    return push(std::move(node));
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  // Gradient buffer of a node, zero-allocated on first access.
  std::span<T> grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(value(id).size(), T{0});
    return n.grad;
  }

  std::span<T> grad(const Var<T>& v) { return grad(v.id()); }

  std::size_t size() const { return nodes_.size(); }

  void backward(const Var<T>& root) {
    if (root.value().size() != 1) {
      throw ShapeError("backward() without a seed needs a scalar root, got " +
                       to_string(root.shape()));
    }
    const T one{1};
    backward(root, std::span<const T>(&one, 1));
  }

  void backward(const Var<T>& root, std::span<const T> seed) {
    if (seed.size() != root.value().size()) {
      throw ShapeError("backward seed size does not match root");
    }
    auto g = grad(root.id());
    for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
    sweep(root.id());
  }

  // Seeds several roots at once and runs one sweep.
  void backward(std::span<const std::pair<Var<T>, std::vector<T>>> seeds) {
    std::size_t top = 0;
    for (const auto& [v, s] : seeds) {
      auto g = grad(v.id());
      if (s.size() != g.size()) throw ShapeError("backward seed size mismatch");
      for (std::size_t i = 0; i < s.size(); ++i) g[i] += s[i];
      top = std::max(top, v.id());
    }
    if (!seeds.empty()) sweep(top);
  }

  void accumulate_param_grads() {
    for (const auto& [key, id] : param_nodes_) {
      const Node& n = nodes_[id];
      if (n.grad.empty()) continue;
      auto& dst = n.param->grad;
      for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Parameter<T>* param = nullptr;
    Buffer<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push(Node node) {
    nodes_.push_back(std::move(node));
    return Var<T>(this, nodes_.size() - 1);
  }

  void sweep(std::size_t top) {
    for (std::size_t id = top + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, id);
    }
  }

  // deque keeps node addresses stable while ops append.
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
};

}  // namespace bcsd

#endif  // BCSD_AUTOGRAD_HPP
