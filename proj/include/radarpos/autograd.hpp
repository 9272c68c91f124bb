// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation over dense tensors.
//
// A Tape records every op applied during one forward pass. Leaves are either
// constants or Parameters; calling backward() on a scalar result walks the
// tape in reverse and accumulates into Parameter::grad of every trainable
// parameter reachable from the loss.

#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "radarpos/tensor.hpp"

namespace radarpos {

template <class T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Parameter() = default;
  explicit Parameter(Tensor<T> v, bool is_trainable = true)
      : value(std::move(v)), grad(value.shape()), trainable(is_trainable) {}

  void zero_grad() { grad.fill(T{0}); }
};

/// Named parameters with stable addresses and name-ordered iteration.
template <class T>
class ParameterStore {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> value, bool trainable = true) {
    auto [it, inserted] = params_.try_emplace(name, std::move(value), trainable);
    if (!inserted) throw ContractError("duplicate parameter name '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Parameter<T>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Parameter<T>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }

  void erase(const std::string& name) { params_.erase(name); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  std::size_t count(bool trainable_only) const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) {
      if (!trainable_only || p.trainable) n += p.value.size();
    }
    return n;
  }

 private:
  std::map<std::string, Parameter<T>> params_;
};

template <class T>
class Tape;

/// Handle to a value recorded on a Tape.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class T>
class Tape {
 public:
  /// Called during backward with the id of the node whose grad is ready.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) {
    nodes_.push_back(Node{std::move(value), {}, false, false, nullptr, {}});
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Leaf bound to a parameter; one node per parameter per tape.
  Var<T> parameter(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<T>(this, it->second);
    nodes_.push_back(Node{Tensor<T>(), {}, false, p.trainable, &p, {}});
    param_nodes_[&p] = nodes_.size() - 1;
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> record(Tensor<T> value, std::initializer_list<std::size_t> inputs, BackwardFn fn) {
    return record(std::move(value), std::vector<std::size_t>(inputs), std::move(fn));
  }

  Var<T> record(Tensor<T> value, const std::vector<std::size_t>& inputs, BackwardFn fn) {
    bool needs = false;
    for (auto i : inputs) needs = needs || nodes_.at(i).requires_grad;
    nodes_.push_back(Node{std::move(value), {}, false, needs, nullptr, needs ? std::move(fn) : BackwardFn{}});
    return Var<T>(this, nodes_.size() - 1);
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.param != nullptr ? n.param->value : n.value;
  }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of a node, zero-initialised on first access.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor<T>(value(id).shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  bool has_grad(std::size_t id) const { return nodes_.at(id).has_grad; }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a scalar. Parameter grads accumulate across calls.
  void backward(const Var<T>& loss) {
    if (&loss.tape() != this) throw ContractError("backward on a value from another tape");
    if (loss.value().size() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
    }
    for (auto& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor<T>();
    }
    if (!nodes_[loss.id()].requires_grad) return;
    grad(loss.id()).fill(T{1});
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.has_grad) continue;
      if (n.param != nullptr) {
        auto& pg = n.param->grad;
        const auto& g = n.grad;
        for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
      } else if (n.backward) {
        n.backward(*this, id);
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
};

}  // namespace radarpos
