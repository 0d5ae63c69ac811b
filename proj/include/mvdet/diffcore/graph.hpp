/* Copyright 2026 The mvdet Authors. All Rights Reserved.

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

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mvdet/diffcore/tensor.hpp"

namespace mvdet::diff {

// A named, trainable tensor. `grad` accumulates across backward passes until
// zero_grad() is called.
struct Parameter {
  std::string name;
  Tensor value;
  std::vector<double> grad;
};

// Ordered parameter registry. Insertion order is the serialization order and
// the optimizer's iteration order.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  Parameter& add(std::string name, Tensor value);
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t num_scalars() const;
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

class Graph;

// Handle to a node on a Graph's tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const;
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  Graph& graph() const { return *graph_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::uint32_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

// Dynamic tape. Nodes are appended in forward order, so creation order is a
// topological order and backward() walks it in reverse, visiting each node
// once. A graph is single-use: record, backward, discard.
class Graph {
 public:
  // Receives the gradient flowing into the node it is attached to.
  using BackwardFn = std::function<void(Graph&, std::span<const double>)>;

  // With record_gradients = false no backward closures are kept (inference).
  explicit Graph(bool record_gradients = true) : recording_(record_gradients) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Leaf whose gradient can be read back with grad() after backward().
  Var input(Tensor value);
  // Leaf bound to a parameter; one node per parameter per graph. Gradients
  // are added into Parameter::grad by backward().
  Var param(Parameter& p);

  // For op implementations. `fn` is dropped when no input requires grad.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  // Id the next recorded node will receive; lets a closure refer to its own
  // output value.
  std::uint32_t next_id() const { return static_cast<std::uint32_t>(nodes_.size()); }
  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  // Zero-initialized on first touch. Empty when the node needs no gradient.
  std::span<double> grad_buffer(std::uint32_t id);

  void backward(Var loss);
  std::span<const double> grad(Var v) const;

  bool recording() const { return recording_; }
  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::unordered_map<const Parameter*, std::uint32_t> param_nodes_;
  bool recording_;
  bool backward_done_ = false;
};

}  // namespace mvdet::diff
