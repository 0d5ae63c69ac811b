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

#include "mvdet/diffcore/graph.hpp"

#include <algorithm>
#include <stdexcept>

namespace mvdet::diff {

Parameter& ParameterSet::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = std::move(value);
  p->value.set_requires_grad(true);
  p->grad.assign(p->value.size(), 0.0);
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterSet::find(std::string_view name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParameterSet::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

Parameter& ParameterSet::get(std::string_view name) {
  if (auto* p = find(name)) return *p;
  throw std::out_of_range("unknown parameter " + std::string(name));
}

const Parameter& ParameterSet::get(std::string_view name) const {
  if (const auto* p = find(name)) return *p;
  throw std::out_of_range("unknown parameter " + std::string(name));
}

std::size_t ParameterSet::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

const Tensor& Var::value() const { return graph_->value(id_); }
const Shape& Var::shape() const { return graph_->value(id_).shape(); }
bool Var::requires_grad() const { return graph_->requires_grad(id_); }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false});
  grads_.emplace_back();
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, recording_});
  grads_.emplace_back();
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  nodes_.push_back(Node{p.value, {}, &p, recording_});
  grads_.emplace_back();
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_nodes_.emplace(&p, id);
  return Var(this, id);
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Graph::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (&v.graph() != this) throw std::invalid_argument("mixing variables from different graphs");
    needs = needs || v.requires_grad();
  }
  needs = needs && recording_;
  if (!value.all_finite()) throw DomainError("op produced a non-finite value");
  nodes_.push_back(Node{std::move(value), needs ? std::move(fn) : BackwardFn{}, nullptr, needs});
  grads_.emplace_back();
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

std::span<double> Graph::grad_buffer(std::uint32_t id) {
  if (!nodes_[id].requires_grad) return {};
  auto& g = grads_[id];
  if (g.empty()) g.assign(nodes_[id].value.size(), 0.0);
  return g;
}

void Graph::backward(Var loss) {
  if (&loss.graph() != this) throw std::invalid_argument("loss belongs to another graph");
  if (loss.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (backward_done_) throw std::logic_error("backward already ran on this graph");
  backward_done_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  grads_[loss.id()].assign(1, 1.0);
  for (std::int64_t id = loss.id(); id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.empty()) continue;
    if (node.backward) node.backward(*this, g);
    if (node.param != nullptr) {
      auto& dst = node.param->grad;
      if (dst.size() != g.size()) dst.assign(g.size(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  }
}

std::span<const double> Graph::grad(Var v) const { return grads_[v.id()]; }

}  // namespace mvdet::diff
