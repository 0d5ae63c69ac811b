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

#include "mvdet/diffcore/optim.hpp"

#include <cmath>

namespace mvdet::diff {

AdamW::AdamW(ParameterSet& params, AdamWConfig config) : params_(&params), config_(config) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params[i].value.size(), 0.0);
    v_.emplace_back(params[i].value.size(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_->size(); ++i) {
    Parameter& p = (*params_)[i];
    auto w = p.value.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    const double decay = p.value.rank() >= 2 ? lr * config_.weight_decay : 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = p.grad[j];
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      v[j] = b2 * v[j] + (1.0 - b2) * g * g;
      w[j] -= decay * w[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
    }
  }
}

void AdamW::save_state(Checkpoint& ckpt) const {
  for (std::size_t i = 0; i < params_->size(); ++i) {
    const Parameter& p = (*params_)[i];
    ckpt.put("optim.m." + p.name, Tensor(p.value.shape(), m_[i]));
    ckpt.put("optim.v." + p.name, Tensor(p.value.shape(), v_[i]));
  }
  ckpt.put("optim.t", Tensor::scalar(static_cast<double>(t_)));
}

void AdamW::load_state(const Checkpoint& ckpt) {
  for (std::size_t i = 0; i < params_->size(); ++i) {
    const Parameter& p = (*params_)[i];
    const Tensor* m = ckpt.find("optim.m." + p.name);
    const Tensor* v = ckpt.find("optim.v." + p.name);
    if (m == nullptr || v == nullptr || m->size() != m_[i].size() || v->size() != v_[i].size()) {
      throw CheckpointError("checkpoint lacks optimizer state for " + p.name);
    }
    m_[i].assign(m->data().begin(), m->data().end());
    v_[i].assign(v->data().begin(), v->data().end());
  }
  const Tensor* t = ckpt.find("optim.t");
  if (t == nullptr) throw CheckpointError("checkpoint lacks optim.t");
  t_ = static_cast<std::uint64_t>(t->item());
}

double multistep_lr(double base, double factor, const std::vector<std::uint64_t>& milestones,
                    std::uint64_t step) {
  double lr = base;
  for (auto m : milestones)
    if (step >= m) lr *= factor;
  return lr;
}

}  // namespace mvdet::diff
