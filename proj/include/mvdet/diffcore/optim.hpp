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
#include <vector>

#include "mvdet/diffcore/checkpoint.hpp"
#include "mvdet/diffcore/graph.hpp"

namespace mvdet::diff {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Adam with decoupled weight decay. Decay applies to parameters of rank >= 2
// only; biases, norm gains and other vectors are left undecayed.
class AdamW {
 public:
  AdamW(ParameterSet& params, AdamWConfig config);

  void step(double lr);
  std::uint64_t steps() const { return t_; }

  // Moments are stored as "optim.m.<name>" / "optim.v.<name>" records plus a
  // scalar "optim.t".
  void save_state(Checkpoint& ckpt) const;
  void load_state(const Checkpoint& ckpt);

 private:
  ParameterSet* params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

// Piecewise-constant schedule: base * factor^(number of milestones <= step).
double multistep_lr(double base, double factor, const std::vector<std::uint64_t>& milestones,
                    std::uint64_t step);

}  // namespace mvdet::diff
