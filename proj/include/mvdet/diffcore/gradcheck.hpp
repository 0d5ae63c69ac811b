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
#include <functional>
#include <string>
#include <vector>

#include "mvdet/diffcore/graph.hpp"

namespace mvdet::diff {

// |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor keeps
// gradients that are zero up to rounding from reporting huge ratios. Central
// differences at h = 1e-5 on a loss of order 10 carry ~1e-10 of rounding
// noise, so below the floor the check is effectively absolute.
inline constexpr double kRelativeErrorFloor = 1e-5;
double relative_error(double analytic, double numeric, double floor = kRelativeErrorFloor);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// f must build a scalar from its input on the given graph.
using ScalarFn = std::function<Var(Graph&, Var)>;

// Central differences over every coordinate of x.
GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double step);

// Loss over a parameter set; parameters enter the graph via Graph::param.
using LossFn = std::function<Var(Graph&)>;

struct ParamCheck {
  std::string name;
  GradCheckResult result;
};

// Checks up to `max_coords` coordinates per parameter (all of them when the
// parameter is that small, otherwise a seeded random subset). Perturbs the
// parameter values in place and restores them.
std::vector<ParamCheck> grad_check_parameters(ParameterSet& params, const LossFn& loss, double step,
                                              std::size_t max_coords, std::uint64_t seed);

}  // namespace mvdet::diff
