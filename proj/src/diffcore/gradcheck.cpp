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

#include "mvdet/diffcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace mvdet::diff {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
  return std::fabs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double step) {
  Graph g;
  Var xv = g.input(x);
  Var loss = f(g, xv);
  g.backward(loss);
  const auto analytic = g.grad(xv);

  auto eval_at = [&](const Tensor& point) {
    Graph probe(false);
    return f(probe, probe.constant(point)).value().item();
  };

  GradCheckResult result;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    probe.mutable_data()[i] = orig + step;
    const double up = eval_at(probe);
    probe.mutable_data()[i] = orig - step;
    const double down = eval_at(probe);
    probe.mutable_data()[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic.empty() ? 0.0 : analytic[i];
    const double err = relative_error(a, numeric);
    if (err >= result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
    ++result.checked;
  }
  return result;
}

std::vector<ParamCheck> grad_check_parameters(ParameterSet& params, const LossFn& loss, double step,
                                              std::size_t max_coords, std::uint64_t seed) {
  params.zero_grad();
  {
    Graph g;
    Var l = loss(g);
    g.backward(l);
  }
  auto eval = [&] {
    Graph probe(false);
    return loss(probe).value().item();
  };

  std::mt19937_64 rng(seed);
  std::vector<ParamCheck> out;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Parameter& param = params[p];
    const std::size_t n = param.value.size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (n > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
      std::sort(coords.begin(), coords.end());
    }
    ParamCheck check{param.name, {}};
    for (std::size_t i : coords) {
      double& slot = param.value.mutable_data()[i];
      const double orig = slot;
      slot = orig + step;
      const double up = eval();
      slot = orig - step;
      const double down = eval();
      slot = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(param.grad[i], numeric);
      if (err >= check.result.max_rel_error) {
        check.result.max_rel_error = err;
        check.result.worst_index = i;
      }
      ++check.result.checked;
    }
    out.push_back(std::move(check));
  }
  return out;
}

}  // namespace mvdet::diff
