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

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "mvdet/box.hpp"
#include "mvdet/diffcore/graph.hpp"
#include "mvdet/head.hpp"

namespace mvdet::loss {

// Label of a padding entry.
inline constexpr int kNoObject = -1;
// Sigmoid probabilities are clamped into [kProbClamp, 1 - kProbClamp].
inline constexpr double kProbClamp = 1e-7;

struct GroundTruth {
  std::vector<Box3D> boxes;
  std::vector<int> labels;
};

struct PaddedGroundTruth {
  std::vector<Box3D> boxes;  // entries past the real ones are default boxes
  std::vector<int> labels;   // kNoObject for padding
};

struct LossConfig {
  double box_weight = 0.25;
  double alpha = 0.25;
  double gamma = 2.0;
  std::array<double, kBoxParams> l1_weights{1, 1, 1, 1, 1, 1, 1, 1, 1};
};

// Row-major n x n.
struct CostMatrix {
  std::size_t n = 0;
  std::vector<double> values;
  double operator()(std::size_t r, std::size_t c) const { return values[r * n + c]; }
};

// perm[j] = prediction assigned to ground-truth row j.
struct Assignment {
  std::vector<std::size_t> perm;
  double cost = 0.0;
};

struct LossBreakdown {
  diff::Var total;
  std::vector<double> per_layer;
  double cls_part = 0.0;
  double box_part = 0.0;
  // Mean matched-pair L1 per layer (unweighted by box_weight); 0 without GT.
  std::vector<double> matched_l1;
  std::vector<Assignment> assignments;
};

PaddedGroundTruth pad_ground_truth(const GroundTruth& gt, std::size_t num_queries);

// cost(j, i) = -p_i(c_j) + box_weight * L1(b_j, b_i) for real rows, 0 for
// padding rows. probs is [M*, num_classes] of sigmoid probabilities.
CostMatrix match_cost(const diff::Tensor& probs, std::span<const Box3D> boxes, const PaddedGroundTruth& gt,
                      const LossConfig& cfg);

// Minimum-cost perfect matching, O(n^3). Throws std::invalid_argument on
// NaN or infinite entries.
Assignment hungarian(const CostMatrix& cost);

// Numeric focal loss of one logit vector against a class (kNoObject for none),
// summed over classes.
double focal_loss(std::span<const double> logits, int target, double alpha, double gamma);
// Differentiable version: logits [M,K], one target per row.
diff::Var focal_loss(diff::Var logits, std::span<const int> targets, double alpha, double gamma);

// Weighted mean absolute difference over the 9 parameters, yaw wrapped.
double l1_box_loss(const Box3D& b, const Box3D& b_hat, const std::array<double, kBoxParams>& weights);
inline double l1_box_loss(const Box3D& b, const Box3D& b_hat) {
  return l1_box_loss(b, b_hat, LossConfig{}.l1_weights);
}
// Differentiable: sum over rows of l1_box_loss(gt row, pred row). pred [n,9].
diff::Var l1_box_loss(diff::Var pred, std::span<const Box3D> gt, const std::array<double, kBoxParams>& weights);

// Loss for every layer, summed. Assignments are computed on the current
// values and treated as constants. Set `frozen` to reuse given assignments.
// With more ground truths than queries the matching is rectangular: every
// query takes at most one object, the cheapest M* pairs win, and the rest
// get perm[j] >= M* and no box loss.
LossBreakdown set_loss(std::span<const head::LayerPrediction> layers, const GroundTruth& gt, const LossConfig& cfg,
                       const std::vector<Assignment>* frozen = nullptr);

}  // namespace mvdet::loss
