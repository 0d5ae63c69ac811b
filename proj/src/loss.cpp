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

#include "mvdet/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "mvdet/diffcore/ops.hpp"

namespace mvdet::loss {
namespace {

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

struct FocalTerm {
  double value;
  double dlogit;
};

// One sigmoid logit against a 0/1 label.
FocalTerm focal_term(double x, bool positive, double alpha, double gamma) {
  const double raw = sigmoid(x);
  const bool clamped = raw < kProbClamp || raw > 1.0 - kProbClamp;
  const double p = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
  FocalTerm t{};
  if (positive) {
    const double m = std::pow(1.0 - p, gamma);
    t.value = -alpha * m * std::log(p);
    t.dlogit = clamped ? 0.0 : -alpha * m * ((1.0 - p) - gamma * p * std::log(p));
  } else {
    const double m = std::pow(p, gamma);
    t.value = -(1.0 - alpha) * m * std::log(1.0 - p);
    t.dlogit = clamped ? 0.0 : (1.0 - alpha) * m * (p - gamma * (1.0 - p) * std::log(1.0 - p));
  }
  return t;
}

void check_focal_args(double alpha, double gamma) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("focal alpha must be in (0,1)");
  if (!(gamma >= 0.0)) throw std::invalid_argument("focal gamma must be >= 0");
}

std::array<double, kBoxParams> box_diff(const Box3D& gt, std::span<const double> pred) {
  const auto g = gt.to_array();
  std::array<double, kBoxParams> d{};
  for (std::size_t k = 0; k < kBoxParams; ++k) d[k] = pred[k] - g[k];
  d[6] = wrap_angle(d[6]);
  return d;
}

}  // namespace

PaddedGroundTruth pad_ground_truth(const GroundTruth& gt, std::size_t num_queries) {
  if (gt.boxes.size() != gt.labels.size()) throw std::invalid_argument("ground truth boxes/labels length mismatch");
  if (gt.boxes.size() > num_queries) {
    throw std::invalid_argument("ground truth has " + std::to_string(gt.boxes.size()) + " objects but only " +
                                std::to_string(num_queries) + " queries");
  }
  PaddedGroundTruth out;
  out.boxes = gt.boxes;
  out.labels = gt.labels;
  out.boxes.resize(num_queries);
  out.labels.resize(num_queries, kNoObject);
  return out;
}

CostMatrix match_cost(const diff::Tensor& probs, std::span<const Box3D> boxes, const PaddedGroundTruth& gt,
                      const LossConfig& cfg) {
  const std::size_t n = gt.labels.size();
  if (probs.rank() != 2 || probs.dim(0) != n || boxes.size() != n)
    throw std::invalid_argument("match_cost: prediction count must equal padded ground-truth size");
  const std::size_t k = probs.dim(1);
  CostMatrix c{n, std::vector<double>(n * n, 0.0)};
  for (std::size_t j = 0; j < n; ++j) {
    const int label = gt.labels[j];
    if (label == kNoObject) continue;
    if (label < 0 || static_cast<std::size_t>(label) >= k) throw std::invalid_argument("match_cost: label out of range");
    for (std::size_t i = 0; i < n; ++i) {
      c.values[j * n + i] =
          -probs.at(i, static_cast<std::size_t>(label)) +
          cfg.box_weight * l1_box_loss(gt.boxes[j], boxes[i], cfg.l1_weights);
    }
  }
  return c;
}

Assignment hungarian(const CostMatrix& cost) {
  const std::size_t n = cost.n;
  if (cost.values.size() != n * n) throw std::invalid_argument("hungarian: matrix is not square");
  for (double v : cost.values)
    if (!std::isfinite(v)) throw std::invalid_argument("hungarian: cost matrix has non-finite entries");
  Assignment out;
  if (n == 0) return out;

  // Shortest augmenting path with row/column potentials; 1-based with a
  // virtual column 0.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t row = 1; row <= n; ++row) {
    p[0] = row;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  out.perm.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) out.perm[p[j] - 1] = j - 1;
  for (std::size_t r = 0; r < n; ++r) out.cost += cost(r, out.perm[r]);
  return out;
}

double focal_loss(std::span<const double> logits, int target, double alpha, double gamma) {
  check_focal_args(alpha, gamma);
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k)
    total += focal_term(logits[k], static_cast<int>(k) == target, alpha, gamma).value;
  return total;
}

diff::Var focal_loss(diff::Var logits, std::span<const int> targets, double alpha, double gamma) {
  check_focal_args(alpha, gamma);
  const auto& x = logits.value();
  if (x.rank() != 2 || x.dim(0) != targets.size()) throw diff::ShapeError("focal_loss: one target per row");
  const std::size_t m = x.dim(0), k = x.dim(1);
  std::vector<double> dx(m * k);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      const FocalTerm t = focal_term(x[i * k + c], static_cast<int>(c) == targets[i], alpha, gamma);
      total += t.value;
      dx[i * k + c] = t.dlogit;
    }
  }
  const std::uint32_t xid = logits.id();
  return logits.graph().record(diff::Tensor::scalar(total), {logits},
                               [xid, dx = std::move(dx)](diff::Graph& g, std::span<const double> gy) {
                                 auto gx = g.grad_buffer(xid);
                                 for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += gy[0] * dx[i];
                               });
}

double l1_box_loss(const Box3D& b, const Box3D& b_hat, const std::array<double, kBoxParams>& weights) {
  const auto pred = b_hat.to_array();
  const auto d = box_diff(b, pred);
  double s = 0.0;
  for (std::size_t k = 0; k < kBoxParams; ++k) s += weights[k] * std::abs(d[k]);
  return s / static_cast<double>(kBoxParams);
}

diff::Var l1_box_loss(diff::Var pred, std::span<const Box3D> gt, const std::array<double, kBoxParams>& weights) {
  const auto& x = pred.value();
  if (x.rank() != 2 || x.dim(1) != kBoxParams || x.dim(0) != gt.size())
    throw diff::ShapeError("l1_box_loss: expects [n,9] predictions and n boxes");
  const std::size_t n = gt.size();
  std::vector<double> dx(n * kBoxParams);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto d = box_diff(gt[i], x.data().subspan(i * kBoxParams, kBoxParams));
    for (std::size_t k = 0; k < kBoxParams; ++k) {
      total += weights[k] * std::abs(d[k]) / static_cast<double>(kBoxParams);
      const double sgn = d[k] > 0 ? 1.0 : (d[k] < 0 ? -1.0 : 0.0);
      dx[i * kBoxParams + k] = weights[k] * sgn / static_cast<double>(kBoxParams);
    }
  }
  const std::uint32_t xid = pred.id();
  return pred.graph().record(diff::Tensor::scalar(total), {pred},
                             [xid, dx = std::move(dx)](diff::Graph& g, std::span<const double> gy) {
                               auto gx = g.grad_buffer(xid);
                               for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += gy[0] * dx[i];
                             });
}

LossBreakdown set_loss(std::span<const head::LayerPrediction> layers, const GroundTruth& gt, const LossConfig& cfg,
                       const std::vector<Assignment>* frozen) {
  if (layers.empty()) throw std::invalid_argument("set_loss: no layers");
  if (frozen && frozen->size() != layers.size()) throw std::invalid_argument("set_loss: frozen assignment count");
  LossBreakdown out;
  std::vector<diff::Var> layer_totals;
  const std::size_t real = gt.boxes.size();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const head::LayerPrediction& pred = layers[l];
    const std::size_t m = pred.logits.shape()[0];
    // More objects than queries: dummy prediction columns at a constant cost
    // absorb the surplus, and the ground truths sent there go unmatched.
    const std::size_t n = std::max(m, real);

    Assignment a;
    if (frozen) {
      a = (*frozen)[l];
    } else {
      diff::Tensor probs = pred.logits.value();
      for (double& p : probs.mutable_data()) p = sigmoid(p);
      std::vector<Box3D> boxes = pred.to_output().boxes;
      if (n > m) {
        std::vector<double> wide(n * probs.dim(1), 0.0);
        std::copy(probs.data().begin(), probs.data().end(), wide.begin());
        probs = diff::Tensor({n, probs.dim(1)}, std::move(wide));
        boxes.resize(n);
      }
      CostMatrix c = match_cost(probs, boxes, pad_ground_truth(gt, n), cfg);
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = m; i < n; ++i) c.values[j * n + i] = 0.0;
      a = hungarian(c);
    }
    if (a.perm.size() != n) throw std::invalid_argument("set_loss: assignment size");

    // Matched pairs in prediction order, so the sums below do not depend on
    // how the ground truth is ordered.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (prediction, gt)
    std::vector<int> targets(m, kNoObject);
    for (std::size_t j = 0; j < real; ++j) {
      if (a.perm[j] >= m) continue;
      pairs.emplace_back(a.perm[j], j);
      targets[a.perm[j]] = gt.labels[j];
    }
    std::sort(pairs.begin(), pairs.end());

    diff::Var cls = focal_loss(pred.logits, targets, cfg.alpha, cfg.gamma);
    diff::Var total = cls;
    double box_value = 0.0;
    if (!pairs.empty()) {
      std::vector<std::size_t> rows;
      std::vector<Box3D> boxes;
      for (const auto& [i, j] : pairs) {
        rows.push_back(i);
        boxes.push_back(gt.boxes[j]);
      }
      diff::Var l1 = l1_box_loss(diff::gather_rows(pred.boxes, rows), boxes, cfg.l1_weights);
      box_value = l1.value().item();
      total = diff::add(cls, diff::scale(l1, cfg.box_weight));
    }
    out.cls_part += cls.value().item();
    out.box_part += cfg.box_weight * box_value;
    out.per_layer.push_back(total.value().item());
    out.matched_l1.push_back(pairs.empty() ? 0.0 : box_value / static_cast<double>(pairs.size()));
    out.assignments.push_back(std::move(a));
    layer_totals.push_back(total);
  }
  out.total = layer_totals.size() == 1 ? layer_totals[0] : diff::add_n(layer_totals);
  return out;
}

}  // namespace mvdet::loss
