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

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "mvdet/diffcore/gradcheck.hpp"
#include "mvdet/loss.hpp"
#include "test_util.hpp"

using namespace mvdet;
using namespace mvdet::loss;
using mvdet::testing::random_tensor;

namespace {

double brute_force_min(const CostMatrix& c) {
  std::vector<std::size_t> p(c.n);
  std::iota(p.begin(), p.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0;
    for (std::size_t r = 0; r < c.n; ++r) s += c(r, p[r]);
    best = std::min(best, s);
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

CostMatrix random_cost(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-5, 5);
  CostMatrix c{n, std::vector<double>(n * n)};
  for (double& v : c.values) v = u(rng);
  return c;
}

Box3D random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  Box3D b;
  b.center = {8 * u(rng), 8 * u(rng), 0.5 + 0.3 * u(rng)};
  b.size = {2 + u(rng), 1.5 + 0.5 * u(rng), 1.5 + 0.2 * u(rng)};
  b.yaw = 3 * u(rng);
  b.velocity = {u(rng), u(rng)};
  return b;
}

GroundTruth random_gt(std::size_t m, std::mt19937_64& rng) {
  GroundTruth gt;
  std::uniform_int_distribution<int> cls(0, 2);
  for (std::size_t i = 0; i < m; ++i) {
    gt.boxes.push_back(random_box(rng));
    gt.labels.push_back(cls(rng));
  }
  return gt;
}

// A layer prediction built directly from values.
head::LayerPrediction make_pred(diff::Graph& g, const diff::Tensor& boxes, const diff::Tensor& logits) {
  head::LayerPrediction p;
  p.boxes = g.input(boxes);
  p.logits = g.input(logits);
  p.reference = g.constant(diff::Tensor::zeros({boxes.dim(0), 3}));
  return p;
}

diff::Tensor boxes_tensor(const std::vector<Box3D>& boxes) {
  std::vector<double> d;
  for (const auto& b : boxes) {
    const auto a = b.to_array();
    d.insert(d.end(), a.begin(), a.end());
  }
  return diff::Tensor({boxes.size(), kBoxParams}, d);
}

}  // namespace

TEST_CASE("pad_ground_truth") {
  std::mt19937_64 rng(1);
  auto gt = random_gt(3, rng);
  auto p = pad_ground_truth(gt, 3);
  CHECK(p.labels == gt.labels);
  CHECK(p.boxes == gt.boxes);
  p = pad_ground_truth(gt, 5);
  CHECK(p.labels.size() == 5);
  CHECK(p.labels[3] == kNoObject);
  CHECK(p.labels[4] == kNoObject);
  CHECK(p.labels[2] == gt.labels[2]);
  p = pad_ground_truth(GroundTruth{}, 4);
  CHECK(std::all_of(p.labels.begin(), p.labels.end(), [](int l) { return l == kNoObject; }));
  CHECK_THROWS_AS(pad_ground_truth(gt, 2), std::invalid_argument);
}

TEST_CASE("hungarian examples") {
  auto a = hungarian({2, {1, 2, 2, 1}});
  CHECK(a.perm == std::vector<std::size_t>{0, 1});
  CHECK(a.cost == 2.0);
  a = hungarian({3, {1, 9, 9, 9, 1, 9, 9, 9, 1}});
  CHECK(a.perm == std::vector<std::size_t>{0, 1, 2});
  a = hungarian({2, {5, 1, 1, 5}});
  CHECK(a.perm == std::vector<std::size_t>{1, 0});
  CHECK(hungarian({0, {}}).perm.empty());
  CHECK_THROWS_AS(hungarian({2, {1, std::nan(""), 0, 0}}), std::invalid_argument);
  CHECK_THROWS_AS(hungarian({2, {1, INFINITY, 0, 0}}), std::invalid_argument);
}

TEST_CASE("hungarian equals brute force for n <= 7") {
  std::mt19937_64 rng(2);
  for (std::size_t n = 1; n <= 7; ++n) {
    for (int t = 0; t < (n <= 5 ? 200 : 30); ++t) {
      auto c = random_cost(n, rng);
      // Sprinkle ties.
      if (t % 3 == 0)
        for (double& v : c.values) v = std::round(v);
      const auto a = hungarian(c);
      std::vector<std::size_t> sorted = a.perm;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t i = 0; i < n; ++i) CHECK(sorted[i] == i);
      CHECK(a.cost == brute_force_min(c));
    }
  }
}

TEST_CASE("match_cost") {
  std::mt19937_64 rng(3);
  auto gt = random_gt(2, rng);
  const auto padded = pad_ground_truth(gt, 4);
  std::vector<Box3D> boxes{random_box(rng), gt.boxes[1], random_box(rng), gt.boxes[0]};
  diff::Tensor probs = random_tensor({4, 3}, rng, 0.0, 0.5);
  probs.mutable_data()[1 * 3 + gt.labels[1]] = 1.0;
  probs.mutable_data()[3 * 3 + gt.labels[0]] = 1.0;
  const auto c = match_cost(probs, boxes, padded, LossConfig{});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(c(0, 3) <= c(0, i));
    CHECK(c(1, 1) <= c(1, i));
    CHECK(c(2, i) == 0.0);
    CHECK(c(3, i) == 0.0);
  }
  CHECK(c(0, 3) == -1.0);
  const auto zero = match_cost(probs, boxes, pad_ground_truth(GroundTruth{}, 4), LossConfig{});
  for (double v : zero.values) CHECK(v == 0.0);

  for (int t = 0; t < 50; ++t) {
    auto g4 = random_gt(3, rng);
    std::vector<Box3D> b4;
    for (int i = 0; i < 4; ++i) b4.push_back(random_box(rng));
    const auto c4 = match_cost(random_tensor({4, 3}, rng, 0, 1), b4, pad_ground_truth(g4, 4), LossConfig{});
    CHECK(hungarian(c4).cost == brute_force_min(c4));
  }
}

TEST_CASE("focal loss examples") {
  const double p = 0.5;
  CHECK(focal_loss(std::vector<double>{0.0}, 0, 0.25, 2.0) == doctest::Approx(0.25 * 0.25 * -std::log(p)));
  CHECK(focal_loss(std::vector<double>{0.0}, 0, 0.25, 2.0) == doctest::Approx(0.04332).epsilon(1e-4));
  // gamma 0, alpha 0.5: half the binary cross-entropy per class.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-4, 4);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> x{u(rng), u(rng), u(rng)};
    const int target = t % 4 - 1;
    double ce = 0;
    for (int k = 0; k < 3; ++k) {
      const double s = 1 / (1 + std::exp(-x[k]));
      ce += k == target ? -std::log(s) : -std::log(1 - s);
    }
    CHECK(focal_loss(x, target, 0.5, 0.0) == doctest::Approx(0.5 * ce).epsilon(1e-12));
  }
  CHECK(focal_loss(std::vector<double>{40.0, -40.0}, 0, 0.25, 2.0) < 1e-20);
  CHECK(focal_loss(std::vector<double>{8.0}, 0, 0.25, 2.0) < focal_loss(std::vector<double>{4.0}, 0, 0.25, 2.0));
  CHECK_THROWS(focal_loss(std::vector<double>{0.0}, 0, 1.0, 2.0));
  CHECK_THROWS(focal_loss(std::vector<double>{0.0}, 0, 0.25, -1.0));
}

TEST_CASE("focal loss op gradient") {
  std::mt19937_64 rng(5);
  const auto x = random_tensor({5, 3}, rng, -3, 3);
  const std::vector<int> targets{0, kNoObject, 2, 1, kNoObject};
  for (double gamma : {0.0, 1.0, 2.0}) {
    diff::Graph g(false);
    double expect = 0;
    for (std::size_t i = 0; i < 5; ++i)
      expect += focal_loss(x.data().subspan(i * 3, 3), targets[i], 0.25, gamma);
    CHECK(focal_loss(g.constant(x), targets, 0.25, gamma).value().item() == doctest::Approx(expect).epsilon(1e-14));
    auto r = diff::grad_check([&](diff::Graph&, diff::Var v) { return focal_loss(v, targets, 0.25, gamma); }, x, 1e-6);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("l1 box loss examples") {
  std::mt19937_64 rng(6);
  const Box3D b = random_box(rng);
  CHECK(l1_box_loss(b, b) == 0.0);
  Box3D a, c;
  a.yaw = std::numbers::pi - 0.1;
  c.yaw = -std::numbers::pi + 0.1;
  CHECK(l1_box_loss(a, c) == doctest::Approx(0.2 / 9).epsilon(1e-12));
  for (std::size_t k = 0; k < kBoxParams; ++k) {
    auto p = b.to_array();
    p[k] += 1.0;
    CHECK(l1_box_loss(b, Box3D::from_array(p)) == doctest::Approx(1.0 / 9).epsilon(1e-12));
  }
  std::array<double, kBoxParams> w{};
  w[7] = 9.0;
  Box3D v = b;
  v.velocity[0] += 0.5;
  CHECK(l1_box_loss(b, v, w) == doctest::Approx(0.5));
}

TEST_CASE("l1 box loss op") {
  std::mt19937_64 rng(7);
  std::vector<Box3D> gt{random_box(rng), random_box(rng), random_box(rng)};
  std::vector<Box3D> pr{random_box(rng), random_box(rng), random_box(rng)};
  const auto x = boxes_tensor(pr);
  const auto w = LossConfig{}.l1_weights;
  diff::Graph g(false);
  double expect = 0;
  for (std::size_t i = 0; i < 3; ++i) expect += l1_box_loss(gt[i], pr[i]);
  CHECK(l1_box_loss(g.constant(x), gt, w).value().item() == doctest::Approx(expect).epsilon(1e-14));
  auto r = diff::grad_check([&](diff::Graph&, diff::Var v) { return l1_box_loss(v, gt, w); }, x, 1e-6);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("set_loss on perfect predictions is near zero") {
  std::mt19937_64 rng(8);
  const auto gt = random_gt(3, rng);
  std::vector<Box3D> boxes{gt.boxes[2], random_box(rng), gt.boxes[0], random_box(rng), gt.boxes[1]};
  std::vector<double> logits(15, -40.0);
  logits[0 * 3 + gt.labels[2]] = 40;
  logits[2 * 3 + gt.labels[0]] = 40;
  logits[4 * 3 + gt.labels[1]] = 40;
  diff::Graph g;
  std::vector<head::LayerPrediction> layers{make_pred(g, boxes_tensor(boxes), diff::Tensor({5, 3}, logits))};
  const auto lb = set_loss(layers, gt, LossConfig{});
  CHECK(lb.total.value().item() < 1e-12);
  CHECK(lb.assignments[0].perm[0] == 2);
  CHECK(lb.assignments[0].perm[1] == 4);
  CHECK(lb.assignments[0].perm[2] == 0);
}

TEST_CASE("set_loss breakdown and ground-truth permutation invariance") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t m = 6;
    auto gt = random_gt(seed % 5, rng);
    diff::Graph g;
    std::vector<head::LayerPrediction> layers;
    for (int l = 0; l < 3; ++l) {
      std::vector<Box3D> b;
      for (std::size_t i = 0; i < m; ++i) b.push_back(random_box(rng));
      layers.push_back(make_pred(g, boxes_tensor(b), random_tensor({m, 3}, rng, -3, 3)));
    }
    const auto base = set_loss(layers, gt, LossConfig{});
    double sum = 0;
    for (double v : base.per_layer) {
      CHECK(v >= 0);
      sum += v;
    }
    CHECK(base.total.value().item() == doctest::Approx(sum).epsilon(1e-14));
    CHECK(base.cls_part >= 0);
    CHECK(base.box_part >= 0);
    CHECK(base.cls_part + base.box_part == doctest::Approx(sum).epsilon(1e-14));

    std::vector<std::size_t> perm(gt.boxes.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    GroundTruth pg;
    for (auto i : perm) {
      pg.boxes.push_back(gt.boxes[i]);
      pg.labels.push_back(gt.labels[i]);
    }
    const auto other = set_loss(layers, pg, LossConfig{});
    CHECK(other.total.value().item() == base.total.value().item());
  }
}

TEST_CASE("set_loss with more objects than queries matches the cheapest subset") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const std::size_t m = 1 + seed % 3, real = m + 1 + seed % 3;
    const auto gt = random_gt(real, rng);
    std::vector<Box3D> b;
    for (std::size_t i = 0; i < m; ++i) b.push_back(random_box(rng));
    const auto logits = random_tensor({m, 3}, rng, -3, 3);
    diff::Graph g;
    std::vector<head::LayerPrediction> layers{make_pred(g, boxes_tensor(b), logits)};
    const LossConfig cfg;
    const auto lb = set_loss(layers, gt, cfg);
    const auto& perm = lb.assignments[0].perm;
    REQUIRE(perm.size() == real);

    // Brute force over injective maps from queries to objects.
    auto cost = [&](std::size_t i, std::size_t j) {
      const double p = 1.0 / (1.0 + std::exp(-logits.at(i, static_cast<std::size_t>(gt.labels[j]))));
      return -p + cfg.box_weight * l1_box_loss(gt.boxes[j], b[i], cfg.l1_weights);
    };
    std::vector<std::size_t> order(real);
    std::iota(order.begin(), order.end(), 0);
    double best = INFINITY;
    do {
      double s = 0;
      for (std::size_t i = 0; i < m; ++i) s += cost(i, order[i]);
      best = std::min(best, s);
    } while (std::next_permutation(order.begin(), order.end()));
    double got = 0;
    std::size_t matched = 0;
    std::set<std::size_t> used;
    for (std::size_t j = 0; j < real; ++j) {
      if (perm[j] >= m) continue;
      got += cost(perm[j], j);
      used.insert(perm[j]);
      ++matched;
    }
    CHECK(matched == m);
    CHECK(used.size() == m);
    CHECK(got == doctest::Approx(best).epsilon(1e-12));
    CHECK(std::isfinite(lb.total.value().item()));
  }
  // The padding helper itself still refuses.
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(pad_ground_truth(random_gt(3, rng), 2), std::invalid_argument);
}

TEST_CASE("set_loss gradient with frozen assignment") {
  std::mt19937_64 rng(9);
  const auto gt = random_gt(2, rng);
  std::vector<Box3D> b{random_box(rng), random_box(rng), random_box(rng)};
  const auto boxes = boxes_tensor(b);
  const auto logits = random_tensor({3, 3}, rng, -2, 2);
  std::vector<Assignment> frozen;
  {
    diff::Graph g;
    std::vector<head::LayerPrediction> layers{make_pred(g, boxes, logits)};
    frozen = set_loss(layers, gt, LossConfig{}).assignments;
  }
  auto rb = diff::grad_check(
      [&](diff::Graph& g, diff::Var v) {
        head::LayerPrediction p{g.constant(diff::Tensor::zeros({3, 3})), v, g.constant(logits)};
        std::vector<head::LayerPrediction> layers{p};
        return set_loss(layers, gt, LossConfig{}, &frozen).total;
      },
      boxes, 1e-6);
  CHECK(rb.max_rel_error < 1e-4);
  auto rl = diff::grad_check(
      [&](diff::Graph& g, diff::Var v) {
        head::LayerPrediction p{g.constant(diff::Tensor::zeros({3, 3})), g.constant(boxes), v};
        std::vector<head::LayerPrediction> layers{p};
        return set_loss(layers, gt, LossConfig{}, &frozen).total;
      },
      logits, 1e-6);
  CHECK(rl.max_rel_error < 1e-4);
}
