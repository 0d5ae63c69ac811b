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
#include <random>

#include "doctest.h"
#include "mvdet/diffcore/gradcheck.hpp"
#include "mvdet/pyramid.hpp"
#include "test_util.hpp"

using namespace mvdet;
using namespace mvdet::pyramid;
using mvdet::testing::random_tensor;

namespace {

double cell_to_uv(double idx, std::size_t n) { return 2.0 * idx / static_cast<double>(n - 1) - 1.0; }

}  // namespace

TEST_CASE("level sizes and encode shapes") {
  CHECK(level_sizes(64) == std::array<std::size_t, 4>{8, 4, 2, 1});
  CHECK(level_sizes(128) == std::array<std::size_t, 4>{16, 8, 4, 2});
  CHECK(level_sizes(40) == std::array<std::size_t, 4>{5, 3, 2, 1});

  diff::ParameterSet params;
  std::mt19937_64 rng(1);
  init_encoder(params, {8, 4}, rng);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{64, 64}, {32, 64}, {40, 24}, {128, 128}}) {
    diff::Graph g(false);
    std::vector<diff::Tensor> imgs{random_tensor({h, w, 3}, rng), random_tensor({h, w, 3}, rng)};
    auto pyr = encode(g, imgs, params);
    REQUIRE(pyr.size() == 2);
    const auto hs = level_sizes(h), ws = level_sizes(w);
    for (std::size_t l = 0; l < kNumLevels; ++l) {
      CHECK(pyr[0][l].shape() == diff::Shape{hs[l], ws[l], 8});
      if (l > 0) CHECK(hs[l] == (hs[l - 1] + 1) / 2);
    }
  }
  diff::Graph g;
  std::vector<diff::Tensor> bad{diff::Tensor::zeros({36, 64, 3})};
  CHECK_THROWS_AS(encode(g, bad, params), diff::ShapeError);
  std::vector<diff::Tensor> mixed{diff::Tensor::zeros({64, 64, 3}), diff::Tensor::zeros({32, 64, 3})};
  CHECK_THROWS_AS(encode(g, mixed, params), diff::ShapeError);
}

TEST_CASE("zero image with zero biases gives a zero pyramid") {
  diff::ParameterSet params;
  std::mt19937_64 rng(2);
  init_encoder(params, {8, 4}, rng);
  diff::Graph g(false);
  std::vector<diff::Tensor> imgs{diff::Tensor::zeros({64, 64, 3})};
  const auto pyr = encode(g, imgs, params);
  for (const auto& level : pyr[0])
    for (double v : level.value().data()) CHECK(v == 0.0);
}

TEST_CASE("encoder gradient matches finite differences") {
  diff::ParameterSet params;
  std::mt19937_64 rng(3);
  init_encoder(params, {2, 1}, rng);
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].value.rank() == 1)
      for (double& b : params[i].value.mutable_data()) b = 0.05;
  std::vector<diff::Tensor> imgs{random_tensor({16, 16, 3}, rng)};
  auto loss = [&](diff::Graph& g) {
    auto pyr = encode(g, imgs, params);
    std::vector<diff::Var> parts;
    for (auto& l : pyr[0]) parts.push_back(testing::probe_sum(l));
    return diff::add_n(parts);
  };
  auto checks = diff::grad_check_parameters(params, loss, 1e-6, 4, 11);
  std::size_t n = 0;
  for (const auto& c : checks) {
    INFO(c.name);
    CHECK(c.result.max_rel_error < 1e-4);
    n += c.result.checked;
  }
  CHECK(n >= 32);
}

TEST_CASE("bilinear examples") {
  diff::Tensor fm({2, 2, 1}, {0, 0, 0, 4});
  double out = 0;
  bilinear_lookup(fm, 0.0, 0.0, {&out, 1});
  CHECK(out == 1.0);

  std::mt19937_64 rng(4);
  // Cell spacing of 1/4 and 1/8 in uv is exact in binary.
  auto big = random_tensor({5, 9, 3}, rng);
  double v[3];
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 9; ++j) {
      bilinear_lookup(big, cell_to_uv(j, 9), cell_to_uv(i, 5), v);
      for (std::size_t k = 0; k < 3; ++k) CHECK(v[k] == big[(i * 9 + j) * 3 + k]);
    }
  auto odd = random_tensor({5, 7, 3}, rng);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 7; ++j) {
      bilinear_lookup(odd, cell_to_uv(j, 7), cell_to_uv(i, 5), v);
      for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(v[k] - odd[(i * 7 + j) * 3 + k]) < 1e-15);
    }
}

TEST_CASE("bilinear matches tent oracle and stays in the neighbor hull") {
  std::mt19937_64 rng(5);
  auto fm = random_tensor({5, 7, 2}, rng);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 100; ++t) {
    const double a = u(rng), b = u(rng);
    double out[2];
    bilinear_lookup(fm, a, b, out);
    const double x = (a + 1) / 2 * 6, y = (b + 1) / 2 * 4;
    const auto x0 = static_cast<std::size_t>(std::min(std::floor(x), 5.0));
    const auto y0 = static_cast<std::size_t>(std::min(std::floor(y), 3.0));
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(std::abs(out[k] - testing::tent_sample(fm, a, b, k)) < 1e-12);
      const double n[4] = {fm[(y0 * 7 + x0) * 2 + k], fm[(y0 * 7 + x0 + 1) * 2 + k],
                           fm[((y0 + 1) * 7 + x0) * 2 + k], fm[((y0 + 1) * 7 + x0 + 1) * 2 + k]};
      CHECK(out[k] >= *std::min_element(n, n + 4) - 1e-15);
      CHECK(out[k] <= *std::max_element(n, n + 4) + 1e-15);
    }
  }
}

TEST_CASE("bilinear_sample gradients") {
  std::mt19937_64 rng(6);
  auto fm = random_tensor({5, 7, 3}, rng);
  std::uniform_real_distribution<double> off(1e-3, 1 - 1e-3);
  std::uniform_int_distribution<int> ci(0, 5), ri(0, 3);
  std::vector<double> uv;
  for (int t = 0; t < 20; ++t) {
    uv.push_back(cell_to_uv(ci(rng) + off(rng), 7));
    uv.push_back(cell_to_uv(ri(rng) + off(rng), 5));
  }
  const std::vector<unsigned char> mask(20, 1);
  diff::Tensor uvt({20, 2}, uv);
  auto r = diff::grad_check(
      [&](diff::Graph& g, diff::Var x) { return testing::probe_sum(bilinear_sample(g.constant(fm), x, mask)); }, uvt,
      1e-7);
  CHECK(r.max_rel_error < 1e-4);
  r = diff::grad_check(
      [&](diff::Graph& g, diff::Var x) { return testing::probe_sum(bilinear_sample(x, g.constant(uvt), mask)); }, fm,
      1e-6);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("masked rows are zero and get no gradient") {
  std::mt19937_64 rng(7);
  diff::Graph g;
  auto fm = g.input(random_tensor({4, 4, 2}, rng));
  auto uv = g.input(diff::Tensor({2, 2}, {0.1, 0.2, -0.3, 0.4}));
  const std::vector<unsigned char> mask{0, 1};
  auto y = bilinear_sample(fm, uv, mask);
  CHECK(y.value().at(0, 0) == 0.0);
  CHECK(y.value().at(0, 1) == 0.0);
  CHECK(y.value().at(1, 0) != 0.0);
  g.backward(diff::sum(y));
  const auto gu = g.grad(uv);
  CHECK(gu[0] == 0.0);
  CHECK(gu[1] == 0.0);
}

TEST_CASE("out-of-range samples clamp and are counted") {
  reset_out_of_range_samples();
  diff::Tensor fm({2, 2, 1}, {1, 2, 3, 4});
  double a = 0, b = 0;
  bilinear_lookup(fm, 1.5, -3.0, {&a, 1});
  bilinear_lookup(fm, 1.0, -1.0, {&b, 1});
  CHECK(a == b);
  CHECK(out_of_range_samples() == 1);
}
