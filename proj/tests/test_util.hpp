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

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "mvdet/diffcore/ops.hpp"
#include "mvdet/geometry.hpp"
#include "mvdet/head.hpp"
#include "mvdet/pyramid.hpp"

namespace mvdet::testing {

inline diff::Tensor random_tensor(diff::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> data(diff::shape_size(shape));
  for (auto& v : data) v = u(rng);
  return diff::Tensor(std::move(shape), std::move(data));
}

// Weighted sum with fixed weights, so gradient checks see a non-uniform
// upstream gradient.
inline diff::Var probe_sum(diff::Var y) {
  std::vector<double> w(y.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.7 * static_cast<double>(i) + 0.3);
  diff::Var wv = y.graph().constant(diff::Tensor(y.shape(), std::move(w)));
  return diff::sum(diff::mul(y, wv));
}

// Pinhole camera at `pos` looking horizontally along heading `yaw`.
inline geometry::CameraMatrix look_camera(Vec3 pos, double yaw, double focal, int width, int height) {
  const double s = std::sin(yaw), c = std::cos(yaw);
  const double r[3][3] = {{s, -c, 0}, {0, 0, -1}, {c, s, 0}};
  const double k[3][3] = {{focal, 0, width / 2.0}, {0, focal, height / 2.0}, {0, 0, 1}};
  std::array<double, 12> t{};
  for (int i = 0; i < 3; ++i) {
    double kr[3] = {0, 0, 0};
    for (int j = 0; j < 3; ++j)
      for (int l = 0; l < 3; ++l) kr[j] += k[i][l] * r[l][j];
    for (int j = 0; j < 3; ++j) t[i * 4 + j] = kr[j];
    t[i * 4 + 3] = -(kr[0] * pos[0] + kr[1] * pos[1] + kr[2] * pos[2]);
  }
  return geometry::CameraMatrix(t, width, height);
}

// `n` cameras evenly spaced in heading, 70 degree horizontal field of view.
inline std::vector<geometry::CameraMatrix> ring_rig(int n, int width, int height) {
  std::vector<geometry::CameraMatrix> rig;
  const double focal = (width / 2.0) / std::tan(35.0 * std::numbers::pi / 180.0);
  for (int k = 0; k < n; ++k) {
    const double yaw = 2.0 * std::numbers::pi * k / n;
    rig.push_back(look_camera({0.5 * std::cos(yaw), 0.5 * std::sin(yaw), 1.6}, yaw, focal, width, height));
  }
  return rig;
}

// Tent-kernel form of align-corners bilinear interpolation: a sum over every
// cell of the map, independent of the four-neighbour lookup.
inline double tent_sample(const diff::Tensor& fm, double u, double v, std::size_t ch) {
  const std::size_t h = fm.dim(0), w = fm.dim(1), c = fm.dim(2);
  const double x = w == 1 ? 0.0 : (u + 1) / 2 * static_cast<double>(w - 1);
  const double y = h == 1 ? 0.0 : (v + 1) / 2 * static_cast<double>(h - 1);
  double s = 0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double k = std::max(0.0, 1 - std::abs(x - static_cast<double>(j))) *
                       std::max(0.0, 1 - std::abs(y - static_cast<double>(i)));
      s += k * fm[(i * w + j) * c + ch];
    }
  return s;
}

// Pixel-space projection written out longhand.
inline bool sees(const geometry::CameraMatrix& cam, const Vec3& c, Vec2* uv = nullptr) {
  const auto& t = cam.matrix();
  double p[3];
  for (int r = 0; r < 3; ++r) p[r] = t[r * 4] * c[0] + t[r * 4 + 1] * c[1] + t[r * 4 + 2] * c[2] + t[r * 4 + 3];
  if (std::abs(p[2]) < 1e-9 || p[2] <= 0) return false;
  const double px = p[0] / p[2], py = p[1] / p[2];
  if (uv) *uv = {px / cam.width() * 2 - 1, py / cam.height() * 2 - 1};
  return px >= 0 && px <= cam.width() && py >= 0 && py <= cam.height();
}

// Masked average over cameras and levels, straight from the definition.
inline std::vector<double> gather_oracle(const Vec3& c, const std::vector<std::array<diff::Tensor, 4>>& maps,
                                         const std::vector<geometry::CameraMatrix>& rig) {
  const std::size_t ch = maps[0][0].dim(2);
  std::vector<double> acc(ch, 0.0);
  double count = 0;
  for (std::size_t m = 0; m < rig.size(); ++m) {
    Vec2 uv;
    if (!sees(rig[m], c, &uv)) continue;
    for (const auto& fm : maps[m]) {
      count += 1;
      for (std::size_t k = 0; k < ch; ++k) acc[k] += tent_sample(fm, uv[0], uv[1], k);
    }
  }
  for (double& a : acc) a /= count + 1e-5;
  return acc;
}

struct Toy {
  head::HeadConfig cfg;
  diff::ParameterSet params;
  std::vector<geometry::CameraMatrix> rig;
  std::vector<diff::Tensor> images;
};

inline Toy make_toy(int cameras, std::size_t queries, std::size_t hidden, std::size_t layers, std::size_t height,
                    std::size_t width, std::uint64_t seed, std::size_t heads = 2, std::size_t classes = 3) {
  Toy t;
  t.cfg.num_layers = layers;
  t.cfg.num_queries = queries;
  t.cfg.hidden = hidden;
  t.cfg.heads = heads;
  t.cfg.num_classes = classes;
  std::mt19937_64 rng(seed);
  pyramid::init_encoder(t.params, {hidden, 4}, rng);
  head::init_head(t.params, t.cfg, seed + 1);
  t.rig = ring_rig(cameras, static_cast<int>(width), static_cast<int>(height));
  for (int k = 0; k < cameras; ++k) t.images.push_back(random_tensor({height, width, 3}, rng, -0.5, 0.5));
  return t;
}

}  // namespace mvdet::testing
