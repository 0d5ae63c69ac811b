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

#include "mvdet/box.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mvdet {

std::array<double, kBoxParams> Box3D::to_array() const {
  return {center[0], center[1], center[2], size[0], size[1], size[2], yaw, velocity[0], velocity[1]};
}

Box3D Box3D::from_array(std::span<const double> p) {
  if (p.size() != kBoxParams) throw std::invalid_argument("box needs 9 parameters");
  Box3D b;
  b.center = {p[0], p[1], p[2]};
  b.size = {p[3], p[4], p[5]};
  b.yaw = p[6];
  b.velocity = {p[7], p[8]};
  return b;
}

double wrap_angle(double a) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double r = std::remainder(a, kTwoPi);
  if (r <= -std::numbers::pi) r += kTwoPi;
  return r;
}

std::array<Vec2, 4> bev_corners(const Box3D& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double hl = box.size[0] / 2.0, hw = box.size[1] / 2.0;
  const std::array<Vec2, 4> local = {{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<Vec2, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {box.center[0] + c * local[i][0] - s * local[i][1],
              box.center[1] + s * local[i][0] + c * local[i][1]};
  }
  return out;
}

std::array<Vec3, 8> box_corners(const Box3D& box) {
  const auto bev = bev_corners(box);
  std::array<Vec3, 8> out{};
  const double z0 = box.center[2] - box.size[2] / 2.0, z1 = box.center[2] + box.size[2] / 2.0;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {bev[i][0], bev[i][1], z0};
    out[i + 4] = {bev[i][0], bev[i][1], z1};
  }
  return out;
}

double bev_distance(const Box3D& a, const Box3D& b) {
  return std::hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]);
}

bool SceneBounds::contains(const Vec3& p) const {
  for (std::size_t i = 0; i < 3; ++i)
    if (p[i] < lo[i] || p[i] > hi[i]) return false;
  return true;
}

}  // namespace mvdet
