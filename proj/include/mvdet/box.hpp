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
#include <span>

namespace mvdet {

using Vec2 = std::array<double, 2>;
using Vec3 = std::array<double, 3>;

// Number of regressed box parameters.
inline constexpr std::size_t kBoxParams = 9;

// A 3D box in the world frame (x forward, y left, z up; meters, radians).
// Parameter order everywhere (files, tensors, losses):
//   x, y, z, length, width, height, yaw, vx, vy
// `length` runs along the heading, `width` across it.
struct Box3D {
  Vec3 center{0.0, 0.0, 0.0};
  Vec3 size{1.0, 1.0, 1.0};
  double yaw = 0.0;
  Vec2 velocity{0.0, 0.0};

  std::array<double, kBoxParams> to_array() const;
  static Box3D from_array(std::span<const double> p);

  friend bool operator==(const Box3D&, const Box3D&) = default;
};

// Wraps into (-pi, pi].
double wrap_angle(double a);

// The 8 corners: bottom face (z - h/2) counter-clockwise seen from above,
// starting front-left, then the top face in the same order.
std::array<Vec3, 8> box_corners(const Box3D& box);
// BEV footprint, counter-clockwise.
std::array<Vec2, 4> bev_corners(const Box3D& box);

double bev_distance(const Box3D& a, const Box3D& b);

// Axis-aligned region, meters.
struct SceneBounds {
  Vec3 lo{-12.0, -12.0, -0.5};
  Vec3 hi{12.0, 12.0, 2.5};

  bool contains(const Vec3& p) const;
  friend bool operator==(const SceneBounds&, const SceneBounds&) = default;
};

}  // namespace mvdet
