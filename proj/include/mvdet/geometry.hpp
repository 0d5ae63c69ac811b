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
#include <stdexcept>
#include <vector>

#include "mvdet/box.hpp"
#include "mvdet/diffcore/graph.hpp"

namespace mvdet::geometry {

// Below this magnitude the homogeneous depth is treated as zero.
inline constexpr double kMinDepth = 1e-9;

class CameraError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// World to image homogeneous map T (3x4, row-major) plus the image size in
// pixels. Construction rejects cameras whose left 3x3 block is singular or
// has negative determinant: a negatively scaled T would flip the sign of
// depth and with it every visibility test.
class CameraMatrix {
 public:
  CameraMatrix(const std::array<double, 12>& t, int width, int height);

  const std::array<double, 12>& matrix() const { return t_; }
  double operator()(std::size_t r, std::size_t c) const { return t_[r * 4 + c]; }
  int width() const { return width_; }
  int height() const { return height_; }
  double determinant() const;

  friend bool operator==(const CameraMatrix&, const CameraMatrix&) = default;

 private:
  std::array<double, 12> t_;
  int width_;
  int height_;
};

using Rig = std::vector<CameraMatrix>;

struct ProjectedPoint {
  Vec2 uv_norm{0.0, 0.0};
  Vec2 pixel{0.0, 0.0};
  double depth = 0.0;
  bool sigma = false;
};

// Returned for uv_norm when the depth is too close to zero to divide by.
inline constexpr Vec2 kDegenerateUv{-2.0, -2.0};

ProjectedPoint project(const CameraMatrix& cam, const Vec3& c);

// (0,0) -> (-1,-1), (width, height) -> (1,1).
Vec2 normalize_uv(const Vec2& pixel, double width, double height);
Vec2 denormalize_uv(const Vec2& uv_norm, double width, double height);

bool visibility(const Vec2& uv_norm, double depth);
inline bool visibility(const ProjectedPoint& p) { return visibility(p.uv_norm, p.depth); }

int visible_camera_count(std::span<const CameraMatrix> rig, const Vec3& c);

// Projects every row of `points` [M,3] into `cam`. Returns uv_norm [M,2];
// the visibility of each row goes to `sigma`. Differentiable in the points.
diff::Var project_points(diff::Var points, const CameraMatrix& cam, std::vector<unsigned char>& sigma);

}  // namespace mvdet::geometry
