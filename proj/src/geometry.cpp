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

#include "mvdet/geometry.hpp"

#include <cmath>
#include <string>

namespace mvdet::geometry {

CameraMatrix::CameraMatrix(const std::array<double, 12>& t, int width, int height)
    : t_(t), width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw CameraError("camera image size must be positive");
  for (double v : t_)
    if (!std::isfinite(v)) throw CameraError("camera matrix has non-finite entries");
  const double det = determinant();
  if (!(det > 0.0)) {
    throw CameraError("camera matrix left 3x3 block must have positive determinant, got " +
                      std::to_string(det));
  }
}

double CameraMatrix::determinant() const {
  const auto& m = *this;
  return m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
         m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
         m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
}

Vec2 normalize_uv(const Vec2& pixel, double width, double height) {
  if (!(width > 0.0) || !(height > 0.0)) throw std::invalid_argument("normalize_uv: size must be positive");
  return {2.0 * pixel[0] / width - 1.0, 2.0 * pixel[1] / height - 1.0};
}

Vec2 denormalize_uv(const Vec2& uv_norm, double width, double height) {
  if (!(width > 0.0) || !(height > 0.0)) throw std::invalid_argument("denormalize_uv: size must be positive");
  return {(uv_norm[0] + 1.0) * width / 2.0, (uv_norm[1] + 1.0) * height / 2.0};
}

bool visibility(const Vec2& uv_norm, double depth) {
  return depth > 0.0 && uv_norm[0] >= -1.0 && uv_norm[0] <= 1.0 && uv_norm[1] >= -1.0 &&
         uv_norm[1] <= 1.0;
}

ProjectedPoint project(const CameraMatrix& cam, const Vec3& c) {
  std::array<double, 3> p{};
  for (std::size_t r = 0; r < 3; ++r)
    p[r] = cam(r, 0) * c[0] + cam(r, 1) * c[1] + cam(r, 2) * c[2] + cam(r, 3);
  ProjectedPoint out;
  out.depth = p[2];
  if (std::abs(p[2]) < kMinDepth) {
    out.uv_norm = kDegenerateUv;
    out.pixel = denormalize_uv(out.uv_norm, cam.width(), cam.height());
    out.sigma = false;
    return out;
  }
  out.pixel = {p[0] / p[2], p[1] / p[2]};
  out.uv_norm = normalize_uv(out.pixel, cam.width(), cam.height());
  out.sigma = visibility(out.uv_norm, out.depth);
  return out;
}

int visible_camera_count(std::span<const CameraMatrix> rig, const Vec3& c) {
  int n = 0;
  for (const auto& cam : rig) n += project(cam, c).sigma ? 1 : 0;
  return n;
}

diff::Var project_points(diff::Var points, const CameraMatrix& cam, std::vector<unsigned char>& sigma) {
  const auto& x = points.value();
  if (x.rank() != 2 || x.dim(1) != 3) {
    throw diff::ShapeError("project_points expects [M,3], got " + diff::shape_string(x.shape()));
  }
  const std::size_t m = x.dim(0);
  std::vector<double> uv(m * 2);
  // Per row: d(uv)/d(c), 2x3, for the backward pass.
  std::vector<double> jac(m * 6, 0.0);
  sigma.assign(m, 0);
  const double sx = 2.0 / cam.width(), sy = 2.0 / cam.height();
  for (std::size_t i = 0; i < m; ++i) {
    const Vec3 c{x[i * 3], x[i * 3 + 1], x[i * 3 + 2]};
    const ProjectedPoint p = project(cam, c);
    uv[i * 2] = p.uv_norm[0];
    uv[i * 2 + 1] = p.uv_norm[1];
    sigma[i] = p.sigma ? 1 : 0;
    if (std::abs(p.depth) < kMinDepth) continue;
    for (std::size_t k = 0; k < 3; ++k) {
      jac[i * 6 + k] = sx * (cam(0, k) - p.pixel[0] * cam(2, k)) / p.depth;
      jac[i * 6 + 3 + k] = sy * (cam(1, k) - p.pixel[1] * cam(2, k)) / p.depth;
    }
  }
  diff::Graph& g = points.graph();
  const std::uint32_t xid = points.id();
  return g.record(diff::Tensor({m, 2}, std::move(uv)), {points},
                  [xid, m, jac = std::move(jac)](diff::Graph& gr, std::span<const double> gy) {
                    auto gx = gr.grad_buffer(xid);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t k = 0; k < 3; ++k)
                        gx[i * 3 + k] += jac[i * 6 + k] * gy[i * 2] + jac[i * 6 + 3 + k] * gy[i * 2 + 1];
                  });
}

}  // namespace mvdet::geometry
