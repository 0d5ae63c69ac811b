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

#include <cmath>
#include <random>

#include "doctest.h"
#include "mvdet/diffcore/gradcheck.hpp"
#include "mvdet/geometry.hpp"
#include "test_util.hpp"

using namespace mvdet;
using namespace mvdet::geometry;

namespace {

CameraMatrix identity_camera(int w = 4, int h = 4) { return CameraMatrix({1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0}, w, h); }

}  // namespace

TEST_CASE("project examples") {
  const auto cam = identity_camera();
  auto p = project(cam, {0, 0, 1});
  CHECK(p.pixel == Vec2{0, 0});
  CHECK(p.depth == 1.0);
  CHECK(p.uv_norm == Vec2{-1, -1});
  CHECK(p.sigma);  // closed border

  p = project(cam, {2, 1, 2});
  CHECK(p.pixel == Vec2{1, 0.5});
  CHECK(p.depth == 2.0);

  p = project(cam, {0.5, 0.5, -1});
  CHECK(p.depth == -1.0);
  CHECK_FALSE(p.sigma);

  p = project(cam, {1, 1, 1e-12});
  CHECK_FALSE(p.sigma);
  CHECK(std::isfinite(p.uv_norm[0]));
}

TEST_CASE("camera validation") {
  CHECK_THROWS_AS(CameraMatrix({1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0}, 4, 4), CameraError);
  CHECK_THROWS_AS(CameraMatrix({-1, 0, 0, 0, 0, -1, 0, 0, 0, 0, -1, 0}, 4, 4), CameraError);
  CHECK_THROWS_AS(CameraMatrix({1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0}, 0, 4), CameraError);
  const auto cam = testing::ring_rig(6, 64, 64)[2];
  auto t = cam.matrix();
  for (double& v : t) v *= -3.0;
  CHECK_THROWS_AS(CameraMatrix(t, 64, 64), CameraError);
}

TEST_CASE("normalize_uv examples and round trip") {
  CHECK(normalize_uv({50, 25}, 100, 50) == Vec2{0, 0});
  CHECK(normalize_uv({0, 0}, 100, 50) == Vec2{-1, -1});
  CHECK(normalize_uv({80, 25}, 80, 100) == Vec2{1, -0.5});
  CHECK_THROWS(normalize_uv({0, 0}, 0, 10));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 1000; ++i) {
    const double w = 1 + 1000 * u(rng), h = 1 + 1000 * u(rng);
    const Vec2 px{w * u(rng), h * u(rng)};
    const Vec2 back = denormalize_uv(normalize_uv(px, w, h), w, h);
    CHECK(std::abs(back[0] - px[0]) < 1e-12 * std::max(1.0, w));
    CHECK(std::abs(back[1] - px[1]) < 1e-12 * std::max(1.0, h));
  }
}

TEST_CASE("visibility examples and brute force") {
  CHECK(visibility({0.5, 0.5}, 3));
  CHECK_FALSE(visibility({1.2, 0}, 3));
  CHECK_FALSE(visibility({0, 0}, -2));
  CHECK(visibility({1, -1}, 1e-3));

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int i = 0; i < 2000; ++i) {
    const Vec2 uv{u(rng), u(rng)};
    const double d = u(rng);
    const bool expect = d > 0 && std::abs(uv[0]) <= 1 && std::abs(uv[1]) <= 1;
    CHECK(visibility(uv, d) == expect);
  }
}

TEST_CASE("visible_camera_count") {
  const std::vector<CameraMatrix> one{identity_camera(4, 4)};
  CHECK(visible_camera_count(one, {2, 2, 1}) == 1);

  // Facing +x and -x.
  const std::vector<CameraMatrix> two{testing::look_camera({0, 0, 1}, 0.0, 10, 20, 20),
                                      testing::look_camera({0, 0, 1}, std::numbers::pi, 10, 20, 20)};
  CHECK(visible_camera_count(two, {5, 0, 1}) == 1);
  CHECK(visible_camera_count(two, {-5, 0, 1}) == 1);
  CHECK(visible_camera_count(two, {0, 5, 1}) == 0);

  const auto rig = testing::ring_rig(6, 64, 48);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> xy(-12, 12), z(-0.5, 2.5);
  int multi = 0;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 c{xy(rng), xy(rng), z(rng)};
    int expect = 0;
    for (const auto& cam : rig) expect += testing::sees(cam, c) ? 1 : 0;
    CHECK(visible_camera_count(rig, c) == expect);
    multi += expect >= 2;
  }
  CHECK(multi > 0);
}

TEST_CASE("projection is invariant to positive scaling") {
  const auto rig = testing::ring_rig(6, 64, 48);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> xy(-10, 10), lam(0.01, 100);
  for (const auto& cam : rig) {
    for (int i = 0; i < 200; ++i) {
      const Vec3 c{xy(rng), xy(rng), 0.5};
      const double l = lam(rng);
      auto t = cam.matrix();
      for (double& v : t) v *= l;
      const auto a = project(cam, c);
      const auto b = project(CameraMatrix(t, cam.width(), cam.height()), c);
      CHECK(b.uv_norm[0] == doctest::Approx(a.uv_norm[0]).epsilon(1e-12));
      CHECK(b.uv_norm[1] == doctest::Approx(a.uv_norm[1]).epsilon(1e-12));
      CHECK(b.depth == doctest::Approx(a.depth * l).epsilon(1e-12));
      CHECK(a.sigma == b.sigma);

      // Powers of two scale exactly.
      auto t2 = cam.matrix();
      for (double& v : t2) v *= 8.0;
      const auto e = project(CameraMatrix(t2, cam.width(), cam.height()), c);
      CHECK(e.uv_norm == a.uv_norm);
      CHECK(e.sigma == a.sigma);
    }
  }
}

TEST_CASE("project_points gradient matches finite differences") {
  const auto rig = testing::ring_rig(6, 64, 48);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> xy(-10, 10), z(0, 2);
  int checked = 0;
  for (const auto& cam : rig) {
    for (int i = 0; i < 50; ++i) {
      const Vec3 c{xy(rng), xy(rng), z(rng)};
      if (!project(cam, c).sigma) continue;
      diff::Tensor x({1, 3}, {c[0], c[1], c[2]});
      const auto r = diff::grad_check(
          [&cam](diff::Graph&, diff::Var v) {
            std::vector<unsigned char> s;
            return testing::probe_sum(project_points(v, cam, s));
          },
          x, 1e-6);
      CHECK(r.max_rel_error < 1e-5);
      ++checked;
    }
  }
  CHECK(checked > 20);

  // Sigma from the op matches project().
  diff::Graph g;
  std::vector<unsigned char> s;
  auto uv = project_points(g.constant(diff::Tensor({3, 3}, {5, 0, 1, -5, 0, 1, 0, 0, 1.6})), rig[0], s);
  CHECK(s == std::vector<unsigned char>{1, 0, 0});
  CHECK(uv.value().at(0, 0) == doctest::Approx(project(rig[0], {5, 0, 1}).uv_norm[0]));
}
