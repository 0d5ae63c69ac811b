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

#include "mvdet/nms.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace mvdet::nms {
namespace {

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

void check_thresh(double t) {
  if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("iou threshold must be in (0,1)");
}

std::vector<std::size_t> score_order(std::span<const ScoredBox> boxes) {
  std::vector<std::size_t> idx(boxes.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return boxes[a].score > boxes[b].score; });
  return idx;
}

std::vector<ScoredBox> sorted_by_score(std::vector<ScoredBox> v) {
  std::stable_sort(v.begin(), v.end(), [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
  return v;
}

}  // namespace

double polygon_area(std::span<const Vec2> poly) {
  double s = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    s += p[0] * q[1] - q[0] * p[1];
  }
  return std::abs(s) / 2.0;
}

double convex_intersection_area(std::span<const Vec2> a, std::span<const Vec2> b) {
  // Clip `a` by every edge of `b` (Sutherland-Hodgman).
  double scale = 0;
  for (const auto& p : a) scale = std::max({scale, std::abs(p[0]), std::abs(p[1])});
  for (const auto& p : b) scale = std::max({scale, std::abs(p[0]), std::abs(p[1])});
  const double eps = 1e-12 * std::max(1.0, scale * scale);

  std::vector<Vec2> poly(a.begin(), a.end()), next;
  for (std::size_t e = 0; e < b.size() && !poly.empty(); ++e) {
    const Vec2& p0 = b[e];
    const Vec2& p1 = b[(e + 1) % b.size()];
    next.clear();
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Vec2& cur = poly[i];
      const Vec2& nxt = poly[(i + 1) % poly.size()];
      const double cc = cross(p0, p1, cur), cn = cross(p0, p1, nxt);
      const bool in_c = cc >= -eps, in_n = cn >= -eps;
      if (in_c) next.push_back(cur);
      if (in_c != in_n) {
        const double t = cc / (cc - cn);
        next.push_back({cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])});
      }
    }
    poly.swap(next);
  }
  return poly.size() < 3 ? 0.0 : polygon_area(poly);
}

double bev_iou(const Box3D& a, const Box3D& b) {
  const auto pa = bev_corners(a), pb = bev_corners(b);
  const double inter = convex_intersection_area(pa, pb);
  const double uni = a.size[0] * a.size[1] + b.size[0] * b.size[1] - inter;
  if (!(uni > 0)) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<ScoredBox> nms_global(std::span<const ScoredBox> boxes, double iou_thresh) {
  check_thresh(iou_thresh);
  std::vector<ScoredBox> kept;
  for (std::size_t i : score_order(boxes)) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const ScoredBox& k) {
      return bev_iou(k.box, boxes[i].box) > iou_thresh;
    });
    if (!suppressed) kept.push_back(boxes[i]);
  }
  return kept;
}

std::vector<ScoredBox> nms_per_camera(std::span<const ScoredBox> boxes, double iou_thresh) {
  check_thresh(iou_thresh);
  std::map<int, std::vector<ScoredBox>> groups;
  for (const auto& b : boxes) {
    if (!b.source_camera) throw std::invalid_argument("nms_per_camera: box without source camera");
    groups[*b.source_camera].push_back(b);
  }
  std::vector<ScoredBox> out;
  for (auto& [cam, g] : groups) {
    auto k = nms_global(g, iou_thresh);
    out.insert(out.end(), k.begin(), k.end());
  }
  return sorted_by_score(std::move(out));
}

int source_camera(const geometry::Rig& rig, const Vec3& center) {
  int best = -1;
  double best_off = 0;
  int fallback = 0;
  double best_ratio = 0;
  for (std::size_t k = 0; k < rig.size(); ++k) {
    const auto p = geometry::project(rig[k], center);
    if (p.sigma) {
      const double off = std::max(std::abs(p.uv_norm[0]), std::abs(p.uv_norm[1]));
      if (best < 0 || off < best_off) {
        best = static_cast<int>(k);
        best_off = off;
      }
    } else if (p.depth > geometry::kMinDepth) {
      const double ratio = 1.0 / (1.0 + std::max(std::abs(p.uv_norm[0]), std::abs(p.uv_norm[1])));
      if (ratio > best_ratio) {
        best_ratio = ratio;
        fallback = static_cast<int>(k);
      }
    }
  }
  return best >= 0 ? best : fallback;
}

std::vector<TimingReport> bench(const ForwardFn& forward, std::size_t num_scenes, std::size_t repetitions,
                                double iou_thresh) {
  check_thresh(iou_thresh);
  if (repetitions < 3) throw std::invalid_argument("bench needs at least 3 repetitions");
  if (num_scenes == 0) throw std::invalid_argument("bench needs at least one scene");
  using Clock = std::chrono::steady_clock;
  auto seconds = [](Clock::duration d) { return std::chrono::duration<double>(d).count(); };

  double fwd = 0, nms_cam = 0, nms_all = 0, out_cam = 0, out_all = 0;
  std::size_t boxes_in = 0, samples = 0;
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    for (std::size_t s = 0; s < num_scenes; ++s) {
      const auto t0 = Clock::now();
      const auto boxes = forward(s);
      const auto t1 = Clock::now();
      const auto per_cam = nms_per_camera(boxes, iou_thresh);
      const auto t2 = Clock::now();
      const auto both = nms_global(nms_per_camera(boxes, iou_thresh), iou_thresh);
      const auto t3 = Clock::now();
      if (rep == 0) continue;  // warm-up
      fwd += seconds(t1 - t0);
      nms_cam += seconds(t2 - t1);
      nms_all += seconds(t3 - t2);
      out_cam += static_cast<double>(per_cam.size());
      out_all += static_cast<double>(both.size());
      boxes_in += boxes.size();
      ++samples;
    }
  }
  const double n = static_cast<double>(samples);
  auto make = [&](const char* name, double nms_total, double out) {
    TimingReport r;
    r.variant = name;
    r.forward_seconds = fwd / n;
    r.nms_seconds = nms_total / n;
    r.mean_seconds = r.forward_seconds + r.nms_seconds;
    r.fps = 1.0 / r.mean_seconds;
    r.boxes_in = static_cast<std::size_t>(std::lround(static_cast<double>(boxes_in) / n));
    r.boxes_out = out / n;
    return r;
  };
  return {make("no-nms", 0.0, static_cast<double>(boxes_in)), make("per-camera-nms", nms_cam, out_cam),
          make("per-camera+global-nms", nms_all, out_all)};
}

std::string format_timing(std::span<const TimingReport> reports) {
  std::string s = fmt::format("{:<24}{:>12}{:>12}{:>12}{:>10}{:>10}\n", "variant", "forward ms", "nms ms", "total ms",
                              "FPS", "boxes");
  for (const auto& r : reports)
    s += fmt::format("{:<24}{:>12.3f}{:>12.3f}{:>12.3f}{:>10.2f}{:>10.1f}\n", r.variant, 1e3 * r.forward_seconds,
                     1e3 * r.nms_seconds, 1e3 * r.mean_seconds, r.fps, r.boxes_out);
  if (!reports.empty())
    for (const auto& r : reports.subspan(1))
      s += fmt::format("FPS ratio no-nms / {}: {:.3f}\n", r.variant, reports[0].fps / r.fps);
  return s;
}

std::string timing_json(std::span<const TimingReport> reports) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : reports)
    j.push_back({{"variant", r.variant},
                 {"forward_seconds", r.forward_seconds},
                 {"nms_seconds", r.nms_seconds},
                 {"mean_seconds", r.mean_seconds},
                 {"fps", r.fps},
                 {"boxes_in", r.boxes_in},
                 {"boxes_out", r.boxes_out}});
  return j.dump(2);
}

}  // namespace mvdet::nms
