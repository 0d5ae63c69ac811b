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

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvdet/box.hpp"
#include "mvdet/geometry.hpp"

namespace mvdet::nms {

struct ScoredBox {
  Box3D box;
  double score = 0.0;
  std::optional<int> source_camera;
  int label = 0;  // carried through; suppression ignores it
};

// Area of the intersection of two convex counter-clockwise polygons.
double convex_intersection_area(std::span<const Vec2> a, std::span<const Vec2> b);
double polygon_area(std::span<const Vec2> poly);

double bev_iou(const Box3D& a, const Box3D& b);

// Greedy, score-descending (ties keep input order). Output is sorted by
// score. Throws std::invalid_argument unless 0 < iou_thresh < 1.
std::vector<ScoredBox> nms_global(std::span<const ScoredBox> boxes, double iou_thresh);
// nms_global within each source camera; union sorted by score. Throws
// std::invalid_argument when a box has no source camera.
std::vector<ScoredBox> nms_per_camera(std::span<const ScoredBox> boxes, double iou_thresh);

// The camera that sees the center most centrally (smallest max(|u|,|v|));
// if no camera sees it, the one with the largest positive depth ratio, else 0.
int source_camera(const geometry::Rig& rig, const Vec3& center);

struct TimingReport {
  std::string variant;
  double forward_seconds = 0.0;  // mean per scene
  double nms_seconds = 0.0;      // mean per scene
  double mean_seconds = 0.0;     // forward + nms
  double fps = 0.0;
  std::size_t boxes_in = 0;  // per scene, averaged
  double boxes_out = 0.0;
};

// Runs `forward` on every scene `repetitions` times (the first repetition is
// warm-up and discarded). Each call is timed once; its boxes then go
// through the three post-processing variants:
//   head only (no NMS), per-camera NMS, per-camera + global NMS.
using ForwardFn = std::function<std::vector<ScoredBox>(std::size_t scene)>;
std::vector<TimingReport> bench(const ForwardFn& forward, std::size_t num_scenes, std::size_t repetitions,
                                double iou_thresh);

std::string format_timing(std::span<const TimingReport> reports);
std::string timing_json(std::span<const TimingReport> reports);

}  // namespace mvdet::nms
