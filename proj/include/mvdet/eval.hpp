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
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvdet/box.hpp"
#include "mvdet/geometry.hpp"

namespace mvdet::eval {

// Attribute value meaning "not annotated".
inline constexpr int kNoAttribute = -1;

// One box in a result or ground-truth file.
struct Detection {
  std::string scene;
  int label = 0;
  Box3D box;
  double score = 1.0;
  int attribute = kNoAttribute;
};

struct EvalConfig {
  std::vector<double> distance_thresholds{0.5, 1.0, 2.0, 4.0};
  double tp_threshold = 2.0;
  std::vector<std::string> class_names;
  double min_recall = 0.1;
  double min_precision = 0.1;

  void validate() const;
};

struct MatchResult {
  std::vector<bool> tp;                               // per prediction, input order
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (prediction, ground truth)
};

// Predictions must already be in descending score order. Each prediction
// takes the nearest unmatched ground truth of the same scene within
// `threshold` (BEV center distance); earlier ground truths win exact ties.
// Labels are not compared: callers pass one class at a time.
MatchResult match_by_center_distance(std::span<const Detection> preds, std::span<const Detection> gts,
                                     double threshold);

// Precision interpolated on 101 recall points, bins at or below min_recall
// dropped, min_precision subtracted and clamped, mean renormalized to [0,1].
// `tp` flags are in descending score order.
double average_precision(const std::vector<bool>& tp, std::size_t num_gt, double min_recall = 0.1,
                         double min_precision = 0.1);

struct TpErrors {
  double ate = 1.0;
  double ase = 1.0;
  double aoe = 1.0;
  double ave = 1.0;
  double aae = 1.0;

  std::array<double, 5> as_array() const { return {ate, ase, aoe, ave, aae}; }
};

// 1 - IoU of two boxes sharing center and heading.
double aligned_iou(const Vec3& a, const Vec3& b);

// Means over the pairs; every field is 1 when `pairs` is empty. AAE only
// counts pairs whose ground truth carries an attribute (0 if none does).
TpErrors tp_metrics(std::span<const std::pair<std::size_t, std::size_t>> pairs, std::span<const Detection> preds,
                    std::span<const Detection> gts);

double nds(double map, const TpErrors& tp);

// Ground truths whose center at least two cameras of their scene's rig see.
// Scenes without a rig entry keep nothing.
std::vector<Detection> overlap_filter(std::span<const Detection> gts,
                                      const std::map<std::string, geometry::Rig>& rigs);

struct ClassReport {
  std::string name;
  std::size_t num_gt = 0;
  std::size_t num_pred = 0;
  std::vector<double> ap_per_threshold;
  double ap = 0.0;
  TpErrors tp;
  std::size_t tp_matches = 0;
};

struct EvalReport {
  double map = 0.0;
  TpErrors mtp;
  double nds = 0.0;
  std::vector<ClassReport> classes;
  // Classes that have no ground truth; they are left out of every mean.
  std::vector<std::string> classes_without_gt;
  // No ground truth carries an attribute: AAE is reported as 0.
  bool attributes_missing = false;
  bool overlap_only = false;
  std::size_t gt_total = 0;
  std::size_t gt_evaluated = 0;
  std::size_t preds_dropped = 0;
};

struct EvalOptions {
  // When set, evaluate only ground truths from overlap_filter. Predictions
  // within tp_threshold of a dropped ground truth of the same class and
  // scene are ignored instead of counting as false positives.
  const std::map<std::string, geometry::Rig>* overlap_rigs = nullptr;
};

// Throws std::invalid_argument for labels outside the class list.
EvalReport evaluate(std::span<const Detection> preds, std::span<const Detection> gts, const EvalConfig& cfg,
                    const EvalOptions& opts = {});

// Result files: one record per line,
//   scene class x y z length width height yaw vx vy score attribute
// with `class` a name from the class list; '#' starts a comment line.
void write_detections(std::ostream& out, std::span<const Detection> dets, const std::vector<std::string>& classes);
std::vector<Detection> read_detections(std::istream& in, const std::vector<std::string>& classes);

std::string format_report(const EvalReport& r);
std::string report_json(const EvalReport& r);

}  // namespace mvdet::eval
