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

#include "mvdet/eval.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

namespace mvdet::eval {
namespace {

constexpr std::size_t kRecallPoints = 101;

std::vector<std::size_t> by_score(std::span<const Detection> dets) {
  std::vector<std::size_t> idx(dets.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return idx;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

void EvalConfig::validate() const {
  if (distance_thresholds.empty()) throw std::invalid_argument("need at least one distance threshold");
  for (std::size_t i = 0; i < distance_thresholds.size(); ++i) {
    if (!(distance_thresholds[i] > 0)) throw std::invalid_argument("distance thresholds must be positive");
    if (i > 0 && !(distance_thresholds[i] > distance_thresholds[i - 1]))
      throw std::invalid_argument("distance thresholds must be ascending");
  }
  if (!(tp_threshold > 0)) throw std::invalid_argument("tp threshold must be positive");
  if (class_names.empty()) throw std::invalid_argument("class list is empty");
  if (!(min_recall >= 0 && min_recall < 1) || !(min_precision >= 0 && min_precision < 1))
    throw std::invalid_argument("min recall/precision must be in [0,1)");
}

MatchResult match_by_center_distance(std::span<const Detection> preds, std::span<const Detection> gts,
                                     double threshold) {
  std::unordered_map<std::string, std::vector<std::size_t>> by_scene;
  for (std::size_t j = 0; j < gts.size(); ++j) by_scene[gts[j].scene].push_back(j);
  std::vector<bool> taken(gts.size(), false);
  MatchResult out;
  out.tp.assign(preds.size(), false);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto it = by_scene.find(preds[i].scene);
    if (it == by_scene.end()) continue;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_j = 0;
    for (std::size_t j : it->second) {
      if (taken[j]) continue;
      const double d = bev_distance(preds[i].box, gts[j].box);
      if (d < best) {
        best = d;
        best_j = j;
      }
    }
    if (best <= threshold) {
      taken[best_j] = true;
      out.tp[i] = true;
      out.pairs.emplace_back(i, best_j);
    }
  }
  return out;
}

double average_precision(const std::vector<bool>& tp, std::size_t num_gt, double min_recall, double min_precision) {
  if (num_gt == 0 || tp.empty()) return 0.0;
  const std::size_t n = tp.size();
  std::vector<double> rec(n), prec(n);
  double ctp = 0, cfp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (tp[i] ? ctp : cfp) += 1.0;
    prec[i] = ctp / (ctp + cfp);
    rec[i] = ctp / static_cast<double>(num_gt);
  }
  // Linear interpolation of precision at evenly spaced recalls: left of the
  // first recall use the first precision, right of the last use 0, and
  // among repeated recalls the last one counts.
  std::vector<double> p(kRecallPoints);
  for (std::size_t k = 0; k < kRecallPoints; ++k) {
    const double r = static_cast<double>(k) / static_cast<double>(kRecallPoints - 1);
    if (r < rec[0]) {
      p[k] = prec[0];
    } else if (r > rec[n - 1]) {
      p[k] = 0.0;
    } else if (r == rec[n - 1]) {
      p[k] = prec[n - 1];
    } else {
      const auto j = static_cast<std::size_t>(std::upper_bound(rec.begin(), rec.end(), r) - rec.begin()) - 1;
      const double slope = (prec[j + 1] - prec[j]) / (rec[j + 1] - rec[j]);
      p[k] = slope * (r - rec[j]) + prec[j];
    }
  }
  const auto first = static_cast<std::size_t>(std::lround(100.0 * min_recall)) + 1;
  double s = 0;
  std::size_t count = 0;
  for (std::size_t k = first; k < kRecallPoints; ++k, ++count) s += std::max(0.0, p[k] - min_precision);
  if (count == 0) return 0.0;
  return s / static_cast<double>(count) / (1.0 - min_precision);
}

double aligned_iou(const Vec3& a, const Vec3& b) {
  double inter = 1, va = 1, vb = 1;
  for (std::size_t i = 0; i < 3; ++i) {
    inter *= std::min(a[i], b[i]);
    va *= a[i];
    vb *= b[i];
  }
  return inter / (va + vb - inter);
}

TpErrors tp_metrics(std::span<const std::pair<std::size_t, std::size_t>> pairs, std::span<const Detection> preds,
                    std::span<const Detection> gts) {
  TpErrors e;
  if (pairs.empty()) return e;
  double ate = 0, ase = 0, aoe = 0, ave = 0, wrong = 0, attributed = 0;
  for (const auto& [i, j] : pairs) {
    const Box3D& p = preds[i].box;
    const Box3D& g = gts[j].box;
    ate += bev_distance(p, g);
    ase += 1.0 - aligned_iou(p.size, g.size);
    aoe += std::abs(wrap_angle(p.yaw - g.yaw));
    ave += std::hypot(p.velocity[0] - g.velocity[0], p.velocity[1] - g.velocity[1]);
    if (gts[j].attribute != kNoAttribute) {
      attributed += 1;
      wrong += preds[i].attribute == gts[j].attribute ? 0.0 : 1.0;
    }
  }
  const double n = static_cast<double>(pairs.size());
  e.ate = ate / n;
  e.ase = ase / n;
  e.aoe = aoe / n;
  e.ave = ave / n;
  e.aae = attributed > 0 ? wrong / attributed : 0.0;
  return e;
}

double nds(double map, const TpErrors& tp) {
  double s = 5.0 * map;
  for (double v : tp.as_array()) s += 1.0 - std::min(1.0, v);
  return s / 10.0;
}

namespace {

std::vector<bool> overlap_mask(std::span<const Detection> gts, const std::map<std::string, geometry::Rig>& rigs) {
  std::vector<bool> keep(gts.size(), false);
  for (std::size_t i = 0; i < gts.size(); ++i) {
    auto it = rigs.find(gts[i].scene);
    if (it != rigs.end()) keep[i] = geometry::visible_camera_count(it->second, gts[i].box.center) >= 2;
  }
  return keep;
}

}  // namespace

std::vector<Detection> overlap_filter(std::span<const Detection> gts,
                                      const std::map<std::string, geometry::Rig>& rigs) {
  const auto keep = overlap_mask(gts, rigs);
  std::vector<Detection> out;
  for (std::size_t i = 0; i < gts.size(); ++i)
    if (keep[i]) out.push_back(gts[i]);
  return out;
}

EvalReport evaluate(std::span<const Detection> preds, std::span<const Detection> gts, const EvalConfig& cfg,
                    const EvalOptions& opts) {
  cfg.validate();
  const std::size_t k = cfg.class_names.size();
  auto check = [k](const Detection& d) {
    if (d.label < 0 || static_cast<std::size_t>(d.label) >= k)
      throw std::invalid_argument("unknown class label " + std::to_string(d.label) + " in scene " + d.scene);
  };
  for (const auto& d : preds) check(d);
  for (const auto& d : gts) check(d);

  EvalReport r;
  r.gt_total = gts.size();
  std::vector<Detection> gt_eval(gts.begin(), gts.end());
  std::vector<Detection> pred_eval;
  if (opts.overlap_rigs) {
    r.overlap_only = true;
    const auto keep = overlap_mask(gts, *opts.overlap_rigs);
    gt_eval.clear();
    std::vector<Detection> removed;
    for (std::size_t i = 0; i < gts.size(); ++i) (keep[i] ? gt_eval : removed).push_back(gts[i]);
    for (const auto& p : preds) {
      const bool near_removed = std::any_of(removed.begin(), removed.end(), [&](const Detection& g) {
        return g.scene == p.scene && g.label == p.label && bev_distance(g.box, p.box) <= cfg.tp_threshold;
      });
      if (near_removed)
        ++r.preds_dropped;
      else
        pred_eval.push_back(p);
    }
  } else {
    pred_eval.assign(preds.begin(), preds.end());
  }
  r.gt_evaluated = gt_eval.size();
  r.attributes_missing = std::all_of(gt_eval.begin(), gt_eval.end(),
                                     [](const Detection& g) { return g.attribute == kNoAttribute; });

  std::vector<double> aps;
  std::array<std::vector<double>, 5> tps;
  for (std::size_t c = 0; c < k; ++c) {
    ClassReport cr;
    cr.name = cfg.class_names[c];
    std::vector<Detection> p, g;
    for (std::size_t i : by_score(pred_eval))
      if (pred_eval[i].label == static_cast<int>(c)) p.push_back(pred_eval[i]);
    for (const auto& d : gt_eval)
      if (d.label == static_cast<int>(c)) g.push_back(d);
    cr.num_gt = g.size();
    cr.num_pred = p.size();
    if (g.empty()) {
      r.classes_without_gt.push_back(cr.name);
      r.classes.push_back(std::move(cr));
      continue;
    }
    for (double t : cfg.distance_thresholds) {
      const auto m = match_by_center_distance(p, g, t);
      cr.ap_per_threshold.push_back(average_precision(m.tp, g.size(), cfg.min_recall, cfg.min_precision));
    }
    cr.ap = mean(cr.ap_per_threshold);
    const auto m = match_by_center_distance(p, g, cfg.tp_threshold);
    cr.tp = tp_metrics(m.pairs, p, g);
    if (r.attributes_missing) cr.tp.aae = 0.0;
    cr.tp_matches = m.pairs.size();
    aps.push_back(cr.ap);
    const auto arr = cr.tp.as_array();
    for (std::size_t i = 0; i < 5; ++i) tps[i].push_back(arr[i]);
    r.classes.push_back(std::move(cr));
  }
  r.map = mean(aps);
  if (!aps.empty()) {
    r.mtp = {mean(tps[0]), mean(tps[1]), mean(tps[2]), mean(tps[3]), mean(tps[4])};
  } else if (r.attributes_missing) {
    r.mtp.aae = 0.0;
  }
  r.nds = nds(r.map, r.mtp);
  return r;
}

void write_detections(std::ostream& out, std::span<const Detection> dets, const std::vector<std::string>& classes) {
  out << "# scene class x y z length width height yaw vx vy score attribute\n";
  for (const auto& d : dets) {
    if (d.label < 0 || static_cast<std::size_t>(d.label) >= classes.size())
      throw std::invalid_argument("write_detections: label out of range");
    if (d.scene.empty() || d.scene.find_first_of(" \t\n#") != std::string::npos)
      throw std::invalid_argument("write_detections: scene id must be a non-empty token");
    out << d.scene << ' ' << classes[static_cast<std::size_t>(d.label)];
    for (double v : d.box.to_array()) out << ' ' << fmt::format("{:.17g}", v);
    out << ' ' << fmt::format("{:.17g}", d.score) << ' ' << d.attribute << '\n';
  }
}

std::vector<Detection> read_detections(std::istream& in, const std::vector<std::string>& classes) {
  std::vector<Detection> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    std::istringstream ss(line);
    Detection d;
    std::string cls;
    std::array<double, kBoxParams> p{};
    ss >> d.scene >> cls;
    for (double& v : p) ss >> v;
    ss >> d.score >> d.attribute;
    if (!ss) throw std::runtime_error("malformed detection record on line " + std::to_string(lineno));
    std::string extra;
    if (ss >> extra) throw std::runtime_error("trailing fields on line " + std::to_string(lineno));
    auto it = std::find(classes.begin(), classes.end(), cls);
    if (it == classes.end()) throw std::invalid_argument("unknown class '" + cls + "' on line " + std::to_string(lineno));
    d.label = static_cast<int>(it - classes.begin());
    d.box = Box3D::from_array(p);
    out.push_back(std::move(d));
  }
  return out;
}

std::string format_report(const EvalReport& r) {
  std::string s;
  s += fmt::format("mAP   {:.4f}\nmATE  {:.4f}\nmASE  {:.4f}\nmAOE  {:.4f}\nmAVE  {:.4f}\nmAAE  {:.4f}{}\nNDS   {:.4f}\n",
                   r.map, r.mtp.ate, r.mtp.ase, r.mtp.aoe, r.mtp.ave, r.mtp.aae,
                   r.attributes_missing ? "  (no attributes in ground truth)" : "", r.nds);
  if (r.overlap_only)
    s += fmt::format("overlap only: {} of {} ground truths kept, {} predictions ignored\n", r.gt_evaluated,
                     r.gt_total, r.preds_dropped);
  s += fmt::format("\n{:<14}{:>6}{:>7}{:>8}{:>8}{:>8}{:>8}{:>8}{:>8}\n", "class", "gt", "pred", "AP", "ATE", "ASE",
                   "AOE", "AVE", "AAE");
  for (const auto& c : r.classes) {
    if (c.num_gt == 0) {
      s += fmt::format("{:<14}{:>6}{:>7}  no ground truth, excluded\n", c.name, c.num_gt, c.num_pred);
      continue;
    }
    s += fmt::format("{:<14}{:>6}{:>7}{:>8.4f}{:>8.4f}{:>8.4f}{:>8.4f}{:>8.4f}{:>8.4f}\n", c.name, c.num_gt,
                     c.num_pred, c.ap, c.tp.ate, c.tp.ase, c.tp.aoe, c.tp.ave, c.tp.aae);
  }
  return s;
}

std::string report_json(const EvalReport& r) {
  using nlohmann::json;
  auto tp = [](const TpErrors& e) {
    return json{{"ATE", e.ate}, {"ASE", e.ase}, {"AOE", e.aoe}, {"AVE", e.ave}, {"AAE", e.aae}};
  };
  json classes = json::array();
  for (const auto& c : r.classes) {
    json jc{{"name", c.name}, {"num_gt", c.num_gt}, {"num_pred", c.num_pred}};
    if (c.num_gt > 0) {
      jc["AP"] = c.ap;
      jc["AP_per_threshold"] = c.ap_per_threshold;
      jc["tp"] = tp(c.tp);
      jc["tp_matches"] = c.tp_matches;
    }
    classes.push_back(std::move(jc));
  }
  json j{{"mAP", r.map},
         {"mATE", r.mtp.ate},
         {"mASE", r.mtp.ase},
         {"mAOE", r.mtp.aoe},
         {"mAVE", r.mtp.ave},
         {"mAAE", r.mtp.aae},
         {"NDS", r.nds},
         {"classes", classes},
         {"classes_without_gt", r.classes_without_gt},
         {"attributes_missing", r.attributes_missing},
         {"overlap_only", r.overlap_only},
         {"gt_total", r.gt_total},
         {"gt_evaluated", r.gt_evaluated},
         {"preds_dropped", r.preds_dropped}};
  return j.dump(2);
}

}  // namespace mvdet::eval
