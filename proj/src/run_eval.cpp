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

#include <fmt/format.h>
#include <map>

#include "json.hpp"
#include "mvdet/run.hpp"

namespace mvdet::run {
namespace {

eval::EvalConfig eval_config(const std::vector<std::string>& classes) {
  eval::EvalConfig c;
  c.class_names = classes;
  return c;
}

void check_classes(const Model& model, const std::vector<std::string>& classes) {
  if (model.head.num_classes != classes.size())
    throw std::runtime_error(fmt::format("class-count mismatch: checkpoint predicts {} classes, dataset has {}",
                                         model.head.num_classes, classes.size()));
}

}  // namespace

EvalRun evaluate_model(Model& model, std::span<const synth::Scene> scenes, const std::vector<std::string>& classes,
                       const EvalOptions& opts) {
  check_classes(model, classes);
  const std::size_t layer = opts.layer.value_or(model.head.num_layers - 1);
  if (layer >= model.head.num_layers) throw std::invalid_argument(fmt::format("no decoder layer {}", layer));
  EvalRun run;
  std::vector<eval::Detection> gts;
  std::map<std::string, geometry::Rig> rigs;
  for (const auto& s : scenes) {
    const auto name = scene_name(s);
    const auto outs = infer(model, s);
    auto dets = detections(outs[layer], name);
    run.predictions += dets.size();
    if (opts.with_nms) {
      const auto kept = nms::nms_global(scored_boxes(outs[layer], s.rig), opts.nms_iou);
      dets.clear();
      for (const auto& b : kept)
        dets.push_back({name, b.label, b.box, b.score, synth::attribute_for_velocity(b.box.velocity)});
    }
    run.kept += dets.size();
    run.detections.insert(run.detections.end(), dets.begin(), dets.end());
    const auto g = gt_detections(s);
    gts.insert(gts.end(), g.begin(), g.end());
    rigs[name] = s.rig;
  }
  eval::EvalOptions eo;
  if (opts.overlap_only) eo.overlap_rigs = &rigs;
  run.report = eval::evaluate(run.detections, gts, eval_config(classes), eo);
  run.subset_empty = opts.overlap_only && run.report.gt_evaluated == 0;
  return run;
}

LayerStats evaluate_layers(Model& model, std::span<const synth::Scene> scenes, const std::vector<std::string>& classes,
                           const loss::LossConfig& loss_cfg) {
  check_classes(model, classes);
  const std::size_t layers = model.head.num_layers;
  std::vector<std::vector<eval::Detection>> dets(layers);
  std::vector<eval::Detection> gts;
  std::vector<double> l1_sum(layers, 0.0);
  std::size_t matched = 0;
  for (const auto& s : scenes) {
    diff::Graph g(false);
    std::vector<diff::Tensor> images;
    for (const auto& img : s.images) images.push_back(synth::to_tensor(img));
    const auto preds = head::forward(g, images, s.rig, model.params, model.head);
    const auto name = scene_name(s);
    for (std::size_t l = 0; l < layers; ++l) {
      const auto d = detections(preds[l].to_output(), name);
      dets[l].insert(dets[l].end(), d.begin(), d.end());
    }
    const auto gt = ground_truth(s);
    if (!gt.boxes.empty()) {
      const auto lb = loss::set_loss(preds, gt, loss_cfg);
      for (std::size_t l = 0; l < layers; ++l) l1_sum[l] += lb.matched_l1[l] * static_cast<double>(gt.boxes.size());
      matched += gt.boxes.size();
    }
    const auto gd = gt_detections(s);
    gts.insert(gts.end(), gd.begin(), gd.end());
  }
  LayerStats out;
  for (std::size_t l = 0; l < layers; ++l) {
    out.reports.push_back(eval::evaluate(dets[l], gts, eval_config(classes)));
    out.matched_l1.push_back(matched ? l1_sum[l] / static_cast<double>(matched) : 0.0);
  }
  return out;
}

std::string eval_summary(const EvalRun& run, const EvalOptions& opts) {
  std::string s;
  if (opts.overlap_only) {
    s += fmt::format("overlap-only: {} of {} ground truths evaluated, {} predictions ignored\n",
                     run.report.gt_evaluated, run.report.gt_total, run.report.preds_dropped);
    if (run.subset_empty) s += "warning: the overlap subset is empty; NDS is undefined\n";
  }
  if (opts.with_nms)
    s += fmt::format("nms (iou {}): {} -> {} predictions\n", opts.nms_iou, run.predictions, run.kept);
  s += eval::format_report(run.report);
  return s;
}

std::string eval_json(const EvalRun& run, const EvalOptions& opts) {
  auto j = nlohmann::json::parse(eval::report_json(run.report));
  j["predictions"] = run.predictions;
  j["predictions_after_nms"] = run.kept;
  j["with_nms"] = opts.with_nms;
  j["nds_defined"] = !run.subset_empty;
  if (run.subset_empty) j["NDS"] = nullptr;
  return j.dump(2) + "\n";
}

std::vector<nms::ScoredBox> scored_boxes(const head::LayerOutput& out, const geometry::Rig& rig) {
  std::vector<nms::ScoredBox> boxes;
  for (const auto& d : detections(out, "")) {
    nms::ScoredBox b;
    b.box = d.box;
    b.score = d.score;
    b.label = d.label;
    const int cam = nms::source_camera(rig, d.box.center);
    if (cam >= 0) b.source_camera = cam;
    boxes.push_back(b);
  }
  return boxes;
}

std::vector<nms::TimingReport> bench_model(Model& model, std::span<const synth::Scene> scenes, std::size_t repetitions,
                                           double iou) {
  return nms::bench(
      [&](std::size_t i) {
        const auto outs = infer(model, scenes[i]);
        return scored_boxes(outs.back(), scenes[i].rig);
      },
      scenes.size(), repetitions, iou);
}

}  // namespace mvdet::run
