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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mvdet/diffcore/graph.hpp"
#include "mvdet/diffcore/optim.hpp"
#include "mvdet/eval.hpp"
#include "mvdet/head.hpp"
#include "mvdet/loss.hpp"
#include "mvdet/nms.hpp"
#include "mvdet/synth.hpp"

namespace mvdet::run {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Everything a training run depends on. Text form: one `key = value` per
// line, `#` starts a comment, vectors are space separated. Keys:
//
//   layers queries hidden heads classes stem_channels layer_norm_eps
//   bounds_lo bounds_hi                        3 reals each
//   box_weight focal_alpha focal_gamma l1_weights (9 reals)
//   lr lr_decay milestones (ascending step indices; empty = 60% and 90%)
//   weight_decay beta1 beta2 adam_eps grad_clip (global norm, 0 = off)
//   steps batch_size (scenes per step, gradients averaged) seed dataset
//   output_dir
//   augment_rotation (0/1): turn each training scene about the vertical axis
//   by a seeded random angle
//
// Relative paths are resolved against the config file's directory.
struct RunConfig {
  head::HeadConfig head = default_head();
  std::size_t stem_channels = 16;
  loss::LossConfig loss = default_loss();
  double lr = 1e-3;
  double lr_decay = 0.1;
  std::vector<std::uint64_t> milestones;
  diff::AdamWConfig adam;
  double grad_clip = 0.0;
  bool augment_rotation = true;
  std::uint64_t steps = 2000;
  std::uint64_t batch_size = 4;
  std::uint64_t seed = 0;
  std::filesystem::path dataset;
  std::filesystem::path output_dir = "run";

  static head::HeadConfig default_head();
  static loss::LossConfig default_loss();
  void validate() const;
  std::vector<std::uint64_t> resolved_milestones() const;
  double lr_at(std::uint64_t step) const;
};

// Applies one `key = value` assignment.
void set_option(RunConfig& cfg, std::string_view key, std::string_view value);
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);
std::string format_config(const RunConfig& cfg);

// FNV-1a over the fields that fix the parameter layout and the forward pass.
std::uint64_t architecture_hash(const head::HeadConfig& head, std::size_t stem_channels);

struct Model {
  head::HeadConfig head;
  std::size_t stem_channels = 16;
  diff::ParameterSet params;

  std::uint64_t hash() const { return architecture_hash(head, stem_channels); }
};

Model make_model(const head::HeadConfig& head, std::size_t stem_channels, std::uint64_t seed);

// Checkpoint = parameters + "meta.arch" + "meta.step", optionally the
// optimizer moments.
void save_model(const std::filesystem::path& path, const Model& model, std::uint64_t step,
                const diff::AdamW* optimizer = nullptr);
struct LoadedModel {
  Model model;
  std::uint64_t step = 0;
  diff::Checkpoint checkpoint;
};
LoadedModel load_model(const std::filesystem::path& path);

struct Dataset {
  std::filesystem::path root;
  synth::Manifest manifest;
  std::vector<synth::Scene> train;
  std::vector<synth::Scene> val;
};
Dataset load_dataset(const std::filesystem::path& manifest_path, bool with_train = true, bool with_val = true);

std::string scene_name(const synth::Scene& s);
loss::GroundTruth ground_truth(const synth::Scene& s);
std::vector<eval::Detection> gt_detections(const synth::Scene& s);
// One detection per query: label and score from the most likely class,
// attribute from the predicted speed.
std::vector<eval::Detection> detections(const head::LayerOutput& out, const std::string& scene);

// Mean set loss over scenes, no augmentation, no gradients.
double mean_loss(Model& model, const std::vector<synth::Scene>& scenes, const loss::LossConfig& cfg);

// Inference: one output per decoder layer.
std::vector<head::LayerOutput> infer(Model& model, const synth::Scene& scene);

struct TrainOptions {
  std::optional<std::filesystem::path> resume;
  // Stop after this step count even if cfg.steps is larger (0 = no limit);
  // used to simulate an interrupted run.
  std::uint64_t stop_after = 0;
  std::ostream* progress = nullptr;
  // Called after every optimizer update with the number of updates done.
  std::function<void(std::uint64_t, Model&)> on_step;
};

struct TrainResult {
  std::vector<double> losses;  // one per step run in this invocation
  std::filesystem::path final_checkpoint;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Writes <output_dir>/loss.csv, <output_dir>/epoch_<e>.ckpt after every pass
// over the training scenes, and <output_dir>/final.ckpt.
TrainResult train(const RunConfig& cfg, const TrainOptions& opts = {});

struct EvalOptions {
  bool overlap_only = false;
  bool with_nms = false;
  double nms_iou = 0.5;
  // Decoder layer to read predictions from; defaults to the last.
  std::optional<std::size_t> layer;
};

struct EvalRun {
  eval::EvalReport report;
  std::size_t predictions = 0;  // before NMS
  std::size_t kept = 0;         // after NMS (equal without it)
  std::vector<eval::Detection> detections;
  bool subset_empty = false;  // overlap-only found no ground truth
};

EvalRun evaluate_model(Model& model, std::span<const synth::Scene> scenes, const std::vector<std::string>& classes,
                       const EvalOptions& opts);

// Per-layer evaluation from a single forward pass per scene.
struct LayerStats {
  std::vector<eval::EvalReport> reports;
  // Mean Hungarian-matched L1 (loss assignment) per layer.
  std::vector<double> matched_l1;
};
LayerStats evaluate_layers(Model& model, std::span<const synth::Scene> scenes, const std::vector<std::string>& classes,
                           const loss::LossConfig& loss_cfg);

std::string eval_summary(const EvalRun& run, const EvalOptions& opts);
std::string eval_json(const EvalRun& run, const EvalOptions& opts);

std::vector<nms::ScoredBox> scored_boxes(const head::LayerOutput& out, const geometry::Rig& rig);
std::vector<nms::TimingReport> bench_model(Model& model, std::span<const synth::Scene> scenes, std::size_t repetitions,
                                           double iou);

struct GradCheckOptions {
  int cameras = 2;
  std::size_t queries = 4;
  std::size_t hidden = 16;
  std::size_t layers = 2;
  int height = 32;
  int width = 64;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::size_t coords_per_param = 6;
  std::uint64_t seed = 1;
  // Negative control: perturbs the layer-norm backward pass.
  bool corrupt_backward = false;
};

struct GradCheckEntry {
  std::string name;  // "op:<name>" or a parameter name
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool pass = false;
};

GradCheckReport run_gradcheck(const GradCheckOptions& opts);
std::string gradcheck_text(const GradCheckReport& r);
std::string gradcheck_json(const GradCheckReport& r);

struct RenderOptions {
  bool per_layer = false;
  double score_threshold = 0.3;
  int bev_pixels = 480;
};

// Pixel positions the overlay uses for the corners of `box` in `cam`;
// corners at or behind the camera are skipped.
std::vector<std::array<int, 2>> overlay_corners(const geometry::CameraMatrix& cam, const Box3D& box);

// Writes bev.ppm (or bev_layer<l>.ppm for every layer) and cam<k>.ppm.
// Returns the written paths.
std::vector<std::filesystem::path> render_scene(Model& model, const synth::Scene& scene,
                                                const std::filesystem::path& out_dir, const RenderOptions& opts);

}  // namespace mvdet::run
