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

// mvdet: dataset generation, training, evaluation, benchmarking, gradient
// checking and rendering. Exit codes: 0 ok, 1 runtime failure, 2 usage.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <fstream>
#include <iostream>

#include "mvdet/run.hpp"

namespace {

using namespace mvdet;
namespace fs = std::filesystem;

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

// Seeds of split `which` (0 train, 1 val): disjoint blocks per base seed.
constexpr std::uint64_t kSeedBlock = 1'000'000;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

struct GenArgs {
  fs::path out = "data";
  std::uint64_t scenes = 100, val_scenes = 0, seed = 0;
  synth::SceneSpec spec;
};

int cmd_gen(const GenArgs& a) {
  try {
    a.spec.validate();
  } catch (const std::invalid_argument& e) {
    throw run::ConfigError(e.what());
  }
  if (a.scenes >= kSeedBlock / 2 || a.val_scenes >= kSeedBlock / 2)
    throw std::invalid_argument("too many scenes per split");
  std::vector<std::uint64_t> train, val;
  for (std::uint64_t i = 0; i < a.scenes; ++i) train.push_back(a.seed * kSeedBlock + i);
  for (std::uint64_t i = 0; i < a.val_scenes; ++i) val.push_back(a.seed * kSeedBlock + kSeedBlock / 2 + i);
  const auto m = synth::gen_split(a.spec, train, val, a.out);
  std::cout << fmt::format("wrote {} train and {} val scenes to {}\n", m.train.size(), m.val.size(), a.out.string());
  return kOk;
}

struct TrainArgs {
  fs::path config;
  std::optional<fs::path> resume;
  std::vector<std::string> overrides;
  std::uint64_t stop_after = 0;
};

int cmd_train(const TrainArgs& a) {
  auto cfg = run::load_config(a.config);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw run::ConfigError("--set expects key=value, got " + kv);
    run::set_option(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  std::filesystem::create_directories(cfg.output_dir);
  write_text(cfg.output_dir / "config.txt", run::format_config(cfg));
  run::TrainOptions opts;
  opts.resume = a.resume;
  opts.stop_after = a.stop_after;
  opts.progress = &std::cout;
  const auto r = run::train(cfg, opts);
  std::cout << "checkpoint: " << r.final_checkpoint.string() << "\n";
  return kOk;
}

struct EvalArgs {
  fs::path checkpoint, dataset, out;
  std::optional<fs::path> config;
  std::string split = "val";
  run::EvalOptions opts;
  std::optional<std::size_t> layer;
  bool all_layers = false;
};

int cmd_eval(EvalArgs a) {
  auto loaded = run::load_model(a.checkpoint);
  if (a.config) {
    const auto cfg = run::load_config(*a.config);
    if (run::architecture_hash(cfg.head, cfg.stem_channels) != loaded.model.hash())
      throw std::runtime_error("checkpoint does not match the head described by " + a.config->string());
  }
  const bool val = a.split == "val";
  const auto data = run::load_dataset(a.dataset, !val, val);
  const auto& scenes = val ? data.val : data.train;
  a.opts.layer = a.layer;
  if (a.all_layers) {
    const auto stats = run::evaluate_layers(loaded.model, scenes, data.manifest.classes, {});
    std::string s = "layer  mAP     NDS     matched-L1\n";
    for (std::size_t l = 0; l < stats.reports.size(); ++l)
      s += fmt::format("{:<6} {:.4f}  {:.4f}  {:.4f}\n", l, stats.reports[l].map, stats.reports[l].nds,
                       stats.matched_l1[l]);
    std::cout << s;
    if (!a.out.empty()) {
      fs::create_directories(a.out);
      write_text(a.out / "layers.txt", s);
    }
    return kOk;
  }
  const auto r = run::evaluate_model(loaded.model, scenes, data.manifest.classes, a.opts);
  const auto text = run::eval_summary(r, a.opts);
  std::cout << text;
  if (r.subset_empty) std::cerr << "warning: no ground truth in the evaluated subset\n";
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text(a.out / "report.txt", text);
    write_text(a.out / "report.json", run::eval_json(r, a.opts));
    std::ofstream det(a.out / "detections.txt");
    eval::write_detections(det, r.detections, data.manifest.classes);
  }
  return kOk;
}

struct BenchArgs {
  fs::path checkpoint, dataset, out;
  std::size_t reps = 3, scenes = 0;
  double iou = 0.5;
};

int cmd_bench(const BenchArgs& a) {
  auto loaded = run::load_model(a.checkpoint);
  const auto data = run::load_dataset(a.dataset, false, true);
  std::span<const synth::Scene> scenes = data.val;
  if (scenes.empty()) throw std::runtime_error("dataset has no validation scenes");
  if (a.scenes > 0 && a.scenes < scenes.size()) scenes = scenes.first(a.scenes);
  const auto reports = run::bench_model(loaded.model, scenes, a.reps, a.iou);
  std::cout << nms::format_timing(reports);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text(a.out / "timing.txt", nms::format_timing(reports));
    write_text(a.out / "timing.json", nms::timing_json(reports));
  }
  return kOk;
}

int cmd_gradcheck(const run::GradCheckOptions& o, const fs::path& json_out) {
  const auto r = run::run_gradcheck(o);
  std::cout << run::gradcheck_text(r);
  if (!json_out.empty()) write_text(json_out, run::gradcheck_json(r));
  return r.pass ? kOk : kFailure;
}

struct RenderArgs {
  fs::path checkpoint, scene, out = "render";
  run::RenderOptions opts;
};

int cmd_render(const RenderArgs& a) {
  auto loaded = run::load_model(a.checkpoint);
  const auto scene = synth::load_scene(a.scene);
  for (const auto& p : run::render_scene(loaded.model, scene, a.out, a.opts)) std::cout << p.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mvdet: multi-view 3D detection with a set-prediction head"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a synthetic dataset");
  g->add_option("--out", gen.out, "output directory")->capture_default_str();
  g->add_option("--scenes", gen.scenes, "training scenes")->capture_default_str();
  g->add_option("--val-scenes", gen.val_scenes, "held-out scenes")->capture_default_str();
  g->add_option("--seed", gen.seed, "base seed")->capture_default_str();
  g->add_option("--cameras", gen.spec.num_cameras)->capture_default_str();
  g->add_option("--width", gen.spec.width)->capture_default_str();
  g->add_option("--height", gen.spec.height)->capture_default_str();
  g->add_option("--min-objects", gen.spec.min_objects)->capture_default_str();
  g->add_option("--max-objects", gen.spec.max_objects)->capture_default_str();
  g->add_option("--classes", gen.spec.num_classes)->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model from a config file");
  t->add_option("config", tr.config, "config file")->required()->check(CLI::ExistingFile);
  t->add_option("--resume", tr.resume, "continue from a checkpoint");
  t->add_option("--set", tr.overrides, "override a config key (key=value)");
  t->add_option("--stop-after", tr.stop_after, "stop once this many steps are done");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--dataset", ev.dataset, "manifest.json")->required();
  e->add_option("--config", ev.config, "refuse checkpoints whose head differs from this config");
  e->add_option("--split", ev.split)->check(CLI::IsMember({"train", "val"}))->capture_default_str();
  e->add_flag("--overlap-only", ev.opts.overlap_only, "only ground truths seen by two or more cameras");
  e->add_flag("--with-nms", ev.opts.with_nms, "apply global BEV NMS before scoring");
  e->add_option("--nms-iou", ev.opts.nms_iou)->capture_default_str();
  e->add_option("--layer", ev.layer, "decoder layer (default: last)");
  e->add_flag("--all-layers", ev.all_layers, "mAP, NDS and matched L1 for every layer");
  e->add_option("--out", ev.out, "directory for report files");

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "time inference with and without NMS");
  b->add_option("--checkpoint", be.checkpoint)->required();
  b->add_option("--dataset", be.dataset)->required();
  b->add_option("--reps", be.reps, "repetitions, the first is warm-up")->check(CLI::Range(3, 1000))->capture_default_str();
  b->add_option("--scenes", be.scenes, "limit the number of scenes (0 = all)");
  b->add_option("--iou", be.iou)->capture_default_str();
  b->add_option("--out", be.out);

  run::GradCheckOptions gc;
  fs::path gc_json;
  auto* c = app.add_subcommand("gradcheck", "finite-difference check of every op and the full loss");
  c->add_option("--cameras", gc.cameras)->capture_default_str();
  c->add_option("--queries", gc.queries)->capture_default_str();
  c->add_option("--hidden", gc.hidden)->capture_default_str();
  c->add_option("--layers", gc.layers)->capture_default_str();
  c->add_option("--height", gc.height)->capture_default_str();
  c->add_option("--width", gc.width)->capture_default_str();
  c->add_option("--step", gc.step)->capture_default_str();
  c->add_option("--tol", gc.tolerance)->capture_default_str();
  c->add_option("--coords", gc.coords_per_param, "coordinates sampled per parameter")->capture_default_str();
  c->add_option("--seed", gc.seed)->capture_default_str();
  c->add_option("--json", gc_json);
  c->add_flag("--corrupt-backward", gc.corrupt_backward, "negative control");

  RenderArgs re;
  auto* r = app.add_subcommand("render", "BEV and per-camera overlays of predictions and ground truth");
  r->add_option("--checkpoint", re.checkpoint)->required();
  r->add_option("--scene", re.scene)->required();
  r->add_option("--out", re.out)->capture_default_str();
  r->add_flag("--per-layer", re.opts.per_layer, "one BEV image per decoder layer");
  r->add_option("--threshold", re.opts.score_threshold, "minimum score drawn")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*b) return cmd_bench(be);
    if (*c) return cmd_gradcheck(gc, gc_json);
    if (*r) return cmd_render(re);
  } catch (const run::ConfigError& err) {
    std::cerr << "mvdet: config error: " << err.what() << "\n";
    return kUsage;
  } catch (const std::exception& err) {
    std::cerr << "mvdet: " << err.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
