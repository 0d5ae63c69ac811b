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

#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "mvdet/diffcore/checkpoint.hpp"
#include "mvdet/diffcore/ops.hpp"
#include "mvdet/pyramid.hpp"
#include "mvdet/run.hpp"

namespace mvdet::run {
namespace {

constexpr std::size_t kArchFields = 13;

std::vector<diff::Tensor> image_tensors(const synth::Scene& s) {
  std::vector<diff::Tensor> out;
  out.reserve(s.images.size());
  for (const auto& img : s.images) out.push_back(synth::to_tensor(img));
  return out;
}

double global_grad_norm(const diff::ParameterSet& params) {
  double s = 0;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (double g : params[i].grad) s += g * g;
  return std::sqrt(s);
}

std::string log_header(std::size_t layers) {
  std::string h = "step,lr,loss,cls,box";
  for (std::size_t l = 0; l < layers; ++l) h += fmt::format(",layer{}", l);
  return h;
}

}  // namespace

Model make_model(const head::HeadConfig& head, std::size_t stem_channels, std::uint64_t seed) {
  head.validate();
  Model m;
  m.head = head;
  m.stem_channels = stem_channels;
  std::mt19937_64 rng(seed);
  pyramid::init_encoder(m.params, {head.hidden, stem_channels}, rng);
  head::init_head(m.params, head, seed + 1);
  return m;
}

void save_model(const std::filesystem::path& path, const Model& model, std::uint64_t step,
                const diff::AdamW* optimizer) {
  diff::Checkpoint ck;
  ck.config_hash = model.hash();
  diff::store_parameters(model.params, ck);
  const auto& h = model.head;
  ck.put("meta.arch", diff::Tensor({kArchFields},
                                   {double(h.num_layers), double(h.num_queries), double(h.hidden), double(h.heads),
                                    double(h.num_classes), double(model.stem_channels), h.layer_norm_eps,
                                    h.bounds.lo[0], h.bounds.lo[1], h.bounds.lo[2], h.bounds.hi[0], h.bounds.hi[1],
                                    h.bounds.hi[2]}));
  ck.put("meta.step", diff::Tensor::scalar(static_cast<double>(step)));
  if (optimizer) optimizer->save_state(ck);
  diff::write_checkpoint(path, ck);
}

LoadedModel load_model(const std::filesystem::path& path) {
  LoadedModel out;
  out.checkpoint = diff::read_checkpoint(path);
  const auto* arch = out.checkpoint.find("meta.arch");
  const auto* step = out.checkpoint.find("meta.step");
  if (!arch || arch->size() != kArchFields || !step)
    throw diff::CheckpointError(path.string() + ": not a model checkpoint (meta records missing)");
  head::HeadConfig h;
  const auto a = arch->data();
  h.num_layers = static_cast<std::size_t>(a[0]);
  h.num_queries = static_cast<std::size_t>(a[1]);
  h.hidden = static_cast<std::size_t>(a[2]);
  h.heads = static_cast<std::size_t>(a[3]);
  h.num_classes = static_cast<std::size_t>(a[4]);
  h.layer_norm_eps = a[6];
  h.bounds.lo = {a[7], a[8], a[9]};
  h.bounds.hi = {a[10], a[11], a[12]};
  out.model = make_model(h, static_cast<std::size_t>(a[5]), 0);
  if (out.model.hash() != out.checkpoint.config_hash)
    throw diff::CheckpointError(path.string() + ": configuration hash does not match the stored architecture");
  diff::load_parameters(out.model.params, out.checkpoint);
  out.step = static_cast<std::uint64_t>(step->item());
  return out;
}

Dataset load_dataset(const std::filesystem::path& manifest_path, bool with_train, bool with_val) {
  if (!std::filesystem::exists(manifest_path))
    throw std::runtime_error("dataset manifest not found: " + manifest_path.string());
  Dataset d;
  d.root = manifest_path.parent_path();
  d.manifest = synth::load_manifest(manifest_path);
  if (with_train)
    for (const auto& e : d.manifest.train) d.train.push_back(synth::load_scene(d.root / e.file));
  if (with_val)
    for (const auto& e : d.manifest.val) d.val.push_back(synth::load_scene(d.root / e.file));
  return d;
}

std::string scene_name(const synth::Scene& s) { return fmt::format("scene_{}", s.seed); }

loss::GroundTruth ground_truth(const synth::Scene& s) {
  loss::GroundTruth gt;
  for (const auto& o : s.objects) {
    gt.boxes.push_back(o.box);
    gt.labels.push_back(o.label);
  }
  return gt;
}

std::vector<eval::Detection> gt_detections(const synth::Scene& s) {
  std::vector<eval::Detection> out;
  const auto name = scene_name(s);
  for (const auto& o : s.objects) out.push_back({name, o.label, o.box, 1.0, o.attribute});
  return out;
}

std::vector<eval::Detection> detections(const head::LayerOutput& out, const std::string& scene) {
  std::vector<eval::Detection> dets;
  const auto& logits = out.class_logits;
  const std::size_t k = logits.dim(1);
  for (std::size_t i = 0; i < out.boxes.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (logits.at(i, c) > logits.at(i, best)) best = c;
    const double score = 1.0 / (1.0 + std::exp(-logits.at(i, best)));
    dets.push_back({scene, static_cast<int>(best), out.boxes[i], score,
                    synth::attribute_for_velocity(out.boxes[i].velocity)});
  }
  return dets;
}

std::vector<head::LayerOutput> infer(Model& model, const synth::Scene& scene) {
  diff::Graph g(false);
  const auto images = image_tensors(scene);
  const auto preds = head::forward(g, images, scene.rig, model.params, model.head);
  std::vector<head::LayerOutput> out;
  for (const auto& p : preds) out.push_back(p.to_output());
  return out;
}

double mean_loss(Model& model, const std::vector<synth::Scene>& scenes, const loss::LossConfig& cfg) {
  if (scenes.empty()) return 0.0;
  double sum = 0;
  for (const auto& s : scenes) {
    diff::Graph g(false);
    const auto preds = head::forward(g, image_tensors(s), s.rig, model.params, model.head);
    sum += loss::set_loss(preds, ground_truth(s), cfg).total.value().item();
  }
  return sum / static_cast<double>(scenes.size());
}

TrainResult train(const RunConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (cfg.dataset.empty()) throw std::runtime_error("config has no dataset");
  const auto data = load_dataset(cfg.dataset, true, false);
  if (data.train.empty()) throw std::runtime_error("dataset has no training scenes");
  if (data.manifest.classes.size() != cfg.head.num_classes)
    throw std::runtime_error(fmt::format("dataset has {} classes, config expects {}", data.manifest.classes.size(),
                                         cfg.head.num_classes));
  std::filesystem::create_directories(cfg.output_dir);

  Model model = make_model(cfg.head, cfg.stem_channels, cfg.seed);
  diff::AdamW adam(model.params, cfg.adam);
  std::uint64_t start = 0;
  if (opts.resume) {
    auto loaded = load_model(*opts.resume);
    if (loaded.model.hash() != model.hash())
      throw std::runtime_error("resume checkpoint was trained with a different architecture");
    diff::load_parameters(model.params, loaded.checkpoint);
    adam.load_state(loaded.checkpoint);
    start = loaded.step;
  }

  // Rewrite the log so a resumed run continues it exactly.
  const auto log_path = cfg.output_dir / "loss.csv";
  std::vector<std::string> kept;
  if (start > 0 && std::filesystem::exists(log_path)) {
    std::ifstream in(log_path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (std::stoull(line.substr(0, line.find(','))) < start) kept.push_back(line);
    }
  }
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());
  log << log_header(cfg.head.num_layers) << "\n";
  for (const auto& l : kept) log << l << "\n";

  const std::size_t n = data.train.size();
  const std::uint64_t batch = cfg.batch_size;
  std::vector<std::size_t> order(n);
  std::uint64_t order_epoch = ~0ULL;
  // Samples are numbered step * batch + b; each epoch is one reshuffle.
  auto scene_for = [&](std::uint64_t sample) -> const synth::Scene& {
    const std::uint64_t epoch = sample / n;
    if (epoch != order_epoch) {
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ULL + epoch);
      std::shuffle(order.begin(), order.end(), rng);
      order_epoch = epoch;
    }
    return data.train[order[sample % n]];
  };

  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();
  std::uint64_t end = cfg.steps;
  if (opts.stop_after > 0) end = std::min(end, opts.stop_after);
  for (std::uint64_t step = start; step < end; ++step) {
    const double lr = cfg.lr_at(step);
    double total = 0, cls_part = 0, box_part = 0;
    std::vector<double> per_layer(cfg.head.num_layers, 0.0);
    for (std::uint64_t b = 0; b < batch; ++b) {
      const std::uint64_t sample = step * batch + b;
      const synth::Scene* picked = &scene_for(sample);
      synth::Scene turned;
      if (cfg.augment_rotation) {
        std::mt19937_64 rng(cfg.seed * 0xbf58476d1ce4e5b9ULL ^ (sample + 1) * 0x94d049bb133111ebULL);
        turned =
            synth::rotated(*picked, std::uniform_real_distribution<double>(-std::numbers::pi, std::numbers::pi)(rng));
        picked = &turned;
      }
      const synth::Scene& scene = *picked;
      diff::Graph g;
      loss::LossBreakdown lb;
      try {
        const auto images = image_tensors(scene);
        const auto preds = head::forward(g, images, scene.rig, model.params, model.head);
        lb = loss::set_loss(preds, ground_truth(scene), cfg.loss);
        if (batch > 1) lb.total = diff::scale(lb.total, 1.0 / static_cast<double>(batch));
        if (!std::isfinite(lb.total.value().item())) throw diff::DomainError("loss is not finite");
        g.backward(lb.total);
      } catch (const diff::DomainError& e) {
        throw NonFiniteLoss(fmt::format("non-finite value at step {} (scene {}): {}", step, scene.seed, e.what()));
      }
      const double w = 1.0 / static_cast<double>(batch);
      total += lb.total.value().item();
      cls_part += w * lb.cls_part;
      box_part += w * lb.box_part;
      for (std::size_t l = 0; l < per_layer.size(); ++l) per_layer[l] += w * lb.per_layer[l];
    }
    if (cfg.grad_clip > 0) {
      const double norm = global_grad_norm(model.params);
      if (!std::isfinite(norm)) throw NonFiniteLoss(fmt::format("non-finite gradient at step {}", step));
      if (norm > cfg.grad_clip) {
        const double s = cfg.grad_clip / norm;
        for (std::size_t i = 0; i < model.params.size(); ++i)
          for (double& gv : model.params[i].grad) gv *= s;
      }
    }
    adam.step(lr);
    model.params.zero_grad();

    if (opts.on_step) opts.on_step(step + 1, model);
    result.losses.push_back(total);
    log << fmt::format("{},{},{:.10g},{:.10g},{:.10g}", step, lr, total, cls_part, box_part);
    for (double v : per_layer) log << fmt::format(",{:.10g}", v);
    log << "\n";

    const std::uint64_t done = step + 1;
    if ((done * batch) / n != (step * batch) / n) {
      log.flush();
      save_model(cfg.output_dir / fmt::format("epoch_{}.ckpt", done * batch / n), model, done, &adam);
    }
    if (opts.progress && (done % 50 == 0 || done == end)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      *opts.progress << fmt::format("step {}/{} loss {:.4f} (cls {:.4f} box {:.4f}) lr {:g} {:.1f}s\n", done,
                                    cfg.steps, total, cls_part, box_part, lr, secs)
                     << std::flush;
    }
  }
  log.flush();
  result.final_checkpoint = cfg.output_dir / "final.ckpt";
  save_model(result.final_checkpoint, model, end, &adam);
  return result;
}

}  // namespace mvdet::run
