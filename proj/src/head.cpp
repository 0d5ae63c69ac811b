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

#include "mvdet/head.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "mvdet/diffcore/ops.hpp"

namespace mvdet::head {
namespace {

using diff::Var;

// Prior probability for the classification bias, so early focal loss is not
// dominated by easy negatives.
constexpr double kClassPrior = 0.01;

void add_linear(diff::ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                std::mt19937_64& rng, double gain = 1.0, double bias = 0.0, bool with_bias = true) {
  const double bound = gain / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(in * out);
  for (double& x : w) x = dist(rng);
  params.add(name + ".weight", diff::Tensor({in, out}, std::move(w)));
  if (with_bias) params.add(name + ".bias", diff::Tensor::full({out}, bias));
}

void add_norm(diff::ParameterSet& params, const std::string& name, std::size_t c) {
  params.add(name + ".gain", diff::Tensor::full({c}, 1.0));
  params.add(name + ".bias", diff::Tensor::zeros({c}));
}

Var dense(Var x, diff::ParameterSet& params, const std::string& name) {
  diff::Graph& g = x.graph();
  return diff::linear(x, g.param(params.get(name + ".weight")), g.param(params.get(name + ".bias")));
}

Var mlp(Var x, diff::ParameterSet& params, const std::string& name) {
  return dense(diff::relu(dense(x, params, name + ".fc1")), params, name + ".fc2");
}

Var norm(Var x, diff::ParameterSet& params, const std::string& name, double eps) {
  diff::Graph& g = x.graph();
  return diff::layer_norm(x, g.param(params.get(name + ".gain")), g.param(params.get(name + ".bias")), eps);
}

Var self_attention(Var x, diff::ParameterSet& params, const std::string& name, std::size_t heads) {
  const std::size_t c = x.shape()[1], d = c / heads;
  Var q = dense(x, params, name + ".proj_q");
  // No key bias: it shifts a whole score row and cancels in the softmax.
  Var k = diff::matmul(x, x.graph().param(params.get(name + ".proj_k.weight")));
  Var v = dense(x, params, name + ".proj_v");
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = diff::slice_cols(q, h * d, (h + 1) * d);
    Var kh = diff::slice_cols(k, h * d, (h + 1) * d);
    Var vh = diff::slice_cols(v, h * d, (h + 1) * d);
    Var a = diff::softmax(diff::scale(diff::matmul(qh, diff::transpose(kh)), scale), -1);
    outs.push_back(diff::matmul(a, vh));
  }
  Var o = heads == 1 ? outs[0] : diff::concat_cols(outs);
  return dense(o, params, name + ".proj_o");
}

}  // namespace

void HeadConfig::validate() const {
  if (num_layers < 1) throw std::invalid_argument("head needs at least one layer");
  if (num_queries < 1) throw std::invalid_argument("head needs at least one query");
  if (hidden < 1 || heads < 1 || hidden % heads != 0)
    throw std::invalid_argument("hidden size must be a positive multiple of the head count");
  if (num_classes < 1) throw std::invalid_argument("head needs at least one class");
  for (std::size_t i = 0; i < 3; ++i)
    if (!(bounds.hi[i] > bounds.lo[i])) throw std::invalid_argument("scene bounds are empty");
}

std::string layer_prefix(std::size_t layer) { return "head.layer" + std::to_string(layer); }

diff::Tensor init_queries(const HeadConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> q(cfg.num_queries * cfg.hidden);
  for (double& x : q) x = dist(rng);
  return diff::Tensor({cfg.num_queries, cfg.hidden}, std::move(q));
}

void init_head(diff::ParameterSet& params, const HeadConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t c = cfg.hidden;
  params.add("head.queries", init_queries(cfg, seed));
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  add_linear(params, "head.ref.fc1", c, c, rng);
  add_linear(params, "head.ref.fc2", c, 3, rng);
  const double cls_bias = -std::log((1.0 - kClassPrior) / kClassPrior);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string p = layer_prefix(l);
    add_linear(params, p + ".attn.proj_q", c, c, rng);
    add_linear(params, p + ".attn.proj_k", c, c, rng, 1.0, 0.0, false);
    add_linear(params, p + ".attn.proj_v", c, c, rng);
    add_linear(params, p + ".attn.proj_o", c, c, rng);
    add_norm(params, p + ".norm1", c);
    add_linear(params, p + ".ffn.fc1", c, 2 * c, rng);
    add_linear(params, p + ".ffn.fc2", 2 * c, c, rng);
    add_norm(params, p + ".norm2", c);
    add_linear(params, p + ".reg.fc1", c, c, rng);
    add_linear(params, p + ".reg.fc2", c, kBoxParams, rng, 0.1);
    add_linear(params, p + ".cls.fc1", c, c, rng);
    add_linear(params, p + ".cls.fc2", c, cfg.num_classes, rng, 1.0, cls_bias);
  }
}

Var decode_reference(Var q, diff::ParameterSet& params, const HeadConfig& cfg) {
  diff::Graph& g = q.graph();
  Var s = diff::sigmoid(mlp(q, params, "head.ref"));
  const auto& b = cfg.bounds;
  Var extent = g.constant(diff::Tensor({3}, {b.hi[0] - b.lo[0], b.hi[1] - b.lo[1], b.hi[2] - b.lo[2]}));
  Var lo = g.constant(diff::Tensor({3}, {b.lo[0], b.lo[1], b.lo[2]}));
  return diff::add(diff::mul(s, extent), lo);
}

Var gather_features(Var refs, std::span<const pyramid::FeaturePyramid> pyramids,
                    std::span<const geometry::CameraMatrix> rig) {
  if (pyramids.size() != rig.size()) throw diff::ShapeError("gather_features: camera count mismatch");
  if (rig.empty()) throw diff::ShapeError("gather_features: empty rig");
  diff::Graph& g = refs.graph();
  const std::size_t m = refs.shape()[0];
  std::vector<double> count(m, 0.0);
  std::vector<Var> terms;
  terms.reserve(rig.size() * pyramid::kNumLevels);
  std::vector<unsigned char> sigma;
  for (std::size_t cam = 0; cam < rig.size(); ++cam) {
    Var uv = geometry::project_points(refs, rig[cam], sigma);
    for (std::size_t i = 0; i < m; ++i) count[i] += sigma[i] ? 1.0 : 0.0;
    for (const Var& level : pyramids[cam]) terms.push_back(pyramid::bilinear_sample(level, uv, sigma));
  }
  std::vector<double> inv(m);
  for (std::size_t i = 0; i < m; ++i)
    inv[i] = 1.0 / (static_cast<double>(pyramid::kNumLevels) * count[i] + kFeatureEps);
  return diff::mul(diff::add_n(terms), g.constant(diff::Tensor({m, 1}, std::move(inv))));
}

Var refine_layer(Var q, std::span<const pyramid::FeaturePyramid> pyramids,
                 std::span<const geometry::CameraMatrix> rig, diff::ParameterSet& params, const HeadConfig& cfg,
                 std::size_t layer) {
  const std::string p = layer_prefix(layer);
  Var refs = decode_reference(q, params, cfg);
  Var x = diff::add(gather_features(refs, pyramids, rig), q);
  x = norm(diff::add(x, self_attention(x, params, p + ".attn", cfg.heads)), params, p + ".norm1",
           cfg.layer_norm_eps);
  x = norm(diff::add(x, mlp(x, params, p + ".ffn")), params, p + ".norm2", cfg.layer_norm_eps);
  return x;
}

LayerPrediction predict(Var q, diff::ParameterSet& params, const HeadConfig& cfg, std::size_t layer) {
  const std::string p = layer_prefix(layer);
  LayerPrediction out;
  out.reference = decode_reference(q, params, cfg);
  Var raw = mlp(q, params, p + ".reg");
  const auto& b = cfg.bounds;
  Var center = diff::clamp_cols(diff::add(out.reference, diff::slice_cols(raw, 0, 3)), b.lo, b.hi);
  Var size = diff::exp(diff::slice_cols(raw, 3, 6));
  Var yaw = diff::wrap_angle(diff::slice_cols(raw, 6, 7));
  Var vel = diff::slice_cols(raw, 7, 9);
  const std::array<Var, 4> parts{center, size, yaw, vel};
  out.boxes = diff::concat_cols(parts);
  out.logits = mlp(q, params, p + ".cls");
  return out;
}

std::vector<LayerPrediction> forward_from(Var queries, std::span<const pyramid::FeaturePyramid> pyramids,
                                          std::span<const geometry::CameraMatrix> rig, diff::ParameterSet& params,
                                          const HeadConfig& cfg) {
  cfg.validate();
  std::vector<LayerPrediction> out;
  out.reserve(cfg.num_layers);
  Var q = queries;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    q = refine_layer(q, pyramids, rig, params, cfg, l);
    out.push_back(predict(q, params, cfg, l));
  }
  return out;
}

std::vector<LayerPrediction> forward(diff::Graph& g, std::span<const diff::Tensor> images,
                                     std::span<const geometry::CameraMatrix> rig, diff::ParameterSet& params,
                                     const HeadConfig& cfg) {
  if (images.size() != rig.size()) throw diff::ShapeError("forward: image and camera counts differ");
  const auto pyramids = pyramid::encode(g, images, params);
  return forward_from(g.param(params.get("head.queries")), pyramids, rig, params, cfg);
}

LayerOutput LayerPrediction::to_output() const {
  LayerOutput out;
  const auto& b = boxes.value();
  const std::size_t m = b.dim(0);
  out.boxes.reserve(m);
  for (std::size_t i = 0; i < m; ++i) out.boxes.push_back(Box3D::from_array(b.data().subspan(i * kBoxParams, kBoxParams)));
  out.class_logits = logits.value();
  return out;
}

}  // namespace mvdet::head
