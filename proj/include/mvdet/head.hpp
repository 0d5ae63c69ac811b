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
#include <span>
#include <string>
#include <vector>

#include "mvdet/box.hpp"
#include "mvdet/diffcore/graph.hpp"
#include "mvdet/geometry.hpp"
#include "mvdet/pyramid.hpp"

namespace mvdet::head {

// Guard in the masked feature average.
inline constexpr double kFeatureEps = 1e-5;

struct HeadConfig {
  std::size_t num_layers = 6;
  std::size_t num_queries = 900;
  std::size_t hidden = 256;
  std::size_t heads = 8;
  std::size_t num_classes = 10;
  SceneBounds bounds;
  double layer_norm_eps = 1e-5;

  // Throws std::invalid_argument on a bad combination.
  void validate() const;
};

// Numeric view of one layer's predictions.
struct LayerOutput {
  std::vector<Box3D> boxes;
  diff::Tensor class_logits;  // [M*, num_classes]
};

// Graph view of one layer's predictions.
struct LayerPrediction {
  diff::Var reference;  // [M*,3]
  diff::Var boxes;      // [M*,9], decoded
  diff::Var logits;     // [M*,num_classes]

  LayerOutput to_output() const;
};

// Registers all head parameters:
//   head.queries                       [M*,C]
//   head.ref.fc{1,2}.{weight,bias}     shared across layers
//   head.layer<l>.attn.proj_{q,v,o}.{weight,bias}, proj_k.weight
//   head.layer<l>.norm{1,2}.{gain,bias}
//   head.layer<l>.ffn.fc{1,2}.{weight,bias}
//   head.layer<l>.reg.fc{1,2}.{weight,bias}
//   head.layer<l>.cls.fc{1,2}.{weight,bias}
void init_head(diff::ParameterSet& params, const HeadConfig& cfg, std::uint64_t seed);

// Initial query tensor: centered uniform in [-1, 1], fixed by seed.
diff::Tensor init_queries(const HeadConfig& cfg, std::uint64_t seed);

// Maps queries [M,C] to reference points [M,3] inside the scene bounds.
diff::Var decode_reference(diff::Var q, diff::ParameterSet& params, const HeadConfig& cfg);

// Masked average of bilinear samples over cameras and levels. refs [M,3] ->
// [M,C]. A point no camera sees gets the zero vector.
diff::Var gather_features(diff::Var refs, std::span<const pyramid::FeaturePyramid> pyramids,
                          std::span<const geometry::CameraMatrix> rig);

// One decoder layer: reference, feature gather, residual add, self-attention
// (post-norm), feed-forward (post-norm).
diff::Var refine_layer(diff::Var q, std::span<const pyramid::FeaturePyramid> pyramids,
                       std::span<const geometry::CameraMatrix> rig, diff::ParameterSet& params,
                       const HeadConfig& cfg, std::size_t layer);

LayerPrediction predict(diff::Var q, diff::ParameterSet& params, const HeadConfig& cfg, std::size_t layer);

// Encodes the images once, then runs every layer. Returns one prediction per
// layer; inference uses the last.
std::vector<LayerPrediction> forward(diff::Graph& g, std::span<const diff::Tensor> images,
                                     std::span<const geometry::CameraMatrix> rig, diff::ParameterSet& params,
                                     const HeadConfig& cfg);

// Same, starting from an explicit query tensor instead of head.queries.
std::vector<LayerPrediction> forward_from(diff::Var queries, std::span<const pyramid::FeaturePyramid> pyramids,
                                          std::span<const geometry::CameraMatrix> rig, diff::ParameterSet& params,
                                          const HeadConfig& cfg);

std::string layer_prefix(std::size_t layer);

}  // namespace mvdet::head
