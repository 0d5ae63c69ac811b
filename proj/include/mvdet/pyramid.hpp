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
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mvdet/diffcore/graph.hpp"

namespace mvdet::pyramid {

inline constexpr std::size_t kNumLevels = 4;
// Input sides must be multiples of this (the first level is at stride 8).
inline constexpr std::size_t kSizeMultiple = 8;

struct EncoderConfig {
  std::size_t channels = 32;       // every pyramid level
  std::size_t stem_channels = 16;  // the first two stem convolutions
};

// [H,W,C] per level, level 0 at 1/8 of the input.
using FeaturePyramid = std::array<diff::Var, kNumLevels>;

// Registers encoder.convN.{weight,bias}. Weights are He-uniform, biases zero.
void init_encoder(diff::ParameterSet& params, const EncoderConfig& cfg, std::mt19937_64& rng);

// Level sizes for an input side length.
std::array<std::size_t, kNumLevels> level_sizes(std::size_t side);

// Images are [H,W,3] with values already scaled. Throws diff::ShapeError for
// mismatched sizes or sides that are not multiples of 8.
std::vector<FeaturePyramid> encode(diff::Graph& g, std::span<const diff::Tensor> images,
                                   diff::ParameterSet& params);

// Align-corners bilinear lookup of one [H,W,C] map at uv in [-1,1]^2.
// uv outside the square is clamped to the border and counted.
void bilinear_lookup(const diff::Tensor& fm, double u, double v, std::span<double> out);

// Samples `fm` [H,W,C] at each row of `uv` [M,2]. Rows with mask 0 produce
// zeros and receive no gradient.
diff::Var bilinear_sample(diff::Var fm, diff::Var uv, std::span<const unsigned char> mask);

// Number of clamped out-of-range samples since start (or the last reset).
std::uint64_t out_of_range_samples();
void reset_out_of_range_samples();

}  // namespace mvdet::pyramid
