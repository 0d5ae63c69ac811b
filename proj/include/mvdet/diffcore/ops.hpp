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

#include <span>

#include "mvdet/diffcore/graph.hpp"

namespace mvdet::diff {

enum class Unary { kRelu, kSigmoid, kExp, kLog, kAbs, kNeg, kSquare };
enum class Binary { kAdd, kSub, kMul };

// Elementwise ops. Binary ops broadcast with numpy rules.
Var elementwise(Unary kind, Var x);
Var elementwise(Binary kind, Var a, Var b);

inline Var relu(Var x) { return elementwise(Unary::kRelu, x); }
inline Var sigmoid(Var x) { return elementwise(Unary::kSigmoid, x); }
inline Var exp(Var x) { return elementwise(Unary::kExp, x); }
inline Var log(Var x) { return elementwise(Unary::kLog, x); }
inline Var abs(Var x) { return elementwise(Unary::kAbs, x); }
inline Var square(Var x) { return elementwise(Unary::kSquare, x); }
inline Var add(Var a, Var b) { return elementwise(Binary::kAdd, a, b); }
inline Var sub(Var a, Var b) { return elementwise(Binary::kSub, a, b); }
inline Var mul(Var a, Var b) { return elementwise(Binary::kMul, a, b); }

Var scale(Var x, double factor);
Var add_scalar(Var x, double offset);
// Sum of same-shaped tensors, accumulated left to right.
Var add_n(std::span<const Var> terms);

// [n,k] x [k,m] -> [n,m]
Var matmul(Var a, Var b);
// x [n,k] W [k,m] + b [m]
Var linear(Var x, Var weight, Var bias);
Var transpose(Var a);

Var sum(Var x);
Var mean(Var x);

// Normalizes over the last dimension, then applies gain/bias of that length.
Var layer_norm(Var x, Var gain, Var bias, double eps);
// Max-subtracted softmax along `axis` (negative counts from the back).
Var softmax(Var x, int axis);

Var reshape(Var x, Shape shape);
// Columns [begin, end) of a rank-2 tensor.
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var concat_cols(std::span<const Var> parts);
Var gather_rows(Var x, std::span<const std::size_t> rows);

// Clamps column j of a rank-2 tensor into [lo[j], hi[j]]; zero gradient where
// the bound is active.
Var clamp_cols(Var x, std::span<const double> lo, std::span<const double> hi);
// Wraps angles into (-pi, pi]. Gradient is 1 everywhere.
Var wrap_angle(Var x);

// Convolution over an HWC image: x [H,W,Cin], weight [k,k,Cin,Cout],
// bias [Cout], zero padding. Output [Ho,Wo,Cout] with
// Ho = (H + 2*pad - k) / stride + 1.
Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad);

// Test hook: when enabled, layer_norm's backward scales its input gradient
// by (1 + 1e-2). Used as a negative control for gradient checking.
void set_layer_norm_backward_fault(bool enabled);
bool layer_norm_backward_fault();

}  // namespace mvdet::diff
