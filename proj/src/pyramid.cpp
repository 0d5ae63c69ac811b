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

#include "mvdet/pyramid.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "mvdet/diffcore/ops.hpp"

namespace mvdet::pyramid {
namespace {

std::atomic<std::uint64_t> g_out_of_range{0};

// Convolutions: three stride-2 stem convs (the last one is level 0), then one
// stride-2 conv per further level.
constexpr std::size_t kNumConvs = 6;

std::string conv_name(std::size_t i, const char* what) {
  return "encoder.conv" + std::to_string(i) + "." + what;
}

struct Cell {
  std::size_t x0, y0, x1, y1;
  double fx, fy;
  double dx_du, dy_dv;  // zero when clamped or degenerate
};

Cell locate(std::size_t h, std::size_t w, double u, double v) {
  bool clamped = false;
  auto clamp_unit = [&clamped](double t) {
    if (t < -1.0 || t > 1.0 || std::isnan(t)) {
      clamped = true;
      return std::isnan(t) ? 0.0 : std::clamp(t, -1.0, 1.0);
    }
    return t;
  };
  const double uc = clamp_unit(u), vc = clamp_unit(v);
  if (clamped) g_out_of_range.fetch_add(1, std::memory_order_relaxed);

  Cell c{};
  auto axis = [](double t, std::size_t n, std::size_t& i0, std::size_t& i1, double& f, double& d) {
    if (n == 1) {
      i0 = i1 = 0;
      f = 0.0;
      d = 0.0;
      return;
    }
    const double x = (t + 1.0) / 2.0 * static_cast<double>(n - 1);
    i0 = std::min(static_cast<std::size_t>(std::floor(x)), n - 2);
    i1 = i0 + 1;
    f = x - static_cast<double>(i0);
    d = static_cast<double>(n - 1) / 2.0;
  };
  axis(uc, w, c.x0, c.x1, c.fx, c.dx_du);
  axis(vc, h, c.y0, c.y1, c.fy, c.dy_dv);
  if (u < -1.0 || u > 1.0) c.dx_du = 0.0;
  if (v < -1.0 || v > 1.0) c.dy_dv = 0.0;
  return c;
}

void interpolate(const diff::Tensor& fm, const Cell& cell, std::span<double> out) {
  const std::size_t w = fm.dim(1), c = fm.dim(2);
  const auto d = fm.data();
  const double w00 = (1 - cell.fx) * (1 - cell.fy), w01 = cell.fx * (1 - cell.fy);
  const double w10 = (1 - cell.fx) * cell.fy, w11 = cell.fx * cell.fy;
  const double* p00 = &d[(cell.y0 * w + cell.x0) * c];
  const double* p01 = &d[(cell.y0 * w + cell.x1) * c];
  const double* p10 = &d[(cell.y1 * w + cell.x0) * c];
  const double* p11 = &d[(cell.y1 * w + cell.x1) * c];
  for (std::size_t k = 0; k < c; ++k) out[k] = w00 * p00[k] + w01 * p01[k] + w10 * p10[k] + w11 * p11[k];
}

}  // namespace

std::uint64_t out_of_range_samples() { return g_out_of_range.load(); }
void reset_out_of_range_samples() { g_out_of_range.store(0); }

void init_encoder(diff::ParameterSet& params, const EncoderConfig& cfg, std::mt19937_64& rng) {
  if (cfg.channels == 0 || cfg.stem_channels == 0) throw std::invalid_argument("encoder channels must be positive");
  const std::array<std::size_t, kNumConvs + 1> ch = {3, cfg.stem_channels, cfg.stem_channels, cfg.channels,
                                                     cfg.channels, cfg.channels, cfg.channels};
  for (std::size_t i = 0; i < kNumConvs; ++i) {
    const std::size_t cin = ch[i], cout = ch[i + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(9 * cin));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(9 * cin * cout);
    for (double& x : w) x = dist(rng);
    params.add(conv_name(i, "weight"), diff::Tensor({3, 3, cin, cout}, std::move(w)));
    params.add(conv_name(i, "bias"), diff::Tensor::zeros({cout}));
  }
}

std::array<std::size_t, kNumLevels> level_sizes(std::size_t side) {
  std::array<std::size_t, kNumLevels> out{};
  std::size_t s = side / kSizeMultiple;
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    out[l] = s;
    s = (s + 1) / 2;
  }
  return out;
}

std::vector<FeaturePyramid> encode(diff::Graph& g, std::span<const diff::Tensor> images,
                                   diff::ParameterSet& params) {
  std::vector<FeaturePyramid> out;
  if (images.empty()) return out;
  const diff::Shape& s0 = images[0].shape();
  if (s0.size() != 3 || s0[2] != 3) {
    throw diff::ShapeError("encode expects [H,W,3] images, got " + diff::shape_string(s0));
  }
  if (s0[0] == 0 || s0[1] == 0 || s0[0] % kSizeMultiple != 0 || s0[1] % kSizeMultiple != 0) {
    throw diff::ShapeError("image size " + diff::shape_string(s0) + " is not a multiple of 8");
  }
  std::array<diff::Var, kNumConvs> w, b;
  for (std::size_t i = 0; i < kNumConvs; ++i) {
    w[i] = g.param(params.get(conv_name(i, "weight")));
    b[i] = g.param(params.get(conv_name(i, "bias")));
  }
  for (const auto& img : images) {
    if (img.shape() != s0) throw diff::ShapeError("all images must share one size");
    diff::Var x = g.constant(img);
    FeaturePyramid pyr;
    for (std::size_t i = 0; i < kNumConvs; ++i) {
      x = diff::relu(diff::conv2d(x, w[i], b[i], 2, 1));
      if (i >= 2) pyr[i - 2] = x;
    }
    out.push_back(pyr);
  }
  return out;
}

void bilinear_lookup(const diff::Tensor& fm, double u, double v, std::span<double> out) {
  interpolate(fm, locate(fm.dim(0), fm.dim(1), u, v), out);
}

diff::Var bilinear_sample(diff::Var fm, diff::Var uv, std::span<const unsigned char> mask) {
  const auto& f = fm.value();
  const auto& q = uv.value();
  if (f.rank() != 3) throw diff::ShapeError("bilinear_sample expects [H,W,C] map, got " + diff::shape_string(f.shape()));
  if (q.rank() != 2 || q.dim(1) != 2) throw diff::ShapeError("bilinear_sample expects [M,2] uv");
  const std::size_t m = q.dim(0), h = f.dim(0), w = f.dim(1), c = f.dim(2);
  if (mask.size() != m) throw diff::ShapeError("bilinear_sample mask length mismatch");

  std::vector<Cell> cells(m);
  std::vector<double> y(m * c, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (!mask[i]) continue;
    cells[i] = locate(h, w, q[i * 2], q[i * 2 + 1]);
    interpolate(f, cells[i], std::span<double>(&y[i * c], c));
  }
  diff::Graph& g = fm.graph();
  const std::uint32_t fid = fm.id(), uid = uv.id();
  std::vector<unsigned char> active(mask.begin(), mask.end());
  return g.record(
      diff::Tensor({m, c}, std::move(y)), {fm, uv},
      [fid, uid, m, w, c, cells = std::move(cells), active = std::move(active)](
          diff::Graph& gr, std::span<const double> gy) {
        auto gf = gr.grad_buffer(fid);
        auto gu = gr.grad_buffer(uid);
        const auto d = gr.value(fid).data();
        for (std::size_t i = 0; i < m; ++i) {
          if (!active[i]) continue;
          const Cell& cl = cells[i];
          const double* go = &gy[i * c];
          const std::size_t o00 = (cl.y0 * w + cl.x0) * c, o01 = (cl.y0 * w + cl.x1) * c;
          const std::size_t o10 = (cl.y1 * w + cl.x0) * c, o11 = (cl.y1 * w + cl.x1) * c;
          if (!gf.empty()) {
            const double w00 = (1 - cl.fx) * (1 - cl.fy), w01 = cl.fx * (1 - cl.fy);
            const double w10 = (1 - cl.fx) * cl.fy, w11 = cl.fx * cl.fy;
            for (std::size_t k = 0; k < c; ++k) {
              gf[o00 + k] += w00 * go[k];
              gf[o01 + k] += w01 * go[k];
              gf[o10 + k] += w10 * go[k];
              gf[o11 + k] += w11 * go[k];
            }
          }
          if (!gu.empty()) {
            double du = 0.0, dv = 0.0;
            for (std::size_t k = 0; k < c; ++k) {
              const double a = d[o00 + k], b = d[o01 + k], e = d[o10 + k], f = d[o11 + k];
              du += go[k] * ((1 - cl.fy) * (b - a) + cl.fy * (f - e));
              dv += go[k] * ((1 - cl.fx) * (e - a) + cl.fx * (f - b));
            }
            gu[i * 2] += du * cl.dx_du;
            gu[i * 2 + 1] += dv * cl.dy_dv;
          }
        }
      });
}

}  // namespace mvdet::pyramid
