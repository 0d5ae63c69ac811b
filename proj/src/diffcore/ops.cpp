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

#include "mvdet/diffcore/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <vector>

namespace mvdet::diff {
namespace {

std::atomic<bool> g_layer_norm_fault{false};

void require_rank(Var x, std::size_t rank, const char* op) {
  if (x.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(x.shape()));
  }
}

// Output shape plus per-dimension strides of each operand in output index
// space (0 along broadcast dimensions).
struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;
};

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

Broadcast make_broadcast(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Broadcast bc;
  bc.out.resize(r);
  bc.stride_a.assign(r, 0);
  bc.stride_b.assign(r, 0);
  const auto sa = contiguous_strides(a);
  const auto sb = contiguous_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    const bool in_a = i >= r - a.size();
    const bool in_b = i >= r - b.size();
    const std::size_t da = in_a ? a[i - (r - a.size())] : 1;
    const std::size_t db = in_b ? b[i - (r - b.size())] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    }
    bc.out[i] = std::max(da, db);
    if (in_a && da != 1) bc.stride_a[i] = sa[i - (r - a.size())];
    if (in_b && db != 1) bc.stride_b[i] = sb[i - (r - b.size())];
  }
  return bc;
}

// Calls f(out_index, a_index, b_index) for every output element in order.
template <class F>
void for_each_broadcast(const Broadcast& bc, std::size_t size_a, std::size_t size_b, F&& f) {
  const std::size_t n = shape_size(bc.out);
  if (size_a == n && size_b == n) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  if (size_a == n && size_b == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, std::size_t{0});
    return;
  }
  const std::size_t r = bc.out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += bc.stride_a[d];
      ib += bc.stride_b[d];
      if (idx[d] < bc.out[d]) break;
      ia -= bc.stride_a[d] * idx[d];
      ib -= bc.stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis out of range");
  return static_cast<std::size_t>(a);
}

}  // namespace

void set_layer_norm_backward_fault(bool enabled) { g_layer_norm_fault = enabled; }
bool layer_norm_backward_fault() { return g_layer_norm_fault; }

Var elementwise(Unary kind, Var x) {
  const auto xs = x.value().data();
  std::vector<double> out(xs.size());
  switch (kind) {
    case Unary::kRelu:
      for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] > 0 ? xs[i] : 0.0;
      break;
    case Unary::kSigmoid:
      for (std::size_t i = 0; i < xs.size(); ++i) out[i] = stable_sigmoid(xs[i]);
      break;
    case Unary::kExp:
      for (std::size_t i = 0; i < xs.size(); ++i) out[i] = std::exp(xs[i]);
      break;
    case Unary::kLog:
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!(xs[i] > 0)) throw DomainError("log of non-positive value");
        out[i] = std::log(xs[i]);
      }
      break;
    case Unary::kAbs:
      for (std::size_t i = 0; i < xs.size(); ++i) out[i] = std::fabs(xs[i]);
      break;
    case Unary::kNeg:
      for (std::size_t i = 0; i < xs.size(); ++i) out[i] = -xs[i];
      break;
    case Unary::kSquare:
      for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] * xs[i];
      break;
  }
  Graph& g = x.graph();
  const auto xid = x.id();
  const auto yid = g.next_id();
  return g.record(Tensor(x.shape(), std::move(out)), {x}, [kind, xid, yid](Graph& gr, std::span<const double> gy) {
    auto gx = gr.grad_buffer(xid);
    const auto xv = gr.value(xid).data();
    const auto yv = gr.value(yid).data();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      switch (kind) {
        case Unary::kRelu: gx[i] += xv[i] > 0 ? gy[i] : 0.0; break;
        case Unary::kSigmoid: gx[i] += gy[i] * yv[i] * (1.0 - yv[i]); break;
        case Unary::kExp: gx[i] += gy[i] * yv[i]; break;
        case Unary::kLog: gx[i] += gy[i] / xv[i]; break;
        case Unary::kAbs: gx[i] += xv[i] > 0 ? gy[i] : (xv[i] < 0 ? -gy[i] : 0.0); break;
        case Unary::kNeg: gx[i] -= gy[i]; break;
        case Unary::kSquare: gx[i] += 2.0 * xv[i] * gy[i]; break;
      }
    }
  });
}

Var elementwise(Binary kind, Var a, Var b) {
  const Broadcast bc = make_broadcast(a.shape(), b.shape());
  const auto av = a.value().data();
  const auto bv = b.value().data();
  std::vector<double> out(shape_size(bc.out));
  for_each_broadcast(bc, av.size(), bv.size(), [&](std::size_t i, std::size_t ia, std::size_t ib) {
    switch (kind) {
      case Binary::kAdd: out[i] = av[ia] + bv[ib]; break;
      case Binary::kSub: out[i] = av[ia] - bv[ib]; break;
      case Binary::kMul: out[i] = av[ia] * bv[ib]; break;
    }
  });
  const auto aid = a.id(), bid = b.id();
  return a.graph().record(
      Tensor(bc.out, std::move(out)), {a, b},
      [kind, aid, bid, bc](Graph& g, std::span<const double> gy) {
        auto ga = g.grad_buffer(aid);
        auto gb = g.grad_buffer(bid);
        const auto av = g.value(aid).data();
        const auto bv = g.value(bid).data();
        for_each_broadcast(bc, av.size(), bv.size(),
                           [&](std::size_t i, std::size_t ia, std::size_t ib) {
                             switch (kind) {
                               case Binary::kAdd:
                                 if (!ga.empty()) ga[ia] += gy[i];
                                 if (!gb.empty()) gb[ib] += gy[i];
                                 break;
                               case Binary::kSub:
                                 if (!ga.empty()) ga[ia] += gy[i];
                                 if (!gb.empty()) gb[ib] -= gy[i];
                                 break;
                               case Binary::kMul:
                                 if (!ga.empty()) ga[ia] += gy[i] * bv[ib];
                                 if (!gb.empty()) gb[ib] += gy[i] * av[ia];
                                 break;
                             }
                           });
      });
}

Var scale(Var x, double factor) {
  const auto xs = x.value().data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] * factor;
  const auto xid = x.id();
  return x.graph().record(Tensor(x.shape(), std::move(out)), {x},
                          [xid, factor](Graph& g, std::span<const double> gy) {
                            auto gx = g.grad_buffer(xid);
                            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * factor;
                          });
}

Var add_scalar(Var x, double offset) {
  const auto xs = x.value().data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] + offset;
  const auto xid = x.id();
  return x.graph().record(Tensor(x.shape(), std::move(out)), {x},
                          [xid](Graph& g, std::span<const double> gy) {
                            auto gx = g.grad_buffer(xid);
                            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
                          });
}

Var add_n(std::span<const Var> terms) {
  if (terms.empty()) throw ShapeError("add_n of nothing");
  const Shape& shape = terms[0].shape();
  std::vector<double> out(terms[0].value().data().begin(), terms[0].value().data().end());
  for (std::size_t t = 1; t < terms.size(); ++t) {
    if (terms[t].shape() != shape) throw ShapeError("add_n shape mismatch");
    const auto v = terms[t].value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  std::vector<std::uint32_t> ids;
  for (const Var& v : terms) ids.push_back(v.id());
  return terms[0].graph().record(Tensor(shape, std::move(out)), terms,
                                 [ids](Graph& g, std::span<const double> gy) {
                                   for (auto id : ids) {
                                     auto gx = g.grad_buffer(id);
                                     for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
                                   }
                                 });
}

Var matmul(Var a, Var b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul inner dimensions differ: " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const auto av = a.value().data();
  const auto bv = b.value().data();
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = &out[i * m];
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      const double* brow = &bv[p * m];
      for (std::size_t j = 0; j < m; ++j) orow[j] += s * brow[j];
    }
  }
  const auto aid = a.id(), bid = b.id();
  return a.graph().record(
      Tensor({n, m}, std::move(out)), {a, b},
      [aid, bid, n, k, m](Graph& g, std::span<const double> gy) {
        const auto av = g.value(aid).data();
        const auto bv = g.value(bid).data();
        if (auto ga = g.grad_buffer(aid); !ga.empty()) {
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              const double* brow = &bv[p * m];
              const double* grow = &gy[i * m];
              for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
              ga[i * k + p] += acc;
            }
          }
        }
        if (auto gb = g.grad_buffer(bid); !gb.empty()) {
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const double s = av[i * k + p];
              double* gbrow = &gb[p * m];
              const double* grow = &gy[i * m];
              for (std::size_t j = 0; j < m; ++j) gbrow[j] += s * grow[j];
            }
          }
        }
      });
}

Var linear(Var x, Var weight, Var bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const std::size_t m = weight.shape()[1];
  if (bias.size() != m) throw ShapeError("linear bias length mismatch");
  Var y = matmul(x, weight);
  return add(y, reshape(bias, {m}));
}

Var transpose(Var a) {
  require_rank(a, 2, "transpose");
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  const auto av = a.value().data();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = av[i * m + j];
  const auto aid = a.id();
  return a.graph().record(Tensor({m, n}, std::move(out)), {a},
                          [aid, n, m](Graph& g, std::span<const double> gy) {
                            auto ga = g.grad_buffer(aid);
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += gy[j * n + i];
                          });
}

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  const auto xid = x.id();
  return x.graph().record(Tensor::scalar(acc), {x}, [xid](Graph& g, std::span<const double> gy) {
    auto gx = g.grad_buffer(xid);
    for (double& v : gx) v += gy[0];
  });
}

Var mean(Var x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  if (x.shape().empty()) throw ShapeError("layer_norm needs rank >= 1");
  if (eps < 0) throw DomainError("layer_norm eps must be non-negative");
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d) throw ShapeError("layer_norm gain/bias length mismatch");
  const std::size_t rows = x.size() / d;
  const auto xv = x.value().data();
  const auto gv = gain.value().data();
  const auto bv = bias.value().data();
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xv[r * d];
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    if (!(var + eps > 0)) throw DomainError("layer_norm of constant input with eps = 0");
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mu) * inv;
      out[r * d + j] = gv[j] * xhat[r * d + j] + bv[j];
    }
  }
  const auto xid = x.id(), gid = gain.id(), bid = bias.id();
  return x.graph().record(
      Tensor(x.shape(), std::move(out)), {x, gain, bias},
      [xid, gid, bid, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Graph& g, std::span<const double> gy) {
        const auto gv = g.value(gid).data();
        auto gx = g.grad_buffer(xid);
        auto gg = g.grad_buffer(gid);
        auto gb = g.grad_buffer(bid);
        const double fault = g_layer_norm_fault ? 1.0 + 1e-2 : 1.0;
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = &gy[r * d];
          const double* xh = &xhat[r * d];
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            if (!gg.empty()) gg[j] += gr[j] * xh[j];
            if (!gb.empty()) gb[j] += gr[j];
            dxhat[j] = gr[j] * gv[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xh[j];
          }
          if (gx.empty()) continue;
          mean_d /= static_cast<double>(d);
          mean_dx /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            gx[r * d + j] += fault * inv_std[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
          }
        }
      });
}

Var softmax(Var x, int axis) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("softmax needs rank >= 1");
  const std::size_t ax = normalize_axis(axis, s.size());
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[ax];
  const auto xv = x.value().data();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
    }
  }
  const auto xid = x.id();
  const auto yid = x.graph().next_id();
  return x.graph().record(
      Tensor(s, std::move(out)), {x},
      [xid, yid, outer, inner, len](Graph& g, std::span<const double> gy) {
        auto gx = g.grad_buffer(xid);
        const auto yv = g.value(yid).data();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double dot = 0.0;
            for (std::size_t j = 0; j < len; ++j) dot += gy[base + j * inner] * yv[base + j * inner];
            for (std::size_t j = 0; j < len; ++j) {
              const std::size_t i = base + j * inner;
              gx[i] += yv[i] * (gy[i] - dot);
            }
          }
        }
      });
}

Var reshape(Var x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("cannot reshape " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  const auto xid = x.id();
  return x.graph().record(x.value().reshaped(std::move(shape)), {x},
                          [xid](Graph& g, std::span<const double> gy) {
                            auto gx = g.grad_buffer(xid);
                            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
                          });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_cols");
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  if (begin > end || end > m) throw ShapeError("slice_cols range out of bounds");
  const std::size_t w = end - begin;
  const auto xv = x.value().data();
  std::vector<double> out(n * w);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(&xv[i * m + begin], w, &out[i * w]);
  const auto xid = x.id();
  return x.graph().record(Tensor({n, w}, std::move(out)), {x},
                          [xid, n, m, w, begin](Graph& g, std::span<const double> gy) {
                            auto gx = g.grad_buffer(xid);
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < w; ++j) gx[i * m + begin + j] += gy[i * w + j];
                          });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const std::size_t n = parts[0].shape().at(0);
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.shape()[0] != n) throw ShapeError("concat_cols row count mismatch");
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  std::vector<double> out(n * total);
  std::size_t off = 0;
  for (std::size_t t = 0; t < parts.size(); ++t) {
    const auto pv = parts[t].value().data();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(&pv[i * widths[t]], widths[t], &out[i * total + off]);
    off += widths[t];
  }
  std::vector<std::uint32_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return parts[0].graph().record(
      Tensor({n, total}, std::move(out)), parts,
      [ids, widths, n, total](Graph& g, std::span<const double> gy) {
        std::size_t off = 0;
        for (std::size_t t = 0; t < ids.size(); ++t) {
          auto gp = g.grad_buffer(ids[t]);
          if (!gp.empty()) {
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < widths[t]; ++j) gp[i * widths[t] + j] += gy[i * total + off + j];
          }
          off += widths[t];
        }
      });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  const auto xv = x.value().data();
  std::vector<double> out(rows.size() * m);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) throw ShapeError("gather_rows index out of range");
    std::copy_n(&xv[rows[r] * m], m, &out[r * m]);
  }
  const auto xid = x.id();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return x.graph().record(Tensor({rows.size(), m}, std::move(out)), {x},
                          [xid, m, idx = std::move(idx)](Graph& g, std::span<const double> gy) {
                            auto gx = g.grad_buffer(xid);
                            for (std::size_t r = 0; r < idx.size(); ++r)
                              for (std::size_t j = 0; j < m; ++j) gx[idx[r] * m + j] += gy[r * m + j];
                          });
}

Var clamp_cols(Var x, std::span<const double> lo, std::span<const double> hi) {
  require_rank(x, 2, "clamp_cols");
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  if (lo.size() != m || hi.size() != m) throw ShapeError("clamp_cols bound length mismatch");
  const auto xv = x.value().data();
  std::vector<double> out(n * m);
  std::vector<unsigned char> pass(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double v = xv[i * m + j];
      out[i * m + j] = std::clamp(v, lo[j], hi[j]);
      pass[i * m + j] = (v >= lo[j] && v <= hi[j]) ? 1 : 0;
    }
  }
  const auto xid = x.id();
  return x.graph().record(Tensor({n, m}, std::move(out)), {x},
                          [xid, pass = std::move(pass)](Graph& g, std::span<const double> gy) {
                            auto gx = g.grad_buffer(xid);
                            for (std::size_t i = 0; i < gx.size(); ++i)
                              if (pass[i]) gx[i] += gy[i];
                          });
}

Var wrap_angle(Var x) {
  const auto xv = x.value().data();
  std::vector<double> out(xv.size());
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    double r = std::remainder(xv[i], kTwoPi);
    if (r <= -std::numbers::pi) r += kTwoPi;
    out[i] = r;
  }
  const auto xid = x.id();
  return x.graph().record(Tensor(x.shape(), std::move(out)), {x},
                          [xid](Graph& g, std::span<const double> gy) {
                            auto gx = g.grad_buffer(xid);
                            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
                          });
}

Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad) {
  require_rank(x, 3, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  const std::size_t H = x.shape()[0], W = x.shape()[1], cin = x.shape()[2];
  const std::size_t k = weight.shape()[0];
  const std::size_t cout = weight.shape()[3];
  if (weight.shape()[1] != k || weight.shape()[2] != cin) {
    throw ShapeError("conv2d weight " + shape_string(weight.shape()) + " does not fit input " +
                     shape_string(x.shape()));
  }
  if (bias.size() != cout) throw ShapeError("conv2d bias length mismatch");
  if (stride == 0 || H + 2 * pad < k || W + 2 * pad < k) throw ShapeError("conv2d geometry");
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - k) / stride + 1;
  const auto xv = x.value().data();
  const auto wv = weight.value().data();
  const auto bv = bias.value().data();
  std::vector<double> out(Ho * Wo * cout);
  for (std::size_t oy = 0; oy < Ho; ++oy) {
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      double* orow = &out[(oy * Wo + ox) * cout];
      std::copy_n(bv.data(), cout, orow);
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
          const double* xp = &xv[(static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * cin];
          const double* wp = &wv[(ky * k + kx) * cin * cout];
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double s = xp[ci];
            const double* wrow = wp + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) orow[co] += s * wrow[co];
          }
        }
      }
    }
  }
  const auto xid = x.id(), wid = weight.id(), bid = bias.id();
  return x.graph().record(
      Tensor({Ho, Wo, cout}, std::move(out)), {x, weight, bias},
      [=](Graph& g, std::span<const double> gy) {
        const auto xv = g.value(xid).data();
        const auto wv = g.value(wid).data();
        auto gx = g.grad_buffer(xid);
        auto gw = g.grad_buffer(wid);
        auto gb = g.grad_buffer(bid);
        if (!gb.empty()) {
          for (std::size_t p = 0; p < Ho * Wo; ++p)
            for (std::size_t co = 0; co < cout; ++co) gb[co] += gy[p * cout + co];
        }
        // Transposed weights [k,k,cout,cin] keep the input-gradient loop
        // contiguous in cin.
        std::vector<double> wt;
        if (!gx.empty()) {
          wt.resize(wv.size());
          for (std::size_t kk = 0; kk < k * k; ++kk)
            for (std::size_t ci = 0; ci < cin; ++ci)
              for (std::size_t co = 0; co < cout; ++co)
                wt[(kk * cout + co) * cin + ci] = wv[(kk * cin + ci) * cout + co];
        }
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const double* grow = &gy[(oy * Wo + ox) * cout];
            for (std::size_t ky = 0; ky < k; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                const std::size_t xoff = (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * cin;
                const std::size_t kk = ky * k + kx;
                if (!gw.empty()) {
                  for (std::size_t ci = 0; ci < cin; ++ci) {
                    const double s = xv[xoff + ci];
                    if (s == 0.0) continue;
                    double* gwrow = &gw[(kk * cin + ci) * cout];
                    for (std::size_t co = 0; co < cout; ++co) gwrow[co] += s * grow[co];
                  }
                }
                if (!gx.empty()) {
                  double* gxp = &gx[xoff];
                  for (std::size_t co = 0; co < cout; ++co) {
                    const double s = grow[co];
                    if (s == 0.0) continue;
                    const double* wrow = &wt[(kk * cout + co) * cin];
                    for (std::size_t ci = 0; ci < cin; ++ci) gxp[ci] += s * wrow[ci];
                  }
                }
              }
            }
          }
        }
      });
}

}  // namespace mvdet::diff
