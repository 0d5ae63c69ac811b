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

#include <cmath>
#include <fmt/format.h>
#include <functional>
#include <numbers>
#include <random>

#include "json.hpp"
#include "mvdet/diffcore/gradcheck.hpp"
#include "mvdet/diffcore/ops.hpp"
#include "mvdet/run.hpp"

namespace mvdet::run {
namespace {

using diff::Graph;
using diff::Tensor;
using diff::Var;

Tensor uniform_tensor(diff::Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(diff::shape_size(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Contracts with fixed random weights so no output coordinate gets a
// symmetric (and thus uninformative) gradient.
Var weighted(Graph& g, Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return diff::sum(diff::mul(y, g.constant(uniform_tensor(y.shape(), rng, -1, 1))));
}

// Values in +-[lo, hi] with random sign, away from kinks at zero.
Tensor away_from_zero(diff::Shape shape, std::mt19937_64& rng, double lo, double hi) {
  auto t = uniform_tensor(std::move(shape), rng, lo, hi);
  std::bernoulli_distribution sign(0.5);
  for (double& x : t.mutable_data())
    if (sign(rng)) x = -x;
  return t;
}

struct OpCase {
  std::string name;
  diff::ScalarFn fn;
  Tensor input;
};

std::vector<OpCase> op_cases(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<OpCase> c;
  const auto s = seed;
  auto cst = [&rng](diff::Shape shape) { return uniform_tensor(std::move(shape), rng, -1, 1); };

  c.push_back({"sigmoid", [s](Graph& g, Var x) { return weighted(g, diff::sigmoid(x), s); }, cst({3, 4})});
  c.push_back({"exp", [s](Graph& g, Var x) { return weighted(g, diff::exp(x), s); }, cst({3, 4})});
  c.push_back({"log", [s](Graph& g, Var x) { return weighted(g, diff::log(x), s); },
               uniform_tensor({3, 4}, rng, 0.5, 2.0)});
  c.push_back({"abs", [s](Graph& g, Var x) { return weighted(g, diff::abs(x), s); }, away_from_zero({3, 4}, rng, .1, 1)});
  c.push_back({"relu", [s](Graph& g, Var x) { return weighted(g, diff::relu(x), s); }, away_from_zero({3, 4}, rng, .1, 1)});
  c.push_back({"square", [s](Graph& g, Var x) { return weighted(g, diff::square(x), s); }, cst({3, 4})});
  {
    auto row = cst({1, 4});
    auto other = cst({3, 4});
    c.push_back({"add/sub broadcast", [=](Graph& g, Var x) {
                   return weighted(g, diff::sub(diff::add(x, g.constant(row)), g.constant(other)), s);
                 }, cst({3, 4})});
    c.push_back({"mul broadcast", [=](Graph& g, Var x) { return weighted(g, diff::mul(g.constant(row), x), s); },
                 cst({3, 4})});
  }
  {
    auto b = cst({4, 5});
    c.push_back({"matmul", [=](Graph& g, Var x) { return weighted(g, diff::matmul(x, g.constant(b)), s); }, cst({3, 4})});
    c.push_back({"transpose", [=](Graph& g, Var x) { return weighted(g, diff::transpose(x), s); }, cst({3, 4})});
  }
  {
    auto w = cst({4, 5});
    auto b = cst({5});
    c.push_back({"linear", [=](Graph& g, Var x) { return weighted(g, diff::linear(x, g.constant(w), g.constant(b)), s); },
                 cst({3, 4})});
  }
  {
    auto gain = uniform_tensor({6}, rng, 0.5, 1.5);
    auto bias = cst({6});
    c.push_back({"layer_norm", [=](Graph& g, Var x) {
                   return weighted(g, diff::layer_norm(x, g.constant(gain), g.constant(bias), 1e-5), s);
                 }, cst({3, 6})});
  }
  c.push_back({"softmax", [s](Graph& g, Var x) { return weighted(g, diff::softmax(x, 1), s); }, cst({3, 5})});
  {
    auto w = cst({3, 3, 3, 4});
    auto b = cst({4});
    c.push_back({"conv2d", [=](Graph& g, Var x) {
                   return weighted(g, diff::conv2d(x, g.constant(w), g.constant(b), 2, 1), s);
                 }, cst({5, 6, 3})});
  }
  c.push_back({"slice/concat", [s](Graph& g, Var x) {
                 const std::vector<Var> parts = {diff::slice_cols(x, 3, 5), diff::slice_cols(x, 0, 2)};
                 return weighted(g, diff::concat_cols(parts), s);
               }, cst({3, 5})});
  c.push_back({"gather_rows", [s](Graph& g, Var x) {
                 const std::vector<std::size_t> rows = {2, 0, 2, 1};
                 return weighted(g, diff::gather_rows(x, rows), s);
               }, cst({3, 4})});
  c.push_back({"clamp_cols", [s](Graph& g, Var x) {
                 const std::vector<double> lo = {-0.5, -2, -0.5}, hi = {0.5, 2, 0.5};
                 return weighted(g, diff::clamp_cols(x, lo, hi), s);
               }, away_from_zero({4, 3}, rng, 0.05, 0.45)});
  c.push_back({"wrap_angle", [s](Graph& g, Var x) { return weighted(g, diff::wrap_angle(x), s); },
               uniform_tensor({3, 2}, rng, -9, 9)});
  return c;
}

}  // namespace

GradCheckReport run_gradcheck(const GradCheckOptions& opts) {
  GradCheckReport rep;
  struct FaultGuard {
    explicit FaultGuard(bool on) { diff::set_layer_norm_backward_fault(on); }
    ~FaultGuard() { diff::set_layer_norm_backward_fault(false); }
  } guard(opts.corrupt_backward);

  auto add = [&](std::string name, const diff::GradCheckResult& r) {
    rep.entries.push_back({std::move(name), r.max_rel_error, r.checked, r.max_rel_error < opts.tolerance});
  };

  for (auto& oc : op_cases(opts.seed)) add("op:" + oc.name, diff::grad_check(oc.fn, oc.input, opts.step));

  // Synthetic toy scene and a freshly initialized model.
  synth::SceneSpec spec;
  spec.num_cameras = opts.cameras;
  spec.width = opts.width;
  spec.height = opts.height;
  spec.min_objects = 2;
  spec.max_objects = static_cast<int>(std::min<std::size_t>(3, opts.queries));
  const auto scene = synth::gen_scene(spec, opts.seed);
  head::HeadConfig hc = RunConfig::default_head();
  hc.num_layers = opts.layers;
  hc.num_queries = opts.queries;
  hc.hidden = opts.hidden;
  hc.heads = 2;
  Model model = make_model(hc, 8, opts.seed);
  // Rendered objects are flat color, so many ReLU inputs coincide and a probe
  // of 1e-5 can flip a whole block of them at once. Textured input keeps the
  // loss smooth at the scale of the probe; rig and ground truth stay synthetic.
  std::vector<Tensor> images;
  {
    std::mt19937_64 rng(opts.seed + 3);
    for (const auto& img : scene.images)
      images.push_back(uniform_tensor({static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width), 3},
                                      rng, -0.5, 0.5));
  }
  const auto gt = ground_truth(scene);
  const loss::LossConfig lc;

  {
    // Geometry and sampling ops on the toy scene.
    std::mt19937_64 rng(opts.seed + 7);
    Graph g0(false);
    const auto pyr = pyramid::encode(g0, images, model.params);
    const auto cam = scene.rig[0];
    auto pts = uniform_tensor({5, 3}, rng, -1, 1);
    for (std::size_t i = 0; i < 5; ++i) pts.mutable_data()[i * 3] += 4.0;  // in front of camera 0
    add("op:project_points", diff::grad_check(
                                  [cam, s = opts.seed](Graph& g, Var x) {
                                    std::vector<unsigned char> sigma;
                                    return weighted(g, geometry::project_points(x, cam, sigma), s);
                                  },
                                  pts, opts.step));
    const Tensor fm = pyr[0][1].value();
    auto uv = uniform_tensor({6, 2}, rng, -0.9, 0.9);
    add("op:bilinear_sample(map)", diff::grad_check(
                                         [uv, s = opts.seed](Graph& g, Var x) {
                                           const std::vector<unsigned char> mask = {1, 1, 0, 1, 1, 1};
                                           return weighted(g, pyramid::bilinear_sample(x, g.constant(uv), mask), s);
                                         },
                                         fm, opts.step));
    add("op:bilinear_sample(uv)", diff::grad_check(
                                        [fm, s = opts.seed](Graph& g, Var x) {
                                          const std::vector<unsigned char> mask = {1, 1, 1, 0, 1, 1};
                                          return weighted(g, pyramid::bilinear_sample(g.constant(fm), x, mask), s);
                                        },
                                        uv, opts.step));
    auto refs = uniform_tensor({4, 3}, rng, -1, 1);
    for (std::size_t i = 0; i < 4; ++i) {
      refs.mutable_data()[i * 3] += (i % 2 ? -5.0 : 5.0);
      refs.mutable_data()[i * 3 + 2] += 0.8;
    }
    const auto rig = scene.rig;
    add("op:gather_features", diff::grad_check(
                                  [&images, &model, rig, s = opts.seed](Graph& g, Var x) {
                                    const auto p = pyramid::encode(g, images, model.params);
                                    return weighted(g, head::gather_features(x, p, rig), s);
                                  },
                                  refs, opts.step));
    auto logits = uniform_tensor({4, 3}, rng, -2, 2);
    add("op:focal_loss", diff::grad_check(
                             [lc](Graph&, Var x) {
                               const std::vector<int> t = {0, loss::kNoObject, 2, 1};
                               return loss::focal_loss(x, t, lc.alpha, lc.gamma);
                             },
                             logits, opts.step));
    std::vector<Box3D> boxes;
    auto pred = uniform_tensor({3, kBoxParams}, rng, -1, 1);
    for (std::size_t i = 0; i < 3; ++i) {
      auto p = pred.data().subspan(i * kBoxParams, kBoxParams);
      std::array<double, kBoxParams> t{};
      for (std::size_t j = 0; j < kBoxParams; ++j) t[j] = p[j] + ((i + j) % 2 ? 0.3 : -0.4);
      boxes.push_back(Box3D::from_array(t));
    }
    add("op:l1_box_loss", diff::grad_check(
                              [boxes, lc](Graph&, Var x) { return loss::l1_box_loss(x, boxes, lc.l1_weights); }, pred,
                              opts.step));
  }

  // End to end: every parameter against the full loss. The matching is held
  // at the assignment of the unperturbed point; it is piecewise constant, so
  // this only removes switches caused by the probe itself.
  std::vector<loss::Assignment> frozen;
  {
    Graph g(false);
    const auto preds = head::forward(g, images, scene.rig, model.params, model.head);
    frozen = loss::set_loss(preds, gt, lc).assignments;
  }
  const auto checks = diff::grad_check_parameters(
      model.params,
      [&](Graph& g) {
        const auto preds = head::forward(g, images, scene.rig, model.params, model.head);
        return loss::set_loss(preds, gt, lc, &frozen).total;
      },
      opts.step, opts.coords_per_param, opts.seed);
  for (const auto& c : checks) add(c.name, c.result);

  rep.pass = true;
  for (const auto& e : rep.entries) {
    rep.max_rel_error = std::max(rep.max_rel_error, e.max_rel_error);
    rep.pass = rep.pass && e.pass;
  }
  return rep;
}

std::string gradcheck_text(const GradCheckReport& r) {
  std::string s;
  for (const auto& e : r.entries)
    s += fmt::format("{:<4} {:<44} max rel {:.3e} ({} coords)\n", e.pass ? "ok" : "FAIL", e.name, e.max_rel_error,
                     e.checked);
  s += fmt::format("{}: max relative error {:.3e} over {} checks\n", r.pass ? "PASS" : "FAIL", r.max_rel_error,
                   r.entries.size());
  return s;
}

std::string gradcheck_json(const GradCheckReport& r) {
  nlohmann::json j;
  j["pass"] = r.pass;
  j["max_rel_error"] = r.max_rel_error;
  auto& arr = j["checks"] = nlohmann::json::array();
  for (const auto& e : r.entries)
    arr.push_back({{"name", e.name}, {"max_rel_error", e.max_rel_error}, {"checked", e.checked}, {"pass", e.pass}});
  return j.dump(2) + "\n";
}

// ---- rendering ----

namespace {

using Color = std::array<std::uint8_t, 3>;
constexpr Color kGtColor{60, 230, 60};
constexpr Color kPredColor{240, 50, 200};
constexpr double kOverlayMinDepth = 0.1;

void put_pixel(synth::Image& img, int x, int y, const Color& c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  const std::size_t o = (static_cast<std::size_t>(y) * img.width + x) * 3;
  img.rgb[o] = c[0];
  img.rgb[o + 1] = c[1];
  img.rgb[o + 2] = c[2];
}

// Liang-Barsky clip to the image rectangle, then Bresenham.
void draw_line(synth::Image& img, double x0, double y0, double x1, double y1, const Color& c) {
  double t0 = 0, t1 = 1;
  const double dx = x1 - x0, dy = y1 - y0;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {x0 + 0.5, img.width - 0.5 - x0, y0 + 0.5, img.height - 0.5 - y0};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0) {
      if (q[i] < 0) return;
      continue;
    }
    const double t = q[i] / p[i];
    if (p[i] < 0)
      t0 = std::max(t0, t);
    else
      t1 = std::min(t1, t);
    if (t0 > t1) return;
  }
  int ax = static_cast<int>(std::lround(x0 + t0 * dx)), ay = static_cast<int>(std::lround(y0 + t0 * dy));
  const int bx = static_cast<int>(std::lround(x0 + t1 * dx)), by = static_cast<int>(std::lround(y0 + t1 * dy));
  const int sx = ax < bx ? 1 : -1, sy = ay < by ? 1 : -1;
  const int ddx = std::abs(bx - ax), ddy = -std::abs(by - ay);
  int err = ddx + ddy;
  while (true) {
    put_pixel(img, ax, ay, c);
    if (ax == bx && ay == by) break;
    const int e2 = 2 * err;
    if (e2 >= ddy) {
      err += ddy;
      ax += sx;
    }
    if (e2 <= ddx) {
      err += ddx;
      ay += sy;
    }
  }
}

constexpr std::array<std::array<int, 2>, 12> kEdges = {
    {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6}, {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}}};

void draw_box_overlay(synth::Image& img, const geometry::CameraMatrix& cam, const Box3D& box, const Color& c) {
  const auto corners = box_corners(box);
  std::array<std::optional<Vec2>, 8> px;
  for (std::size_t i = 0; i < 8; ++i) {
    const auto p = geometry::project(cam, corners[i]);
    if (p.depth > kOverlayMinDepth) px[i] = p.pixel;
  }
  for (const auto& [a, b] : kEdges)
    if (px[a] && px[b]) draw_line(img, (*px[a])[0], (*px[a])[1], (*px[b])[0], (*px[b])[1], c);
  for (const auto& p : px)
    if (p) put_pixel(img, static_cast<int>(std::lround((*p)[0])), static_cast<int>(std::lround((*p)[1])), c);
}

struct BevCanvas {
  synth::Image img;
  SceneBounds bounds;
  Vec2 to_px(double x, double y) const {
    return {(bounds.hi[1] - y) / (bounds.hi[1] - bounds.lo[1]) * img.width,
            (bounds.hi[0] - x) / (bounds.hi[0] - bounds.lo[0]) * img.height};
  }
  void box(const Box3D& b, const Color& c) {
    const auto bev = bev_corners(b);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto p = to_px(bev[i][0], bev[i][1]), q = to_px(bev[(i + 1) % 4][0], bev[(i + 1) % 4][1]);
      draw_line(img, p[0], p[1], q[0], q[1], c);
    }
    // Heading tick.
    const auto p = to_px(b.center[0], b.center[1]);
    const auto q = to_px(b.center[0] + std::cos(b.yaw) * b.size[0] / 2, b.center[1] + std::sin(b.yaw) * b.size[0] / 2);
    draw_line(img, p[0], p[1], q[0], q[1], c);
  }
};

BevCanvas bev_background(const synth::Scene& scene, const SceneBounds& bounds, int pixels) {
  BevCanvas cv{{pixels, pixels, std::vector<std::uint8_t>(static_cast<std::size_t>(pixels) * pixels * 3, 28)}, bounds};
  const Color grid{55, 55, 55};
  for (double v = std::ceil(bounds.lo[0] / 4) * 4; v <= bounds.hi[0]; v += 4) {
    const auto a = cv.to_px(v, bounds.lo[1]), b = cv.to_px(v, bounds.hi[1]);
    draw_line(cv.img, a[0], a[1], b[0], b[1], grid);
  }
  for (double v = std::ceil(bounds.lo[1] / 4) * 4; v <= bounds.hi[1]; v += 4) {
    const auto a = cv.to_px(bounds.lo[0], v), b = cv.to_px(bounds.hi[0], v);
    draw_line(cv.img, a[0], a[1], b[0], b[1], grid);
  }
  for (const auto& cam : scene.rig) {
    // Heading tick from the rig origin along the optical axis.
    const auto& m = cam.matrix();
    const Vec2 fwd{m[8], m[9]};
    const auto o = cv.to_px(0, 0);
    const auto f = cv.to_px(fwd[0] * 1.5, fwd[1] * 1.5);
    draw_line(cv.img, o[0], o[1], f[0], f[1], Color{200, 200, 200});
  }
  return cv;
}

}  // namespace

std::vector<std::array<int, 2>> overlay_corners(const geometry::CameraMatrix& cam, const Box3D& box) {
  std::vector<std::array<int, 2>> out;
  for (const auto& c : box_corners(box)) {
    const auto p = geometry::project(cam, c);
    if (p.depth > kOverlayMinDepth)
      out.push_back({static_cast<int>(std::lround(p.pixel[0])), static_cast<int>(std::lround(p.pixel[1]))});
  }
  return out;
}

std::vector<std::filesystem::path> render_scene(Model& model, const synth::Scene& scene,
                                                const std::filesystem::path& out_dir, const RenderOptions& opts) {
  std::filesystem::create_directories(out_dir);
  const auto outs = infer(model, scene);
  std::vector<std::filesystem::path> written;
  auto confident = [&](const head::LayerOutput& o) {
    std::vector<Box3D> boxes;
    for (const auto& d : detections(o, ""))
      if (d.score >= opts.score_threshold) boxes.push_back(d.box);
    return boxes;
  };

  std::vector<std::size_t> layers;
  if (opts.per_layer)
    for (std::size_t l = 0; l < outs.size(); ++l) layers.push_back(l);
  else
    layers.push_back(outs.size() - 1);
  for (std::size_t l : layers) {
    auto cv = bev_background(scene, model.head.bounds, opts.bev_pixels);
    for (const auto& o : scene.objects) cv.box(o.box, kGtColor);
    for (const auto& b : confident(outs[l])) cv.box(b, kPredColor);
    const auto path = out_dir / (opts.per_layer ? fmt::format("bev_layer{}.ppm", l) : std::string("bev.ppm"));
    synth::write_ppm(path, cv.img);
    written.push_back(path);
  }

  const auto preds = confident(outs.back());
  for (std::size_t k = 0; k < scene.rig.size(); ++k) {
    auto img = scene.images[k];
    for (const auto& b : preds) draw_box_overlay(img, scene.rig[k], b, kPredColor);
    for (const auto& o : scene.objects) draw_box_overlay(img, scene.rig[k], o.box, kGtColor);
    const auto path = out_dir / fmt::format("cam{}.ppm", k);
    synth::write_ppm(path, img);
    written.push_back(path);
  }
  return written;
}

}  // namespace mvdet::run
