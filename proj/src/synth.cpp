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

#include "mvdet/synth.hpp"

#include <algorithm>
#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace mvdet::synth {
namespace {

constexpr double kNearPlane = 0.05;
constexpr int kPlacementAttempts = 2000;
constexpr double kVelocityRamp = 60.0;  // color units across an object at max speed
constexpr int kNoiseAmplitude = 8;

// Corner indices into box_corners(), outward winding irrelevant.
constexpr std::array<std::array<int, 4>, 6> kFaces = {{
    {0, 3, 7, 4},  // front
    {1, 5, 6, 2},  // back
    {0, 4, 5, 1},  // left
    {3, 2, 6, 7},  // right
    {4, 5, 6, 7},  // top
    {0, 1, 2, 3},  // bottom
}};
constexpr std::array<double, 6> kFaceShade = {1.15, 0.6, 0.9, 0.75, 1.05, 0.5};

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

std::string fmt_real(double v) { return fmt::format("{:.17g}", v); }

Vec3 camera_center(const geometry::CameraMatrix& cam) {
  // Solve A c = -t by Cramer's rule.
  const auto& m = cam.matrix();
  auto det3 = [](const std::array<double, 9>& a) {
    return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
           a[2] * (a[3] * a[7] - a[4] * a[6]);
  };
  const std::array<double, 9> a = {m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]};
  const std::array<double, 3> b = {-m[3], -m[7], -m[11]};
  const double d = det3(a);
  Vec3 c{};
  for (int k = 0; k < 3; ++k) {
    auto ak = a;
    for (int r = 0; r < 3; ++r) ak[r * 3 + k] = b[r];
    c[k] = det3(ak) / d;
  }
  return c;
}

std::array<double, 3> homogeneous(const geometry::CameraMatrix& cam, const Vec3& p) {
  std::array<double, 3> h{};
  for (int r = 0; r < 3; ++r) h[r] = cam(r, 0) * p[0] + cam(r, 1) * p[1] + cam(r, 2) * p[2] + cam(r, 3);
  return h;
}

// Clips a polygon given in homogeneous image coordinates to depth >= near
// and returns its pixel-space vertices.
std::vector<Vec2> clip_and_project(const std::vector<std::array<double, 3>>& poly) {
  std::vector<std::array<double, 3>> kept;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % n];
    const bool ina = a[2] >= kNearPlane, inb = b[2] >= kNearPlane;
    if (ina) kept.push_back(a);
    if (ina != inb) {
      const double t = (kNearPlane - a[2]) / (b[2] - a[2]);
      kept.push_back({a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), kNearPlane});
    }
  }
  std::vector<Vec2> out;
  out.reserve(kept.size());
  for (const auto& h : kept) out.push_back({h[0] / h[2], h[1] / h[2]});
  return out;
}

double signed_area(const std::vector<Vec2>& p) {
  double a = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& u = p[i];
    const auto& v = p[(i + 1) % p.size()];
    a += u[0] * v[1] - v[0] * u[1];
  }
  return a / 2;
}

struct Raster {
  int width, height;
  std::vector<std::uint8_t>& rgb;

  template <class ColorFn>
  void fill_convex(std::vector<Vec2> poly, ColorFn&& color) {
    if (poly.size() < 3) return;
    const double area = signed_area(poly);
    if (std::abs(area) < 1e-12) return;
    if (area < 0) std::reverse(poly.begin(), poly.end());
    double xmin = poly[0][0], xmax = xmin, ymin = poly[0][1], ymax = ymin;
    for (const auto& p : poly) {
      xmin = std::min(xmin, p[0]);
      xmax = std::max(xmax, p[0]);
      ymin = std::min(ymin, p[1]);
      ymax = std::max(ymax, p[1]);
    }
    const int x0 = std::max(0, static_cast<int>(std::floor(xmin - 0.5)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(xmax - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(ymin - 0.5)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(ymax - 0.5)));
    for (int y = y0; y <= y1; ++y) {
      const double py = y + 0.5;
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5;
        bool inside = true;
        for (std::size_t i = 0; i < poly.size() && inside; ++i) {
          const auto& a = poly[i];
          const auto& b = poly[(i + 1) % poly.size()];
          inside = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]) >= 0;
        }
        if (!inside) continue;
        const auto c = color(py);
        std::copy(c.begin(), c.end(), rgb.begin() + (static_cast<std::size_t>(y) * width + x) * 3);
      }
    }
  }
};

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  using namespace boost::archive::iterators;
  using It = base64_from_binary<transform_width<std::vector<std::uint8_t>::const_iterator, 6, 8>>;
  std::string out(It(bytes.begin()), It(bytes.end()));
  out.append((3 - bytes.size() % 3) % 3, '=');
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string text) {
  using namespace boost::archive::iterators;
  using It = transform_width<binary_from_base64<std::string::const_iterator>, 8, 6>;
  std::size_t pad = 0;
  while (!text.empty() && text.back() == '=') {
    text.pop_back();
    ++pad;
  }
  if (pad > 2 || (text.size() + pad) % 4 != 0) throw std::runtime_error("scene file: malformed base64 payload");
  std::vector<std::uint8_t> out;
  try {
    out.assign(It(text.begin()), It(text.end()));
  } catch (const std::exception&) {
    throw std::runtime_error("scene file: malformed base64 payload");
  }
  // transform_width can emit a partial trailing byte.
  out.resize((text.size() + pad) / 4 * 3 - pad);
  return out;
}

void expect(std::istream& in, const std::string& word) {
  std::string got;
  if (!(in >> got) || got != word)
    throw std::runtime_error(fmt::format("scene file: expected '{}', found '{}'", word, got));
}

template <class T>
T read_value(std::istream& in, const char* what) {
  T v{};
  if (!(in >> v)) throw std::runtime_error(fmt::format("scene file: bad or missing {}", what));
  return v;
}

nlohmann::json spec_json(const SceneSpec& s) {
  return {{"num_cameras", s.num_cameras},
          {"width", s.width},
          {"height", s.height},
          {"bounds_lo", s.bounds.lo},
          {"bounds_hi", s.bounds.hi},
          {"min_range", s.min_range},
          {"max_range", s.max_range},
          {"min_objects", s.min_objects},
          {"max_objects", s.max_objects},
          {"num_classes", s.num_classes},
          {"max_speed", s.max_speed},
          {"camera_height", s.camera_height},
          {"ring_radius", s.ring_radius},
          {"hfov_degrees", s.hfov_degrees}};
}

SceneSpec spec_from_json(const nlohmann::json& j) {
  SceneSpec s;
  j.at("num_cameras").get_to(s.num_cameras);
  j.at("width").get_to(s.width);
  j.at("height").get_to(s.height);
  j.at("bounds_lo").get_to(s.bounds.lo);
  j.at("bounds_hi").get_to(s.bounds.hi);
  j.at("min_range").get_to(s.min_range);
  j.at("max_range").get_to(s.max_range);
  j.at("min_objects").get_to(s.min_objects);
  j.at("max_objects").get_to(s.max_objects);
  j.at("num_classes").get_to(s.num_classes);
  j.at("max_speed").get_to(s.max_speed);
  j.at("camera_height").get_to(s.camera_height);
  j.at("ring_radius").get_to(s.ring_radius);
  j.at("hfov_degrees").get_to(s.hfov_degrees);
  s.validate();
  return s;
}

}  // namespace

int attribute_for_velocity(const Vec2& v) {
  return std::hypot(v[0], v[1]) >= kMovingSpeed ? kMoving : kStationary;
}

const std::vector<ClassInfo>& class_table() {
  static const std::vector<ClassInfo> table = {
      {"car", {4.2, 1.9, 1.6}, {205, 55, 50}},
      {"pedestrian", {0.8, 0.8, 1.8}, {60, 185, 75}},
      {"cyclist", {1.9, 0.7, 1.7}, {65, 95, 215}},
  };
  return table;
}

std::vector<std::string> class_names(std::size_t num_classes) {
  const auto& t = class_table();
  if (num_classes > t.size()) throw std::invalid_argument("more classes requested than are defined");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < num_classes; ++i) out.push_back(t[i].name);
  return out;
}

void SceneSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("scene spec: " + m); };
  if (num_cameras < 1) fail("num_cameras must be >= 1");
  if (width <= 0 || height <= 0 || width % 8 != 0 || height % 8 != 0)
    fail(fmt::format("image size {}x{} must be positive multiples of 8", width, height));
  for (int i = 0; i < 3; ++i)
    if (!(bounds.lo[i] < bounds.hi[i])) fail("empty bounds");
  if (!(min_range >= 0 && min_range <= max_range)) fail("bad range");
  if (min_objects < 0 || min_objects > max_objects) fail("bad object count range");
  if (num_classes < 1 || num_classes > static_cast<int>(class_table().size()))
    fail(fmt::format("num_classes must be in [1, {}]", class_table().size()));
  if (!(max_speed >= 0)) fail("max_speed must be >= 0");
  if (!(hfov_degrees > 0 && hfov_degrees < 180)) fail("hfov must be in (0, 180)");
}

geometry::CameraMatrix camera_at(const Vec3& position, double yaw, double hfov_degrees, int width,
                                 int height) {
  const double focal = (width / 2.0) / std::tan(hfov_degrees * std::numbers::pi / 360.0);
  const double s = std::sin(yaw), c = std::cos(yaw);
  // Rows: image right, image down, optical axis.
  const double r[3][3] = {{s, -c, 0}, {0, 0, -1}, {c, s, 0}};
  const double k[3][3] = {{focal, 0, width / 2.0}, {0, focal, height / 2.0}, {0, 0, 1}};
  std::array<double, 12> t{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j)
      for (int l = 0; l < 3; ++l) t[i * 4 + j] += k[i][l] * r[l][j];
    t[i * 4 + 3] = -(t[i * 4] * position[0] + t[i * 4 + 1] * position[1] + t[i * 4 + 2] * position[2]);
  }
  return geometry::CameraMatrix(t, width, height);
}

geometry::Rig make_rig(const SceneSpec& spec) {
  spec.validate();
  geometry::Rig rig;
  for (int k = 0; k < spec.num_cameras; ++k) {
    const double yaw = 2.0 * std::numbers::pi * k / spec.num_cameras;
    const Vec3 pos{spec.ring_radius * std::cos(yaw), spec.ring_radius * std::sin(yaw), spec.camera_height};
    rig.push_back(camera_at(pos, yaw, spec.hfov_degrees, spec.width, spec.height));
  }
  return rig;
}

Scene gen_scene(const SceneSpec& spec, std::uint64_t seed) {
  Scene scene;
  scene.spec = spec;
  scene.seed = seed;
  scene.rig = make_rig(spec);

  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const int n = std::uniform_int_distribution<int>(spec.min_objects, spec.max_objects)(rng);
  const auto& classes = class_table();

  for (int i = 0; i < n; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      Object obj;
      obj.label = std::uniform_int_distribution<int>(0, spec.num_classes - 1)(rng);
      for (int d = 0; d < 3; ++d) obj.box.size[d] = classes[obj.label].size[d] * uniform(0.9, 1.1);
      const double r = uniform(spec.min_range, spec.max_range);
      const double theta = uniform(-std::numbers::pi, std::numbers::pi);
      obj.box.center = {r * std::cos(theta), r * std::sin(theta), obj.box.size[2] / 2};
      obj.box.yaw = uniform(-std::numbers::pi, std::numbers::pi);
      obj.box.velocity = {uniform(-spec.max_speed, spec.max_speed), uniform(-spec.max_speed, spec.max_speed)};
      obj.attribute = attribute_for_velocity(obj.box.velocity);
      if (!spec.bounds.contains(obj.box.center)) continue;
      if (geometry::visible_camera_count(scene.rig, obj.box.center) < 1) continue;
      // Footprint circles kept apart so boxes never intersect.
      const double rad = std::hypot(obj.box.size[0], obj.box.size[1]) / 2;
      bool clear = true;
      for (const auto& o : scene.objects) {
        const double ro = std::hypot(o.box.size[0], o.box.size[1]) / 2;
        if (bev_distance(o.box, obj.box) < rad + ro + 0.2) {
          clear = false;
          break;
        }
      }
      if (!clear) continue;
      scene.objects.push_back(obj);
      placed = true;
    }
    if (!placed) break;  // crowded: keep what fits
  }
  scene.images = render(scene);
  return scene;
}

std::array<std::uint8_t, 3> face_color(int label, int face) {
  const auto& base = class_table().at(static_cast<std::size_t>(label)).color;
  std::array<std::uint8_t, 3> c{};
  for (int i = 0; i < 3; ++i) c[i] = to_byte(base[i] * kFaceShade.at(static_cast<std::size_t>(face)));
  return c;
}

std::array<std::uint8_t, 3> background_color(double y, double cy) {
  if (y < cy) return {150, 160, 172};
  return {104, 100, 96};
}

std::vector<Image> render(const Scene& scene) {
  std::vector<Image> images;
  // Noise stream distinct from the one that placed the objects.
  std::mt19937_64 noise(scene.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<int> jitter(-kNoiseAmplitude, kNoiseAmplitude);
  for (const auto& cam : scene.rig) {
    Image img{cam.width(), cam.height(), {}};
    img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    const double cy = img.height / 2.0;
    for (int y = 0; y < img.height; ++y) {
      const auto bg = background_color(y + 0.5, cy);
      for (int x = 0; x < img.width; ++x)
        for (int ch = 0; ch < 3; ++ch)
          img.rgb[(static_cast<std::size_t>(y) * img.width + x) * 3 + ch] = to_byte(bg[ch] + jitter(noise));
    }

    const Vec3 eye = camera_center(cam);
    std::vector<std::pair<double, const Object*>> order;
    for (const auto& o : scene.objects) order.push_back({homogeneous(cam, o.box.center)[2], &o});
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

    Raster raster{img.width, img.height, img.rgb};
    for (const auto& [depth, obj] : order) {
      const auto corners = box_corners(obj->box);
      std::vector<std::pair<int, std::vector<Vec2>>> faces;
      double ymin = 1e300, ymax = -1e300;
      for (int f = 0; f < 6; ++f) {
        Vec3 fc{0, 0, 0};
        for (int idx : kFaces[f])
          for (int d = 0; d < 3; ++d) fc[d] += corners[idx][d] / 4;
        double facing = 0;
        for (int d = 0; d < 3; ++d) facing += (eye[d] - fc[d]) * (fc[d] - obj->box.center[d]);
        if (facing <= 0) continue;
        std::vector<std::array<double, 3>> hom;
        for (int idx : kFaces[f]) hom.push_back(homogeneous(cam, corners[idx]));
        auto poly = clip_and_project(hom);
        if (poly.size() < 3) continue;
        for (const auto& p : poly) {
          ymin = std::min(ymin, p[1]);
          ymax = std::max(ymax, p[1]);
        }
        faces.emplace_back(f, std::move(poly));
      }
      const double span = std::max(ymax - ymin, 1e-9);
      const double ax = scene.spec.max_speed > 0 ? kVelocityRamp * obj->box.velocity[0] / scene.spec.max_speed : 0;
      const double ay = scene.spec.max_speed > 0 ? kVelocityRamp * obj->box.velocity[1] / scene.spec.max_speed : 0;
      for (auto& [f, poly] : faces) {
        const auto base = face_color(obj->label, f);
        raster.fill_convex(std::move(poly), [&](double py) {
          const double t = std::clamp((py - ymin) / span, 0.0, 1.0) - 0.5;
          return std::array<std::uint8_t, 3>{to_byte(base[0] + ax * t), to_byte(base[1] + ay * t), base[2]};
        });
      }
    }
    images.push_back(std::move(img));
  }
  return images;
}

Scene rotated(const Scene& scene, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Scene out = scene;
  out.rig.clear();
  for (const auto& cam : scene.rig) {
    // T' = T [R^T 0; 0 1]
    std::array<double, 12> t = cam.matrix();
    for (int r = 0; r < 3; ++r) {
      const double a = cam(r, 0), b = cam(r, 1);
      t[r * 4 + 0] = a * c - b * s;
      t[r * 4 + 1] = a * s + b * c;
    }
    out.rig.emplace_back(t, cam.width(), cam.height());
  }
  for (auto& o : out.objects) {
    auto& b = o.box;
    const double x = b.center[0], y = b.center[1];
    b.center[0] = c * x - s * y;
    b.center[1] = s * x + c * y;
    const double vx = b.velocity[0], vy = b.velocity[1];
    b.velocity = {c * vx - s * vy, s * vx + c * vy};
    b.yaw = wrap_angle(b.yaw + angle);
  }
  return out;
}

diff::Tensor to_tensor(const Image& img) {
  std::vector<double> data(img.rgb.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = img.rgb[i] / 255.0 - 0.5;
  return diff::Tensor({static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width), 3}, std::move(data));
}

// Grammar (whitespace separated tokens, one record per line):
//   mvdet-scene 1
//   seed <u64>
//   spec <json object on one line>
//   cameras <K>
//   camera <width> <height> <t00> ... <t23>          K lines, T row-major
//   objects <N>
//   object <label> <attribute> x y z l w h yaw vx vy  N lines
//   images <K>
//   image <width> <height> <base64 RGB bytes>         K lines
//   end
void write_scene(std::ostream& out, const Scene& scene) {
  out << "mvdet-scene 1\n";
  out << "seed " << scene.seed << "\n";
  out << "spec " << spec_json(scene.spec).dump() << "\n";
  out << "cameras " << scene.rig.size() << "\n";
  for (const auto& cam : scene.rig) {
    out << "camera " << cam.width() << " " << cam.height();
    for (double v : cam.matrix()) out << " " << fmt_real(v);
    out << "\n";
  }
  out << "objects " << scene.objects.size() << "\n";
  for (const auto& o : scene.objects) {
    out << "object " << o.label << " " << o.attribute;
    for (double v : o.box.to_array()) out << " " << fmt_real(v);
    out << "\n";
  }
  out << "images " << scene.images.size() << "\n";
  for (const auto& img : scene.images)
    out << "image " << img.width << " " << img.height << " " << base64_encode(img.rgb) << "\n";
  out << "end\n";
}

Scene read_scene(std::istream& in) {
  Scene s;
  expect(in, "mvdet-scene");
  if (read_value<int>(in, "version") != 1) throw std::runtime_error("scene file: unsupported version");
  expect(in, "seed");
  s.seed = read_value<std::uint64_t>(in, "seed");
  expect(in, "spec");
  std::string line;
  std::getline(in, line);
  try {
    s.spec = spec_from_json(nlohmann::json::parse(line));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("scene file: bad spec: ") + e.what());
  }
  expect(in, "cameras");
  const auto k = read_value<std::size_t>(in, "camera count");
  for (std::size_t i = 0; i < k; ++i) {
    expect(in, "camera");
    const int w = read_value<int>(in, "width"), h = read_value<int>(in, "height");
    std::array<double, 12> t{};
    for (double& v : t) v = read_value<double>(in, "camera entry");
    s.rig.emplace_back(t, w, h);
  }
  expect(in, "objects");
  const auto n = read_value<std::size_t>(in, "object count");
  for (std::size_t i = 0; i < n; ++i) {
    expect(in, "object");
    Object o;
    o.label = read_value<int>(in, "label");
    o.attribute = read_value<int>(in, "attribute");
    std::array<double, kBoxParams> p{};
    for (double& v : p) v = read_value<double>(in, "box parameter");
    o.box = Box3D::from_array(p);
    if (o.label < 0 || o.label >= s.spec.num_classes) throw std::runtime_error("scene file: label out of range");
    s.objects.push_back(o);
  }
  expect(in, "images");
  const auto ni = read_value<std::size_t>(in, "image count");
  if (ni != k) throw std::runtime_error("scene file: image count differs from camera count");
  for (std::size_t i = 0; i < ni; ++i) {
    expect(in, "image");
    Image img;
    img.width = read_value<int>(in, "width");
    img.height = read_value<int>(in, "height");
    img.rgb = base64_decode(read_value<std::string>(in, "payload"));
    if (img.width != s.rig[i].width() || img.height != s.rig[i].height() ||
        img.rgb.size() != static_cast<std::size_t>(img.width) * img.height * 3)
      throw std::runtime_error("scene file: image size mismatch");
    s.images.push_back(std::move(img));
  }
  expect(in, "end");
  return s;
}

void save_scene(const std::filesystem::path& path, const Scene& scene) {
  std::ostringstream buf;
  write_scene(buf, scene);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << buf.str();
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Scene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_scene(in);
}

std::string manifest_json(const Manifest& m) {
  auto entries = [](const std::vector<ManifestEntry>& v) {
    auto a = nlohmann::json::array();
    for (const auto& e : v) a.push_back({{"file", e.file}, {"seed", e.seed}});
    return a;
  };
  nlohmann::json j = {{"format", "mvdet-manifest"},
                      {"version", 1},
                      {"spec", spec_json(m.spec)},
                      {"classes", m.classes},
                      {"train", entries(m.train)},
                      {"val", entries(m.val)}};
  return j.dump(2) + "\n";
}

Manifest parse_manifest(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "mvdet-manifest" || j.at("version") != 1)
      throw std::runtime_error("manifest: unsupported format");
    Manifest m;
    m.spec = spec_from_json(j.at("spec"));
    j.at("classes").get_to(m.classes);
    for (const char* key : {"train", "val"}) {
      auto& dst = std::string(key) == "train" ? m.train : m.val;
      for (const auto& e : j.at(key)) dst.push_back({e.at("file").get<std::string>(), e.at("seed").get<std::uint64_t>()});
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("manifest: ") + e.what());
  }
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str());
}

Manifest gen_split(const SceneSpec& spec, std::span<const std::uint64_t> train_seeds,
                   std::span<const std::uint64_t> val_seeds, const std::filesystem::path& dir) {
  spec.validate();
  std::set<std::uint64_t> seen;
  for (auto s : train_seeds)
    if (!seen.insert(s).second) throw std::invalid_argument(fmt::format("duplicate seed {}", s));
  for (auto s : val_seeds)
    if (!seen.insert(s).second) throw std::invalid_argument(fmt::format("seed {} appears more than once", s));

  Manifest m;
  m.spec = spec;
  m.classes = class_names(static_cast<std::size_t>(spec.num_classes));
  struct Job {
    std::filesystem::path path;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& [split, seeds] : {std::pair{"train", train_seeds}, std::pair{"val", val_seeds}}) {
    std::filesystem::create_directories(dir / split);
    auto& dst = std::string(split) == "train" ? m.train : m.val;
    for (auto s : seeds) {
      const std::string rel = fmt::format("{}/scene_{:08d}.scene", split, s);
      dst.push_back({rel, s});
      jobs.push_back({dir / rel, s});
    }
  }

  // Scenes are independent; each one is generated on a single thread.
  const std::size_t workers = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), 8u));
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < jobs.size(); i += workers) save_scene(jobs[i].path, gen_scene(spec, jobs[i].seed));
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  out << manifest_json(m);
  return m;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
}

}  // namespace mvdet::synth
