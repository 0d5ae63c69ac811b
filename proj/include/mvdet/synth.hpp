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
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mvdet/box.hpp"
#include "mvdet/diffcore/tensor.hpp"
#include "mvdet/geometry.hpp"

namespace mvdet::synth {

// Objects at or above this speed (m/s) carry the "moving" attribute.
inline constexpr double kMovingSpeed = 1.0;
inline constexpr int kStationary = 0;
inline constexpr int kMoving = 1;

int attribute_for_velocity(const Vec2& v);

struct ClassInfo {
  std::string name;
  Vec3 size;  // length, width, height in meters
  std::array<std::uint8_t, 3> color;
};

// The built-in classes, in label order.
const std::vector<ClassInfo>& class_table();
std::vector<std::string> class_names(std::size_t num_classes);

struct SceneSpec {
  int num_cameras = 6;
  int width = 128;
  int height = 128;
  SceneBounds bounds;
  double min_range = 3.0;  // BEV distance of object centers from the rig
  double max_range = 11.0;
  int min_objects = 4;
  int max_objects = 10;
  int num_classes = 3;
  double max_speed = 2.0;  // per BEV axis
  double camera_height = 1.6;
  double ring_radius = 0.5;
  double hfov_degrees = 70.0;

  // Throws std::invalid_argument.
  void validate() const;
  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

struct Object {
  Box3D box;
  int label = 0;
  int attribute = kStationary;
};

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

struct Scene {
  SceneSpec spec;
  std::uint64_t seed = 0;
  geometry::Rig rig;
  std::vector<Object> objects;
  std::vector<Image> images;
};

// Level pinhole camera at `position` looking along `yaw`, principal point at
// the image center.
geometry::CameraMatrix camera_at(const Vec3& position, double yaw, double hfov_degrees, int width,
                                 int height);
geometry::Rig make_rig(const SceneSpec& spec);
// Samples objects and renders the images.
Scene gen_scene(const SceneSpec& spec, std::uint64_t seed);
// Rasterizes `scene.objects` over a seeded background, far to near.
std::vector<Image> render(const Scene& scene);

// Color of one box face before the velocity ramp. Faces: 0 front (along the
// heading), 1 back, 2 left, 3 right, 4 top, 5 bottom.
std::array<std::uint8_t, 3> face_color(int label, int face);
// Background before noise for image row `y` of a camera with principal row cy.
std::array<std::uint8_t, 3> background_color(double y, double cy);

// The same scene with the world turned by `angle` about the vertical axis:
// boxes and cameras move together, so the images are unchanged.
Scene rotated(const Scene& scene, double angle);

// Pixel values scaled to [-0.5, 0.5], shape [H,W,3].
diff::Tensor to_tensor(const Image& img);

// Scene file: text, see write_scene for the grammar.
void write_scene(std::ostream& out, const Scene& scene);
Scene read_scene(std::istream& in);
void save_scene(const std::filesystem::path& path, const Scene& scene);
Scene load_scene(const std::filesystem::path& path);

struct ManifestEntry {
  std::string file;  // relative to the manifest's directory
  std::uint64_t seed = 0;
};

struct Manifest {
  SceneSpec spec;
  std::vector<std::string> classes;
  std::vector<ManifestEntry> train;
  std::vector<ManifestEntry> val;
};

std::string manifest_json(const Manifest& m);
Manifest parse_manifest(const std::string& text);
Manifest load_manifest(const std::filesystem::path& path);

// Writes <dir>/train/*.scene, <dir>/val/*.scene and <dir>/manifest.json.
// Throws std::invalid_argument when the seed lists share a value.
Manifest gen_split(const SceneSpec& spec, std::span<const std::uint64_t> train_seeds,
                   std::span<const std::uint64_t> val_seeds, const std::filesystem::path& dir);

// PPM (P6) export.
void write_ppm(const std::filesystem::path& path, const Image& img);

}  // namespace mvdet::synth
