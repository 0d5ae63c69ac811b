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

// Output formats pinned against files in tests/golden. Set
// MVDET_UPDATE_GOLDEN=1 to rewrite them after an intended format change.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mvdet/eval.hpp"
#include "mvdet/run.hpp"
#include "mvdet/synth.hpp"

using namespace mvdet;
namespace fs = std::filesystem;

namespace {

void check_golden(const std::string& name, const std::string& actual) {
  const fs::path path = fs::path(MVDET_GOLDEN_DIR) / name;
  if (std::getenv("MVDET_UPDATE_GOLDEN")) {
    std::ofstream(path, std::ios::binary) << actual;
    return;
  }
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "missing golden file " << path);
  std::stringstream b;
  b << in.rdbuf();
  CHECK_MESSAGE(b.str() == actual, name << " differs from its golden file");
}

eval::Detection det(const std::string& scene, int label, double x, double y, double score, int attr) {
  eval::Detection d;
  d.scene = scene;
  d.label = label;
  d.box.center = {x, y, 0.8};
  d.box.size = {4, 2, 1.6};
  d.box.yaw = 0.25;
  d.box.velocity = {0.5, 0};
  d.score = score;
  d.attribute = attr;
  return d;
}

}  // namespace

TEST_CASE("default run config text") { check_golden("default_config.txt", run::format_config(run::RunConfig{})); }

TEST_CASE("evaluation report, text and json") {
  const std::vector<eval::Detection> gts{det("a", 0, 5, 0, 1, 0), det("a", 1, -3, 4, 1, 1), det("b", 0, 8, 8, 1, 0)};
  std::vector<eval::Detection> preds{det("a", 0, 5.3, 0.2, 0.9, 0), det("a", 1, -3, 5.5, 0.6, 0),
                                     det("b", 0, 2, 2, 0.8, 0), det("b", 0, 8.6, 8, 0.4, 1)};
  preds[0].box.yaw = 0.4;
  preds[0].box.size = {3.8, 2.1, 1.5};
  eval::EvalConfig cfg;
  cfg.class_names = {"car", "pedestrian", "cyclist"};
  const auto r = eval::evaluate(preds, gts, cfg);
  check_golden("eval_report.txt", eval::format_report(r));
  check_golden("eval_report.json", eval::report_json(r) + "\n");
}

TEST_CASE("scene file") {
  synth::SceneSpec spec;
  spec.num_cameras = 2;
  spec.width = 8;
  spec.height = 8;
  spec.min_objects = 0;
  spec.max_objects = 0;
  auto scene = synth::gen_scene(spec, 21);
  synth::Object o;
  o.box.center = {6, 1, 0.8};
  o.box.size = {4.2, 1.9, 1.6};
  o.box.yaw = 0.5;
  o.box.velocity = {1.5, -0.25};
  o.attribute = synth::attribute_for_velocity(o.box.velocity);
  scene.objects.push_back(o);
  std::ostringstream out;
  synth::write_scene(out, scene);
  check_golden("scene.txt", out.str());
}
