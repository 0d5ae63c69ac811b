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

#include <doctest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "mvdet/synth.hpp"

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream b;
  b << in.rdbuf();
  return b.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("mvdet_cli_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct Result {
  int code = -1;
  std::string output;  // stdout and stderr
};

Result cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(MVDET_BIN) + " " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = slurp(log);
  return r;
}

// Every regular file under `dir`, relative path to contents.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

const char* kTinyConfig =
    "layers = 2\nqueries = 6\nhidden = 16\nheads = 2\nstem_channels = 4\n"
    "steps = 6\nseed = 2\ndataset = data/manifest.json\noutput_dir = out\n";

// Tiny dataset plus a six-step checkpoint, shared by the pipeline cases.
struct Pipeline {
  TempDir dir{"pipeline"};
  fs::path log = dir.path / "log.txt";
  Pipeline() {
    const auto g = cli("gen --out '" + (dir.path / "data").string() +
                             "' --scenes 4 --val-scenes 3 --seed 1 --cameras 2 --width 32 --height 32 --min-objects 1 --max-objects 3",
                         log);
    REQUIRE(g.code == 0);
    write_file(dir.path / "run.cfg", kTinyConfig);
    const auto t = cli("train '" + (dir.path / "run.cfg").string() + "'", log);
    REQUIRE_MESSAGE(t.code == 0, t.output);
  }
  std::string ckpt() const { return "'" + (dir.path / "out" / "final.ckpt").string() + "'"; }
  std::string data() const { return "'" + (dir.path / "data" / "manifest.json").string() + "'"; }
};

}  // namespace

TEST_CASE("gen: 100 scenes, byte-identical rerun") {
  TempDir dir("gen");
  const auto a = dir.path / "a", b = dir.path / "b";
  REQUIRE(cli("gen --scenes 100 --seed 7 --out '" + a.string() + "'", dir.path / "log").code == 0);
  REQUIRE(cli("gen --scenes 100 --seed 7 --out '" + b.string() + "'", dir.path / "log").code == 0);
  const auto m = mvdet::synth::load_manifest(a / "manifest.json");
  CHECK(m.train.size() == 100);
  CHECK(m.val.empty());
  const auto ta = tree(a), tb = tree(b);
  CHECK(ta.size() == 101);
  CHECK(ta == tb);
}

TEST_CASE("usage errors exit with 2") {
  TempDir dir("usage");
  const auto log = dir.path / "log";
  CHECK(cli("gen --no-such-flag", log).code == 2);
  CHECK(cli("frobnicate", log).code == 2);
  CHECK(cli("", log).code == 2);
  CHECK(cli("gen --width 30 --out '" + (dir.path / "d").string() + "'", log).code == 2);
  CHECK(cli("train '" + (dir.path / "absent.cfg").string() + "'", log).code == 2);
  write_file(dir.path / "bad.cfg", "no_such_key = 1\n");
  const auto r = cli("train '" + (dir.path / "bad.cfg").string() + "'", log);
  CHECK(r.code == 2);
  CHECK(r.output.find("no_such_key") != std::string::npos);
  CHECK(cli("bench --checkpoint x --dataset y --reps 2", log).code == 2);
  CHECK(cli("--help", log).code == 0);
}

TEST_CASE("train: missing dataset is a runtime failure with a message") {
  TempDir dir("nodata");
  write_file(dir.path / "run.cfg", kTinyConfig);
  const auto r = cli("train '" + (dir.path / "run.cfg").string() + "'", dir.path / "log");
  CHECK(r.code == 1);
  CHECK(r.output.find("manifest not found") != std::string::npos);
}

TEST_CASE("train, eval, bench and render from the command line") {
  Pipeline p;
  const auto& d = p.dir.path;
  CHECK(fs::exists(d / "out" / "loss.csv"));
  CHECK(fs::exists(d / "out" / "config.txt"));
  CHECK(fs::exists(d / "out" / "epoch_1.ckpt"));

  SUBCASE("eval writes text, json and detections") {
    const auto out = d / "ev";
    const auto r = cli("eval --checkpoint " + p.ckpt() + " --dataset " + p.data() + " --out '" + out.string() + "'",
                         p.log);
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(slurp(out / "report.json"));
    CHECK(j.contains("mAP"));
    CHECK(j.contains("NDS"));
    CHECK(j["predictions"] == 18);
    std::ifstream det(out / "detections.txt");
    std::size_t lines = 0;
    for (std::string line; std::getline(det, line);) ++lines;
    CHECK(lines >= 18);
    CHECK(slurp(out / "report.txt") == r.output);
  }
  SUBCASE("eval with NMS and per-layer report") {
    CHECK(cli("eval --with-nms --checkpoint " + p.ckpt() + " --dataset " + p.data(), p.log).code == 0);
    const auto r = cli("eval --all-layers --checkpoint " + p.ckpt() + " --dataset " + p.data(), p.log);
    CHECK(r.code == 0);
    CHECK(r.output.find("matched-L1") != std::string::npos);
  }
  SUBCASE("eval refuses a checkpoint that does not match the config") {
    write_file(d / "other.cfg", "layers = 3\nqueries = 6\nhidden = 16\nheads = 2\nstem_channels = 4\n");
    const auto r = cli("eval --config '" + (d / "other.cfg").string() + "' --checkpoint " + p.ckpt() +
                             " --dataset " + p.data(),
                         p.log);
    CHECK(r.code != 0);
  }
  SUBCASE("eval refuses a dataset with another class count") {
    REQUIRE(cli("gen --out '" + (d / "two").string() +
                      "' --scenes 1 --val-scenes 1 --cameras 2 --width 32 --height 32 --classes 2",
                  p.log)
                .code == 0);
    const auto r =
        cli("eval --checkpoint " + p.ckpt() + " --dataset '" + (d / "two" / "manifest.json").string() + "'", p.log);
    CHECK(r.code == 1);
    CHECK(r.output.find("class-count mismatch") != std::string::npos);
  }
  SUBCASE("overlap-only on a one-camera rig warns") {
    REQUIRE(cli("gen --out '" + (d / "one").string() +
                      "' --scenes 1 --val-scenes 2 --cameras 1 --width 32 --height 32",
                  p.log)
                .code == 0);
    const auto r = cli("eval --overlap-only --checkpoint " + p.ckpt() + " --dataset '" +
                             (d / "one" / "manifest.json").string() + "' --out '" + (d / "ev1").string() + "'",
                         p.log);
    CHECK(r.code == 0);
    CHECK(r.output.find("warning") != std::string::npos);
    const auto j = nlohmann::json::parse(slurp(d / "ev1" / "report.json"));
    CHECK(j["NDS"].is_null());
    CHECK(j["nds_defined"] == false);
  }
  SUBCASE("bench") {
    const auto r = cli("bench --reps 3 --checkpoint " + p.ckpt() + " --dataset " + p.data() + " --out '" +
                             (d / "bench").string() + "'",
                         p.log);
    CHECK(r.code == 0);
    const auto j = nlohmann::json::parse(slurp(d / "bench" / "timing.json"));
    CHECK(j.size() == 3);
  }
  SUBCASE("render with one image per layer") {
    const auto scene = d / "data" / mvdet::synth::load_manifest(d / "data" / "manifest.json").val[0].file;
    const auto r = cli("render --per-layer --checkpoint " + p.ckpt() + " --scene '" + scene.string() +
                             "' --out '" + (d / "render").string() + "'",
                         p.log);
    CHECK(r.code == 0);
    CHECK(fs::exists(d / "render" / "bev_layer0.ppm"));
    CHECK(fs::exists(d / "render" / "bev_layer1.ppm"));
    CHECK(fs::exists(d / "render" / "cam1.ppm"));
  }
  SUBCASE("resume through the command line") {
    write_file(d / "run2.cfg", std::string(kTinyConfig) + "output_dir = out2\n");
    REQUIRE(cli("train --stop-after 3 '" + (d / "run2.cfg").string() + "'", p.log).code == 0);
    REQUIRE(cli("train --resume '" + (d / "out2" / "final.ckpt").string() + "' '" + (d / "run2.cfg").string() + "'",
                  p.log)
                .code == 0);
    CHECK(slurp(d / "out2" / "final.ckpt") == slurp(d / "out" / "final.ckpt"));
  }
}

TEST_CASE("gradcheck exit codes") {
  TempDir dir("gradcheck");
  const auto ok = cli("gradcheck --json '" + (dir.path / "g.json").string() + "'", dir.path / "log");
  CHECK(ok.code == 0);
  CHECK(ok.output.find("op:") != std::string::npos);
  const auto j = nlohmann::json::parse(slurp(dir.path / "g.json"));
  CHECK(j["pass"] == true);
  CHECK(cli("gradcheck --corrupt-backward", dir.path / "log").code == 1);
}
