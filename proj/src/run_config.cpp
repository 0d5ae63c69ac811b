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

#include <charconv>
#include <fmt/format.h>
#include <fstream>
#include <sstream>

#include "mvdet/run.hpp"

namespace mvdet::run {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError(fmt::format("{}: '{}' is not a valid number", key, text));
  return v;
}

std::vector<std::string_view> words(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const std::size_t b = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > b) out.push_back(s.substr(b, i - b));
  }
  return out;
}

template <class T, std::size_t N>
std::array<T, N> parse_array(std::string_view key, std::string_view text) {
  const auto w = words(text);
  if (w.size() != N) throw ConfigError(fmt::format("{}: expected {} values, got {}", key, N, w.size()));
  std::array<T, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_number<T>(key, w[i]);
  return out;
}

std::string join(std::span<const double> v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt::format("{}", x);
  return s;
}

}  // namespace

head::HeadConfig RunConfig::default_head() {
  head::HeadConfig h;
  h.num_layers = 4;
  h.num_queries = 50;
  h.hidden = 64;
  h.heads = 4;
  h.num_classes = 3;
  return h;
}

loss::LossConfig RunConfig::default_loss() {
  loss::LossConfig l;
  // The score is center distance; uniform weights give x and y only 2/9 of
  // the box gradient and leave the toy model short of it after 2000 steps.
  l.l1_weights = {3, 3, 1, 1, 1, 1, 1, 0.5, 0.5};
  return l;
}

void RunConfig::validate() const {
  head.validate();
  if (stem_channels == 0) throw ConfigError("stem_channels must be positive");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (!(lr_decay > 0)) throw ConfigError("lr_decay must be positive");
  if (steps == 0) throw ConfigError("steps must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  for (std::size_t i = 1; i < milestones.size(); ++i)
    if (milestones[i] <= milestones[i - 1]) throw ConfigError("milestones must be strictly ascending");
  if (!(grad_clip >= 0)) throw ConfigError("grad_clip must be >= 0");
  if (!(loss.box_weight >= 0) || !(loss.alpha >= 0 && loss.alpha <= 1) || !(loss.gamma >= 0))
    throw ConfigError("bad loss weights");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0 &&
        adam.weight_decay >= 0))
    throw ConfigError("bad optimizer settings");
}

std::vector<std::uint64_t> RunConfig::resolved_milestones() const {
  if (!milestones.empty()) return milestones;
  return {steps * 6 / 10, steps * 9 / 10};
}

double RunConfig::lr_at(std::uint64_t step) const { return diff::multistep_lr(lr, lr_decay, resolved_milestones(), step); }

void set_option(RunConfig& cfg, std::string_view key, std::string_view value) {
  auto sz = [&] { return parse_number<std::size_t>(key, value); };
  auto real = [&] { return parse_number<double>(key, value); };
  if (key == "layers") cfg.head.num_layers = sz();
  else if (key == "queries") cfg.head.num_queries = sz();
  else if (key == "hidden") cfg.head.hidden = sz();
  else if (key == "heads") cfg.head.heads = sz();
  else if (key == "classes") cfg.head.num_classes = sz();
  else if (key == "layer_norm_eps") cfg.head.layer_norm_eps = real();
  else if (key == "stem_channels") cfg.stem_channels = sz();
  else if (key == "bounds_lo") cfg.head.bounds.lo = parse_array<double, 3>(key, value);
  else if (key == "bounds_hi") cfg.head.bounds.hi = parse_array<double, 3>(key, value);
  else if (key == "box_weight") cfg.loss.box_weight = real();
  else if (key == "focal_alpha") cfg.loss.alpha = real();
  else if (key == "focal_gamma") cfg.loss.gamma = real();
  else if (key == "l1_weights") cfg.loss.l1_weights = parse_array<double, kBoxParams>(key, value);
  else if (key == "lr") cfg.lr = real();
  else if (key == "lr_decay") cfg.lr_decay = real();
  else if (key == "milestones") {
    cfg.milestones.clear();
    for (auto w : words(value)) cfg.milestones.push_back(parse_number<std::uint64_t>(key, w));
  } else if (key == "weight_decay") cfg.adam.weight_decay = real();
  else if (key == "beta1") cfg.adam.beta1 = real();
  else if (key == "beta2") cfg.adam.beta2 = real();
  else if (key == "adam_eps") cfg.adam.eps = real();
  else if (key == "grad_clip") cfg.grad_clip = real();
  else if (key == "augment_rotation") {
    if (value != "0" && value != "1") throw ConfigError("augment_rotation must be 0 or 1");
    cfg.augment_rotation = value == "1";
  } else if (key == "steps") cfg.steps = parse_number<std::uint64_t>(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_number<std::uint64_t>(key, value);
  else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "dataset") cfg.dataset = std::string(value);
  else if (key == "output_dir") cfg.output_dir = std::string(value);
  else throw ConfigError(fmt::format("unknown config key '{}'", key));
}

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(fmt::format("line {}: expected 'key = value'", line_no));
    try {
      set_option(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("line {}: {}", line_no, e.what()));
    }
  }
  if (!base_dir.empty()) {
    if (!cfg.dataset.empty() && cfg.dataset.is_relative()) cfg.dataset = base_dir / cfg.dataset;
    if (cfg.output_dir.is_relative()) cfg.output_dir = base_dir / cfg.output_dir;
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.parent_path());
}

std::string format_config(const RunConfig& c) {
  std::string s;
  auto put = [&](std::string_view k, const std::string& v) { s += fmt::format("{} = {}\n", k, v); };
  put("layers", std::to_string(c.head.num_layers));
  put("queries", std::to_string(c.head.num_queries));
  put("hidden", std::to_string(c.head.hidden));
  put("heads", std::to_string(c.head.heads));
  put("classes", std::to_string(c.head.num_classes));
  put("stem_channels", std::to_string(c.stem_channels));
  put("layer_norm_eps", fmt::format("{}", c.head.layer_norm_eps));
  put("bounds_lo", join(c.head.bounds.lo));
  put("bounds_hi", join(c.head.bounds.hi));
  put("box_weight", fmt::format("{}", c.loss.box_weight));
  put("focal_alpha", fmt::format("{}", c.loss.alpha));
  put("focal_gamma", fmt::format("{}", c.loss.gamma));
  put("l1_weights", join(c.loss.l1_weights));
  put("lr", fmt::format("{}", c.lr));
  put("lr_decay", fmt::format("{}", c.lr_decay));
  std::string ms;
  for (auto m : c.milestones) ms += (ms.empty() ? "" : " ") + std::to_string(m);
  put("milestones", ms);
  put("weight_decay", fmt::format("{}", c.adam.weight_decay));
  put("beta1", fmt::format("{}", c.adam.beta1));
  put("beta2", fmt::format("{}", c.adam.beta2));
  put("adam_eps", fmt::format("{}", c.adam.eps));
  put("grad_clip", fmt::format("{}", c.grad_clip));
  put("augment_rotation", c.augment_rotation ? "1" : "0");
  put("steps", std::to_string(c.steps));
  put("batch_size", std::to_string(c.batch_size));
  put("seed", std::to_string(c.seed));
  put("dataset", c.dataset.string());
  put("output_dir", c.output_dir.string());
  return s;
}

std::uint64_t architecture_hash(const head::HeadConfig& h, std::size_t stem_channels) {
  const std::string text =
      fmt::format("layers={};queries={};hidden={};heads={};classes={};stem={};ln_eps={};lo={};hi={}", h.num_layers,
                  h.num_queries, h.hidden, h.heads, h.num_classes, stem_channels, h.layer_norm_eps,
                  join(h.bounds.lo), join(h.bounds.hi));
  std::uint64_t v = 14695981039346656037ULL;
  for (unsigned char ch : text) {
    v ^= ch;
    v *= 1099511628211ULL;
  }
  return v;
}

}  // namespace mvdet::run
