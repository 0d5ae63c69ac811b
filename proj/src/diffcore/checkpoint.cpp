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

#include "mvdet/diffcore/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>

namespace mvdet::diff {
namespace {

constexpr char kMagic[8] = {'M', 'V', 'D', 'E', 'T', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> data) : data_(std::move(data)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(data_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw CheckpointError("checkpoint truncated");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::vector<char> data_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Checkpoint::find(std::string_view name) const {
  for (const auto& r : records)
    if (r.name == name) return &r.value;
  return nullptr;
}

void Checkpoint::put(std::string name, Tensor value) {
  for (auto& r : records) {
    if (r.name == name) {
      r.value = std::move(value);
      return;
    }
  }
  records.push_back({std::move(name), std::move(value)});
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  w.bytes(std::string_view(kMagic, sizeof(kMagic)));
  w.u32(kVersion);
  w.u64(ckpt.config_hash);
  w.u64(ckpt.records.size());
  for (const auto& r : ckpt.records) {
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name);
    w.u32(static_cast<std::uint32_t>(r.value.rank()));
    for (std::size_t d : r.value.shape()) w.u64(d);
    for (double v : r.value.data()) w.f64(v);
  }
  const auto tmp = std::filesystem::path(path).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));
  if (r.bytes(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw CheckpointError(path.string() + " is not a checkpoint");
  }
  if (const auto v = r.u32(); v != kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(v));
  }
  Checkpoint ckpt;
  ckpt.config_hash = r.u64();
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    rec.name = r.bytes(r.u32());
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    std::vector<double> data(shape_size(shape));
    for (auto& v : data) v = r.f64();
    rec.value = Tensor(std::move(shape), std::move(data));
    ckpt.records.push_back(std::move(rec));
  }
  if (!r.done()) throw CheckpointError("trailing bytes in checkpoint " + path.string());
  return ckpt;
}

void store_parameters(const ParameterSet& params, Checkpoint& ckpt) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].value;
    t.set_requires_grad(false);
    ckpt.put(params[i].name, std::move(t));
  }
}

void load_parameters(ParameterSet& params, const Checkpoint& ckpt) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    const Tensor* t = ckpt.find(p.name);
    if (t == nullptr) throw CheckpointError("checkpoint lacks parameter " + p.name);
    if (t->shape() != p.value.shape()) {
      throw CheckpointError("shape mismatch for " + p.name + ": checkpoint " +
                            shape_string(t->shape()) + ", model " + shape_string(p.value.shape()));
    }
    std::copy(t->data().begin(), t->data().end(), p.value.mutable_data().begin());
  }
}

}  // namespace mvdet::diff
