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
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mvdet/diffcore/graph.hpp"

namespace mvdet::diff {

// On-disk layout, all integers and reals little-endian:
//
//   char[8]  magic "MVDETCKP"
//   u32      format version (1)
//   u64      config hash
//   u64      record count
//   records, in order:
//     u32    name length N, then N bytes of name (UTF-8, no terminator)
//     u32    rank R, then R x u64 dimensions
//     f64    prod(dimensions) values, row-major
struct CheckpointRecord {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::vector<CheckpointRecord> records;

  const Tensor* find(std::string_view name) const;
  void put(std::string name, Tensor value);
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Appends every parameter as a record under its own name.
void store_parameters(const ParameterSet& params, Checkpoint& ckpt);
// Every parameter must be present with an identical shape.
void load_parameters(ParameterSet& params, const Checkpoint& ckpt);

}  // namespace mvdet::diff
