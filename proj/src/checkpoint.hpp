// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dvnc {

// On-disk model snapshot. Layout:
//   8-byte magic "DVNCCKPT"
//   u32 version
//   u32 array count
//   per array: u16 name length, name bytes, u8 rank, u32 dims...,
//              float32 little-endian row-major payload
//   RNG state block: u32 word count, u64 words (little-endian)
//   config block: u32 byte length, UTF-8 JSON snapshot
// Training runs in 64-bit; payloads are stored as 32-bit floats.
struct Checkpoint {
  struct Array {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<float> data;
  };

  static constexpr uint32_t kVersion = 1;

  uint32_t version = kVersion;
  std::vector<Array> arrays;
  std::vector<uint64_t> rng_state;
  std::string config_json;

  const Array* find(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace dvnc
