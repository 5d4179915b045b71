// SPDX-License-Identifier: Apache-2.0
#include "checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "error.hpp"

namespace dvnc {

namespace {

constexpr char kMagic[8] = {'D', 'V', 'N', 'C', 'C', 'K', 'P', 'T'};

void put_u16(std::string& buf, uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& buf, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size())
      fail(ErrorKind::io, "checkpoint: truncated file");
  }
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(buf[pos++]);
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint8_t>(buf[pos]) |
                 (static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

const Checkpoint::Array* Checkpoint::find(const std::string& name) const {
  for (const Array& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string buf;
  buf.append(kMagic, sizeof(kMagic));
  put_u32(buf, ckpt.version);
  put_u32(buf, static_cast<uint32_t>(ckpt.arrays.size()));
  for (const auto& a : ckpt.arrays) {
    if (a.name.size() > 0xffff)
      fail(ErrorKind::io, "checkpoint: array name too long");
    if (a.shape.empty() || a.shape.size() > 0xff)
      fail(ErrorKind::io, "checkpoint: bad array rank");
    put_u16(buf, static_cast<uint16_t>(a.name.size()));
    buf.append(a.name);
    buf.push_back(static_cast<char>(a.shape.size()));
    int64_t n = 1;
    for (int64_t d : a.shape) {
      put_u32(buf, static_cast<uint32_t>(d));
      n *= d;
    }
    if (n != static_cast<int64_t>(a.data.size()))
      fail(ErrorKind::io, "checkpoint: array shape/data mismatch");
    for (float v : a.data) put_f32(buf, v);
  }
  put_u32(buf, static_cast<uint32_t>(ckpt.rng_state.size()));
  for (uint64_t w : ckpt.rng_state) put_u64(buf, w);
  put_u32(buf, static_cast<uint32_t>(ckpt.config_json.size()));
  buf.append(ckpt.config_json);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "checkpoint: cannot open for write: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(ErrorKind::io, "checkpoint: write failed: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "checkpoint: cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());

  Reader r{buf};
  if (r.bytes(8) != std::string(kMagic, sizeof(kMagic)))
    fail(ErrorKind::io, "checkpoint: bad magic");
  Checkpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != Checkpoint::kVersion)
    fail(ErrorKind::io, "checkpoint: unsupported version");

  const uint32_t count = r.u32();
  ckpt.arrays.resize(count);
  for (uint32_t i = 0; i < count; ++i) {
    auto& a = ckpt.arrays[i];
    a.name = r.bytes(r.u16());
    const uint8_t rank = r.u8();
    int64_t n = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      a.shape.push_back(static_cast<int64_t>(r.u32()));
      n *= a.shape.back();
    }
    a.data.resize(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) a.data[static_cast<size_t>(j)] = r.f32();
  }
  const uint32_t rng_words = r.u32();
  for (uint32_t i = 0; i < rng_words; ++i) ckpt.rng_state.push_back(r.u64());
  ckpt.config_json = r.bytes(r.u32());
  return ckpt;
}

}  // namespace dvnc
