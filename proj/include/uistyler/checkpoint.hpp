#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "uistyler/params.hpp"

// Checkpoint container: named float32 tensors plus a config snapshot and a
// step counter. Little-endian binary layout:
//
//   magic   "UISTYCKP" (8 bytes)
//   u32     format version (currently 1)
//   u64     training step
//   u32     config text length, then bytes
//   u32     tensor count
//   per tensor: u32 name length, name bytes, u8 dtype (0 = f32),
//               u32 rank, i32 dims[rank], u64 payload offset, u64 byte length
//   payload bytes
//
// Round trips are bit-exact; truncation or version mismatch raises
// IntegrityError naming the failing tensor where applicable.

namespace uistyler {

constexpr uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[9] = "UISTYCKP";

struct CheckpointTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

struct Checkpoint {
  uint64_t step = 0;
  std::string config_text;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor& find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw IntegrityError("checkpoint: missing tensor '" + name + "'");
  }
};

namespace ckpt_detail {

template <class T>
inline void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));  // little-endian hosts only; format is LE
}

template <class T>
inline T get(const std::vector<char>& buf, size_t& pos, const std::string& what) {
  if (pos + sizeof(T) > buf.size())
    throw IntegrityError("checkpoint: truncated while reading " + what);
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

inline std::string get_str(const std::vector<char>& buf, size_t& pos, uint32_t len,
                           const std::string& what) {
  if (pos + len > buf.size()) throw IntegrityError("checkpoint: truncated while reading " + what);
  std::string s(buf.data() + pos, len);
  pos += len;
  return s;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::string header;
  header.append(kCheckpointMagic, 8);
  ckpt_detail::put<uint32_t>(header, kCheckpointVersion);
  ckpt_detail::put<uint64_t>(header, ck.step);
  ckpt_detail::put<uint32_t>(header, static_cast<uint32_t>(ck.config_text.size()));
  header += ck.config_text;
  ckpt_detail::put<uint32_t>(header, static_cast<uint32_t>(ck.tensors.size()));

  std::string payload;
  for (const auto& t : ck.tensors) {
    ckpt_detail::put<uint32_t>(header, static_cast<uint32_t>(t.name.size()));
    header += t.name;
    ckpt_detail::put<uint8_t>(header, 0);  // f32
    ckpt_detail::put<uint32_t>(header, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) ckpt_detail::put<int32_t>(header, d);
    ckpt_detail::put<uint64_t>(header, payload.size());
    ckpt_detail::put<uint64_t>(header, t.data.size() * sizeof(float));
    payload.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open for write: " + path);
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!f) throw IoError("checkpoint: write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open: " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  size_t pos = 0;
  if (buf.size() < 8 || std::memcmp(buf.data(), kCheckpointMagic, 8) != 0)
    throw IntegrityError("checkpoint: bad magic in " + path);
  pos = 8;
  const auto version = ckpt_detail::get<uint32_t>(buf, pos, "version");
  if (version != kCheckpointVersion)
    throw IntegrityError("checkpoint: unsupported format version " + std::to_string(version) +
                         " (expected " + std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  ck.step = ckpt_detail::get<uint64_t>(buf, pos, "step");
  const auto cfg_len = ckpt_detail::get<uint32_t>(buf, pos, "config length");
  ck.config_text = ckpt_detail::get_str(buf, pos, cfg_len, "config text");
  const auto count = ckpt_detail::get<uint32_t>(buf, pos, "tensor count");

  struct Entry {
    std::string name;
    std::vector<int> shape;
    uint64_t offset, bytes;
  };
  std::vector<Entry> entries;
  for (uint32_t i = 0; i < count; ++i) {
    Entry e;
    const auto name_len = ckpt_detail::get<uint32_t>(buf, pos, "tensor name length");
    e.name = ckpt_detail::get_str(buf, pos, name_len, "tensor name");
    const auto dtype = ckpt_detail::get<uint8_t>(buf, pos, e.name + " dtype");
    if (dtype != 0) throw IntegrityError("checkpoint: tensor '" + e.name + "' has unsupported dtype");
    const auto rank = ckpt_detail::get<uint32_t>(buf, pos, e.name + " rank");
    long n = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      const auto d = ckpt_detail::get<int32_t>(buf, pos, e.name + " dims");
      e.shape.push_back(d);
      n *= d;
    }
    e.offset = ckpt_detail::get<uint64_t>(buf, pos, e.name + " offset");
    e.bytes = ckpt_detail::get<uint64_t>(buf, pos, e.name + " length");
    if (e.bytes != static_cast<uint64_t>(n) * sizeof(float))
      throw IntegrityError("checkpoint: tensor '" + e.name + "' length does not match its shape");
    entries.push_back(std::move(e));
  }

  const size_t payload_start = pos;
  for (const auto& e : entries) {
    if (payload_start + e.offset + e.bytes > buf.size())
      throw IntegrityError("checkpoint: truncated payload for tensor '" + e.name + "'");
    CheckpointTensor t;
    t.name = e.name;
    t.shape = e.shape;
    t.data.resize(e.bytes / sizeof(float));
    std::memcpy(t.data.data(), buf.data() + payload_start + e.offset, e.bytes);
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

// Snapshot a parameter registry (float only).
inline Checkpoint snapshot(const ParamList<float>& params, uint64_t step,
                           std::string config_text) {
  Checkpoint ck;
  ck.step = step;
  ck.config_text = std::move(config_text);
  for (const auto& [name, t] : params.items)
    ck.tensors.push_back({name, t.shape(), t.values()});
  return ck;
}

// Copy checkpoint tensors back into an existing registry by name.
inline void restore(const Checkpoint& ck, ParamList<float>& params) {
  for (auto& [name, t] : params.items) {
    const auto& src = ck.find(name);
    if (src.shape != t.shape())
      throw IntegrityError("checkpoint: tensor '" + name + "' shape mismatch");
    t.mutable_values() = src.data;
  }
}

}  // namespace uistyler
