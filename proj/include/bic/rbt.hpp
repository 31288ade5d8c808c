#pragma once
// RBT raw tensor container: magic "RBT1", LE u32 rank, LE u32 dims,
// row-major LE f32 payload. Bit-exact round trip.
// Checkpoint container "RBCK": versioned manifest of named RBT payloads
// plus a flat key=value config text block.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "bic/core.hpp"
#include "bic/tensor.hpp"

namespace bic {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace detail {
inline void put_u32(std::ostream& os, uint32_t x) { os.write(reinterpret_cast<const char*>(&x), 4); }
inline void put_u64(std::ostream& os, uint64_t x) { os.write(reinterpret_cast<const char*>(&x), 8); }
inline uint32_t get_u32(std::istream& is) {
  uint32_t x = 0;
  is.read(reinterpret_cast<char*>(&x), 4);
  return x;
}
inline uint64_t get_u64(std::istream& is) {
  uint64_t x = 0;
  is.read(reinterpret_cast<char*>(&x), 8);
  return x;
}
}  // namespace detail

inline void write_rbt_stream(std::ostream& os, const Tensor<float>& t) {
  os.write("RBT1", 4);
  detail::put_u32(os, uint32_t(t.dims.size()));
  for (int d : t.dims) detail::put_u32(os, uint32_t(d));
  os.write(reinterpret_cast<const char*>(t.data()), std::streamsize(t.size() * 4));
}

inline Tensor<float> read_rbt_stream(std::istream& is, const std::string& what) {
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "RBT1", 4) != 0)
    throw UnreadableFile("read_rbt: bad magic in " + what);
  uint32_t rank = detail::get_u32(is);
  if (rank > 8) throw UnreadableFile("read_rbt: implausible rank in " + what);
  std::vector<int> dims(rank);
  for (auto& d : dims) d = int(detail::get_u32(is));
  Tensor<float> t(dims);
  is.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.size() * 4));
  if (!is) throw UnreadableFile("read_rbt: truncated payload in " + what);
  return t;
}

inline void write_rbt(const std::string& path, const Tensor<float>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UnreadableFile("write_rbt: cannot open " + path);
  write_rbt_stream(os, t);
  if (!os) throw UnreadableFile("write_rbt: write failed " + path);
}

inline Tensor<float> read_rbt(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw UnreadableFile("read_rbt: cannot open " + path);
  return read_rbt_stream(is, path);
}

struct Checkpoint {
  std::string config;  // key=value lines
  std::vector<std::pair<std::string, Tensor<float>>> params;  // ordered
};

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UnreadableFile("write_checkpoint: cannot open " + path);
  os.write("RBCK", 4);
  detail::put_u32(os, 1);  // version
  detail::put_u32(os, uint32_t(ck.config.size()));
  os.write(ck.config.data(), std::streamsize(ck.config.size()));
  detail::put_u32(os, uint32_t(ck.params.size()));
  uint64_t offset = 0;
  for (const auto& [name, t] : ck.params) {
    detail::put_u32(os, uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    detail::put_u32(os, uint32_t(t.dims.size()));
    for (int d : t.dims) detail::put_u32(os, uint32_t(d));
    detail::put_u64(os, offset);
    offset += uint64_t(t.size()) * 4 + 4 /*magic*/ + 4 /*rank*/ + 4 * t.dims.size();
  }
  for (const auto& [name, t] : ck.params) write_rbt_stream(os, t);
  if (!os) throw UnreadableFile("write_checkpoint: write failed " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw UnreadableFile("read_checkpoint: cannot open " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "RBCK", 4) != 0)
    throw UnreadableFile("read_checkpoint: bad magic in " + path);
  uint32_t version = detail::get_u32(is);
  if (version != 1) throw UnreadableFile("read_checkpoint: unsupported version");
  Checkpoint ck;
  uint32_t cfg_len = detail::get_u32(is);
  ck.config.resize(cfg_len);
  is.read(ck.config.data(), cfg_len);
  uint32_t n = detail::get_u32(is);
  struct Entry { std::string name; std::vector<int> dims; uint64_t offset; };
  std::vector<Entry> entries(n);
  for (auto& e : entries) {
    uint32_t len = detail::get_u32(is);
    e.name.resize(len);
    is.read(e.name.data(), len);
    uint32_t rank = detail::get_u32(is);
    e.dims.resize(rank);
    for (auto& d : e.dims) d = int(detail::get_u32(is));
    e.offset = detail::get_u64(is);
  }
  if (!is) throw UnreadableFile("read_checkpoint: truncated manifest in " + path);
  std::streampos base = is.tellg();
  for (auto& e : entries) {
    is.seekg(base + std::streamoff(e.offset));
    Tensor<float> t = read_rbt_stream(is, path + ":" + e.name);
    if (t.dims != e.dims) throw UnreadableFile("read_checkpoint: manifest/payload shape clash at " + e.name);
    ck.params.emplace_back(e.name, std::move(t));
  }
  return ck;
}

}  // namespace bic
