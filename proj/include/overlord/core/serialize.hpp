#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "overlord/core/tensor.hpp"

namespace overlord::io {

// All binary artifacts are little-endian; x86 is assumed (checked at build
// time below for safety on exotic hosts).
static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian");

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open for write: " + path);
    path_ = path;
  }

  void magic(const char tag[9]) { out_.write(tag, 8); }
  void u8(std::uint8_t v) { out_.write(reinterpret_cast<const char*>(&v), 1); }
  void u32(std::uint32_t v) {
    out_.write(reinterpret_cast<const char*>(&v), 4);
  }
  void u64(std::uint64_t v) {
    out_.write(reinterpret_cast<const char*>(&v), 8);
  }
  void f32(float v) { out_.write(reinterpret_cast<const char*>(&v), 4); }
  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), std::streamsize(n));
  }
  void str(const std::string& s) {
    u32(std::uint32_t(s.size()));
    bytes(s.data(), s.size());
  }
  void f32_array(const float* p, std::size_t n) { bytes(p, n * 4); }

  void close() {
    out_.close();
    if (!out_) throw std::runtime_error("write failed: " + path_);
  }

 private:
  std::ofstream out_;
  std::string path_;
};

class Reader {
 public:
  explicit Reader(const std::string& path)
      : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw std::runtime_error("cannot open for read: " + path);
  }

  void expect_magic(const char tag[9]) {
    char buf[8];
    read_raw(buf, 8, "magic");
    if (std::memcmp(buf, tag, 8) != 0)
      throw std::runtime_error(path_ + ": bad magic, expected " +
                               std::string(tag, 8));
  }
  std::uint8_t u8() {
    std::uint8_t v;
    read_raw(&v, 1, "u8");
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    read_raw(&v, 4, "u32");
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    read_raw(&v, 8, "u64");
    return v;
  }
  float f32() {
    float v;
    read_raw(&v, 4, "f32");
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    std::string s(n, '\0');
    read_raw(s.data(), n, "string");
    return s;
  }
  void f32_array(float* p, std::size_t n) { read_raw(p, n * 4, "f32 block"); }
  void bytes(void* p, std::size_t n) { read_raw(p, n, "bytes"); }

  const std::string& path() const { return path_; }

 private:
  void read_raw(void* p, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(p), std::streamsize(n));
    if (std::size_t(in_.gcount()) != n)
      throw std::runtime_error(path_ + ": truncated file while reading " +
                               std::string(what));
  }

  std::ifstream in_;
  std::string path_;
};

// FNV-1a over a file's bytes; used for artifact checksum comparisons.
inline std::uint64_t file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checksum: cannot open " + path);
  std::uint64_t h = 1469598103934665603ULL;
  char buf[65536];
  while (in) {
    in.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= std::uint8_t(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  return h;
}

template <typename T>
inline std::uint64_t tensor_checksum(const Tensor<T>& t) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
  for (std::size_t i = 0; i < t.numel() * sizeof(T); ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace overlord::io
