#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <zlib.h>

#include "egl/errors.hpp"

namespace egl::bytes {

using Buffer = std::vector<std::uint8_t>;

inline void put_u64(Buffer& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64(Buffer& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline double get_f64(const std::uint8_t* p) { return std::bit_cast<double>(get_u64(p)); }

inline std::uint32_t crc32(const Buffer& data) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < data.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(data.size() - off, 1u << 30));
    crc = ::crc32(crc, data.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline Buffer read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  return Buffer(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const Buffer& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error("short write to " + path.string());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("short write to " + path.string());
}

// Bounds-checked sequential reader; errors carry the absolute byte offset.
class Reader {
 public:
  Reader(const Buffer& data, std::size_t begin, std::size_t end, std::size_t base = 0)
      : data_(data), pos_(begin), end_(end), base_(base) {}

  std::size_t offset() const noexcept { return base_ + pos_; }

  const std::uint8_t* take(std::size_t n, const char* what) {
    if (n > end_ - pos_) throw FormatError(std::string("truncated ") + what, offset());
    const std::uint8_t* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::uint8_t u8(const char* what) { return *take(1, what); }
  double f64(const char* what) { return get_f64(take(8, what)); }

  bool done() const noexcept { return pos_ == end_; }

 private:
  const Buffer& data_;
  std::size_t pos_;
  std::size_t end_;
  std::size_t base_;
};

}  // namespace egl::bytes
