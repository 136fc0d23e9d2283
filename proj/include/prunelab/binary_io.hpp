#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "prunelab/error.hpp"

namespace prunelab {

/// Little-endian byte sink.
class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

/// Little-endian byte source; every read is bounds-checked.
class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& buf, std::string what)
      : buf_(buf), what_(std::move(what)) {}

  void expect_magic(std::string_view magic) {
    need(magic.size());
    if (std::memcmp(buf_.data() + pos_, magic.data(), magic.size()) != 0) {
      throw FormatError(what_ + ": bad magic, expected \"" + std::string(magic) + "\"");
    }
    pos_ += magic.size();
  }
  std::uint8_t u8() {
    need(1);
    return buf_[pos_++];
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  void need(std::uint64_t n) const {
    if (n > buf_.size() - pos_) {
      throw FormatError(what_ + ": truncated at byte " + std::to_string(pos_) + " (need " +
                        std::to_string(n) + " more, have " + std::to_string(buf_.size() - pos_) + ")");
    }
  }
  std::size_t remaining() const { return buf_.size() - pos_; }
  void expect_end() const {
    if (pos_ != buf_.size()) {
      throw FormatError(what_ + ": " + std::to_string(buf_.size() - pos_) + " trailing bytes");
    }
  }

 private:
  std::uint64_t get(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::vector<std::uint8_t>& buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path);
}

}  // namespace prunelab
