#pragma once

// Little-endian byte packing shared by the dataset and model containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "peka/error.hpp"

namespace peka::binio {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u16(std::uint16_t v) { le(v); }
  void u32(std::uint32_t v) { le(v); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void str16(const std::string& s) {
    if (s.size() > 0xffff) fail(ErrorCode::invalid_config, "string too long for u16 length prefix");
    u16(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void str32(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  template <class T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& buf, std::string origin) : buf_(buf), origin_(std::move(origin)) {}

  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n)
      fail(ErrorCode::truncated, origin_ + ": truncated while reading " + what);
  }
  void bytes(void* out, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint16_t u16(const char* what) { return le<std::uint16_t>(what); }
  std::uint32_t u32(const char* what) { return le<std::uint32_t>(what); }
  double f64(const char* what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }
  std::string str16(const char* what) {
    const std::uint16_t n = u16(what);
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }
  std::string str32(const char* what) {
    const std::uint32_t n = u32(what);
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }
  const std::string& origin() const { return origin_; }

 private:
  template <class T>
  T le(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  const std::vector<std::uint8_t>& buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::io, "failed writing '" + path + "'");
}

}  // namespace peka::binio
