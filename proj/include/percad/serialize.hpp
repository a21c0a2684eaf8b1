#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "percad/tensor.hpp"

namespace percad::io {

inline std::uint64_t fnv1a(const void* data, size_t len,
                           std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

// Little-endian binary writer that tracks a running FNV-1a of the payload.
class BinWriter {
 public:
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void i64(std::int64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void f32_array(const float* p, size_t n) { raw(p, n * 4); }
  void f64_array(const double* p, size_t n) { raw(p, n * 8); }

  template <typename S>
  void tensor(const Tensor<S>& t) {
    i64(t.shape.n);
    i64(t.shape.c);
    i64(t.shape.h);
    i64(t.shape.w);
    if constexpr (std::is_same_v<S, float>) {
      u8(0);
      f32_array(t.ptr(), static_cast<size_t>(t.size()));
    } else {
      u8(1);
      f64_array(t.ptr(), static_cast<size_t>(t.size()));
    }
  }

  std::uint64_t digest() const { return fnv1a(buf_.data(), buf_.size()); }

  void write_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    PERCAD_CHECK(os.good(), "cannot open for writing: " + path);
    os.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    PERCAD_CHECK(os.good(), "write failed: " + path);
  }

  const std::vector<char>& buffer() const { return buf_; }

 private:
  void raw(const void* p, size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  std::vector<char> buf_;
};

class BinReader {
 public:
  explicit BinReader(std::vector<char> buf) : buf_(std::move(buf)) {}

  static BinReader from_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    PERCAD_CHECK(is.good(), "cannot open: " + path);
    const auto size = is.tellg();
    is.seekg(0);
    std::vector<char> buf(static_cast<size_t>(size));
    is.read(buf.data(), size);
    PERCAD_CHECK(is.good(), "read failed: " + path);
    return BinReader(std::move(buf));
  }

  std::uint8_t u8() {
    std::uint8_t v;
    raw(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8);
    return v;
  }
  std::int64_t i64() {
    std::int64_t v;
    raw(&v, 8);
    return v;
  }
  double f64() {
    double v;
    raw(&v, 8);
    return v;
  }
  std::string str() {
    const auto n = u32();
    PERCAD_CHECK(pos_ + n <= buf_.size(), "truncated string field");
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  template <typename S>
  Tensor<S> tensor() {
    Shape s;
    s.n = i64();
    s.c = i64();
    s.h = i64();
    s.w = i64();
    PERCAD_CHECK(s.n >= 0 && s.c >= 0 && s.h >= 0 && s.w >= 0 &&
                     s.size() <= static_cast<Index>(buf_.size()),
                 "corrupt tensor header");
    const auto tag = u8();
    Tensor<S> t(s);
    if (tag == 0) {
      std::vector<float> tmp(static_cast<size_t>(s.size()));
      raw(tmp.data(), tmp.size() * 4);
      for (Index i = 0; i < s.size(); ++i)
        t.data[i] = static_cast<S>(tmp[static_cast<size_t>(i)]);
    } else {
      std::vector<double> tmp(static_cast<size_t>(s.size()));
      raw(tmp.data(), tmp.size() * 8);
      for (Index i = 0; i < s.size(); ++i)
        t.data[i] = static_cast<S>(tmp[static_cast<size_t>(i)]);
    }
    return t;
  }

  size_t remaining() const { return buf_.size() - pos_; }

  // FNV-1a of everything before the current cursor.
  std::uint64_t digest_consumed() const { return fnv1a(buf_.data(), pos_); }

  // For files that end in a u64 FNV-1a of the preceding payload: verifies
  // it up front so truncation and corruption surface as one error.
  std::uint64_t verify_trailing_digest(const std::string& what) const {
    if (buf_.size() < 8)
      throw Error(what + ": checksum mismatch (truncated or corrupt file)");
    std::uint64_t stored = 0;
    std::memcpy(&stored, buf_.data() + buf_.size() - 8, 8);
    if (stored != fnv1a(buf_.data(), buf_.size() - 8))
      throw Error(what + ": checksum mismatch (truncated or corrupt file)");
    return stored;
  }

 private:
  void raw(void* p, size_t n) {
    PERCAD_CHECK(pos_ + n <= buf_.size(), "unexpected end of file");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::vector<char> buf_;
  size_t pos_ = 0;
};

}  // namespace percad::io
