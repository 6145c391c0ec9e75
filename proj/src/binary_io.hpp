#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "icrl/errors.hpp"

namespace icrl::detail {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written assuming a little-endian host");

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u16(std::uint16_t v) { raw(&v, sizeof v); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f32s(std::span<const float> v) { raw(v.data(), v.size_bytes()); }

  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::uint16_t u16(const char* what) { return pod<std::uint16_t>(what); }
  std::uint32_t u32(const char* what) { return pod<std::uint32_t>(what); }
  std::vector<float> f32s(std::size_t n, const char* what) {
    if (n > (bytes_.size() - pos_) / sizeof(float)) {
      throw ParseError(std::string("truncated input while reading ") + what, pos_);
    }
    std::vector<float> out(n);
    std::memcpy(out.data(), bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
    return out;
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (n > bytes_.size() - pos_) {
      throw ParseError(std::string("truncated input while reading ") + what, pos_);
    }
  }
  template <class P>
  P pod(const char* what) {
    need(sizeof(P), what);
    P v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(P));
    pos_ += sizeof(P);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace icrl::detail
