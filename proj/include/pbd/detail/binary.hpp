#pragma once

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "pbd/errors.hpp"

namespace pbd::detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

class ByteWriter {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void put_f32(std::span<const double> values) {
    for (double v : values) put(static_cast<float>(v));
  }
  /// Appends the CRC32 of everything written so far and returns the buffer.
  std::vector<std::uint8_t> finish_with_crc() {
    const std::uint32_t crc = crc32_of(bytes_);
    put(crc);
    return std::move(bytes_);
  }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::vector<double> get_f32(std::size_t count) {
    need(count * sizeof(float));
    std::vector<double> out(count);
    for (auto& v : out) v = static_cast<double>(get<float>());
    return out;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(ErrorKind::BadCrc, "unexpected end of stream");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

/// Validates magic and the trailing CRC32; returns the body without the CRC.
inline std::span<const std::uint8_t> check_envelope(std::span<const std::uint8_t> bytes, std::string_view magic) {
  const std::size_t prefix = std::min(bytes.size(), magic.size());
  if (std::memcmp(bytes.data(), magic.data(), prefix) != 0) {
    throw Error(ErrorKind::BadMagic, "expected magic '" + std::string(magic) + "'");
  }
  // A stream that ends inside the header is a truncation.
  if (bytes.size() < magic.size() + 4) throw Error(ErrorKind::BadCrc, "stream too short for CRC trailer");
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  if (crc32_of(body) != stored) throw Error(ErrorKind::BadCrc, "CRC32 mismatch");
  return body;
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "short write to '" + path + "'");
}

}  // namespace pbd::detail
