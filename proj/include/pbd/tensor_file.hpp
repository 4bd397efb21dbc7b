#pragma once

// TensorFile: "PBDT" | u16 version | u8 rank | u32 dims[rank]
//             | f32 payload (row-major, little-endian) | u32 CRC32

#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "pbd/detail/binary.hpp"
#include "pbd/grids.hpp"

namespace pbd {

inline constexpr std::uint16_t kTensorVersion = 1;

struct Tensor {
  std::vector<std::size_t> dims;
  std::vector<double> data;

  std::size_t element_count() const {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
  }
};

inline std::vector<std::uint8_t> save_tensor(const Tensor& t) {
  if (t.dims.empty() || t.dims.size() > 255) throw Error(ErrorKind::InvalidArgument, "tensor rank must be 1..255");
  if (t.element_count() != t.data.size()) throw Error(ErrorKind::DimensionMismatch, "tensor payload length vs dims");
  detail::ByteWriter w;
  w.put_bytes("PBDT");
  w.put(kTensorVersion);
  w.put(static_cast<std::uint8_t>(t.dims.size()));
  for (auto d : t.dims) w.put(static_cast<std::uint32_t>(d));
  w.put_f32(t.data);
  return w.finish_with_crc();
}

inline Tensor load_tensor(std::span<const std::uint8_t> bytes) {
  const auto body = detail::check_envelope(bytes, "PBDT");
  detail::ByteReader r(body.subspan(4));
  const auto version = r.get<std::uint16_t>();
  if (version != kTensorVersion) throw Error(ErrorKind::BadMagic, "unsupported tensor version " + std::to_string(version));
  Tensor t;
  t.dims.resize(r.get<std::uint8_t>());
  for (auto& d : t.dims) d = r.get<std::uint32_t>();
  if (r.remaining() != t.element_count() * sizeof(float)) {
    throw Error(ErrorKind::DimensionMismatch, "tensor payload length does not match dims");
  }
  t.data = r.get_f32(t.element_count());
  return t;
}

inline Tensor load_tensor_file(const std::string& path) { return load_tensor(detail::read_file(path)); }
inline void save_tensor_file(const Tensor& t, const std::string& path) { detail::write_file(path, save_tensor(t)); }

/// Stacks equally shaped grids into an N x H x W tensor.
inline Tensor stack_grids(const std::vector<RealGrid>& grids) {
  if (grids.empty()) throw Error(ErrorKind::InvalidArgument, "cannot stack zero grids");
  const Shape s = grids.front().shape();
  Tensor t{{grids.size(), s.height, s.width}, {}};
  t.data.reserve(grids.size() * s.size());
  for (const auto& g : grids) {
    require_same_shape(g.shape(), s, "stack_grids");
    t.data.insert(t.data.end(), g.data().begin(), g.data().end());
  }
  return t;
}

/// Splits an N x H x W (or H x W) tensor into grids.
inline std::vector<RealGrid> unstack_grids(const Tensor& t) {
  if (t.dims.size() == 2) return {RealGrid(t.dims[0], t.dims[1], t.data)};
  if (t.dims.size() != 3) throw Error(ErrorKind::DimensionMismatch, "expected a rank-2 or rank-3 tensor");
  const std::size_t n = t.dims[1] * t.dims[2];
  std::vector<RealGrid> out;
  for (std::size_t j = 0; j < t.dims[0]; ++j) {
    out.emplace_back(t.dims[1], t.dims[2],
                     std::vector<double>(t.data.begin() + static_cast<long>(j * n),
                                         t.data.begin() + static_cast<long>((j + 1) * n)));
  }
  return out;
}

}  // namespace pbd
