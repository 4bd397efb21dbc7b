#pragma once

// WeightBundle: portable decoder weights.
//
//   "PBDW" | u16 version | u32 latent_dim | u32 out_h | u32 out_w | u32 layer_count
//   | u8 output_activation
//   | per layer: u8 kind | u32 shape ints | f32 parameters (row-major)
//   | u32 CRC32 of all preceding bytes
//
// Shape ints per kind:
//   dense            in, out                          params: W[out][in], b[out]
//   transposed-conv  in_c, in_h, in_w, out_c, kh, kw, stride, padding
//                                                     params: W[in_c][out_c][kh][kw], b[out_c]
//   relu/tanh/sigmoid size
//   reshape          channels, height, width
//   batchnorm-frozen channels, spatial                params: scale[channels], shift[channels]
//
// All multi-byte values are little-endian.

#include <cstdint>
#include <string>
#include <vector>

#include "pbd/detail/binary.hpp"
#include "pbd/priors.hpp"

namespace pbd {

inline constexpr std::uint16_t kBundleVersion = 1;

inline std::vector<std::uint8_t> save_bundle(const GeneratorModel& model) {
  detail::ByteWriter w;
  w.put_bytes("PBDW");
  w.put(kBundleVersion);
  w.put(static_cast<std::uint32_t>(model.latent_dim()));
  w.put(static_cast<std::uint32_t>(model.output_shape().height));
  w.put(static_cast<std::uint32_t>(model.output_shape().width));
  w.put(static_cast<std::uint32_t>(model.layers().size()));
  w.put(static_cast<std::uint8_t>(model.output_activation()));
  auto u32 = [&](std::size_t v) { w.put(static_cast<std::uint32_t>(v)); };
  for (const auto& layer : model.layers()) {
    w.put(static_cast<std::uint8_t>(kind_of(layer)));
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, DenseLayer>) {
            u32(l.in);
            u32(l.out);
            w.put_f32(l.weights);
            w.put_f32(l.bias);
          } else if constexpr (std::is_same_v<T, TransposedConvLayer>) {
            for (std::size_t v : {l.in_channels, l.in_height, l.in_width, l.out_channels, l.kernel_height,
                                  l.kernel_width, l.stride, l.padding}) {
              u32(v);
            }
            w.put_f32(l.weights);
            w.put_f32(l.bias);
          } else if constexpr (std::is_same_v<T, ReshapeLayer>) {
            u32(l.shape.channels);
            u32(l.shape.height);
            u32(l.shape.width);
          } else if constexpr (std::is_same_v<T, FrozenBatchNormLayer>) {
            u32(l.channels);
            u32(l.spatial);
            w.put_f32(l.scale);
            w.put_f32(l.shift);
          } else {
            u32(l.size);
          }
        },
        layer);
  }
  return w.finish_with_crc();
}

inline GeneratorModel load_bundle(std::span<const std::uint8_t> bytes) {
  const auto body = detail::check_envelope(bytes, "PBDW");
  detail::ByteReader r(body.subspan(4));
  const auto version = r.get<std::uint16_t>();
  if (version != kBundleVersion) throw Error(ErrorKind::BadMagic, "unsupported bundle version " + std::to_string(version));
  const std::size_t latent = r.get<std::uint32_t>();
  const std::size_t out_h = r.get<std::uint32_t>();
  const std::size_t out_w = r.get<std::uint32_t>();
  const std::size_t count = r.get<std::uint32_t>();
  const auto act_tag = r.get<std::uint8_t>();
  if (act_tag > static_cast<std::uint8_t>(OutputActivation::normalized_nonneg)) {
    throw Error(ErrorKind::UnknownLayerKind, "unknown output activation tag " + std::to_string(act_tag));
  }
  auto u32 = [&] { return static_cast<std::size_t>(r.get<std::uint32_t>()); };
  // Parameter counts are validated against the remaining bytes before allocating.
  auto params = [&](std::size_t n) {
    if (n > r.remaining() / sizeof(float)) throw Error(ErrorKind::DimChainMismatch, "parameter block exceeds stream");
    return r.get_f32(n);
  };

  std::vector<Layer> layers;
  for (std::size_t j = 0; j < count; ++j) {
    const auto tag = r.get<std::uint8_t>();
    switch (static_cast<LayerKind>(tag)) {
      case LayerKind::dense: {
        DenseLayer l;
        l.in = u32();
        l.out = u32();
        l.weights = params(l.in * l.out);
        l.bias = params(l.out);
        layers.emplace_back(std::move(l));
        break;
      }
      case LayerKind::transposed_conv: {
        TransposedConvLayer l;
        l.in_channels = u32();
        l.in_height = u32();
        l.in_width = u32();
        l.out_channels = u32();
        l.kernel_height = u32();
        l.kernel_width = u32();
        l.stride = u32();
        l.padding = u32();
        l.weights = params(l.in_channels * l.out_channels * l.kernel_height * l.kernel_width);
        l.bias = params(l.out_channels);
        layers.emplace_back(std::move(l));
        break;
      }
      case LayerKind::relu: layers.emplace_back(ReluLayer{u32()}); break;
      case LayerKind::tanh: layers.emplace_back(TanhLayer{u32()}); break;
      case LayerKind::sigmoid: layers.emplace_back(SigmoidLayer{u32()}); break;
      case LayerKind::reshape: {
        ReshapeLayer l;
        l.shape.channels = u32();
        l.shape.height = u32();
        l.shape.width = u32();
        layers.emplace_back(l);
        break;
      }
      case LayerKind::batchnorm_frozen: {
        FrozenBatchNormLayer l;
        l.channels = u32();
        l.spatial = u32();
        l.scale = params(l.channels);
        l.shift = params(l.channels);
        layers.emplace_back(std::move(l));
        break;
      }
      default:
        throw Error(ErrorKind::UnknownLayerKind, "layer " + std::to_string(j) + " has kind tag " + std::to_string(tag));
    }
  }
  if (r.remaining() != 0) throw Error(ErrorKind::DimChainMismatch, "trailing bytes after last layer");
  return GeneratorModel(latent, {out_h, out_w}, std::move(layers), static_cast<OutputActivation>(act_tag));
}

inline GeneratorModel load_bundle_file(const std::string& path) { return load_bundle(detail::read_file(path)); }

inline void save_bundle_file(const GeneratorModel& model, const std::string& path) {
  detail::write_file(path, save_bundle(model));
}

}  // namespace pbd
