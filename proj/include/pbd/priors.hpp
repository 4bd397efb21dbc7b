#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "pbd/errors.hpp"
#include "pbd/grids.hpp"

namespace pbd {

/// Latent input of a generator.
class LatentVector {
 public:
  LatentVector() = default;
  explicit LatentVector(std::size_t dim) : data_(dim, 0.0) {}
  explicit LatentVector(std::vector<double> data) : data_(std::move(data)) {}

  std::size_t dim() const { return data_.size(); }
  double& operator[](std::size_t j) { return data_[j]; }
  double operator[](std::size_t j) const { return data_[j]; }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }
  double norm() const { return pbd::norm(data_); }
  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }
  bool operator==(const LatentVector&) const = default;

 private:
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Layers. Activations flow as flat vectors tagged with a (channels, height,
// width) shape; dense layers see them flat.

struct TensorShape {
  std::size_t channels = 0;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t size() const { return channels * height * width; }
  bool operator==(const TensorShape&) const = default;
};

inline std::string to_string(const TensorShape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

// Tags are part of the bundle format.
enum class LayerKind : std::uint8_t {
  dense = 1,
  transposed_conv = 2,
  relu = 3,
  tanh = 4,
  sigmoid = 5,
  reshape = 6,
  batchnorm_frozen = 7,
};

enum class OutputActivation : std::uint8_t {
  identity = 0,
  tanh = 1,
  sigmoid = 2,
  normalized_nonneg = 3,
};

/// y = W x + b, W stored out x in row-major.
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;
  std::vector<double> bias;
};

/// PyTorch ConvTranspose2d semantics; weights laid out [in_c][out_c][kh][kw].
struct TransposedConvLayer {
  std::size_t in_channels = 0;
  std::size_t in_height = 0;
  std::size_t in_width = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_height = 0;
  std::size_t kernel_width = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  std::size_t out_height() const { return (in_height - 1) * stride + kernel_height - 2 * padding; }
  std::size_t out_width() const { return (in_width - 1) * stride + kernel_width - 2 * padding; }
};

struct ReluLayer {
  std::size_t size = 0;
};
struct TanhLayer {
  std::size_t size = 0;
};
struct SigmoidLayer {
  std::size_t size = 0;
};

struct ReshapeLayer {
  TensorShape shape;
};

/// Inference-time batch norm folded to a per-channel affine map.
struct FrozenBatchNormLayer {
  std::size_t channels = 0;
  std::size_t spatial = 1;
  std::vector<double> scale;
  std::vector<double> shift;
};

using Layer = std::variant<DenseLayer, TransposedConvLayer, ReluLayer, TanhLayer, SigmoidLayer, ReshapeLayer,
                           FrozenBatchNormLayer>;

inline LayerKind kind_of(const Layer& layer) {
  return std::visit(
      [](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, DenseLayer>) return LayerKind::dense;
        else if constexpr (std::is_same_v<T, TransposedConvLayer>) return LayerKind::transposed_conv;
        else if constexpr (std::is_same_v<T, ReluLayer>) return LayerKind::relu;
        else if constexpr (std::is_same_v<T, TanhLayer>) return LayerKind::tanh;
        else if constexpr (std::is_same_v<T, SigmoidLayer>) return LayerKind::sigmoid;
        else if constexpr (std::is_same_v<T, ReshapeLayer>) return LayerKind::reshape;
        else return LayerKind::batchnorm_frozen;
      },
      layer);
}

namespace detail {

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

[[noreturn]] inline void chain_error(std::size_t index, const std::string& what) {
  throw Error(ErrorKind::DimChainMismatch, "layer " + std::to_string(index) + ": " + what);
}

// Output shape of `layer` applied to `in`; throws DimChainMismatch.
inline TensorShape propagate_shape(const Layer& layer, const TensorShape& in, std::size_t index) {
  return std::visit(
      [&](const auto& l) -> TensorShape {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, DenseLayer>) {
          if (l.in != in.size()) chain_error(index, "dense expects " + std::to_string(l.in) + " inputs, got " + to_string(in));
          if (l.weights.size() != l.in * l.out || l.bias.size() != l.out) chain_error(index, "dense parameter length");
          return {l.out, 1, 1};
        } else if constexpr (std::is_same_v<T, TransposedConvLayer>) {
          const TensorShape expect{l.in_channels, l.in_height, l.in_width};
          if (!(expect == in)) chain_error(index, "transposed-conv expects " + to_string(expect) + ", got " + to_string(in));
          if (l.stride == 0 || l.kernel_height == 0 || l.kernel_width == 0) chain_error(index, "transposed-conv geometry");
          if ((l.in_height - 1) * l.stride + l.kernel_height <= 2 * l.padding ||
              (l.in_width - 1) * l.stride + l.kernel_width <= 2 * l.padding) {
            chain_error(index, "transposed-conv padding too large");
          }
          if (l.weights.size() != l.in_channels * l.out_channels * l.kernel_height * l.kernel_width ||
              l.bias.size() != l.out_channels) {
            chain_error(index, "transposed-conv parameter length");
          }
          return {l.out_channels, l.out_height(), l.out_width()};
        } else if constexpr (std::is_same_v<T, ReshapeLayer>) {
          if (l.shape.size() != in.size()) chain_error(index, "reshape to " + to_string(l.shape) + " from " + to_string(in));
          return l.shape;
        } else if constexpr (std::is_same_v<T, FrozenBatchNormLayer>) {
          if (l.channels != in.channels || l.spatial != in.height * in.width) chain_error(index, "batchnorm shape vs " + to_string(in));
          if (l.scale.size() != l.channels || l.shift.size() != l.channels) chain_error(index, "batchnorm parameter length");
          return in;
        } else {
          if (l.size != in.size()) chain_error(index, "activation size " + std::to_string(l.size) + " vs " + to_string(in));
          return in;
        }
      },
      layer);
}

inline void transposed_conv_forward(const TransposedConvLayer& l, std::span<const double> x, std::vector<double>& y) {
  const std::size_t oh = l.out_height(), ow = l.out_width();
  y.assign(l.out_channels * oh * ow, 0.0);
  for (std::size_t co = 0; co < l.out_channels; ++co) {
    std::fill(y.begin() + static_cast<long>(co * oh * ow), y.begin() + static_cast<long>((co + 1) * oh * ow), l.bias[co]);
  }
  const long pad = static_cast<long>(l.padding);
  for (std::size_t ci = 0; ci < l.in_channels; ++ci) {
    for (std::size_t ih = 0; ih < l.in_height; ++ih) {
      for (std::size_t iw = 0; iw < l.in_width; ++iw) {
        const double xv = x[(ci * l.in_height + ih) * l.in_width + iw];
        if (xv == 0.0) continue;
        for (std::size_t co = 0; co < l.out_channels; ++co) {
          const double* w = &l.weights[((ci * l.out_channels + co) * l.kernel_height) * l.kernel_width];
          double* yc = &y[co * oh * ow];
          for (std::size_t a = 0; a < l.kernel_height; ++a) {
            const long r = static_cast<long>(ih * l.stride + a) - pad;
            if (r < 0 || r >= static_cast<long>(oh)) continue;
            for (std::size_t b = 0; b < l.kernel_width; ++b) {
              const long c = static_cast<long>(iw * l.stride + b) - pad;
              if (c < 0 || c >= static_cast<long>(ow)) continue;
              yc[static_cast<std::size_t>(r) * ow + static_cast<std::size_t>(c)] += xv * w[a * l.kernel_width + b];
            }
          }
        }
      }
    }
  }
}

inline void transposed_conv_backward(const TransposedConvLayer& l, std::span<const double> dy, std::vector<double>& dx) {
  const std::size_t oh = l.out_height(), ow = l.out_width();
  dx.assign(l.in_channels * l.in_height * l.in_width, 0.0);
  const long pad = static_cast<long>(l.padding);
  for (std::size_t ci = 0; ci < l.in_channels; ++ci) {
    for (std::size_t ih = 0; ih < l.in_height; ++ih) {
      for (std::size_t iw = 0; iw < l.in_width; ++iw) {
        double acc = 0.0;
        for (std::size_t co = 0; co < l.out_channels; ++co) {
          const double* w = &l.weights[((ci * l.out_channels + co) * l.kernel_height) * l.kernel_width];
          const double* dyc = &dy[co * oh * ow];
          for (std::size_t a = 0; a < l.kernel_height; ++a) {
            const long r = static_cast<long>(ih * l.stride + a) - pad;
            if (r < 0 || r >= static_cast<long>(oh)) continue;
            for (std::size_t b = 0; b < l.kernel_width; ++b) {
              const long c = static_cast<long>(iw * l.stride + b) - pad;
              if (c < 0 || c >= static_cast<long>(ow)) continue;
              acc += dyc[static_cast<std::size_t>(r) * ow + static_cast<std::size_t>(c)] * w[a * l.kernel_width + b];
            }
          }
        }
        dx[(ci * l.in_height + ih) * l.in_width + iw] = acc;
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// A fixed-weight decoder G: R^latent_dim -> R^(out_h x out_w).
class GeneratorModel {
 public:
  GeneratorModel() = default;
  GeneratorModel(std::size_t latent_dim, Shape output, std::vector<Layer> layers, OutputActivation activation)
      : latent_dim_(latent_dim), output_(output), layers_(std::move(layers)), activation_(activation) {
    if (latent_dim_ == 0 || output_.size() == 0) throw Error(ErrorKind::DimChainMismatch, "empty latent or output dims");
    shapes_.push_back({latent_dim_, 1, 1});
    for (std::size_t j = 0; j < layers_.size(); ++j) shapes_.push_back(detail::propagate_shape(layers_[j], shapes_.back(), j));
    if (shapes_.back().size() != output_.size()) {
      throw Error(ErrorKind::DimChainMismatch, "final layer yields " + to_string(shapes_.back()) + ", model declares " +
                                                   to_string(output_));
    }
  }

  std::size_t latent_dim() const { return latent_dim_; }
  Shape output_shape() const { return output_; }
  const std::vector<Layer>& layers() const { return layers_; }
  OutputActivation output_activation() const { return activation_; }
  /// Activation shape entering layer j (j == layers().size() gives the output).
  const TensorShape& shape_at(std::size_t j) const { return shapes_[j]; }

 private:
  std::size_t latent_dim_ = 0;
  Shape output_;
  std::vector<Layer> layers_;
  OutputActivation activation_ = OutputActivation::identity;
  std::vector<TensorShape> shapes_;
};

/// Intermediate activations of one forward pass, kept for the VJP.
struct ForwardTrace {
  std::vector<std::vector<double>> activations;  // input of each layer, then the pre-activation output
  RealGrid output;
};

inline ForwardTrace generate_traced(const GeneratorModel& model, const LatentVector& z) {
  if (z.dim() != model.latent_dim()) {
    throw Error(ErrorKind::DimensionMismatch,
                "latent dim " + std::to_string(z.dim()) + " != model latent dim " + std::to_string(model.latent_dim()));
  }
  ForwardTrace trace;
  trace.activations.reserve(model.layers().size() + 1);
  trace.activations.push_back(z.values());
  for (const auto& layer : model.layers()) {
    const std::vector<double>& x = trace.activations.back();
    std::vector<double> y;
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, DenseLayer>) {
            y.assign(l.bias.begin(), l.bias.end());
            for (std::size_t o = 0; o < l.out; ++o) {
              const double* w = &l.weights[o * l.in];
              double acc = 0.0;
              for (std::size_t i = 0; i < l.in; ++i) acc += w[i] * x[i];
              y[o] += acc;
            }
          } else if constexpr (std::is_same_v<T, TransposedConvLayer>) {
            detail::transposed_conv_forward(l, x, y);
          } else if constexpr (std::is_same_v<T, ReluLayer>) {
            y.resize(x.size());
            std::transform(x.begin(), x.end(), y.begin(), [](double v) { return v > 0.0 ? v : 0.0; });
          } else if constexpr (std::is_same_v<T, TanhLayer>) {
            y.resize(x.size());
            std::transform(x.begin(), x.end(), y.begin(), [](double v) { return std::tanh(v); });
          } else if constexpr (std::is_same_v<T, SigmoidLayer>) {
            y.resize(x.size());
            std::transform(x.begin(), x.end(), y.begin(), detail::logistic);
          } else if constexpr (std::is_same_v<T, ReshapeLayer>) {
            y = x;
          } else {
            y.resize(x.size());
            for (std::size_t c = 0; c < l.channels; ++c) {
              for (std::size_t s = 0; s < l.spatial; ++s) y[c * l.spatial + s] = l.scale[c] * x[c * l.spatial + s] + l.shift[c];
            }
          }
        },
        layer);
    trace.activations.push_back(std::move(y));
  }

  const std::vector<double>& pre = trace.activations.back();
  std::vector<double> out(pre.size());
  switch (model.output_activation()) {
    case OutputActivation::identity:
      out = pre;
      break;
    case OutputActivation::tanh:
      std::transform(pre.begin(), pre.end(), out.begin(), [](double v) { return std::tanh(v); });
      break;
    case OutputActivation::sigmoid:
      std::transform(pre.begin(), pre.end(), out.begin(), detail::logistic);
      break;
    case OutputActivation::normalized_nonneg: {
      double total = 0.0;
      for (std::size_t j = 0; j < pre.size(); ++j) total += (out[j] = detail::softplus(pre[j]));
      for (auto& v : out) v /= total;
      break;
    }
  }
  trace.output = RealGrid(model.output_shape().height, model.output_shape().width, std::move(out));
  if (!trace.output.all_finite()) throw Error(ErrorKind::NonFiniteOutput, "generator produced non-finite values");
  return trace;
}

inline RealGrid generate(const GeneratorModel& model, const LatentVector& z) {
  return generate_traced(model, z).output;
}

/// Pulls `upstream` (d/d output) back to the latent input.
inline LatentVector generate_vjp(const GeneratorModel& model, const ForwardTrace& trace, const RealGrid& upstream) {
  require_same_shape(upstream.shape(), model.output_shape(), "generate_vjp");
  const std::vector<double>& pre = trace.activations.back();
  const auto& out = trace.output;
  std::vector<double> g(upstream.size());
  switch (model.output_activation()) {
    case OutputActivation::identity:
      for (std::size_t j = 0; j < g.size(); ++j) g[j] = upstream[j];
      break;
    case OutputActivation::tanh:
      for (std::size_t j = 0; j < g.size(); ++j) g[j] = upstream[j] * (1.0 - out[j] * out[j]);
      break;
    case OutputActivation::sigmoid:
      for (std::size_t j = 0; j < g.size(); ++j) g[j] = upstream[j] * out[j] * (1.0 - out[j]);
      break;
    case OutputActivation::normalized_nonneg: {
      // k = s / sum(s), s = softplus(x)
      double total = 0.0;
      double weighted = 0.0;
      for (std::size_t j = 0; j < g.size(); ++j) {
        total += detail::softplus(pre[j]);
        weighted += upstream[j] * out[j];
      }
      for (std::size_t j = 0; j < g.size(); ++j) g[j] = (upstream[j] - weighted) / total * detail::logistic(pre[j]);
      break;
    }
  }

  for (std::size_t idx = model.layers().size(); idx-- > 0;) {
    const std::vector<double>& x = trace.activations[idx];
    const std::vector<double>& y = trace.activations[idx + 1];
    std::vector<double> dx;
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, DenseLayer>) {
            dx.assign(l.in, 0.0);
            for (std::size_t o = 0; o < l.out; ++o) {
              const double go = g[o];
              if (go == 0.0) continue;
              const double* w = &l.weights[o * l.in];
              for (std::size_t i = 0; i < l.in; ++i) dx[i] += go * w[i];
            }
          } else if constexpr (std::is_same_v<T, TransposedConvLayer>) {
            detail::transposed_conv_backward(l, g, dx);
          } else if constexpr (std::is_same_v<T, ReluLayer>) {
            dx.resize(g.size());
            for (std::size_t j = 0; j < g.size(); ++j) dx[j] = x[j] > 0.0 ? g[j] : 0.0;
          } else if constexpr (std::is_same_v<T, TanhLayer>) {
            dx.resize(g.size());
            for (std::size_t j = 0; j < g.size(); ++j) dx[j] = g[j] * (1.0 - y[j] * y[j]);
          } else if constexpr (std::is_same_v<T, SigmoidLayer>) {
            dx.resize(g.size());
            for (std::size_t j = 0; j < g.size(); ++j) dx[j] = g[j] * y[j] * (1.0 - y[j]);
          } else if constexpr (std::is_same_v<T, ReshapeLayer>) {
            dx = g;
          } else {
            dx.resize(g.size());
            for (std::size_t c = 0; c < l.channels; ++c) {
              for (std::size_t s = 0; s < l.spatial; ++s) dx[c * l.spatial + s] = l.scale[c] * g[c * l.spatial + s];
            }
          }
        },
        model.layers()[idx]);
    g = std::move(dx);
  }
  return LatentVector(std::move(g));
}

inline LatentVector generate_vjp(const GeneratorModel& model, const LatentVector& z, const RealGrid& upstream) {
  return generate_vjp(model, generate_traced(model, z), upstream);
}

/// G(z) = sum_j z_j * basis_j followed by `activation` (identity by default).
inline GeneratorModel linear_subspace_generator(const std::vector<RealGrid>& basis,
                                                OutputActivation activation = OutputActivation::identity) {
  if (basis.empty()) throw Error(ErrorKind::DimensionMismatch, "empty subspace basis");
  const Shape shape = basis.front().shape();
  DenseLayer dense{basis.size(), shape.size(), std::vector<double>(basis.size() * shape.size()),
                   std::vector<double>(shape.size(), 0.0)};
  for (std::size_t j = 0; j < basis.size(); ++j) {
    require_same_shape(basis[j].shape(), shape, "linear_subspace_generator");
    for (std::size_t p = 0; p < shape.size(); ++p) dense.weights[p * basis.size() + j] = basis[j][p];
  }
  return GeneratorModel(basis.size(), shape, {std::move(dense)}, activation);
}

inline const char* to_string(OutputActivation a) {
  switch (a) {
    case OutputActivation::identity: return "identity";
    case OutputActivation::tanh: return "tanh";
    case OutputActivation::sigmoid: return "sigmoid";
    case OutputActivation::normalized_nonneg: return "normalized-nonneg";
  }
  return "?";
}

inline OutputActivation output_activation_from_string(const std::string& s) {
  if (s == "identity") return OutputActivation::identity;
  if (s == "tanh") return OutputActivation::tanh;
  if (s == "sigmoid") return OutputActivation::sigmoid;
  if (s == "normalized-nonneg" || s == "normalized_nonneg") return OutputActivation::normalized_nonneg;
  throw Error(ErrorKind::InvalidArgument, "unknown output activation '" + s + "'");
}

}  // namespace pbd
