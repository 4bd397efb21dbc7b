#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pbd/detail/fftw_plans.hpp"
#include "pbd/errors.hpp"

namespace pbd {

using Complex = std::complex<double>;

struct Shape {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return height * width; }
  bool operator==(const Shape&) const = default;
};

inline std::string to_string(Shape s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width);
}

/// Real h x w signal on a periodic domain, stored row-major.
class RealGrid {
 public:
  RealGrid() = default;
  RealGrid(std::size_t height, std::size_t width) : shape_{height, width}, data_(height * width, 0.0) {}
  RealGrid(Shape shape) : RealGrid(shape.height, shape.width) {}
  RealGrid(std::size_t height, std::size_t width, std::vector<double> data)
      : shape_{height, width}, data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw Error(ErrorKind::DimensionMismatch,
                  "grid data length " + std::to_string(data_.size()) + " != " + to_string(shape_));
    }
  }

  std::size_t height() const { return shape_.height; }
  std::size_t width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }
  Shape shape() const { return shape_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_.width + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_.width + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

  bool operator==(const RealGrid&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Flattened complex values (frequency-domain data or pre-magnitude measurements).
class ComplexVector {
 public:
  ComplexVector() = default;
  explicit ComplexVector(std::size_t length) : values_(length) {}
  explicit ComplexVector(std::vector<Complex> values) : values_(std::move(values)) {}

  std::size_t size() const { return values_.size(); }
  double re(std::size_t i) const { return values_[i].real(); }
  double im(std::size_t i) const { return values_[i].imag(); }

  Complex& operator[](std::size_t i) { return values_[i]; }
  const Complex& operator[](std::size_t i) const { return values_[i]; }

  std::span<Complex> data() { return values_; }
  std::span<const Complex> data() const { return values_; }
  std::vector<Complex>& values() { return values_; }
  const std::vector<Complex>& values() const { return values_; }

 private:
  std::vector<Complex> values_;
};

inline void require_same_shape(Shape a, Shape b, const char* what) {
  if (a != b) {
    throw Error(ErrorKind::DimensionMismatch, std::string(what) + ": " + to_string(a) + " vs " + to_string(b));
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::DimensionMismatch, "dot: length mismatch");
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Real inner product on stacked (re, im) parts.
inline double real_dot(std::span<const Complex> a, std::span<const Complex> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::DimensionMismatch, "real_dot: length mismatch");
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) acc += a[j].real() * b[j].real() + a[j].imag() * b[j].imag();
  return acc;
}

// ---------------------------------------------------------------------------
// FFT contract: unnormalized forward, 1/n inverse.

/// In-place 2-D forward DFT of a row-major complex array.
inline void fft2_inplace(std::span<Complex> data, Shape shape) {
  if (data.size() != shape.size()) throw Error(ErrorKind::DimensionMismatch, "fft2: length mismatch");
  detail::FftwPlanCache::instance().execute(data.data(), shape.height, shape.width, FFTW_FORWARD);
}

/// In-place 2-D inverse DFT including the 1/n factor.
inline void ifft2_inplace(std::span<Complex> data, Shape shape) {
  if (data.size() != shape.size()) throw Error(ErrorKind::DimensionMismatch, "ifft2: length mismatch");
  detail::FftwPlanCache::instance().execute(data.data(), shape.height, shape.width, FFTW_BACKWARD);
  const double scale = 1.0 / static_cast<double>(shape.size());
  for (auto& v : data) v *= scale;
}

inline ComplexVector to_complex(const RealGrid& g) {
  ComplexVector out(g.size());
  for (std::size_t j = 0; j < g.size(); ++j) out[j] = Complex(g[j], 0.0);
  return out;
}

inline ComplexVector fft2(const RealGrid& g) {
  ComplexVector out = to_complex(g);
  fft2_inplace(out.data(), g.shape());
  return out;
}

inline ComplexVector fft2(ComplexVector v, Shape shape) {
  fft2_inplace(v.data(), shape);
  return v;
}

inline ComplexVector ifft2(ComplexVector v, Shape shape) {
  ifft2_inplace(v.data(), shape);
  return v;
}

/// Real part of a complex array as a grid.
inline RealGrid real_part(const ComplexVector& v, Shape shape) {
  if (v.size() != shape.size()) throw Error(ErrorKind::DimensionMismatch, "real_part: length mismatch");
  RealGrid out(shape);
  for (std::size_t j = 0; j < v.size(); ++j) out[j] = v[j].real();
  return out;
}

namespace detail {

// Inverse transform of a spectrum known to belong to a real signal.
inline RealGrid real_ifft2(ComplexVector spectrum, Shape shape) {
  ifft2_inplace(spectrum.data(), shape);
  double max_re = 0.0;
  double max_im = 0.0;
  for (const auto& v : spectrum.values()) {
    max_re = std::max(max_re, std::abs(v.real()));
    max_im = std::max(max_im, std::abs(v.imag()));
  }
  if (max_im > 1e-9 * (1.0 + max_re)) {
    throw Error(ErrorKind::NonFiniteOutput, "imaginary residue " + std::to_string(max_im) + " in real inverse FFT");
  }
  return real_part(spectrum, shape);
}

}  // namespace detail

/// Spectra of an (image, kernel) pair; lets callers share the forward FFTs
/// between a convolution and its VJP.
struct ConvolutionSpectra {
  Shape shape;
  ComplexVector image;
  ComplexVector kernel;
};

inline ConvolutionSpectra convolution_spectra(const RealGrid& i, const RealGrid& k) {
  require_same_shape(i.shape(), k.shape(), "circular_convolve");
  return {i.shape(), fft2(i), fft2(k)};
}

inline RealGrid circular_convolve(const ConvolutionSpectra& s) {
  ComplexVector prod(s.shape.size());
  for (std::size_t j = 0; j < prod.size(); ++j) prod[j] = s.image[j] * s.kernel[j];
  return detail::real_ifft2(std::move(prod), s.shape);
}

/// 2-D circular convolution i ⊛ k via the convolution theorem.
inline RealGrid circular_convolve(const RealGrid& i, const RealGrid& k) {
  return circular_convolve(convolution_spectra(i, k));
}

/// Gradients of <upstream, i ⊛ k> with respect to i and k: circular
/// correlations of upstream with k and with i respectively.
inline std::pair<RealGrid, RealGrid> convolve_vjp(const ConvolutionSpectra& s, const RealGrid& upstream) {
  require_same_shape(s.shape, upstream.shape(), "convolve_vjp");
  const ComplexVector up = fft2(upstream);
  ComplexVector gi(up.size());
  ComplexVector gk(up.size());
  for (std::size_t j = 0; j < up.size(); ++j) {
    gi[j] = up[j] * std::conj(s.kernel[j]);
    gk[j] = up[j] * std::conj(s.image[j]);
  }
  return {detail::real_ifft2(std::move(gi), s.shape), detail::real_ifft2(std::move(gk), s.shape)};
}

inline std::pair<RealGrid, RealGrid> convolve_vjp(const RealGrid& i, const RealGrid& k, const RealGrid& upstream) {
  require_same_shape(i.shape(), k.shape(), "convolve_vjp");
  return convolve_vjp(convolution_spectra(i, k), upstream);
}

// ---------------------------------------------------------------------------
// Kernel grids: nonnegative, unit mass.

inline bool is_valid_kernel(const RealGrid& k, double tol = 1e-6) {
  if (k.empty()) return false;
  for (double v : k.data()) {
    if (!(v >= 0.0) || !std::isfinite(v)) return false;
  }
  return std::abs(k.sum() - 1.0) <= tol;
}

/// Circular shift: out(r, c) = g(r - dr, c - dc).
inline RealGrid circular_shift(const RealGrid& g, long dr, long dc) {
  const long h = static_cast<long>(g.height());
  const long w = static_cast<long>(g.width());
  RealGrid out(g.shape());
  for (long r = 0; r < h; ++r) {
    const long sr = (((r - dr) % h) + h) % h;
    for (long c = 0; c < w; ++c) {
      const long sc = (((c - dc) % w) + w) % w;
      out(r, c) = g(sr, sc);
    }
  }
  return out;
}

/// Coordinate reversal about the origin: out(r, c) = g(-r mod h, -c mod w).
inline RealGrid circular_flip(const RealGrid& g) {
  const std::size_t h = g.height();
  const std::size_t w = g.width();
  RealGrid out(g.shape());
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) out(r, c) = g((h - r) % h, (w - c) % w);
  }
  return out;
}

}  // namespace pbd
