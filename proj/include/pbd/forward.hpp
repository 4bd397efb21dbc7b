#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "pbd/errors.hpp"
#include "pbd/grids.hpp"
#include "pbd/random.hpp"

namespace pbd {

// ---------------------------------------------------------------------------
// Oversampled Fourier magnitude model: the image is zero-padded into a larger
// grid at a known support offset and the padded grid's DFT is observed.

struct OversampledFourierOp {
  Shape image;
  Shape padded;
  std::size_t support_row = 0;
  std::size_t support_col = 0;

  /// Image centred in the padded grid.
  static OversampledFourierOp centered(Shape image, Shape padded) {
    if (padded.height < image.height || padded.width < image.width) {
      throw Error(ErrorKind::InvalidArgument, "padded grid smaller than image");
    }
    OversampledFourierOp op{image, padded, (padded.height - image.height) / 2, (padded.width - image.width) / 2};
    op.validate();
    return op;
  }

  void validate() const {
    if (image.size() == 0 || padded.size() == 0) throw Error(ErrorKind::InvalidArgument, "empty operator dims");
    if (support_row + image.height > padded.height || support_col + image.width > padded.width) {
      throw Error(ErrorKind::InvalidArgument, "support " + to_string(image) + " at (" + std::to_string(support_row) +
                                                  "," + std::to_string(support_col) + ") exceeds padded grid " +
                                                  to_string(padded));
    }
  }

  std::size_t measurement_count() const { return padded.size(); }
};

/// Zero-padded copy of g placed at the operator's support.
inline RealGrid pad_to_support(const OversampledFourierOp& op, const RealGrid& g) {
  require_same_shape(g.shape(), op.image, "apply_fourier");
  RealGrid out(op.padded);
  for (std::size_t r = 0; r < op.image.height; ++r) {
    for (std::size_t c = 0; c < op.image.width; ++c) out(r + op.support_row, c + op.support_col) = g(r, c);
  }
  return out;
}

inline ComplexVector apply_fourier(const OversampledFourierOp& op, const RealGrid& g) {
  return fft2(pad_to_support(op, g));
}

/// A* v: unnormalized inverse DFT (conjugate transpose of F) cropped to the support.
inline ComplexVector adjoint_fourier(const OversampledFourierOp& op, const ComplexVector& v) {
  if (v.size() != op.measurement_count()) {
    throw Error(ErrorKind::DimensionMismatch, "adjoint_fourier: vector length " + std::to_string(v.size()) +
                                                  " != " + std::to_string(op.measurement_count()));
  }
  ComplexVector full = v;
  detail::FftwPlanCache::instance().execute(full.data().data(), op.padded.height, op.padded.width, FFTW_BACKWARD);
  ComplexVector out(op.image.size());
  for (std::size_t r = 0; r < op.image.height; ++r) {
    for (std::size_t c = 0; c < op.image.width; ++c) {
      out[r * op.image.width + c] = full[(r + op.support_row) * op.padded.width + c + op.support_col];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subsampled Fourier ptychography: A_l = M_l F^-1 (P_l ∘ F g) per camera.

/// Signed frequency (cycles/grid) of DFT index k on an n-point axis.
inline double signed_frequency(std::size_t k, std::size_t n) {
  return k < (n + 1) / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
}

/// Binary disk band-pass on the DFT grid.
class PupilMask {
 public:
  PupilMask() = default;
  PupilMask(Shape grid, double center_u, double center_v, double radius)
      : grid_(grid), center_u_(center_u), center_v_(center_v), radius_(radius), mask_(grid.size(), 0) {
    if (!(radius > 0.0)) throw Error(ErrorKind::InvalidArgument, "pupil radius must be positive");
    const double r2 = radius * radius;
    for (std::size_t a = 0; a < grid.height; ++a) {
      const double du = signed_frequency(a, grid.height) - center_u;
      for (std::size_t b = 0; b < grid.width; ++b) {
        const double dv = signed_frequency(b, grid.width) - center_v;
        mask_[a * grid.width + b] = (du * du + dv * dv <= r2) ? 1 : 0;
      }
    }
  }

  Shape grid() const { return grid_; }
  double center_u() const { return center_u_; }
  double center_v() const { return center_v_; }
  double radius() const { return radius_; }
  bool passes(std::size_t index) const { return mask_[index] != 0; }
  std::size_t passband_size() const { return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), 1)); }

 private:
  Shape grid_;
  double center_u_ = 0.0;
  double center_v_ = 0.0;
  double radius_ = 0.0;
  std::vector<std::uint8_t> mask_;
};

/// Exact-count sampling without replacement of `count` indices out of `total`.
struct SubsampleMask {
  std::size_t total = 0;
  std::vector<std::size_t> kept_indices;
  std::uint64_t seed = 0;

  static SubsampleMask draw(std::size_t total, std::size_t count, std::uint64_t seed) {
    if (count > total) throw Error(ErrorKind::InvalidArgument, "subsample count exceeds total");
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t j = 0; j < count; ++j) {
      const std::size_t pick = j + static_cast<std::size_t>(rng.below(total - j));
      std::swap(idx[j], idx[pick]);
    }
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return {total, std::move(idx), seed};
  }

  /// round(fraction * total) kept samples.
  static SubsampleMask draw_fraction(std::size_t total, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error(ErrorKind::InvalidArgument, "subsample fraction outside [0,1]");
    return draw(total, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total))), seed);
  }

  static SubsampleMask keep_all(std::size_t total) {
    SubsampleMask m{total, std::vector<std::size_t>(total), 0};
    std::iota(m.kept_indices.begin(), m.kept_indices.end(), std::size_t{0});
    return m;
  }
};

struct FpCamera {
  PupilMask pupil;
  SubsampleMask subsample;
};

/// Geometry of a coherent camera array: L cameras on a sqrt(L) x sqrt(L)
/// lattice of pupil centres around DC.
struct FpLayout {
  std::size_t cameras = 4;
  double radius_fraction = 0.35;  // of the grid Nyquist frequency
  double overlap = 0.5;           // fraction of the pupil diameter shared by lattice neighbours
  double subsample_percent = 100.0;
  std::uint64_t seed = 0;
};

struct FpOperator {
  Shape image;
  std::vector<FpCamera> cameras;

  static FpOperator coherent_array(Shape image, const FpLayout& layout) {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(layout.cameras))));
    if (layout.cameras == 0 || side * side != layout.cameras) {
      throw Error(ErrorKind::InvalidArgument, "camera count must be a positive perfect square");
    }
    if (!(layout.overlap >= 0.0 && layout.overlap < 1.0)) throw Error(ErrorKind::InvalidArgument, "overlap outside [0,1)");
    if (!(layout.subsample_percent >= 0.0 && layout.subsample_percent <= 100.0)) {
      throw Error(ErrorKind::InvalidArgument, "subsample_percent outside [0,100]");
    }
    const double nyquist = 0.5 * static_cast<double>(std::min(image.height, image.width));
    const double radius = layout.radius_fraction * nyquist;
    const double spacing = 2.0 * radius * (1.0 - layout.overlap);
    FpOperator op{image, {}};
    for (std::size_t a = 0; a < side; ++a) {
      for (std::size_t b = 0; b < side; ++b) {
        const double cu = (static_cast<double>(a) - 0.5 * static_cast<double>(side - 1)) * spacing;
        const double cv = (static_cast<double>(b) - 0.5 * static_cast<double>(side - 1)) * spacing;
        const std::uint64_t cam_seed = derive_seed(layout.seed, op.cameras.size());
        op.cameras.push_back({PupilMask(image, cu, cv, radius),
                              SubsampleMask::draw_fraction(image.size(), layout.subsample_percent / 100.0, cam_seed)});
      }
    }
    return op;
  }

  std::size_t measurement_count() const {
    std::size_t m = 0;
    for (const auto& cam : cameras) m += cam.subsample.kept_indices.size();
    return m;
  }

  void validate() const {
    for (const auto& cam : cameras) {
      require_same_shape(cam.pupil.grid(), image, "FpOperator pupil grid");
      if (cam.subsample.total != image.size()) throw Error(ErrorKind::DimensionMismatch, "FpOperator subsample total");
    }
  }
};

/// Forward model on a precomputed spectrum G = fft2(g).
inline ComplexVector apply_fp_spectrum(const FpOperator& op, const ComplexVector& spectrum) {
  if (spectrum.size() != op.image.size()) throw Error(ErrorKind::DimensionMismatch, "apply_fp: spectrum length");
  const std::size_t m = op.measurement_count();
  if (m == 0) throw Error(ErrorKind::EmptyMeasurement, "all subsampling masks are empty");
  ComplexVector out(m);
  ComplexVector band(op.image.size());
  std::size_t pos = 0;
  for (const auto& cam : op.cameras) {
    if (cam.subsample.kept_indices.empty()) continue;
    for (std::size_t j = 0; j < band.size(); ++j) band[j] = cam.pupil.passes(j) ? spectrum[j] : Complex{};
    ifft2_inplace(band.data(), op.image);
    for (std::size_t idx : cam.subsample.kept_indices) out[pos++] = band[idx];
  }
  return out;
}

inline ComplexVector apply_fp(const FpOperator& op, const RealGrid& g) {
  require_same_shape(g.shape(), op.image, "apply_fp");
  return apply_fp_spectrum(op, fft2(g));
}

/// A* v = sum_l F^-1 (P_l ∘ F (M_l^T v_l)).
inline ComplexVector adjoint_fp(const FpOperator& op, const ComplexVector& v) {
  if (v.size() != op.measurement_count()) {
    throw Error(ErrorKind::DimensionMismatch, "adjoint_fp: vector length " + std::to_string(v.size()) + " != " +
                                                  std::to_string(op.measurement_count()));
  }
  ComplexVector acc(op.image.size());
  ComplexVector scattered(op.image.size());
  std::size_t pos = 0;
  for (const auto& cam : op.cameras) {
    if (cam.subsample.kept_indices.empty()) continue;
    std::fill(scattered.values().begin(), scattered.values().end(), Complex{});
    for (std::size_t idx : cam.subsample.kept_indices) scattered[idx] = v[pos++];
    fft2_inplace(scattered.data(), op.image);
    for (std::size_t j = 0; j < acc.size(); ++j) {
      if (cam.pupil.passes(j)) acc[j] += scattered[j];
    }
  }
  ifft2_inplace(acc.data(), op.image);
  return acc;
}

/// Percentage of the n*L observable samples retained by the subsampling masks.
inline double subsampling_ratio(const FpOperator& op) {
  if (op.cameras.empty()) throw Error(ErrorKind::InvalidArgument, "FP operator has no cameras");
  return static_cast<double>(op.measurement_count()) * 100.0 /
         (static_cast<double>(op.image.size()) * static_cast<double>(op.cameras.size()));
}

// ---------------------------------------------------------------------------
// Operator sum type.

using ForwardOperator = std::variant<OversampledFourierOp, FpOperator>;

inline std::string operator_id(const ForwardOperator& op) {
  return std::holds_alternative<OversampledFourierOp>(op) ? "fourier" : "fp";
}

inline Shape image_shape(const ForwardOperator& op) {
  return std::visit([](const auto& o) { return o.image; }, op);
}

inline std::size_t measurement_count(const ForwardOperator& op) {
  return std::visit([](const auto& o) { return o.measurement_count(); }, op);
}

inline ComplexVector apply(const ForwardOperator& op, const RealGrid& g) {
  if (const auto* f = std::get_if<OversampledFourierOp>(&op)) return apply_fourier(*f, g);
  return apply_fp(std::get<FpOperator>(op), g);
}

/// A* v on the image grid (complex; the gradient of a real signal is its real part).
inline ComplexVector adjoint_apply(const ForwardOperator& op, const ComplexVector& v) {
  if (const auto* f = std::get_if<OversampledFourierOp>(&op)) return adjoint_fourier(*f, v);
  return adjoint_fp(std::get<FpOperator>(op), v);
}

inline std::vector<double> magnitude(const ComplexVector& v) {
  std::vector<double> out(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) out[j] = std::sqrt(v.re(j) * v.re(j) + v.im(j) * v.im(j));
  return out;
}

// ---------------------------------------------------------------------------
// Measurements and noise.

struct Measurement {
  std::vector<double> values;
  std::string operator_id;
  double noise_sigma = 0.0;
};

/// Noise standard deviation for a percentage of the values' dynamic range.
inline double noise_sigma(std::span<const double> values, double percent) {
  if (!(percent >= 0.0)) throw Error(ErrorKind::InvalidArgument, "noise percent must be >= 0");
  if (values.empty() || percent == 0.0) return 0.0;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  return percent / 100.0 * (*hi - *lo);
}

inline std::vector<double> add_noise(std::span<const double> values, double percent, std::uint64_t seed) {
  const double sigma = noise_sigma(values, percent);
  std::vector<double> out(values.begin(), values.end());
  if (sigma == 0.0) return out;
  Rng rng(seed);
  for (auto& v : out) v += sigma * rng.normal();
  return out;
}

// ---------------------------------------------------------------------------
// JSON round trip. FP subsampling masks are stored as (seed, kept count) and
// redrawn on load.

inline nlohmann::json to_json(const ForwardOperator& op) {
  using nlohmann::json;
  if (const auto* f = std::get_if<OversampledFourierOp>(&op)) {
    return json{{"type", "fourier"},
                {"image", {f->image.height, f->image.width}},
                {"padded", {f->padded.height, f->padded.width}},
                {"support", {f->support_row, f->support_col}}};
  }
  const auto& fp = std::get<FpOperator>(op);
  json cams = json::array();
  for (const auto& cam : fp.cameras) {
    cams.push_back({{"center", {cam.pupil.center_u(), cam.pupil.center_v()}},
                    {"radius", cam.pupil.radius()},
                    {"seed", cam.subsample.seed},
                    {"kept", cam.subsample.kept_indices.size()}});
  }
  return json{{"type", "fp"},
              {"image", {fp.image.height, fp.image.width}},
              {"cameras", cams},
              {"subsampling_ratio", subsampling_ratio(fp)}};
}

inline ForwardOperator operator_from_json(const nlohmann::json& j) {
  const std::string type = j.at("type").get<std::string>();
  const Shape image{j.at("image").at(0).get<std::size_t>(), j.at("image").at(1).get<std::size_t>()};
  if (type == "fourier") {
    OversampledFourierOp op{image,
                            {j.at("padded").at(0).get<std::size_t>(), j.at("padded").at(1).get<std::size_t>()},
                            j.at("support").at(0).get<std::size_t>(),
                            j.at("support").at(1).get<std::size_t>()};
    op.validate();
    return op;
  }
  if (type == "fp") {
    FpOperator op{image, {}};
    for (const auto& c : j.at("cameras")) {
      const auto kept = c.at("kept").get<std::size_t>();
      const auto seed = c.at("seed").get<std::uint64_t>();
      SubsampleMask mask = SubsampleMask::draw(image.size(), kept, seed);
      op.cameras.push_back({PupilMask(image, c.at("center").at(0).get<double>(), c.at("center").at(1).get<double>(),
                                      c.at("radius").get<double>()),
                            std::move(mask)});
    }
    return op;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown operator type '" + type + "'");
}

}  // namespace pbd
