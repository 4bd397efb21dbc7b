#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "pbd/errors.hpp"
#include "pbd/grids.hpp"
#include "pbd/random.hpp"

namespace pbd {

namespace detail {

inline void require_odd_size(std::size_t size) {
  if (size == 0 || size % 2 == 0) throw Error(ErrorKind::BadSize, "kernel size must be odd and positive, got " + std::to_string(size));
}

inline void normalize_unit_sum(RealGrid& k) {
  const double total = k.sum();
  for (auto& v : k.data()) v /= total;
}

}  // namespace detail

/// Isotropic Gaussian sampled at integer offsets from the centre, unit sum.
inline RealGrid gaussian_kernel(std::size_t size, double sigma) {
  detail::require_odd_size(size);
  if (!(sigma > 0.0)) throw Error(ErrorKind::InvalidArgument, "sigma must be positive");
  const long half = static_cast<long>(size / 2);
  RealGrid k(size, size);
  for (long r = -half; r <= half; ++r) {
    for (long c = -half; c <= half; ++c) {
      k(static_cast<std::size_t>(r + half), static_cast<std::size_t>(c + half)) =
          std::exp(-static_cast<double>(r * r + c * c) / (2.0 * sigma * sigma));
    }
  }
  detail::normalize_unit_sum(k);
  return k;
}

struct TrajectoryPoint {
  double x = 0.0;  // column
  double y = 0.0;  // row
};

/// Splats a polyline onto a size x size canvas with bilinear weights
/// proportional to arc length, then normalizes to unit sum.
inline RealGrid rasterize_trajectory(const std::vector<TrajectoryPoint>& pts, std::size_t size) {
  RealGrid k(size, size);
  const double hi = static_cast<double>(size - 1);
  auto splat = [&](double x, double y, double weight) {
    x = std::clamp(x, 0.0, hi);
    y = std::clamp(y, 0.0, hi);
    const auto c0 = static_cast<std::size_t>(std::floor(x));
    const auto r0 = static_cast<std::size_t>(std::floor(y));
    const double fx = x - static_cast<double>(c0);
    const double fy = y - static_cast<double>(r0);
    const std::size_t c1 = std::min(c0 + 1, size - 1);
    const std::size_t r1 = std::min(r0 + 1, size - 1);
    k(r0, c0) += weight * (1 - fx) * (1 - fy);
    k(r0, c1) += weight * fx * (1 - fy);
    k(r1, c0) += weight * (1 - fx) * fy;
    k(r1, c1) += weight * fx * fy;
  };
  if (pts.size() == 1) {
    splat(pts[0].x, pts[0].y, 1.0);
  }
  for (std::size_t s = 1; s < pts.size(); ++s) {
    const double dx = pts[s].x - pts[s - 1].x;
    const double dy = pts[s].y - pts[s - 1].y;
    const double len = std::hypot(dx, dy);
    const auto pieces = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(len / 0.05)));
    for (std::size_t p = 0; p < pieces; ++p) {
      const double t = (static_cast<double>(p) + 0.5) / static_cast<double>(pieces);
      splat(pts[s - 1].x + t * dx, pts[s - 1].y + t * dy, len / static_cast<double>(pieces));
    }
  }
  detail::normalize_unit_sum(k);
  return k;
}

namespace detail {

// Translates the trajectory so its bounding box is centred on the canvas.
inline void center_on_canvas(std::vector<TrajectoryPoint>& pts, std::size_t size) {
  double xmin = pts[0].x, xmax = pts[0].x, ymin = pts[0].y, ymax = pts[0].y;
  for (const auto& p : pts) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  const double mid = 0.5 * static_cast<double>(size - 1);
  const double ox = mid - 0.5 * (xmin + xmax);
  const double oy = mid - 0.5 * (ymin + ymax);
  for (auto& p : pts) {
    p.x += ox;
    p.y += oy;
  }
}

inline std::pair<double, double> extents(const std::vector<TrajectoryPoint>& pts) {
  double xmin = pts[0].x, xmax = pts[0].x, ymin = pts[0].y, ymax = pts[0].y;
  for (const auto& p : pts) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  return {xmax - xmin, ymax - ymin};
}

inline void check_motion_args(std::size_t size, double length) {
  require_odd_size(size);
  if (!(length > 0.0) || length > static_cast<double>(size) * std::numbers::sqrt2) {
    throw Error(ErrorKind::BadLength, "motion length " + std::to_string(length) + " not in (0, " +
                                          std::to_string(static_cast<double>(size) * std::numbers::sqrt2) + "]");
  }
}

}  // namespace detail

/// Straight motion of the given arc length through the canvas centre.
inline RealGrid straight_motion_kernel(std::size_t size, double length, double angle = 0.0) {
  detail::check_motion_args(size, length);
  std::vector<TrajectoryPoint> pts{{0.0, 0.0}, {length * std::cos(angle), length * std::sin(angle)}};
  detail::center_on_canvas(pts, size);
  return rasterize_trajectory(pts, size);
}

/// Random camera-shake trajectory: unit steps whose heading takes Gaussian
/// increments (angle_std radians per step), rescaled to `length` pixels of
/// arc length. Draws that overflow the canvas are retried; if none fits the
/// last draw is shrunk to fit.
inline RealGrid motion_kernel(std::size_t size, double length, std::uint64_t seed, double angle_std = 0.5) {
  detail::check_motion_args(size, length);
  Rng rng(seed);
  const auto steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(length)));
  const double step_len = length / static_cast<double>(steps);
  const double room = static_cast<double>(size - 1);
  std::vector<TrajectoryPoint> pts;
  constexpr int kMaxDraws = 64;
  for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
    pts.assign(1, {0.0, 0.0});
    double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t s = 0; s < steps; ++s) {
      if (s > 0) heading += angle_std * rng.normal();
      pts.push_back({pts.back().x + step_len * std::cos(heading), pts.back().y + step_len * std::sin(heading)});
    }
    const auto [ex, ey] = detail::extents(pts);
    if (ex <= room && ey <= room) break;
    if (attempt == kMaxDraws - 1) {
      const double shrink = room / std::max(ex, ey);
      for (auto& p : pts) {
        p.x *= shrink;
        p.y *= shrink;
      }
    }
  }
  detail::center_on_canvas(pts, size);
  return rasterize_trajectory(pts, size);
}

/// Places a small kernel on the image grid with its centre at (0, 0);
/// negative offsets wrap periodically.
inline RealGrid embed_kernel(const RealGrid& k, Shape target) {
  if (k.height() > target.height || k.width() > target.width) {
    throw Error(ErrorKind::KernelTooLarge, "kernel " + to_string(k.shape()) + " does not fit " + to_string(target));
  }
  RealGrid out(target);
  const std::size_t cr = k.height() / 2, cc = k.width() / 2;
  for (std::size_t r = 0; r < k.height(); ++r) {
    const std::size_t tr = (r + target.height - cr) % target.height;
    for (std::size_t c = 0; c < k.width(); ++c) out(tr, (c + target.width - cc) % target.width) = k(r, c);
  }
  return out;
}

/// Adjoint of embed_kernel: gathers the embedded positions back to the small canvas.
inline RealGrid crop_embedded(const RealGrid& g, Shape kernel_shape) {
  if (kernel_shape.height > g.height() || kernel_shape.width > g.width()) {
    throw Error(ErrorKind::KernelTooLarge, "crop " + to_string(kernel_shape) + " from " + to_string(g.shape()));
  }
  RealGrid out(kernel_shape);
  const std::size_t cr = kernel_shape.height / 2, cc = kernel_shape.width / 2;
  for (std::size_t r = 0; r < kernel_shape.height; ++r) {
    const std::size_t tr = (r + g.height() - cr) % g.height();
    for (std::size_t c = 0; c < kernel_shape.width; ++c) out(r, c) = g(tr, (c + g.width() - cc) % g.width());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets.

enum class BlurKind { gaussian, motion };

struct BlurConfig {
  BlurKind kind = BlurKind::gaussian;
  std::size_t kernel_size = 15;
  double sigma_min = 0.5;
  double sigma_max = 1.5;
  double length_min = 5.0;
  double length_max = 28.0;
  double angle_std = 0.5;
  std::uint64_t seed = 0;
  std::size_t count = 80000;

  void validate() const {
    if (kernel_size == 0 || kernel_size % 2 == 0) throw Error(ErrorKind::BadSize, "kernel_size must be odd and positive");
    if (!(sigma_min > 0.0 && sigma_min <= sigma_max)) throw Error(ErrorKind::InvalidArgument, "sigma_range must satisfy 0 < min <= max");
    if (!(length_min > 0.0 && length_min <= length_max)) {
      throw Error(ErrorKind::InvalidArgument, "length_range must satisfy 0 < min <= max");
    }
    if (count == 0) throw Error(ErrorKind::InvalidArgument, "count must be >= 1");
  }

  /// Canvas actually used: long motion blurs get a 21 x 21 canvas.
  std::size_t effective_kernel_size() const {
    if (kind == BlurKind::motion && length_max > 19.0) return std::max<std::size_t>(kernel_size, 21);
    return kernel_size;
  }
};

struct BlurDataset {
  std::vector<RealGrid> kernels;
  std::vector<double> parameters;  // sigma or length per kernel
  std::size_t train_count = 0;

  std::size_t test_count() const { return kernels.size() - train_count; }
};

/// Train share of a dataset: round(0.75 * count).
inline std::size_t train_split(std::size_t count) {
  return static_cast<std::size_t>(std::llround(0.75 * static_cast<double>(count)));
}

inline RealGrid synthesize_blur(const BlurConfig& config, std::size_t index, double* parameter = nullptr) {
  const std::uint64_t s = derive_seed(config.seed, index);
  Rng rng(s);
  const std::size_t size = config.effective_kernel_size();
  if (config.kind == BlurKind::gaussian) {
    const double sigma = rng.uniform(config.sigma_min, config.sigma_max);
    if (parameter) *parameter = sigma;
    return gaussian_kernel(size, sigma);
  }
  const double length = rng.uniform(config.length_min, config.length_max);
  if (parameter) *parameter = length;
  return motion_kernel(size, length, derive_seed(s, 1), config.angle_std);
}

inline BlurDataset generate_dataset(const BlurConfig& config) {
  config.validate();
  BlurDataset out;
  out.kernels.reserve(config.count);
  out.parameters.resize(config.count);
  for (std::size_t j = 0; j < config.count; ++j) out.kernels.push_back(synthesize_blur(config, j, &out.parameters[j]));
  out.train_count = train_split(config.count);
  return out;
}

inline const char* to_string(BlurKind k) { return k == BlurKind::gaussian ? "gaussian" : "motion"; }

}  // namespace pbd
