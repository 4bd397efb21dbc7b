#pragma once

#include <cmath>
#include <vector>

#include "pbd/errors.hpp"
#include "pbd/grids.hpp"

namespace pbd {

inline constexpr double kPsnrCap = 100.0;

inline double mean_squared_error(const RealGrid& x, const RealGrid& ref) {
  require_same_shape(x.shape(), ref.shape(), "mse");
  double acc = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double d = x[j] - ref[j];
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

/// PSNR for signals with unit peak; capped when the MSE vanishes.
inline double psnr(const RealGrid& x, const RealGrid& ref, double cap = kPsnrCap) {
  const double mse = mean_squared_error(x, ref);
  if (mse < 1e-10) return cap;
  return 10.0 * std::log10(1.0 / mse);
}

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_window_1d(std::size_t size, double sigma) {
  std::vector<double> w(size);
  const double mid = 0.5 * static_cast<double>(size - 1);
  double total = 0.0;
  for (std::size_t j = 0; j < size; ++j) {
    const double d = static_cast<double>(j) - mid;
    total += (w[j] = std::exp(-d * d / (2.0 * sigma * sigma)));
  }
  for (auto& v : w) v /= total;
  return w;
}

// Separable 'valid' filtering of a row-major h x w array.
inline std::vector<double> filter_valid(const std::vector<double>& in, std::size_t h, std::size_t w,
                                        const std::vector<double>& win) {
  const std::size_t k = win.size();
  const std::size_t oh = h - k + 1, ow = w - k + 1;
  std::vector<double> rows(h * ow, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += win[t] * in[r * w + c + t];
      rows[r * ow + c] = acc;
    }
  }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t r = 0; r < oh; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += win[t] * rows[(r + t) * ow + c];
      out[r * ow + c] = acc;
    }
  }
  return out;
}

}  // namespace detail

/// Mean SSIM over all fully contained Gaussian windows.
inline double ssim(const RealGrid& x, const RealGrid& ref, const SsimParams& p = {}) {
  require_same_shape(x.shape(), ref.shape(), "ssim");
  const std::size_t h = x.height(), w = x.width();
  if (h < p.window || w < p.window) {
    throw Error(ErrorKind::TooSmall, "ssim needs at least " + std::to_string(p.window) + "x" + std::to_string(p.window));
  }
  const auto win = detail::gaussian_window_1d(p.window, p.sigma);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    xx[j] = x[j] * x[j];
    yy[j] = ref[j] * ref[j];
    xy[j] = x[j] * ref[j];
  }
  const auto mx = detail::filter_valid(x.values(), h, w, win);
  const auto my = detail::filter_valid(ref.values(), h, w, win);
  const auto sxx = detail::filter_valid(xx, h, w, win);
  const auto syy = detail::filter_valid(yy, h, w, win);
  const auto sxy = detail::filter_valid(xy, h, w, win);
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  double total = 0.0;
  for (std::size_t j = 0; j < mx.size(); ++j) {
    const double mxy = mx[j] * my[j];
    const double vx = sxx[j] - mx[j] * mx[j];
    const double vy = syy[j] - my[j] * my[j];
    const double cov = sxy[j] - mxy;
    total += ((2.0 * mxy + c1) * (2.0 * cov + c2)) / ((mx[j] * mx[j] + my[j] * my[j] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

// ---------------------------------------------------------------------------
// Trivial-ambiguity alignment.

/// Which ambiguities to quotient out before scoring.
struct AlignmentGroup {
  bool shifts = true;
  bool flips = true;
  bool sign = true;

  static AlignmentGroup none() { return {false, false, false}; }
  static AlignmentGroup sign_only() { return {false, false, true}; }
};

/// est ≈ sign * shift_(shift_r, shift_c)(flip^flipped(ref)); `aligned` undoes that map.
struct AlignmentReport {
  long shift_r = 0;
  long shift_c = 0;
  bool flipped = false;
  bool negated = false;
  double aligned_psnr = 0.0;
  double aligned_ssim = 0.0;
  RealGrid aligned;
};

/// Undo of the transform described by (shift, flip, sign) applied to est.
inline RealGrid undo_alignment(const RealGrid& est, long dr, long dc, bool flipped, bool negated) {
  RealGrid out = circular_shift(est, -dr, -dc);
  if (flipped) out = circular_flip(out);
  if (negated) {
    for (auto& v : out.data()) v = -v;
  }
  return out;
}

/// Searches circular shifts x {identity, flip} x {+1, -1} for the transform
/// maximizing the cross-correlation with `ref` (computed via FFT), which is
/// the PSNR-optimal alignment. The identity transform is always a candidate,
/// and each reported metric is its maximum over the candidates examined.
/// Grids smaller than the SSIM window report aligned_ssim = NaN.
inline AlignmentReport align_and_score(const RealGrid& est, const RealGrid& ref, AlignmentGroup group = {}) {
  require_same_shape(est.shape(), ref.shape(), "align_and_score");
  const Shape shape = est.shape();
  const ComplexVector est_spec = fft2(est);

  struct Candidate {
    long dr, dc;
    bool flipped, negated;
  };
  std::vector<Candidate> candidates{{0, 0, false, false}};
  for (bool flipped : {false, true}) {
    if (flipped && !group.flips) continue;
    std::vector<double> corr(shape.size(), 0.0);
    if (group.shifts) {
      const ComplexVector ref_spec = fft2(flipped ? circular_flip(ref) : ref);
      ComplexVector prod(shape.size());
      for (std::size_t j = 0; j < prod.size(); ++j) prod[j] = est_spec[j] * std::conj(ref_spec[j]);
      ifft2_inplace(prod.data(), shape);
      for (std::size_t j = 0; j < prod.size(); ++j) corr[j] = prod[j].real();
    } else {
      const RealGrid r = flipped ? circular_flip(ref) : ref;
      corr[0] = dot(est.data(), r.data());
    }
    for (bool negated : {false, true}) {
      if (negated && !group.sign) continue;
      const double s = negated ? -1.0 : 1.0;
      const std::size_t limit = group.shifts ? shape.size() : 1;
      std::size_t best = 0;
      for (std::size_t j = 1; j < limit; ++j) {
        if (s * corr[j] > s * corr[best]) best = j;
      }
      candidates.push_back({static_cast<long>(best / shape.width), static_cast<long>(best % shape.width), flipped, negated});
    }
  }

  // SSIM is undefined below the window size; such grids report NaN.
  const SsimParams ssim_params;
  const bool has_ssim = shape.height >= ssim_params.window && shape.width >= ssim_params.window;
  AlignmentReport report;
  bool first = true;
  for (const auto& cand : candidates) {
    RealGrid aligned = undo_alignment(est, cand.dr, cand.dc, cand.flipped, cand.negated);
    const double p = psnr(aligned, ref);
    const double q = has_ssim ? ssim(aligned, ref, ssim_params) : std::nan("");
    if (first || p > report.aligned_psnr) {
      report.shift_r = cand.dr;
      report.shift_c = cand.dc;
      report.flipped = cand.flipped;
      report.negated = cand.negated;
      report.aligned_psnr = p;
      report.aligned = std::move(aligned);
    }
    report.aligned_ssim = first ? q : std::max(report.aligned_ssim, q);
    first = false;
  }
  return report;
}

}  // namespace pbd
