#pragma once

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <tuple>
#include <vector>

namespace pbd::detail {

// FFTW planning is not thread-safe but executing an existing plan on new
// arrays is. Plans are created once per (rows, cols, direction) under a lock
// and kept for the life of the process.
class FftwPlanCache {
 public:
  static FftwPlanCache& instance() {
    static FftwPlanCache cache;
    return cache;
  }

  FftwPlanCache(const FftwPlanCache&) = delete;
  FftwPlanCache& operator=(const FftwPlanCache&) = delete;

  // In-place transform of a row-major rows x cols complex array.
  void execute(std::complex<double>* data, std::size_t rows, std::size_t cols, int sign) {
    auto* buf = reinterpret_cast<fftw_complex*>(data);
    fftw_execute_dft(plan(rows, cols, sign), buf, buf);
  }

 private:
  FftwPlanCache() = default;
  ~FftwPlanCache() {
    for (auto& [key, p] : plans_) fftw_destroy_plan(p);
  }

  fftw_plan plan(std::size_t rows, std::size_t cols, int sign) {
    const auto key = std::make_tuple(rows, cols, sign);
    std::lock_guard lock(mutex_);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    std::vector<std::complex<double>> scratch(rows * cols);
    auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
    fftw_plan p = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols), buf, buf, sign,
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans_.emplace(key, p);
    return p;
  }

  std::mutex mutex_;
  std::map<std::tuple<std::size_t, std::size_t, int>, fftw_plan> plans_;
};

}  // namespace pbd::detail
