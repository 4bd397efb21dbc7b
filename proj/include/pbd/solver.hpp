#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "pbd/blursynth.hpp"
#include "pbd/errors.hpp"
#include "pbd/forward.hpp"
#include "pbd/grids.hpp"
#include "pbd/priors.hpp"
#include "pbd/random.hpp"

namespace pbd {

// ---------------------------------------------------------------------------
// Adam

struct AdamParams {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::size_t step_count = 0;

  AdamState() = default;
  explicit AdamState(std::size_t dim) : first_moment(dim, 0.0), second_moment(dim, 0.0) {}
};

/// Bias-corrected Adam; advances `state` and returns the update to add to the parameters.
inline std::vector<double> adam_step(AdamState& state, std::span<const double> grad, const AdamParams& p) {
  if (grad.size() != state.first_moment.size()) throw Error(ErrorKind::DimensionMismatch, "adam_step: gradient length");
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(p.beta1, t);
  const double c2 = 1.0 - std::pow(p.beta2, t);
  std::vector<double> delta(grad.size());
  for (std::size_t j = 0; j < grad.size(); ++j) {
    state.first_moment[j] = p.beta1 * state.first_moment[j] + (1.0 - p.beta1) * grad[j];
    state.second_moment[j] = p.beta2 * state.second_moment[j] + (1.0 - p.beta2) * grad[j] * grad[j];
    const double m_hat = state.first_moment[j] / c1;
    const double v_hat = state.second_moment[j] / c2;
    delta[j] = -p.learning_rate * m_hat / (std::sqrt(v_hat) + p.eps);
  }
  return delta;
}

// ---------------------------------------------------------------------------
// Objective: ||y - |A(G_I(z_i) ⊛ G_K(z_k))|||^2 + gamma ||z_i||^2 + lambda ||z_k||^2

/// Measurement model plus the two priors. Holds references; all inputs are
/// read-only and must outlive the problem.
///
/// Image priors with a tanh head are mapped affinely to [0, 1]. Kernel priors
/// whose output is smaller than the image are embedded with their centre at
/// the grid origin.
struct RecoveryProblem {
  const std::vector<double>& measurement;
  const ForwardOperator& op;
  const GeneratorModel& image_prior;
  const GeneratorModel& kernel_prior;
  double gamma = 0.0;
  double lambda = 0.0;
};

struct Evaluation {
  double loss = 0.0;
  double misfit = 0.0;  // ||y - |A u|||^2
  LatentVector grad_image;
  LatentVector grad_kernel;
};

namespace detail {

inline void check_problem(const RecoveryProblem& p) {
  const Shape img = image_shape(p.op);
  require_same_shape(p.image_prior.output_shape(), img, "image prior output vs operator");
  const Shape ker = p.kernel_prior.output_shape();
  if (ker.height > img.height || ker.width > img.width) {
    throw Error(ErrorKind::KernelTooLarge, "kernel prior output " + to_string(ker) + " exceeds image " + to_string(img));
  }
  if (p.measurement.size() != measurement_count(p.op)) {
    throw Error(ErrorKind::DimensionMismatch, "measurement length " + std::to_string(p.measurement.size()) +
                                                  " != operator m " + std::to_string(measurement_count(p.op)));
  }
}

inline bool unit_range_head(const GeneratorModel& g) { return g.output_activation() == OutputActivation::tanh; }

}  // namespace detail

/// Image estimate for z_i (tanh heads remapped to [0, 1]).
inline RealGrid decode_image(const GeneratorModel& prior, const LatentVector& z) {
  RealGrid out = generate(prior, z);
  if (detail::unit_range_head(prior)) {
    for (auto& v : out.data()) v = 0.5 * (v + 1.0);
  }
  return out;
}

/// Kernel estimate for z_k on the image grid.
inline RealGrid decode_kernel(const GeneratorModel& prior, const LatentVector& z, Shape image) {
  RealGrid k = generate(prior, z);
  return k.shape() == image ? k : embed_kernel(k, image);
}

/// ||y - |A(i ⊛ k)|||, the measurement residual used for restart selection.
inline double measurement_residual(const std::vector<double>& y, const ForwardOperator& op, const RealGrid& image,
                                   const RealGrid& kernel) {
  const auto mag = magnitude(pbd::apply(op, circular_convolve(image, kernel)));
  if (mag.size() != y.size()) throw Error(ErrorKind::DimensionMismatch, "measurement length vs operator");
  double acc = 0.0;
  for (std::size_t j = 0; j < y.size(); ++j) acc += (y[j] - mag[j]) * (y[j] - mag[j]);
  return std::sqrt(acc);
}

/// Loss and (optionally) both latent gradients.
///
/// Chain: r = |A u| - y, u = i ⊛ k. The magnitude's subgradient uses
/// phase(c) = c / |c| with phase(0) = 0, so d misfit / du = Re A*(2 r ∘ phase(A u)).
inline Evaluation evaluate(const RecoveryProblem& p, const LatentVector& z_image, const LatentVector& z_kernel,
                           bool with_gradients = true) {
  detail::check_problem(p);
  const Shape shape = image_shape(p.op);

  ForwardTrace image_trace = generate_traced(p.image_prior, z_image);
  ForwardTrace kernel_trace = generate_traced(p.kernel_prior, z_kernel);
  RealGrid image = image_trace.output;
  const bool remap = detail::unit_range_head(p.image_prior);
  if (remap) {
    for (auto& v : image.data()) v = 0.5 * (v + 1.0);
  }
  const bool embedded = kernel_trace.output.shape() != shape;
  const RealGrid kernel = embedded ? embed_kernel(kernel_trace.output, shape) : kernel_trace.output;

  const ConvolutionSpectra spectra = convolution_spectra(image, kernel);
  ComplexVector au;
  if (const auto* fp = std::get_if<FpOperator>(&p.op)) {
    // fft2(i ⊛ k) is the spectral product; skip the round trip through the image domain.
    ComplexVector prod(shape.size());
    for (std::size_t j = 0; j < prod.size(); ++j) prod[j] = spectra.image[j] * spectra.kernel[j];
    au = apply_fp_spectrum(*fp, prod);
  } else {
    au = pbd::apply(p.op, circular_convolve(spectra));
  }

  Evaluation ev;
  ComplexVector upstream(au.size());
  for (std::size_t j = 0; j < au.size(); ++j) {
    const double mag = std::abs(au[j]);
    const double r = mag - p.measurement[j];
    ev.misfit += r * r;
    upstream[j] = mag > 0.0 ? (2.0 * r / mag) * au[j] : Complex{};
  }
  ev.loss = ev.misfit + p.gamma * dot(z_image.data(), z_image.data()) + p.lambda * dot(z_kernel.data(), z_kernel.data());
  if (!std::isfinite(ev.loss)) throw Error(ErrorKind::NonFiniteLoss, "loss is not finite");
  if (!with_gradients) return ev;

  const RealGrid grad_u = real_part(adjoint_apply(p.op, upstream), shape);
  auto [grad_i, grad_k] = convolve_vjp(spectra, grad_u);
  if (remap) {
    for (auto& v : grad_i.data()) v *= 0.5;
  }
  if (embedded) grad_k = crop_embedded(grad_k, kernel_trace.output.shape());

  ev.grad_image = generate_vjp(p.image_prior, image_trace, grad_i);
  ev.grad_kernel = generate_vjp(p.kernel_prior, kernel_trace, grad_k);
  for (std::size_t j = 0; j < z_image.dim(); ++j) ev.grad_image[j] += 2.0 * p.gamma * z_image[j];
  for (std::size_t j = 0; j < z_kernel.dim(); ++j) ev.grad_kernel[j] += 2.0 * p.lambda * z_kernel[j];
  return ev;
}

inline double loss(const RecoveryProblem& p, const LatentVector& z_image, const LatentVector& z_kernel) {
  return evaluate(p, z_image, z_kernel, false).loss;
}

struct LossGradients {
  LatentVector grad_image;
  LatentVector grad_kernel;
  double loss = 0.0;
};

inline LossGradients loss_gradients(const RecoveryProblem& p, const LatentVector& z_image, const LatentVector& z_kernel) {
  Evaluation ev = evaluate(p, z_image, z_kernel, true);
  return {std::move(ev.grad_image), std::move(ev.grad_kernel), ev.loss};
}

// ---------------------------------------------------------------------------
// Recovery with random restarts.

enum class UpdateMode {
  simultaneous,  // one joint Adam step on both latents
  alternating,   // z_i update then z_k update, both from the gradients at iterate t
};

struct SolverConfig {
  double learning_rate = 0.01;
  std::size_t steps_per_restart = 2000;
  std::size_t restarts = 20;
  double gamma = 0.0;
  double lambda = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t rng_seed = 0;
  UpdateMode update_mode = UpdateMode::alternating;
  /// In alternating mode, evaluate the z_k gradient at the freshly updated z_i.
  bool gauss_seidel = false;
  std::size_t workers = 1;
  std::size_t trace_every = 50;

  static SolverConfig fourier_defaults() { return {}; }
  static SolverConfig fp_defaults() {
    SolverConfig c;
    c.restarts = 5;
    return c;
  }

  AdamParams adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_eps}; }

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error(ErrorKind::InvalidArgument, "learning_rate must be > 0");
    if (restarts == 0) throw Error(ErrorKind::InvalidArgument, "restarts must be >= 1");
    if (!(gamma >= 0.0) || !(lambda >= 0.0)) throw Error(ErrorKind::InvalidArgument, "gamma and lambda must be >= 0");
    if (trace_every == 0) throw Error(ErrorKind::InvalidArgument, "trace_every must be >= 1");
  }
};

struct TracePoint {
  std::size_t step = 0;
  double loss = 0.0;
};

struct RestartRecord {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  double final_residual = std::numeric_limits<double>::infinity();
  double final_loss = std::numeric_limits<double>::infinity();
  bool failed = false;
  std::string failure;
  std::vector<TracePoint> loss_trace;
  LatentVector z_image;
  LatentVector z_kernel;
};

struct RecoveryResult {
  LatentVector best_z_image;
  LatentVector best_z_kernel;
  RealGrid image_estimate;
  RealGrid kernel_estimate;  // on the image grid
  double best_residual = std::numeric_limits<double>::infinity();
  std::size_t best_restart = 0;
  std::vector<RestartRecord> per_restart;
};

inline LatentVector standard_normal_latent(Rng& rng, std::size_t dim) {
  LatentVector z(dim);
  for (std::size_t j = 0; j < dim; ++j) z[j] = rng.normal();
  return z;
}

inline void add_in_place(LatentVector& z, const std::vector<double>& delta) {
  for (std::size_t j = 0; j < z.dim(); ++j) z[j] += delta[j];
}

/// One descent from fresh N(0, 1) latents drawn with seed rng_seed + index.
/// A non-finite loss ends the restart and marks it failed.
inline RestartRecord run_restart(const RecoveryProblem& p, const SolverConfig& config, std::size_t index) {
  RestartRecord rec;
  rec.index = index;
  rec.seed = config.rng_seed + index;
  Rng rng(rec.seed);
  rec.z_image = standard_normal_latent(rng, p.image_prior.latent_dim());
  rec.z_kernel = standard_normal_latent(rng, p.kernel_prior.latent_dim());
  AdamState adam_image(rec.z_image.dim());
  AdamState adam_kernel(rec.z_kernel.dim());
  const AdamParams adam = config.adam();
  const RecoveryProblem problem{p.measurement, p.op, p.image_prior, p.kernel_prior, config.gamma, config.lambda};

  try {
    for (std::size_t t = 0; t < config.steps_per_restart; ++t) {
      Evaluation ev = evaluate(problem, rec.z_image, rec.z_kernel);
      if (t % config.trace_every == 0) rec.loss_trace.push_back({t, ev.loss});
      const auto delta_image = adam_step(adam_image, ev.grad_image.data(), adam);
      if (config.update_mode == UpdateMode::alternating && config.gauss_seidel) {
        add_in_place(rec.z_image, delta_image);
        ev = evaluate(problem, rec.z_image, rec.z_kernel);
        add_in_place(rec.z_kernel, adam_step(adam_kernel, ev.grad_kernel.data(), adam));
      } else {
        const auto delta_kernel = adam_step(adam_kernel, ev.grad_kernel.data(), adam);
        add_in_place(rec.z_image, delta_image);
        add_in_place(rec.z_kernel, delta_kernel);
      }
    }
    const Shape shape = image_shape(p.op);
    rec.final_loss = loss(problem, rec.z_image, rec.z_kernel);
    rec.final_residual = measurement_residual(p.measurement, p.op, decode_image(p.image_prior, rec.z_image),
                                              decode_kernel(p.kernel_prior, rec.z_kernel, shape));
    if (!std::isfinite(rec.final_residual)) throw Error(ErrorKind::NonFiniteLoss, "final residual is not finite");
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NonFiniteLoss && e.kind() != ErrorKind::NonFiniteOutput) throw;
    rec.failed = true;
    rec.failure = e.what();
    rec.final_residual = std::numeric_limits<double>::infinity();
    rec.final_loss = std::numeric_limits<double>::infinity();
  }
  return rec;
}

/// Picks the restart with the smallest final residual (lowest index on ties)
/// and decodes its estimates.
inline RecoveryResult select_best(const RecoveryProblem& p, std::vector<RestartRecord> records) {
  RecoveryResult result;
  const RestartRecord* best = nullptr;
  for (const auto& rec : records) {
    if (rec.failed) continue;
    if (!best || rec.final_residual < best->final_residual ||
        (rec.final_residual == best->final_residual && rec.index < best->index)) {
      best = &rec;
    }
  }
  if (!best) throw Error(ErrorKind::NonFiniteLoss, "every restart diverged");
  result.best_z_image = best->z_image;
  result.best_z_kernel = best->z_kernel;
  result.best_residual = best->final_residual;
  result.best_restart = best->index;
  result.image_estimate = decode_image(p.image_prior, best->z_image);
  result.kernel_estimate = decode_kernel(p.kernel_prior, best->z_kernel, image_shape(p.op));
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  result.per_restart = std::move(records);
  return result;
}

/// Alternating gradient descent over both latents with random restarts.
/// Restarts run on up to `config.workers` threads; each owns its RNG stream,
/// so the result does not depend on the worker count.
inline RecoveryResult recover(const RecoveryProblem& p, const SolverConfig& config) {
  config.validate();
  detail::check_problem(p);
  std::vector<RestartRecord> records(config.restarts);
  const std::size_t workers = std::max<std::size_t>(1, std::min(config.workers, config.restarts));
  if (workers == 1) {
    for (std::size_t r = 0; r < config.restarts; ++r) records[r] = run_restart(p, config, r);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t r = next++; r < config.restarts; r = next++) {
          try {
            records[r] = run_restart(p, config, r);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  }
  return select_best(p, std::move(records));
}

}  // namespace pbd
