#pragma once

// Experiment harness shared by the command-line tool and the acceptance suite.
//
// An experiment directory holds:
//   config.frozen.json            fully resolved configuration
//   simulate/manifest.json        operator, per-instance noise and ground-truth metadata
//   simulate/measurements.json    measured magnitudes (double precision)
//   simulate/gt_images.pbdt       N x H x W
//   simulate/gt_kernels.pbdt      N x H x W (embedded on the image grid)
//   recover/image_estimates.pbdt  recover/kernel_estimates.pbdt
//   recover/restarts.csv          recover/summary.json  recover/previews/*.png
//   eval/report.csv               eval/report.json

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pbd/blursynth.hpp"
#include "pbd/bundle.hpp"
#include "pbd/errors.hpp"
#include "pbd/forward.hpp"
#include "pbd/image_io.hpp"
#include "pbd/metrics.hpp"
#include "pbd/priors.hpp"
#include "pbd/solver.hpp"
#include "pbd/tensor_file.hpp"

namespace pbd {

namespace fs = std::filesystem;
using nlohmann::json;

/// Invalid or inconsistent configuration; `field` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : Error(ErrorKind::InvalidArgument, field + ": " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// ---------------------------------------------------------------------------
// Configuration

struct PriorSpec {
  std::string bundle;  // path to a WeightBundle; empty for a subspace prior
  std::size_t dim = 0;
  Shape shape;
  std::uint64_t seed = 0;
  double low = 0.0;
  double high = 1.0;
  OutputActivation activation = OutputActivation::identity;
};

/// Where ground-truth images or kernels come from.
struct SourceSpec {
  std::string kind = "from_prior";  // tensor | pngs | from_prior | blur
  std::string path;
  std::vector<std::string> pngs;
  std::size_t first = 0;
  std::string latent = "simplex";  // from_prior: simplex | normal
  BlurConfig blur;
  std::string split = "test";  // blur: train | test
};

struct OperatorSpec {
  std::string type = "fourier";
  Shape padded;  // zero: twice the image dims
  bool centered = true;
  std::size_t support_row = 0;
  std::size_t support_col = 0;
  FpLayout fp;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  OperatorSpec op;
  SourceSpec images;
  SourceSpec kernels;
  PriorSpec image_prior;
  PriorSpec kernel_prior;
  SolverConfig solver;
  double noise_percent = 0.0;
  std::size_t instances = 1;
  std::string align = "auto";  // auto | full | sign | none
  std::string output_dir = "out";
};

inline BlurConfig blur_config_from_json(const json& j, BlurConfig c = {}) {
  if (j.contains("kind")) {
    const auto k = j.at("kind").get<std::string>();
    if (k != "gaussian" && k != "motion") throw ConfigError("kind", "expected gaussian or motion, got '" + k + "'");
    c.kind = k == "gaussian" ? BlurKind::gaussian : BlurKind::motion;
  }
  c.kernel_size = j.value("kernel_size", c.kernel_size);
  if (j.contains("sigma_range")) {
    c.sigma_min = j.at("sigma_range").at(0).get<double>();
    c.sigma_max = j.at("sigma_range").at(1).get<double>();
  }
  if (j.contains("length_range")) {
    c.length_min = j.at("length_range").at(0).get<double>();
    c.length_max = j.at("length_range").at(1).get<double>();
  }
  c.angle_std = j.value("angle_std", c.angle_std);
  c.seed = j.value("seed", c.seed);
  c.count = j.value("count", c.count);
  if (c.kernel_size == 0 || c.kernel_size % 2 == 0) throw ConfigError("kernel_size", "must be odd and positive");
  if (!(c.sigma_min > 0.0 && c.sigma_min <= c.sigma_max)) {
    throw ConfigError("sigma_range", "must satisfy 0 < min <= max");
  }
  if (!(c.length_min > 0.0 && c.length_min <= c.length_max)) {
    throw ConfigError("length_range", "must satisfy 0 < min <= max");
  }
  if (c.kind == BlurKind::motion && c.length_max > static_cast<double>(c.effective_kernel_size()) * std::sqrt(2.0)) {
    throw ConfigError("length_range", "maximum length does not fit the kernel canvas");
  }
  if (c.count == 0) throw ConfigError("count", "must be >= 1");
  return c;
}

inline json to_json(const BlurConfig& c) {
  return json{{"kind", to_string(c.kind)},
              {"kernel_size", c.kernel_size},
              {"sigma_range", {c.sigma_min, c.sigma_max}},
              {"length_range", {c.length_min, c.length_max}},
              {"angle_std", c.angle_std},
              {"seed", c.seed},
              {"count", c.count}};
}

namespace detail {

inline Shape shape_from_json(const json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(field, "expected [height, width]");
  const Shape s{j.at(0).get<std::size_t>(), j.at(1).get<std::size_t>()};
  if (s.size() == 0) throw ConfigError(field, "dimensions must be positive");
  return s;
}

inline std::string resolve_path(const std::string& p, const fs::path& base) {
  if (p.empty()) return p;
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

inline PriorSpec prior_from_json(const json& j, const std::string& field, const fs::path& base) {
  PriorSpec p;
  if (j.contains("bundle")) {
    p.bundle = resolve_path(j.at("bundle").get<std::string>(), base);
    if (!fs::exists(p.bundle)) throw ConfigError(field + ".bundle", "file not found: " + p.bundle);
    return p;
  }
  if (!j.contains("subspace")) throw ConfigError(field, "expected 'bundle' or 'subspace'");
  const json& s = j.at("subspace");
  p.dim = s.at("dim").get<std::size_t>();
  if (p.dim == 0) throw ConfigError(field + ".subspace.dim", "must be >= 1");
  p.shape = shape_from_json(s.at("shape"), field + ".subspace.shape");
  p.seed = s.value("seed", std::uint64_t{0});
  if (s.contains("range")) {
    p.low = s.at("range").at(0).get<double>();
    p.high = s.at("range").at(1).get<double>();
  }
  if (!(p.low <= p.high)) throw ConfigError(field + ".subspace.range", "must satisfy low <= high");
  try {
    p.activation = output_activation_from_string(s.value("activation", std::string("identity")));
  } catch (const Error& e) {
    throw ConfigError(field + ".subspace.activation", e.what());
  }
  return p;
}

inline json prior_to_json(const PriorSpec& p) {
  if (!p.bundle.empty()) return json{{"bundle", p.bundle}};
  return json{{"subspace",
               {{"dim", p.dim},
                {"shape", {p.shape.height, p.shape.width}},
                {"seed", p.seed},
                {"range", {p.low, p.high}},
                {"activation", to_string(p.activation)}}}};
}

inline SourceSpec source_from_json(const json& j, const std::string& field, const fs::path& base) {
  SourceSpec s;
  s.kind = j.at("kind").get<std::string>();
  s.first = j.value("first", std::size_t{0});
  if (s.kind == "tensor") {
    s.path = resolve_path(j.at("path").get<std::string>(), base);
    if (!fs::exists(s.path)) throw ConfigError(field + ".path", "file not found: " + s.path);
  } else if (s.kind == "pngs") {
    for (const auto& p : j.at("paths")) {
      s.pngs.push_back(resolve_path(p.get<std::string>(), base));
      if (!fs::exists(s.pngs.back())) throw ConfigError(field + ".paths", "file not found: " + s.pngs.back());
    }
  } else if (s.kind == "from_prior") {
    s.latent = j.value("latent", s.latent);
    if (s.latent != "simplex" && s.latent != "normal") throw ConfigError(field + ".latent", "expected simplex or normal");
  } else if (s.kind == "blur") {
    try {
      s.blur = blur_config_from_json(j.value("blur", json::object()));
    } catch (const ConfigError& e) {
      throw ConfigError(field + ".blur." + e.field(), e.what());
    }
    s.split = j.value("split", s.split);
    if (s.split != "train" && s.split != "test") throw ConfigError(field + ".split", "expected train or test");
  } else {
    throw ConfigError(field + ".kind", "unknown source kind '" + s.kind + "'");
  }
  return s;
}

inline json source_to_json(const SourceSpec& s) {
  json j{{"kind", s.kind}, {"first", s.first}};
  if (s.kind == "tensor") j["path"] = s.path;
  if (s.kind == "pngs") j["paths"] = s.pngs;
  if (s.kind == "from_prior") j["latent"] = s.latent;
  if (s.kind == "blur") {
    j["blur"] = to_json(s.blur);
    j["split"] = s.split;
  }
  return j;
}

inline const char* to_string(UpdateMode m) { return m == UpdateMode::alternating ? "alternating" : "simultaneous"; }

}  // namespace detail

/// Parses an experiment config; relative paths resolve against `base`.
inline ExperimentConfig experiment_from_json(const json& j, const fs::path& base = fs::current_path()) {
  ExperimentConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (!j.contains("image_prior")) throw ConfigError("image_prior", "missing");
    if (!j.contains("kernel_prior")) throw ConfigError("kernel_prior", "missing");
    c.image_prior = detail::prior_from_json(j.at("image_prior"), "image_prior", base);
    c.kernel_prior = detail::prior_from_json(j.at("kernel_prior"), "kernel_prior", base);

    const json op = j.value("operator", json{{"type", "fourier"}});
    c.op.type = op.value("type", std::string("fourier"));
    if (c.op.type == "fourier") {
      if (op.contains("padded")) c.op.padded = detail::shape_from_json(op.at("padded"), "operator.padded");
      if (op.contains("support")) {
        c.op.centered = false;
        c.op.support_row = op.at("support").at(0).get<std::size_t>();
        c.op.support_col = op.at("support").at(1).get<std::size_t>();
      }
    } else if (c.op.type == "fp") {
      c.op.fp.cameras = op.value("cameras", c.op.fp.cameras);
      c.op.fp.radius_fraction = op.value("radius_fraction", c.op.fp.radius_fraction);
      c.op.fp.overlap = op.value("overlap", c.op.fp.overlap);
      c.op.fp.subsample_percent = op.value("subsample_percent", c.op.fp.subsample_percent);
      c.op.fp.seed = op.value("seed", c.seed);
      if (!(c.op.fp.subsample_percent > 0.0 && c.op.fp.subsample_percent <= 100.0)) {
        throw ConfigError("operator.subsample_percent", "must be in (0, 100]");
      }
    } else {
      throw ConfigError("operator.type", "expected fourier or fp, got '" + c.op.type + "'");
    }

    c.images = detail::source_from_json(j.value("images", json{{"kind", "from_prior"}}), "images", base);
    c.kernels = detail::source_from_json(j.value("kernels", json{{"kind", "from_prior"}}), "kernels", base);

    const json s = j.value("solver", json::object());
    c.solver = c.op.type == "fp" ? SolverConfig::fp_defaults() : SolverConfig::fourier_defaults();
    c.solver.learning_rate = s.value("learning_rate", c.solver.learning_rate);
    c.solver.steps_per_restart = s.value("steps_per_restart", c.solver.steps_per_restart);
    c.solver.restarts = s.value("restarts", c.solver.restarts);
    c.solver.gamma = s.value("gamma", c.solver.gamma);
    c.solver.lambda = s.value("lambda", c.solver.lambda);
    c.solver.adam_beta1 = s.value("adam_beta1", c.solver.adam_beta1);
    c.solver.adam_beta2 = s.value("adam_beta2", c.solver.adam_beta2);
    c.solver.adam_eps = s.value("adam_eps", c.solver.adam_eps);
    c.solver.rng_seed = s.value("rng_seed", c.seed);
    c.solver.workers = s.value("workers", c.solver.workers);
    const auto mode = s.value("update_mode", std::string("alternating"));
    if (mode != "alternating" && mode != "simultaneous") throw ConfigError("solver.update_mode", "unknown mode '" + mode + "'");
    c.solver.update_mode = mode == "alternating" ? UpdateMode::alternating : UpdateMode::simultaneous;
    c.solver.gauss_seidel = s.value("gauss_seidel", false);
    try {
      c.solver.validate();
    } catch (const Error& e) {
      throw ConfigError("solver", e.what());
    }

    c.noise_percent = j.value("noise_percent", c.noise_percent);
    if (!(c.noise_percent >= 0.0)) throw ConfigError("noise_percent", "must be >= 0");
    c.instances = j.value("instances", c.instances);
    if (c.instances == 0) throw ConfigError("instances", "must be >= 1");
    c.align = j.value("align", c.align);
    if (c.align != "auto" && c.align != "full" && c.align != "sign" && c.align != "none") {
      throw ConfigError("align", "expected auto, full, sign or none");
    }
    c.output_dir = detail::resolve_path(j.value("output_dir", c.output_dir), base);
  } catch (const json::exception& e) {
    throw ConfigError("config", e.what());
  }
  return c;
}

inline json to_json(const ExperimentConfig& c) {
  json op{{"type", c.op.type}};
  if (c.op.type == "fourier") {
    if (c.op.padded.size() != 0) op["padded"] = {c.op.padded.height, c.op.padded.width};
    if (!c.op.centered) op["support"] = {c.op.support_row, c.op.support_col};
  } else {
    op["cameras"] = c.op.fp.cameras;
    op["radius_fraction"] = c.op.fp.radius_fraction;
    op["overlap"] = c.op.fp.overlap;
    op["subsample_percent"] = c.op.fp.subsample_percent;
    op["seed"] = c.op.fp.seed;
  }
  const SolverConfig& s = c.solver;
  return json{{"seed", c.seed},
              {"operator", op},
              {"images", detail::source_to_json(c.images)},
              {"kernels", detail::source_to_json(c.kernels)},
              {"image_prior", detail::prior_to_json(c.image_prior)},
              {"kernel_prior", detail::prior_to_json(c.kernel_prior)},
              {"solver",
               {{"learning_rate", s.learning_rate},
                {"steps_per_restart", s.steps_per_restart},
                {"restarts", s.restarts},
                {"gamma", s.gamma},
                {"lambda", s.lambda},
                {"adam_beta1", s.adam_beta1},
                {"adam_beta2", s.adam_beta2},
                {"adam_eps", s.adam_eps},
                {"rng_seed", s.rng_seed},
                {"update_mode", detail::to_string(s.update_mode)},
                {"gauss_seidel", s.gauss_seidel},
                {"workers", s.workers}}},
              {"noise_percent", c.noise_percent},
              {"instances", c.instances},
              {"align", c.align},
              {"output_dir", c.output_dir}};
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path, e.what());
  }
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  return experiment_from_json(read_json_file(path), fs::absolute(path).parent_path());
}

/// Writes config.frozen.json into the output directory.
inline void freeze_config(const ExperimentConfig& c) {
  write_text_file(fs::path(c.output_dir) / "config.frozen.json", to_json(c).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Building blocks

inline GeneratorModel build_prior(const PriorSpec& p) {
  if (!p.bundle.empty()) return load_bundle_file(p.bundle);
  Rng rng(p.seed);
  std::vector<RealGrid> basis;
  for (std::size_t j = 0; j < p.dim; ++j) {
    RealGrid b(p.shape);
    for (auto& v : b.data()) v = rng.uniform(p.low, p.high);
    basis.push_back(std::move(b));
  }
  return linear_subspace_generator(basis, p.activation);
}

inline ForwardOperator build_operator(const ExperimentConfig& c, Shape image) {
  if (c.op.type == "fp") return FpOperator::coherent_array(image, c.op.fp);
  const Shape padded = c.op.padded.size() != 0 ? c.op.padded : Shape{2 * image.height, 2 * image.width};
  try {
    if (c.op.centered) return OversampledFourierOp::centered(image, padded);
    OversampledFourierOp op{image, padded, c.op.support_row, c.op.support_col};
    op.validate();
    return op;
  } catch (const Error& e) {
    throw ConfigError("operator", e.what());
  }
}

inline double configured_subsample_percent(const ExperimentConfig& c) {
  return c.op.type == "fp" ? c.op.fp.subsample_percent : 100.0;
}

namespace detail {

// Latent used to synthesize ground truth from a prior.
inline LatentVector ground_truth_latent(const SourceSpec& s, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  LatentVector z(dim);
  if (s.latent == "normal") {
    for (std::size_t j = 0; j < dim; ++j) z[j] = rng.normal();
    return z;
  }
  // Uniform on the probability simplex: normalized exponentials.
  double total = 0.0;
  for (std::size_t j = 0; j < dim; ++j) total += (z[j] = -std::log(1.0 - rng.uniform()));
  for (std::size_t j = 0; j < dim; ++j) z[j] /= total;
  return z;
}

struct GroundTruth {
  std::vector<RealGrid> items;
  std::vector<LatentVector> latents;  // only for from_prior sources
};

inline GroundTruth load_source(const SourceSpec& s, const std::string& field, std::size_t count,
                               const GeneratorModel& prior, bool is_image, std::uint64_t seed) {
  GroundTruth gt;
  if (s.kind == "tensor") {
    const auto all = unstack_grids(load_tensor_file(s.path));
    if (s.first + count > all.size()) {
      throw ConfigError(field, "tensor holds " + std::to_string(all.size()) + " items, need " +
                                   std::to_string(s.first + count));
    }
    gt.items.assign(all.begin() + static_cast<long>(s.first), all.begin() + static_cast<long>(s.first + count));
  } else if (s.kind == "pngs") {
    if (s.first + count > s.pngs.size()) throw ConfigError(field, "not enough PNG files");
    for (std::size_t j = 0; j < count; ++j) gt.items.push_back(read_png(s.pngs[s.first + j]));
  } else if (s.kind == "blur") {
    const std::size_t offset = s.split == "test" ? train_split(s.blur.count) : 0;
    const std::size_t limit = s.split == "test" ? s.blur.count : train_split(s.blur.count);
    if (offset + s.first + count > limit) throw ConfigError(field, "blur split has too few kernels");
    for (std::size_t j = 0; j < count; ++j) gt.items.push_back(synthesize_blur(s.blur, offset + s.first + j));
  } else {
    for (std::size_t j = 0; j < count; ++j) {
      gt.latents.push_back(ground_truth_latent(s, prior.latent_dim(), derive_seed(seed, s.first + j)));
      gt.items.push_back(is_image ? decode_image(prior, gt.latents.back()) : generate(prior, gt.latents.back()));
    }
  }
  return gt;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string instance_name(std::size_t j) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "instance_%04zu", j);
  return buf;
}

inline fs::path sim_dir(const ExperimentConfig& c) { return fs::path(c.output_dir) / "simulate"; }
inline fs::path rec_dir(const ExperimentConfig& c) { return fs::path(c.output_dir) / "recover"; }
inline fs::path eval_dir(const ExperimentConfig& c) { return fs::path(c.output_dir) / "eval"; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

struct GenBlursResult {
  std::string tensor_path;
  std::string manifest_path;
  std::size_t train_count = 0;
  std::size_t test_count = 0;
};

/// Writes `<out>.pbdt` with all kernels and `<out>.json` with the split manifest.
inline GenBlursResult gen_blurs(const BlurConfig& config, const std::string& out) {
  const BlurDataset ds = generate_dataset(config);
  GenBlursResult r{out + ".pbdt", out + ".json", ds.train_count, ds.test_count()};
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  save_tensor_file(stack_grids(ds.kernels), r.tensor_path);
  json manifest{{"config", to_json(config)},
                {"kernel_size", config.effective_kernel_size()},
                {"train_count", ds.train_count},
                {"test_count", ds.test_count()},
                {"train_range", {0, ds.train_count}},
                {"test_range", {ds.train_count, ds.kernels.size()}},
                {"parameters", ds.parameters}};
  write_text_file(r.manifest_path, manifest.dump(2) + "\n");
  return r;
}

struct SimulatedInstance {
  RealGrid image;
  RealGrid kernel;  // on the image grid
  std::vector<double> measurement;
  double noise_sigma = 0.0;
};

/// Synthesizes every instance; writes measurements, ground truth and the manifest.
inline std::vector<SimulatedInstance> simulate(const ExperimentConfig& c) {
  const GeneratorModel gi = build_prior(c.image_prior);
  const GeneratorModel gk = build_prior(c.kernel_prior);
  const Shape shape = gi.output_shape();
  const ForwardOperator op = build_operator(c, shape);
  const auto images = detail::load_source(c.images, "images", c.instances, gi, true, derive_seed(c.seed, 3));
  const auto kernels = detail::load_source(c.kernels, "kernels", c.instances, gk, false, derive_seed(c.seed, 4));

  std::vector<SimulatedInstance> out;
  json instances = json::array();
  json measurements = json::array();
  const std::uint64_t noise_base = derive_seed(c.seed, 1);
  for (std::size_t j = 0; j < c.instances; ++j) {
    SimulatedInstance inst;
    inst.image = images.items[j];
    if (inst.image.shape() != shape) {
      throw ConfigError("images", "item " + std::to_string(j) + " is " + to_string(inst.image.shape()) +
                                      ", image prior emits " + to_string(shape));
    }
    try {
      inst.kernel = kernels.items[j].shape() == shape ? kernels.items[j] : embed_kernel(kernels.items[j], shape);
    } catch (const Error& e) {
      throw ConfigError("kernels", e.what());
    }
    const auto clean = magnitude(pbd::apply(op, circular_convolve(inst.image, inst.kernel)));
    inst.noise_sigma = noise_sigma(clean, c.noise_percent);
    inst.measurement = add_noise(clean, c.noise_percent, derive_seed(noise_base, j));
    json entry{{"id", j}, {"name", detail::instance_name(j)}, {"noise_sigma", inst.noise_sigma}};
    if (!images.latents.empty()) entry["gt_z_image"] = images.latents[j].values();
    if (!kernels.latents.empty()) entry["gt_z_kernel"] = kernels.latents[j].values();
    instances.push_back(entry);
    measurements.push_back(inst.measurement);
    out.push_back(std::move(inst));
  }

  json manifest{{"operator", to_json(op)},
                {"operator_id", operator_id(op)},
                {"image_shape", {shape.height, shape.width}},
                {"measurement_count", measurement_count(op)},
                {"noise_percent", c.noise_percent},
                {"subsample_percent", configured_subsample_percent(c)},
                {"instances", instances}};
  if (const auto* fp = std::get_if<FpOperator>(&op)) manifest["subsampling_ratio"] = subsampling_ratio(*fp);
  freeze_config(c);
  const fs::path dir = detail::sim_dir(c);
  fs::create_directories(dir);
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  write_text_file(dir / "measurements.json", measurements.dump() + "\n");
  std::vector<RealGrid> gt_images, gt_kernels;
  for (const auto& inst : out) {
    gt_images.push_back(inst.image);
    gt_kernels.push_back(inst.kernel);
  }
  save_tensor_file(stack_grids(gt_images), (dir / "gt_images.pbdt").string());
  save_tensor_file(stack_grids(gt_kernels), (dir / "gt_kernels.pbdt").string());
  return out;
}

inline std::vector<std::vector<double>> load_measurements(const ExperimentConfig& c) {
  const json m = read_json_file((detail::sim_dir(c) / "measurements.json").string());
  return m.get<std::vector<std::vector<double>>>();
}

/// Runs the solver on every simulated instance and writes estimates and per-restart records.
inline std::vector<RecoveryResult> recover_all(const ExperimentConfig& c) {
  const GeneratorModel gi = build_prior(c.image_prior);
  const GeneratorModel gk = build_prior(c.kernel_prior);
  const json manifest = read_json_file((detail::sim_dir(c) / "manifest.json").string());
  const ForwardOperator op = operator_from_json(manifest.at("operator"));
  const auto measurements = load_measurements(c);
  if (measurements.size() < c.instances) throw ConfigError("instances", "fewer simulated instances than configured");

  std::vector<RecoveryResult> results;
  std::ostringstream csv;
  csv << "instance_id,restart,seed,final_residual,final_loss,failed\n";
  json summary = json::array();
  const fs::path dir = detail::rec_dir(c);
  fs::create_directories(dir / "previews");
  for (std::size_t j = 0; j < c.instances; ++j) {
    SolverConfig sc = c.solver;
    sc.rng_seed = derive_seed(c.solver.rng_seed, j);
    const RecoveryProblem problem{measurements[j], op, gi, gk, sc.gamma, sc.lambda};
    RecoveryResult res = recover(problem, sc);
    for (const auto& rec : res.per_restart) {
      csv << j << ',' << rec.index << ',' << rec.seed << ',' << detail::format_double(rec.final_residual) << ','
          << detail::format_double(rec.final_loss) << ',' << (rec.failed ? 1 : 0) << '\n';
    }
    summary.push_back({{"id", j},
                       {"best_restart", res.best_restart},
                       {"best_residual", res.best_residual},
                       {"best_z_image", res.best_z_image.values()},
                       {"best_z_kernel", res.best_z_kernel.values()}});
    write_png(normalize_for_display(res.image_estimate),
              (dir / "previews" / (detail::instance_name(j) + "_image.png")).string());
    write_png(normalize_for_display(res.kernel_estimate),
              (dir / "previews" / (detail::instance_name(j) + "_kernel.png")).string());
    results.push_back(std::move(res));
  }
  freeze_config(c);
  std::vector<RealGrid> images, kernels;
  for (const auto& r : results) {
    images.push_back(r.image_estimate);
    kernels.push_back(r.kernel_estimate);
  }
  save_tensor_file(stack_grids(images), (dir / "image_estimates.pbdt").string());
  save_tensor_file(stack_grids(kernels), (dir / "kernel_estimates.pbdt").string());
  write_text_file(dir / "restarts.csv", csv.str());
  write_text_file(dir / "summary.json", json{{"instances", summary}}.dump(2) + "\n");
  return results;
}

/// Alignment group used when scoring estimates from the given operator.
inline AlignmentGroup alignment_for(const std::string& policy, const std::string& operator_type) {
  if (policy == "full") return {};
  if (policy == "sign") return AlignmentGroup::sign_only();
  if (policy == "none") return AlignmentGroup::none();
  return operator_type == "fourier" ? AlignmentGroup{} : AlignmentGroup::sign_only();
}

struct EvalRow {
  std::size_t instance_id = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  bool flipped = false;
  long shift_r = 0;
  long shift_c = 0;
  double residual = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double mean_residual = 0.0;
  std::string csv;
};

/// Scores image estimates against ground truth; writes report.csv and report.json.
inline EvalReport evaluate_experiment(const ExperimentConfig& c, const fs::path& estimates_dir,
                                      const fs::path& gt_dir) {
  const json manifest = read_json_file((gt_dir / "manifest.json").string());
  const auto gt = unstack_grids(load_tensor_file((gt_dir / "gt_images.pbdt").string()));
  const auto est = unstack_grids(load_tensor_file((estimates_dir / "image_estimates.pbdt").string()));
  const json summary = read_json_file((estimates_dir / "summary.json").string());
  if (est.size() > gt.size()) throw Error(ErrorKind::DimensionMismatch, "more estimates than ground-truth images");
  const std::string op_type = manifest.at("operator").at("type").get<std::string>();
  const AlignmentGroup group = alignment_for(c.align, op_type);
  const std::string op_id = manifest.at("operator_id").get<std::string>();
  const std::string subsample = detail::format_double(manifest.at("subsample_percent").get<double>());
  const std::string noise = detail::format_double(manifest.at("noise_percent").get<double>());

  EvalReport report;
  std::ostringstream csv;
  csv << "instance_id,operator,subsample_percent,noise_percent,psnr,ssim,flipped,shift_r,shift_c,residual\n";
  for (std::size_t j = 0; j < est.size(); ++j) {
    const AlignmentReport a = align_and_score(est[j], gt[j], group);
    EvalRow row{j, a.aligned_psnr, a.aligned_ssim, a.flipped, a.shift_r, a.shift_c,
                summary.at("instances").at(j).at("best_residual").get<double>()};
    csv << j << ',' << op_id << ',' << subsample << ',' << noise << ',' << detail::format_double(row.psnr) << ','
        << detail::format_double(row.ssim) << ',' << (row.flipped ? 1 : 0) << ',' << row.shift_r << ',' << row.shift_c
        << ',' << detail::format_double(row.residual) << '\n';
    report.mean_psnr += row.psnr;
    report.mean_ssim += row.ssim;
    report.mean_residual += row.residual;
    report.rows.push_back(row);
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, report.rows.size()));
  report.mean_psnr /= n;
  report.mean_ssim /= n;
  report.mean_residual /= n;
  csv << "mean," << op_id << ',' << subsample << ',' << noise << ',' << detail::format_double(report.mean_psnr) << ','
      << detail::format_double(report.mean_ssim) << ",,,," << detail::format_double(report.mean_residual) << '\n';
  report.csv = csv.str();

  const fs::path dir = detail::eval_dir(c);
  write_text_file(dir / "report.csv", report.csv);
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"instance_id", r.instance_id},
                    {"psnr", r.psnr},
                    {"ssim", r.ssim},
                    {"flipped", r.flipped},
                    {"shift_r", r.shift_r},
                    {"shift_c", r.shift_c},
                    {"residual", r.residual}});
  }
  write_text_file(dir / "report.json", json{{"operator", op_id},
                                            {"subsample_percent", manifest.at("subsample_percent")},
                                            {"noise_percent", manifest.at("noise_percent")},
                                            {"mean_psnr", report.mean_psnr},
                                            {"mean_ssim", report.mean_ssim},
                                            {"mean_residual", report.mean_residual},
                                            {"rows", rows}}
                                           .dump(2) +
                                           "\n");
  return report;
}

inline EvalReport evaluate_experiment(const ExperimentConfig& c) {
  return evaluate_experiment(c, detail::rec_dir(c), detail::sim_dir(c));
}

/// simulate, recover and evaluate in sequence.
inline EvalReport run_experiment(const ExperimentConfig& c) {
  simulate(c);
  recover_all(c);
  return evaluate_experiment(c);
}

/// Human-readable JSON description of a bundle.
inline json bundle_info(const GeneratorModel& m) {
  json layers = json::array();
  for (std::size_t j = 0; j < m.layers().size(); ++j) {
    static const char* names[] = {"?", "dense", "transposed-conv", "relu", "tanh", "sigmoid", "reshape",
                                  "batchnorm-frozen"};
    const TensorShape& out = m.shape_at(j + 1);
    layers.push_back({{"kind", names[static_cast<int>(kind_of(m.layers()[j]))]},
                      {"output", {out.channels, out.height, out.width}}});
  }
  return json{{"latent_dim", m.latent_dim()},
              {"output", {m.output_shape().height, m.output_shape().width}},
              {"output_activation", to_string(m.output_activation())},
              {"layers", layers}};
}

}  // namespace pbd
