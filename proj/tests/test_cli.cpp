#include <gtest/gtest.h>
#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pbd/experiment.hpp"

using namespace pbd;
namespace fs = std::filesystem;

namespace {

struct CommandResult {
  int exit_code = -1;
  std::string output;
};

CommandResult run_cli(const std::string& args) {
  const std::string log = (fs::temp_directory_path() / "pbd_cli_test.log").string();
  const std::string cmd = std::string(PBD_CLI_PATH) + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("pbd_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Small subspace-prior experiment; `extra` is merged on top.
  std::string write_config(const json& extra = json::object()) {
    json j = json::parse(R"({
      "seed": 11,
      "operator": {"type": "fourier"},
      "image_prior": {"subspace": {"dim": 2, "shape": [16, 16], "seed": 1, "range": [0.0, 1.0]}},
      "kernel_prior": {"subspace": {"dim": 1, "shape": [3, 3], "seed": 2, "range": [0.0, 1.0],
                                    "activation": "normalized-nonneg"}},
      "images": {"kind": "from_prior"},
      "kernels": {"kind": "from_prior"},
      "solver": {"restarts": 2, "steps_per_restart": 300},
      "instances": 2
    })");
    j["output_dir"] = (dir_ / "exp").string();
    j.merge_patch(extra);
    const auto path = dir_ / "config.json";
    std::ofstream(path) << j.dump(2);
    return path.string();
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, GenBlursWritesSplitAndIsReproducible) {
  const auto out = (dir_ / "blurs").string();
  const auto r = run_cli("gen-blurs --count 8 --seed 7 --kind motion --size 15 --length-range 5 12 --out " + out);
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const Tensor t = load_tensor_file(out + ".pbdt");
  EXPECT_EQ(t.dims, (std::vector<std::size_t>{8, 15, 15}));
  const json manifest = read_json_file(out + ".json");
  EXPECT_EQ(manifest.at("train_count"), 6);
  EXPECT_EQ(manifest.at("test_count"), 2);
  const auto first = slurp(out + ".pbdt"), first_manifest = slurp(out + ".json");
  ASSERT_EQ(run_cli("gen-blurs --count 8 --seed 7 --kind motion --size 15 --length-range 5 12 --out " + out).exit_code, 0);
  EXPECT_EQ(slurp(out + ".pbdt"), first);
  EXPECT_EQ(slurp(out + ".json"), first_manifest);
}

TEST_F(CliTest, GenBlursRejectsInvertedRange) {
  const auto r = run_cli("gen-blurs --count 8 --sigma-range 1.5 0.5 --out " + (dir_ / "bad").string());
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.output.find("sigma_range"), std::string::npos) << r.output;
}

TEST_F(CliTest, NoiselessSimulationIsConsistentAtGroundTruth) {
  const auto cfg = load_experiment(write_config());
  simulate(cfg);
  const json manifest = read_json_file((fs::path(cfg.output_dir) / "simulate" / "manifest.json").string());
  const auto measurements = load_measurements(cfg);
  const GeneratorModel gi = build_prior(cfg.image_prior), gk = build_prior(cfg.kernel_prior);
  const ForwardOperator op = operator_from_json(manifest.at("operator"));
  EXPECT_EQ(measurement_count(op), 32u * 32u);
  for (std::size_t j = 0; j < 2; ++j) {
    const auto& entry = manifest.at("instances").at(j);
    const LatentVector zi(entry.at("gt_z_image").get<std::vector<double>>());
    const LatentVector zk(entry.at("gt_z_kernel").get<std::vector<double>>());
    EXPECT_LT(measurement_residual(measurements[j], op, decode_image(gi, zi), decode_kernel(gk, zk, {16, 16})), 1e-9);
  }
}

TEST_F(CliTest, NoiseSigmaIsRecorded) {
  const auto cfg = load_experiment(write_config({{"noise_percent", 1.0}}));
  const auto sims = simulate(cfg);
  const json manifest = read_json_file((fs::path(cfg.output_dir) / "simulate" / "manifest.json").string());
  for (std::size_t j = 0; j < sims.size(); ++j) {
    EXPECT_EQ(manifest.at("instances").at(j).at("noise_sigma").get<double>(), sims[j].noise_sigma);
    EXPECT_GT(sims[j].noise_sigma, 0.0);
  }
}

TEST_F(CliTest, FpManifestRecordsSubsamplingRatio) {
  const auto path = write_config(json::parse(R"({
      "operator": {"type": "fp", "subsample_percent": 10.0},
      "image_prior": {"subspace": {"dim": 2, "shape": [20, 20], "seed": 1}}
    })"));
  const auto r = run_cli("simulate --config " + path);
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const json manifest = read_json_file((dir_ / "exp" / "simulate" / "manifest.json").string());
  EXPECT_EQ(manifest.at("subsampling_ratio").get<double>(), 10.0);
  EXPECT_EQ(manifest.at("subsample_percent").get<double>(), 10.0);
}

TEST_F(CliTest, RecoverSmokeAndDeterminism) {
  const auto path = write_config({{"solver", {{"restarts", 4}, {"steps_per_restart", 1500}}}});
  ASSERT_EQ(run_cli("simulate --config " + path).exit_code, 0);
  const auto r = run_cli("recover --config " + path);
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const json summary = read_json_file((dir_ / "exp" / "recover" / "summary.json").string());
  const auto measurements = load_measurements(load_experiment(path));
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_LT(summary.at("instances").at(j).at("best_residual").get<double>(), 1e-3 * norm(measurements[j]));
  }
  const auto csv = slurp(dir_ / "exp" / "recover" / "restarts.csv");
  ASSERT_EQ(run_cli("recover --config " + path + " --threads 2").exit_code, 0);
  EXPECT_EQ(slurp(dir_ / "exp" / "recover" / "restarts.csv"), csv);
  EXPECT_TRUE(fs::exists(dir_ / "exp" / "recover" / "previews" / "instance_0000_image.png"));
}

TEST_F(CliTest, MissingBundleIsAConfigError) {
  const auto path = write_config({{"image_prior", {{"bundle", (dir_ / "nope.pbdw").string()}}}});
  const auto r = run_cli("recover --config " + path);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.output.find("image_prior.bundle"), std::string::npos) << r.output;
  EXPECT_EQ(run_cli("simulate").exit_code, 2);
}

TEST_F(CliTest, EvalOfGroundTruthIsPerfect) {
  const auto cfg = load_experiment(write_config({{"instances", 3}}));
  simulate(cfg);
  const fs::path est = dir_ / "est";
  fs::create_directories(est);
  fs::copy_file(fs::path(cfg.output_dir) / "simulate" / "gt_images.pbdt", est / "image_estimates.pbdt");
  json inst = json::array();
  for (int j = 0; j < 3; ++j) inst.push_back({{"id", j}, {"best_residual", 0.0}});
  std::ofstream(est / "summary.json") << json{{"instances", inst}}.dump();
  const auto r = run_cli("eval --config " + (dir_ / "config.json").string() + " --estimates " + est.string());
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const json report = read_json_file((fs::path(cfg.output_dir) / "eval" / "report.json").string());
  EXPECT_EQ(report.at("mean_psnr").get<double>(), kPsnrCap);
  EXPECT_NEAR(report.at("mean_ssim").get<double>(), 1.0, 1e-12);
}

TEST_F(CliTest, ReportShapeAndMeanRecomputation) {
  const auto path = write_config({{"instances", 3}, {"noise_percent", 1.0}});
  ASSERT_EQ(run_cli("run --config " + path).exit_code, 0);
  std::istringstream csv(slurp(dir_ / "exp" / "eval" / "report.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "instance_id,operator,subsample_percent,noise_percent,psnr,ssim,flipped,shift_r,shift_c,residual");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(csv, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows.back()[0], "mean");
  double psnr = 0.0, ssim = 0.0;
  for (std::size_t j = 0; j < 3; ++j) {
    psnr += std::stod(rows[j][4]);
    ssim += std::stod(rows[j][5]);
  }
  const json report = read_json_file((dir_ / "exp" / "eval" / "report.json").string());
  EXPECT_NEAR(report.at("mean_psnr").get<double>(), psnr / 3, 1e-9);
  EXPECT_NEAR(report.at("mean_ssim").get<double>(), ssim / 3, 1e-9);
}

TEST_F(CliTest, FrozenConfigReproducesReport) {
  const auto path =
      write_config(json::parse(R"({"operator": {"type": "fp", "subsample_percent": 50.0}, "noise_percent": 1.0})"));
  ASSERT_EQ(run_cli("run --config " + path).exit_code, 0);
  const auto first = slurp(dir_ / "exp" / "eval" / "report.csv");
  const auto frozen = dir_ / "frozen.json";
  fs::copy_file(dir_ / "exp" / "config.frozen.json", frozen);
  ASSERT_EQ(run_cli("run --config " + frozen.string()).exit_code, 0);
  EXPECT_EQ(slurp(dir_ / "exp" / "eval" / "report.csv"), first);
  EXPECT_EQ(slurp(dir_ / "exp" / "config.frozen.json"), slurp(frozen));
}

TEST_F(CliTest, BundleInfo) {
  const GeneratorModel m(2, {2, 2}, {DenseLayer{2, 4, std::vector<double>(8, 0.5), std::vector<double>(4, 0.0)}},
                         OutputActivation::tanh);
  const auto path = (dir_ / "m.pbdw").string();
  save_bundle_file(m, path);
  const auto r = run_cli("bundle-info " + path);
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("\"latent_dim\": 2"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("tanh"), std::string::npos);
}
