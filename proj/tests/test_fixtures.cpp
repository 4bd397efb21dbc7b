#include <gtest/gtest.h>

#include <filesystem>

#include "pbd/bundle.hpp"
#include "pbd/experiment.hpp"
#include "pbd/tensor_file.hpp"

using namespace pbd;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = PBD_FIXTURE_DIR;

// Decoder outputs recorded by the trainer for ten random latents.
void expect_parity(const std::string& name) {
  const GeneratorModel model = load_bundle_file((kFixtures / (name + ".pbdw")).string());
  const Tensor z = load_tensor_file((kFixtures / ("parity_" + name + "_latents.pbdt")).string());
  const Tensor out = load_tensor_file((kFixtures / ("parity_" + name + "_outputs.pbdt")).string());
  ASSERT_EQ(z.dims, (std::vector<std::size_t>{10, model.latent_dim()}));
  const std::size_t n = model.output_shape().size();
  for (std::size_t s = 0; s < 10; ++s) {
    const LatentVector latent(std::vector<double>(z.data.begin() + s * z.dims[1], z.data.begin() + (s + 1) * z.dims[1]));
    const RealGrid g = generate(model, latent);
    for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(g[j], out.data[s * n + j], 1e-4) << name << " sample " << s;
  }
}

}  // namespace

TEST(Fixtures, MnistDecoderMatchesTrainer) { expect_parity("mnist_vae"); }

TEST(Fixtures, BlurDecoderMatchesTrainer) { expect_parity("blur_vae"); }

TEST(Fixtures, BundleShapes) {
  const auto mnist = load_bundle_file((kFixtures / "mnist_vae.pbdw").string());
  EXPECT_EQ(mnist.latent_dim(), 50u);
  EXPECT_EQ(mnist.output_shape(), (Shape{28, 28}));
  EXPECT_EQ(mnist.output_activation(), OutputActivation::tanh);
  const auto blur = load_bundle_file((kFixtures / "blur_vae.pbdw").string());
  EXPECT_EQ(blur.latent_dim(), 50u);
  EXPECT_EQ(blur.output_activation(), OutputActivation::normalized_nonneg);
  const auto config = blur_config_from_json(read_json_file((kFixtures / "blur_config.json").string()));
  EXPECT_EQ(blur.output_shape(), (Shape{config.effective_kernel_size(), config.effective_kernel_size()}));
}

TEST(Fixtures, DecodedKernelsAreValid) {
  const auto blur = load_bundle_file((kFixtures / "blur_vae.pbdw").string());
  Rng rng(5);
  for (int s = 0; s < 100; ++s) {
    LatentVector z(blur.latent_dim());
    for (std::size_t j = 0; j < z.dim(); ++j) z[j] = rng.normal();
    EXPECT_TRUE(is_valid_kernel(generate(blur, z)));
  }
}

TEST(Fixtures, TestDigitsInUnitRange) {
  const Tensor t = load_tensor_file((kFixtures / "mnist_test_digits.pbdt").string());
  EXPECT_EQ(t.dims, (std::vector<std::size_t>{20, 28, 28}));
  for (double v : t.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}
