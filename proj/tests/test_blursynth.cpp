#include <gtest/gtest.h>

#include "pbd/blursynth.hpp"
#include "pbd/detail/binary.hpp"
#include "pbd/tensor_file.hpp"
#include "test_support.hpp"

using namespace pbd;

namespace {

void expect_four_fold_symmetric(const RealGrid& k) {
  const std::size_t n = k.height();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      EXPECT_NEAR(k(r, c), k(n - 1 - r, c), 1e-15);
      EXPECT_NEAR(k(r, c), k(r, n - 1 - c), 1e-15);
      EXPECT_NEAR(k(r, c), k(c, r), 1e-15);
    }
  }
}

// Two-sided Kolmogorov-Smirnov statistic against U(lo, hi).
double ks_uniform(std::vector<double> xs, double lo, double hi) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t j = 0; j < xs.size(); ++j) {
    const double f = (xs[j] - lo) / (hi - lo);
    d = std::max({d, static_cast<double>(j + 1) / n - f, f - static_cast<double>(j) / n});
  }
  return d;
}

}  // namespace

TEST(GaussianKernel, TinySigmaIsDelta) {
  const auto k = gaussian_kernel(15, 1e-6);
  EXPECT_GT(k(7, 7), 1.0 - 1e-9);
}

TEST(GaussianKernel, UnitSumAndSymmetric) {
  for (std::size_t size : {1u, 3u, 5u, 15u, 21u}) {
    for (double sigma : {0.5, 1.0, 1.5, 4.0}) {
      const auto k = gaussian_kernel(size, sigma);
      EXPECT_NEAR(k.sum(), 1.0, 1e-12);
      expect_four_fold_symmetric(k);
    }
  }
}

TEST(GaussianKernel, CenterMatchesExpWeightOracle) {
  double total = 0.0;
  for (int r = -2; r <= 2; ++r)
    for (int c = -2; c <= 2; ++c) total += std::exp(-(r * r + c * c) / 2.0);
  EXPECT_NEAR(gaussian_kernel(5, 1.0)(2, 2), 1.0 / total, 1e-15);
}

TEST(GaussianKernel, Errors) {
  try {
    gaussian_kernel(4, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BadSize);
  }
  EXPECT_THROW(gaussian_kernel(0, 1.0), Error);
  EXPECT_THROW(gaussian_kernel(5, 0.0), Error);
}

TEST(MotionKernel, StraightHorizontalIsOneRow) {
  const auto k = straight_motion_kernel(15, 5.0);
  EXPECT_NEAR(k.sum(), 1.0, 1e-12);
  double row_mass = 0.0;
  for (std::size_t c = 0; c < 15; ++c) row_mass += k(7, c);
  EXPECT_NEAR(row_mass, 1.0, 1e-12);
}

TEST(MotionKernel, InvariantsOverSeeds) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const double length = 5.0 + 0.1 * static_cast<double>(seed % 140);
    const auto k = motion_kernel(21, length, seed);
    EXPECT_TRUE(is_valid_kernel(k, 1e-12)) << seed;
    EXPECT_EQ(k.shape(), (Shape{21, 21}));
  }
}

TEST(MotionKernel, DeterministicPerSeed) {
  EXPECT_EQ(motion_kernel(15, 10, 7), motion_kernel(15, 10, 7));
  EXPECT_NE(motion_kernel(15, 10, 7), motion_kernel(15, 10, 8));
}

TEST(MotionKernel, BadLength) {
  try {
    motion_kernel(15, 15 * 1.5, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BadLength);
  }
  EXPECT_THROW(motion_kernel(15, 0.0, 1), Error);
}

TEST(MotionKernel, GoldenSeed42Size15Length10) {
  const auto golden = detail::read_file(std::string(PBD_FIXTURE_DIR) + "/golden_motion_kernel.pbdt");
  const auto bytes = save_tensor(stack_grids({motion_kernel(15, 10.0, 42)}));
  EXPECT_EQ(bytes, golden);
}

TEST(EmbedKernel, Examples) {
  const auto d = embed_kernel(RealGrid(1, 1, {1.0}), {4, 4});
  EXPECT_EQ(d(0, 0), 1.0);
  EXPECT_EQ(d.sum(), 1.0);
  RealGrid centred(3, 3);
  centred(1, 1) = 1.0;
  const auto e = embed_kernel(centred, {8, 8});
  EXPECT_EQ(e(0, 0), 1.0);
  EXPECT_EQ(e.sum(), 1.0);
  try {
    embed_kernel(RealGrid(5, 5), {4, 4});
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::KernelTooLarge);
  }
}

TEST(EmbedKernel, ConvolutionMatchesSmallSupportOracle) {
  Rng rng(61);
  const RealGrid small = pbd::testing::random_grid(rng, 5, 5, 0.0, 1.0);
  const RealGrid image = pbd::testing::random_grid(rng, 16, 16);
  const RealGrid out = circular_convolve(image, embed_kernel(small, {16, 16}));
  for (long r = 0; r < 16; ++r) {
    for (long c = 0; c < 16; ++c) {
      double acc = 0.0;
      for (long a = -2; a <= 2; ++a)
        for (long b = -2; b <= 2; ++b)
          acc += small(static_cast<std::size_t>(a + 2), static_cast<std::size_t>(b + 2)) *
                 image(static_cast<std::size_t>((r - a + 16) % 16), static_cast<std::size_t>((c - b + 16) % 16));
      EXPECT_NEAR(out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)), acc, 1e-10);
    }
  }
}

TEST(EmbedKernel, DeltaImageReproducesEmbedding) {
  Rng rng(62);
  RealGrid delta(12, 12);
  delta(0, 0) = 1.0;
  const auto emb = embed_kernel(gaussian_kernel(5, 1.0), {12, 12});
  EXPECT_LT(pbd::testing::max_abs_diff(circular_convolve(delta, emb).data(), emb.data()), 1e-15);
}

TEST(EmbedKernel, CropIsAdjoint) {
  Rng rng(63);
  for (int trial = 0; trial < 20; ++trial) {
    const RealGrid k = pbd::testing::random_grid(rng, 5, 3);
    const RealGrid g = pbd::testing::random_grid(rng, 9, 7);
    EXPECT_NEAR(dot(embed_kernel(k, g.shape()).data(), g.data()), dot(k.data(), crop_embedded(g, k.shape()).data()),
                1e-12);
  }
}

TEST(Dataset, SplitSizes) {
  EXPECT_EQ(train_split(80000), 60000u);
  EXPECT_EQ(80000 - train_split(80000), 20000u);
  EXPECT_EQ(train_split(4), 3u);
  BlurConfig config;
  config.count = 4;
  const auto ds = generate_dataset(config);
  EXPECT_EQ(ds.train_count, 3u);
  EXPECT_EQ(ds.test_count(), 1u);
}

TEST(Dataset, DeterministicAndValid) {
  for (BlurKind kind : {BlurKind::gaussian, BlurKind::motion}) {
    BlurConfig config;
    config.kind = kind;
    config.count = 40;
    config.seed = 5;
    const auto a = generate_dataset(config), b = generate_dataset(config);
    EXPECT_EQ(a.kernels, b.kernels);
    for (const auto& k : a.kernels) {
      EXPECT_TRUE(is_valid_kernel(k));
      EXPECT_EQ(k.height(), config.effective_kernel_size());
    }
  }
}

TEST(Dataset, ParametersUniformInRange) {
  for (BlurKind kind : {BlurKind::gaussian, BlurKind::motion}) {
    BlurConfig config;
    config.kind = kind;
    config.seed = 11;
    const double lo = kind == BlurKind::gaussian ? config.sigma_min : config.length_min;
    const double hi = kind == BlurKind::gaussian ? config.sigma_max : config.length_max;
    std::vector<double> xs;
    for (std::size_t j = 0; j < 10000; ++j) {
      double p = 0.0;
      if (kind == BlurKind::gaussian) {
        synthesize_blur(config, j, &p);
      } else {
        // The parameter is drawn before the trajectory; read it off a cheap draw.
        Rng rng(derive_seed(config.seed, j));
        p = rng.uniform(config.length_min, config.length_max);
      }
      EXPECT_GE(p, lo);
      EXPECT_LE(p, hi);
      xs.push_back(p);
    }
    // Critical value of the KS statistic at p = 0.01 for n = 10^4.
    EXPECT_LT(ks_uniform(xs, lo, hi), 1.628 / 100.0) << to_string(kind);
  }
}

TEST(Dataset, MotionParameterMatchesRecordedDraw) {
  BlurConfig config;
  config.kind = BlurKind::motion;
  config.seed = 11;
  for (std::size_t j = 0; j < 20; ++j) {
    double p = 0.0;
    synthesize_blur(config, j, &p);
    Rng rng(derive_seed(config.seed, j));
    EXPECT_EQ(p, rng.uniform(config.length_min, config.length_max));
  }
}

TEST(Dataset, LongMotionUsesLargerCanvas) {
  BlurConfig config;
  config.kind = BlurKind::motion;
  EXPECT_EQ(config.effective_kernel_size(), 21u);
  config.length_max = 12;
  EXPECT_EQ(config.effective_kernel_size(), 15u);
}
