#include <gtest/gtest.h>

#include "pbd/priors.hpp"
#include "pbd/random.hpp"
#include "test_support.hpp"

using namespace pbd;
using pbd::testing::max_abs_diff;

namespace {

std::vector<double> random_values(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.uniform(-1, 1);
  return v;
}

LatentVector random_latent(Rng& rng, std::size_t n) { return LatentVector(random_values(rng, n)); }

DenseLayer random_dense(Rng& rng, std::size_t in, std::size_t out) {
  return {in, out, random_values(rng, in * out, 0.5), random_values(rng, out, 0.2)};
}

// Gather-form transposed convolution: each output pixel sums the inputs whose
// strided footprint covers it.
std::vector<double> transposed_conv_oracle(const TransposedConvLayer& l, const std::vector<double>& x) {
  const long oh = static_cast<long>(l.out_height()), ow = static_cast<long>(l.out_width());
  const long s = static_cast<long>(l.stride), p = static_cast<long>(l.padding);
  std::vector<double> y(l.out_channels * l.out_height() * l.out_width());
  for (std::size_t co = 0; co < l.out_channels; ++co) {
    for (long r = 0; r < oh; ++r) {
      for (long c = 0; c < ow; ++c) {
        double acc = l.bias[co];
        for (std::size_t ci = 0; ci < l.in_channels; ++ci) {
          for (long a = 0; a < static_cast<long>(l.kernel_height); ++a) {
            const long num_r = r + p - a;
            if (num_r < 0 || num_r % s != 0 || num_r / s >= static_cast<long>(l.in_height)) continue;
            for (long b = 0; b < static_cast<long>(l.kernel_width); ++b) {
              const long num_c = c + p - b;
              if (num_c < 0 || num_c % s != 0 || num_c / s >= static_cast<long>(l.in_width)) continue;
              const double xv = x[(ci * l.in_height + static_cast<std::size_t>(num_r / s)) * l.in_width +
                                  static_cast<std::size_t>(num_c / s)];
              const double wv = l.weights[((ci * l.out_channels + co) * l.kernel_height + static_cast<std::size_t>(a)) *
                                              l.kernel_width + static_cast<std::size_t>(b)];
              acc += xv * wv;
            }
          }
        }
        y[static_cast<std::size_t>((static_cast<long>(co) * oh + r) * ow + c)] = acc;
      }
    }
  }
  return y;
}

// Central finite differences of <G(z), u> compared with generate_vjp.
void expect_vjp_matches_fd(const GeneratorModel& model, Rng& rng, double tol = 1e-5) {
  for (int trial = 0; trial < 3; ++trial) {
    const LatentVector z = random_latent(rng, model.latent_dim());
    RealGrid u(model.output_shape());
    for (auto& v : u.data()) v = rng.uniform(-1, 1);
    const LatentVector g = generate_vjp(model, z, u);
    const double h = 1e-6;
    for (std::size_t j = 0; j < z.dim(); ++j) {
      LatentVector zp = z, zm = z;
      zp[j] += h;
      zm[j] -= h;
      const double fd = (dot(generate(model, zp).data(), u.data()) - dot(generate(model, zm).data(), u.data())) / (2 * h);
      EXPECT_NEAR(g[j], fd, tol * std::max(1.0, std::abs(fd))) << "coordinate " << j;
    }
  }
}

}  // namespace

TEST(Generate, SubspaceBasisVectorReturnsBasisElement) {
  Rng rng(31);
  std::vector<RealGrid> basis;
  for (int j = 0; j < 3; ++j) basis.push_back(pbd::testing::random_grid(rng, 4, 5));
  const auto model = linear_subspace_generator(basis);
  for (std::size_t j = 0; j < 3; ++j) {
    LatentVector e(3);
    e[j] = 1.0;
    EXPECT_EQ(generate(model, e), basis[j]);
  }
}

TEST(Generate, ZeroWeightsGiveBiasThroughActivation) {
  const DenseLayer dense{2, 4, std::vector<double>(8, 0.0), {0.0, 1.0, -1.0, 2.0}};
  const GeneratorModel tanh_model(2, {2, 2}, {dense}, OutputActivation::tanh);
  const auto out = generate(tanh_model, LatentVector({3.0, -7.0}));
  EXPECT_DOUBLE_EQ(out[0], 0.0);
  EXPECT_DOUBLE_EQ(out[1], std::tanh(1.0));
  EXPECT_DOUBLE_EQ(out[3], std::tanh(2.0));
}

TEST(Generate, TwoLayerDenseMatchesHandOracle) {
  Rng rng(32);
  const auto d1 = random_dense(rng, 3, 5), d2 = random_dense(rng, 5, 6);
  const GeneratorModel model(3, {2, 3}, {d1, ReluLayer{5}, d2}, OutputActivation::sigmoid);
  const LatentVector z = random_latent(rng, 3);
  std::vector<double> hidden(5), expect(6);
  for (std::size_t o = 0; o < 5; ++o) {
    double acc = d1.bias[o];
    for (std::size_t i = 0; i < 3; ++i) acc += d1.weights[o * 3 + i] * z[i];
    hidden[o] = std::max(0.0, acc);
  }
  for (std::size_t o = 0; o < 6; ++o) {
    double acc = d2.bias[o];
    for (std::size_t i = 0; i < 5; ++i) acc += d2.weights[o * 5 + i] * hidden[i];
    expect[o] = 1.0 / (1.0 + std::exp(-acc));
  }
  EXPECT_LT(max_abs_diff(generate(model, z).data(), expect), 1e-14);
}

TEST(Generate, TransposedConvMatchesGatherOracle) {
  Rng rng(33);
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t pad : {0u, 1u}) {
      TransposedConvLayer t{2, 3, 4, 3, 4, 3, stride, pad, {}, {}};
      t.weights = random_values(rng, 2 * 3 * 4 * 3);
      t.bias = random_values(rng, 3);
      const GeneratorModel model(24, {3 * t.out_height(), t.out_width()}, {ReshapeLayer{{2, 3, 4}}, t},
                                 OutputActivation::identity);
      const LatentVector z = random_latent(rng, 24);
      EXPECT_LT(max_abs_diff(generate(model, z).data(), transposed_conv_oracle(t, z.values())), 1e-13);
    }
  }
}

TEST(Generate, LatentDimensionMismatchThrows) {
  Rng rng(34);
  const GeneratorModel model(3, {2, 2}, {random_dense(rng, 3, 4)}, OutputActivation::identity);
  try {
    generate(model, LatentVector(4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DimensionMismatch);
  }
}

TEST(Generate, ChainMismatchRejectedAtConstruction) {
  Rng rng(35);
  EXPECT_THROW(GeneratorModel(3, {2, 2}, {random_dense(rng, 4, 4)}, OutputActivation::identity), Error);
  EXPECT_THROW(GeneratorModel(3, {3, 3}, {random_dense(rng, 3, 4)}, OutputActivation::identity), Error);
}

TEST(Generate, NonFiniteOutputIsReported) {
  const DenseLayer dense{1, 1, {1.0}, {0.0}};
  const GeneratorModel model(1, {1, 1}, {dense}, OutputActivation::identity);
  try {
    generate(model, LatentVector(std::vector<double>{std::numeric_limits<double>::infinity()}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteOutput);
  }
}

TEST(Generate, NormalizedNonnegHeadYieldsValidKernels) {
  Rng rng(36);
  const GeneratorModel model(4, {5, 5}, {random_dense(rng, 4, 25)}, OutputActivation::normalized_nonneg);
  for (int trial = 0; trial < 200; ++trial) {
    LatentVector z(random_values(rng, 4, 10.0));
    const auto k = generate(model, z);
    EXPECT_TRUE(is_valid_kernel(k));
  }
}

TEST(Generate, DeterministicAndPure) {
  Rng rng(37);
  const GeneratorModel model(3, {2, 2}, {random_dense(rng, 3, 4), TanhLayer{4}}, OutputActivation::identity);
  const LatentVector z = random_latent(rng, 3);
  EXPECT_EQ(generate(model, z), generate(model, z));
}

TEST(GenerateVjp, ZeroUpstreamGivesZero) {
  Rng rng(38);
  const GeneratorModel model(3, {2, 2}, {random_dense(rng, 3, 4)}, OutputActivation::tanh);
  const auto g = generate_vjp(model, random_latent(rng, 3), RealGrid(2, 2));
  for (double v : g.data()) EXPECT_EQ(v, 0.0);
}

TEST(GenerateVjp, SubspaceGradientIsBasisProjection) {
  Rng rng(39);
  std::vector<RealGrid> basis;
  for (int j = 0; j < 4; ++j) basis.push_back(pbd::testing::random_grid(rng, 3, 3));
  const auto model = linear_subspace_generator(basis);
  const RealGrid u = pbd::testing::random_grid(rng, 3, 3);
  const auto g = generate_vjp(model, random_latent(rng, 4), u);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(g[j], dot(basis[j].data(), u.data()), 1e-14);
}

TEST(GenerateVjp, FiniteDifferencesDenseStack) {
  Rng rng(40);
  const GeneratorModel model(4, {3, 4},
                             {random_dense(rng, 4, 8), SigmoidLayer{8}, random_dense(rng, 8, 12), TanhLayer{12}},
                             OutputActivation::identity);
  expect_vjp_matches_fd(model, rng);
}

TEST(GenerateVjp, FiniteDifferencesPerOutputActivation) {
  for (auto act : {OutputActivation::identity, OutputActivation::tanh, OutputActivation::sigmoid,
                   OutputActivation::normalized_nonneg}) {
    Rng rng(41);
    const GeneratorModel model(3, {3, 3}, {random_dense(rng, 3, 9)}, act);
    expect_vjp_matches_fd(model, rng);
  }
}

TEST(GenerateVjp, FiniteDifferencesConvStack) {
  Rng rng(42);
  TransposedConvLayer t{2, 3, 3, 2, 3, 3, 2, 1, random_values(rng, 36), random_values(rng, 2)};
  const FrozenBatchNormLayer bn{2, 9, {1.5, -0.5}, {0.1, 0.2}};
  const std::size_t oh = t.out_height(), ow = t.out_width();
  TransposedConvLayer last{2, oh, ow, 1, 2, 2, 1, 0, random_values(rng, 8), random_values(rng, 1)};
  const GeneratorModel model(5, {last.out_height(), last.out_width()},
                             {random_dense(rng, 5, 18), ReluLayer{18}, ReshapeLayer{{2, 3, 3}}, bn, t,
                              ReluLayer{2 * oh * ow}, last},
                             OutputActivation::sigmoid);
  expect_vjp_matches_fd(model, rng);
}
