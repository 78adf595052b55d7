#include <gtest/gtest.h>

#include <cmath>

#include "sspcab/errors.hpp"
#include "sspcab/gradcheck_suite.hpp"
#include "sspcab/sspcab_block.hpp"

using namespace sspcab;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  fill_uniform(t, rng, 1.0);
  return t;
}

MaskedConvParams random_masked(std::size_t c, std::size_t kp, std::size_t d, Rng& rng) {
  MaskedConvParams p = MaskedConvParams::zeros(c, kp, d);
  fill_uniform(p.sub_kernels, rng, 1.0);
  return p;
}

bool in_corner_patch(long di, long dj, std::size_t kp, std::size_t d) {
  auto in_band = [&](long v) {
    const long a = std::labs(v);
    return a >= static_cast<long>(d + 1) && a <= static_cast<long>(d + kp);
  };
  return in_band(di) && in_band(dj);
}

}  // namespace

TEST(MaskedConv, ReceptiveFieldAndPadding) {
  const MaskedConvParams p = MaskedConvParams::zeros(1, 1, 1);
  EXPECT_EQ(p.receptive_field(), 5u);
  EXPECT_EQ(p.padding(), 2u);
  EXPECT_EQ(MaskedConvParams::zeros(3, 3, 2).receptive_field(), 11u);
  EXPECT_EQ(p.sub_kernels.shape(), (Shape{1, 4, 1, 1, 1}));
}

TEST(MaskedConv, ZeroInputGivesZeroOutput) {
  Rng rng(1);
  const Tensor y = masked_conv_forward(Tensor({1, 5, 5, 1}), random_masked(1, 1, 1, rng));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(MaskedConv, CentreNeverContributesAndCornerIsolatesOneWeight) {
  Rng rng(2);
  const MaskedConvParams p = random_masked(1, 1, 1, rng);
  Tensor x({1, 5, 5, 1});
  x.at(0, 2, 2, 0) = 1.0;
  const Tensor y = masked_conv_forward(x, p);
  EXPECT_EQ(y.at(0, 2, 2, 0), 0.0);
  EXPECT_EQ(y.at(0, 0, 0, 0), p.weight(0, Corner::bottom_right, 0, 0, 0));
  EXPECT_EQ(y.at(0, 4, 4, 0), p.weight(0, Corner::top_left, 0, 0, 0));
  EXPECT_EQ(y.at(0, 0, 4, 0), p.weight(0, Corner::bottom_left, 0, 0, 0));
  EXPECT_EQ(y.at(0, 4, 0, 0), p.weight(0, Corner::top_right, 0, 0, 0));
}

TEST(MaskedConv, ShapePreservedForAllGeometries) {
  Rng rng(3);
  for (std::size_t kp = 1; kp <= 3; ++kp)
    for (std::size_t d = 0; d <= 2; ++d) {
      const Tensor x = random_tensor({2, 6, 9, 3}, rng);
      EXPECT_EQ(masked_conv_forward(x, random_masked(3, kp, d, rng)).shape(), x.shape());
    }
}

TEST(MaskedConv, ChannelMismatchThrows) {
  Rng rng(4);
  EXPECT_THROW(masked_conv_forward(Tensor({1, 5, 5, 2}), random_masked(3, 1, 1, rng)), ShapeError);
}

TEST(MaskedConv, OutputIgnoresEveryPositionOutsideCornerPatches) {
  Rng rng(5);
  for (std::size_t kp = 1; kp <= 3; ++kp)
    for (std::size_t d = 0; d <= 2; ++d) {
      const MaskedConvParams p = random_masked(2, kp, d, rng);
      const Tensor x = random_tensor({1, 9, 9, 2}, rng);
      const Tensor base = masked_conv_forward(x, p);
      const long ci = 4, cj = 4;
      for (long i = 0; i < 9; ++i)
        for (long j = 0; j < 9; ++j) {
          if (in_corner_patch(i - ci, j - cj, kp, d)) continue;
          Tensor moved = x;
          moved.at(0, i, j, 0) += 3.7;
          moved.at(0, i, j, 1) -= 1.3;
          const Tensor y = masked_conv_forward(moved, p);
          EXPECT_EQ(y.at(0, ci, cj, 0), base.at(0, ci, cj, 0));
          EXPECT_EQ(y.at(0, ci, cj, 1), base.at(0, ci, cj, 1));
        }
    }
}

TEST(MaskedConv, BackwardZeroGradAndMaskedCentre) {
  Rng rng(6);
  const MaskedConvParams p = random_masked(2, 1, 1, rng);
  const Tensor x = random_tensor({1, 6, 6, 2}, rng);
  const MaskedConvGrads zero = masked_conv_backward(x, p, Tensor({1, 6, 6, 2}));
  for (double v : zero.x.data()) EXPECT_EQ(v, 0.0);
  for (double v : zero.sub_kernels.data()) EXPECT_EQ(v, 0.0);

  // A gradient that lives only at (3,3) must not reach x at (3,3).
  Tensor g({1, 6, 6, 2});
  g.at(0, 3, 3, 0) = 1.0;
  g.at(0, 3, 3, 1) = -2.0;
  const MaskedConvGrads grads = masked_conv_backward(x, p, g);
  EXPECT_EQ(grads.x.at(0, 3, 3, 0), 0.0);
  EXPECT_EQ(grads.x.at(0, 3, 3, 1), 0.0);
  EXPECT_THROW(masked_conv_backward(x, p, Tensor({1, 5, 6, 2})), ShapeError);
}

TEST(MaskedConv, BackwardMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const GradCheckReport r = check_component("masked_conv", seed, {});
    EXPECT_TRUE(r.passed) << "seed " << seed << " rel " << r.max_rel_error;
  }
}

TEST(DenseKernel, CornerPositionsForUnitSubKernels) {
  MaskedConvParams p = MaskedConvParams::zeros(1, 1, 1);
  p.sub_kernels.fill(1.0);
  const ConvParams dense = dense_equivalent_kernel(p);
  ASSERT_EQ(dense.weights.shape(), (Shape{1, 5, 5, 1}));
  EXPECT_EQ(dense.padding, 2u);
  EXPECT_EQ(dense.stride, 1u);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      const bool corner = (i == 0 || i == 4) && (j == 0 || j == 4);
      EXPECT_EQ(dense.weights[i * 5 + j], corner ? 1.0 : 0.0) << i << "," << j;
    }
}

TEST(DenseKernel, TwoByTwoPatchesWithoutDilation) {
  MaskedConvParams p = MaskedConvParams::zeros(1, 2, 0);
  p.sub_kernels.fill(1.0);
  const ConvParams dense = dense_equivalent_kernel(p);
  ASSERT_EQ(dense.weights.shape(), (Shape{1, 5, 5, 1}));
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      const double v = dense.weights[i * 5 + j];
      if (i == 2 || j == 2) EXPECT_EQ(v, 0.0);
      nonzero += v != 0.0 ? 1 : 0;
    }
  EXPECT_EQ(nonzero, 16u);
}

TEST(DenseKernel, ReproducesMaskedConvolution) {
  for (std::uint64_t seed = 0; seed < 18; ++seed) EXPECT_LE(masked_conv_oracle_gap(seed), 1e-12) << seed;
}

TEST(Se, ZeroWeightsHalveInput) {
  Rng rng(7);
  const SeParams p = SeParams::zeros(4, 2);
  const Tensor z = random_tensor({2, 3, 3, 4}, rng);
  const SeForward f = se_forward(z, p);
  for (double s : f.cache.scale.data()) EXPECT_EQ(s, 0.5);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_EQ(f.x_hat[i], 0.5 * z[i]);
  const SeForward zero = se_forward(Tensor({1, 2, 2, 4}), p);
  for (double v : zero.x_hat.data()) EXPECT_EQ(v, 0.0);
}

TEST(Se, HandEvaluatedChain) {
  // Channel means (1, -1); W1 = [1, 0.5] gives hidden 0.5, W2 = [2, -1]^T
  // gives pre-activations (1, -0.5): s = (sigmoid(1), sigmoid(-0.5)).
  SeParams p = SeParams::zeros(2, 2);
  p.w1.weights = Tensor({1, 2}, std::vector<double>{1.0, 0.5});
  p.w2.weights = Tensor({2, 1}, std::vector<double>{2.0, -1.0});
  const Tensor z({1, 2, 2, 2}, std::vector<double>{0, -1, 2, -1, 1, -2, 1, 0});
  const SeForward f = se_forward(z, p);
  const double s0 = 0.7310585786300049, s1 = 0.3775406687981454;
  EXPECT_NEAR(f.cache.scale[0], s0, 1e-15);
  EXPECT_NEAR(f.cache.scale[1], s1, 1e-15);
  EXPECT_NEAR(f.x_hat.at(0, 0, 1, 0), 2 * s0, 1e-15);
  EXPECT_NEAR(f.x_hat.at(0, 1, 0, 1), -2 * s1, 1e-15);
}

TEST(Se, RejectsIndivisibleReductionAndChannelMismatch) {
  EXPECT_THROW(SeParams::zeros(6, 4), ConfigError);
  EXPECT_THROW(se_forward(Tensor({1, 2, 2, 3}), SeParams::zeros(4, 2)), ShapeError);
}

TEST(Se, ScalesStayInsideOpenUnitInterval) {
  Rng rng(8);
  SeParams p = SeParams::zeros(8, 4);
  fill_uniform(p.w1.weights, rng, 3.0);
  fill_uniform(p.w2.weights, rng, 3.0);
  const SeForward f = se_forward(random_tensor({3, 4, 4, 8}, rng), p);
  for (double s : f.cache.scale.data()) {
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
}

TEST(Se, BackwardZeroGradAndFiniteDifferences) {
  Rng rng(9);
  SeParams p = SeParams::zeros(4, 2);
  fill_uniform(p.w1.weights, rng, 1.0);
  fill_uniform(p.w2.weights, rng, 1.0);
  const SeForward f = se_forward(random_tensor({2, 4, 4, 4}, rng), p);
  const SeGrads g = se_backward(f.cache, p, Tensor({2, 4, 4, 4}));
  for (const Tensor* t : {&g.z, &g.w1, &g.w2})
    for (double v : t->data()) EXPECT_EQ(v, 0.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const GradCheckReport r = check_component("se", seed, {});
    EXPECT_TRUE(r.passed) << "seed " << seed << " rel " << r.max_rel_error;
  }
}

TEST(Block, ZeroInputGivesZeroOutputAndShapesArePreserved) {
  Rng rng(10);
  for (std::size_t kp = 1; kp <= 3; ++kp)
    for (std::size_t d = 0; d <= 2; ++d) {
      const SspcabBlock b = make_sspcab_block(8, SspcabOptions{kp, d, 8, LossKind::mse}, rng);
      const Tensor zero = sspcab_forward(Tensor({1, 7, 7, 8}), b);
      for (double v : zero.data()) EXPECT_EQ(v, 0.0);
      const Tensor x = random_tensor({2, 5, 6, 8}, rng);
      EXPECT_EQ(sspcab_forward(x, b).shape(), x.shape());
    }
}

TEST(Block, EqualsCompositionOfComponents) {
  Rng rng(11);
  const SspcabBlock b = make_sspcab_block(4, SspcabOptions{2, 1, 2, LossKind::mse}, rng);
  const Tensor x = random_tensor({2, 6, 6, 4}, rng);
  const ConvParams dense = dense_equivalent_kernel(b.conv);
  const Tensor composed = se_forward(relu_forward(conv2d_forward(x, dense)), b.se).x_hat;
  EXPECT_LE(max_abs_diff(sspcab_forward(x, b), composed), 1e-12);
}

TEST(Block, FullLossGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const GradCheckReport r = check_component("sspcab", seed, {});
    EXPECT_LE(r.max_rel_error, 1e-4) << "seed " << seed;
    EXPECT_TRUE(r.passed) << "seed " << seed;
  }
}

TEST(Loss, HandValues) {
  const Tensor x({2}, std::vector<double>{0, 2});
  EXPECT_EQ(sspcab_loss(x, x), 0.0);
  EXPECT_EQ(sspcab_loss(Tensor({2}, std::vector<double>{1, 3}), x), 1.0);
  EXPECT_EQ(sspcab_loss(Tensor({2}, std::vector<double>{1, 0}), x), 2.5);
  EXPECT_EQ(sspcab_loss(Tensor({2}, std::vector<double>{1, 0}), x, LossKind::mae), 1.5);
  EXPECT_THROW(sspcab_loss(Tensor({3}), x), ShapeError);
}

TEST(Loss, SymmetricAndQuadraticInScale) {
  Rng rng(12);
  const Tensor x = random_tensor({3, 4}, rng), xh = random_tensor({3, 4}, rng);
  EXPECT_GE(sspcab_loss(xh, x), 0.0);
  EXPECT_DOUBLE_EQ(sspcab_loss(xh, x), sspcab_loss(x, xh));
  Tensor ax = x, axh = xh;
  for (double& v : ax.data()) v *= 3.0;
  for (double& v : axh.data()) v *= 3.0;
  EXPECT_NEAR(sspcab_loss(axh, ax), 9.0 * sspcab_loss(xh, x), 1e-12);
}
