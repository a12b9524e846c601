#include <gtest/gtest.h>

#include <cmath>

#include "nechdr/data_synth.hpp"
#include "nechdr/hdr_domain.hpp"
#include "nechdr/image_io.hpp"
#include "nechdr/losses.hpp"
#include "nechdr/ops.hpp"
#include "test_support.hpp"

using namespace nechdr;
using namespace nechdr::testkit;

namespace {

// Direct transcription of the soft Hamming distance for one interior pixel.
double census_pixel(const double a[3][3], const double b[3][3]) {
  auto ss = [](double d) { return d / std::sqrt(0.81 + d * d); };
  double sum = 0;
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) {
      if (y == 1 && x == 1) continue;
      const double q = ss(a[y][x] - a[1][1]) - ss(b[y][x] - b[1][1]);
      sum += q * q / (0.1 + q * q);
    }
  return sum;
}

Tensor from3x3(const double v[3][3]) {
  Tensor t({1, 1, 3, 3});
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) t.mutable_data()[y * 3 + x] = static_cast<float>(v[y][x]);
  return t;
}

std::array<Tensor, 4> zero_flows(int h, int w) {
  std::array<Tensor, 4> f;
  for (int k = 0; k < 4; ++k) f[k] = Tensor({1, 2, h >> k, w >> k});
  return f;
}

}  // namespace

TEST(ImageLoss, IdenticalInputsGiveZero) {
  Rng rng(1);
  Tensor l = random_tensor<float>({1, 3, 8, 8}, rng, 0, 1);
  Tensor h = random_tensor<float>({1, 3, 8, 8}, rng, 0, 1);
  auto [com, ren] = image_loss(l, l, h, h, 5000);
  EXPECT_EQ(com.item(), 0.0f);
  EXPECT_EQ(ren.item(), 0.0f);
}

TEST(ImageLoss, ConstantOffsetAndEndpoints) {
  Rng rng(2);
  Tensor l = random_tensor<float>({1, 3, 8, 8}, rng, 0, 0.8);
  auto [com, ren] = image_loss(add_scalar(l, 0.1), l, Tensor({1, 3, 8, 8}, 0.0f), Tensor({1, 3, 8, 8}, 1.0f), 5000);
  EXPECT_NEAR(com.item(), 0.1, 1e-6);
  EXPECT_NEAR(ren.item(), 1.0, 1e-6);
  EXPECT_THROW(image_loss(l, Tensor({1, 3, 4, 8}), l, l, 5000), ShapeError);
}

TEST(Census, MatchesScalarOracle) {
  const double a[3][3] = {{0.1, 0.7, 0.3}, {0.9, 0.4, 0.2}, {0.5, 0.0, 0.8}};
  const double b[3][3] = {{0.6, 0.2, 0.4}, {0.1, 0.5, 0.9}, {0.3, 0.7, 0.05}};
  EXPECT_NEAR(census_loss(from3x3(a), from3x3(b)).item(), census_pixel(a, b), 1e-6);
}

TEST(Census, ZeroOnIdenticalAndBrightnessInvariant) {
  Rng rng(3);
  Tensor a = random_tensor<float>({2, 3, 9, 7}, rng, -1, 1);
  EXPECT_EQ(census_loss(a, a).item(), 0.0f);
  EXPECT_NEAR(census_loss(a, add_scalar(a, 0.37)).item(), 0.0, 1e-6);
  Tensor b = random_tensor<float>({2, 3, 9, 7}, rng, -1, 1);
  EXPECT_GT(census_loss(a, b).item(), 0.0f);
  EXPECT_THROW(census_loss(Tensor({1, 1, 2, 5}), Tensor({1, 1, 2, 5})), ShapeError);
  EXPECT_THROW(census_loss(a, Tensor({2, 3, 9, 8})), ShapeError);
}

TEST(Census, MeanOverInteriorPixels) {
  Rng rng(4);
  TensorD a = random_tensor<double>({1, 2, 5, 6}, rng, 0, 1);
  TensorD b = random_tensor<double>({1, 2, 5, 6}, rng, 0, 1);
  double sum = 0;
  for (int c = 0; c < 2; ++c)
    for (int y = 1; y < 4; ++y)
      for (int x = 1; x < 5; ++x) {
        double pa[3][3], pb[3][3];
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            pa[dy + 1][dx + 1] = a.at(0, c, y + dy, x + dx);
            pb[dy + 1][dx + 1] = b.at(0, c, y + dy, x + dx);
          }
        sum += census_pixel(pa, pb);
      }
  EXPECT_NEAR(census_loss(a, b).item(), sum / (2 * 3 * 4), 1e-12);
}

TEST(FeatureGeometry, AdditiveOverLevels) {
  Rng rng(5);
  std::vector<Tensor> pred, gt;
  for (int k = 1; k <= 3; ++k) {
    pred.push_back(random_tensor<float>({1, 4, 32 >> k, 32 >> k}, rng, 0, 1));
    gt.push_back(random_tensor<float>({1, 4, 32 >> k, 32 >> k}, rng, 0, 1));
  }
  auto [z1, z2] = feature_geometry_loss<float>(pred, pred, gt, gt);
  EXPECT_EQ(z1.item(), 0.0f);
  EXPECT_EQ(z2.item(), 0.0f);

  std::vector<Tensor> one = pred;
  one[1] = gt[1];
  auto [single, _] = feature_geometry_loss<float>(one, pred, pred, pred);
  EXPECT_NEAR(single.item(), census_loss(gt[1], pred[1]).item(), 1e-6);

  auto [com, ren] = feature_geometry_loss<float>(pred, gt, gt, pred);
  double expect = 0;
  for (int k = 0; k < 3; ++k) expect += census_loss(pred[k], gt[k]).item();
  EXPECT_NEAR(com.item(), expect, 1e-5);
  double expect_ren = 0;
  for (int k = 0; k < 3; ++k) expect_ren += census_loss(gt[k], pred[k]).item();
  EXPECT_NEAR(ren.item(), expect_ren, 1e-5);

  std::vector<Tensor> missing(pred.begin(), pred.begin() + 2);
  EXPECT_THROW(feature_geometry_loss<float>(missing, pred, pred, pred), std::invalid_argument);
}

TEST(FeatureGeometry, TargetsAreDetached) {
  Rng rng(6);
  std::vector<Tensor> pred, gt;
  for (int k = 1; k <= 3; ++k) {
    pred.push_back(random_tensor<float>({1, 2, 32 >> k, 32 >> k}, rng, 0, 1).set_requires_grad(true));
    gt.push_back(random_tensor<float>({1, 2, 32 >> k, 32 >> k}, rng, 0, 1).set_requires_grad(true));
  }
  auto [com, ren] = feature_geometry_loss<float>(pred, gt, pred, gt);
  backward(com + ren);
  for (const auto& t : gt) EXPECT_FALSE(t.has_grad());
  for (const auto& t : pred) EXPECT_TRUE(t.has_grad());
}

TEST(FlowAlignment, MaskAllOnesGivesZero) {
  Rng rng(7);
  std::array<Tensor, 4> f;
  for (int k = 0; k < 4; ++k) f[k] = random_tensor<float>({1, 2, 16 >> k, 16 >> k}, rng, -2, 2);
  std::vector<std::array<Tensor, 4>> flows{f, f};
  std::vector<Tensor> nb{random_tensor<float>({1, 3, 16, 16}, rng, 0, 1),
                         random_tensor<float>({1, 3, 16, 16}, rng, 0, 1)};
  Tensor ref = random_tensor<float>({1, 3, 16, 16}, rng, 0, 1);
  EXPECT_EQ(flow_alignment_loss<float>(flows, nb, ref, Tensor({1, 1, 16, 16}, 1.0f), 5000).item(), 0.0f);
  EXPECT_GT(flow_alignment_loss<float>(flows, nb, ref, Tensor({1, 1, 16, 16}), 5000).item(), 0.0f);
}

TEST(FlowAlignment, StaticSceneWithZeroFlowGivesZero) {
  const auto scene = make_toy_scene(ToySceneKind::kStatic, 5, 16, 16);
  const Tensor h = to_tensor(scene[0]);
  std::vector<std::array<Tensor, 4>> flows{zero_flows(16, 16), zero_flows(16, 16)};
  std::vector<Tensor> nb{to_tensor(scene[1]), to_tensor(scene[2])};
  EXPECT_EQ(flow_alignment_loss<float>(flows, nb, h, Tensor({1, 1, 16, 16}), 5000).item(), 0.0f);
}

TEST(FlowAlignment, ShiftOracleInteriorIsZero) {
  const int n = 32;
  const auto scene = make_toy_scene(ToySceneKind::kShift, 5, n, n);
  // Reference t = 2: the previous frame sampled one pixel to the right equals it.
  std::array<Tensor, 4> f;
  for (int k = 0; k < 4; ++k) {
    f[k] = Tensor({1, 2, n >> k, n >> k});
    auto d = f[k].mutable_data();
    for (std::size_t i = 0; i < f[k].shape().plane(); ++i) d[i] = static_cast<float>(1.0 / (1 << k));
  }
  // Exclude the last column, where the sample clamps to the border.
  Tensor mask({1, 1, n, n});
  for (int y = 0; y < n; ++y) mask.mutable_data()[y * n + n - 1] = 1.0f;
  std::vector<std::array<Tensor, 4>> flows{f};
  std::vector<Tensor> nb{to_tensor(scene[1])};
  EXPECT_NEAR(flow_alignment_loss<float>(flows, nb, to_tensor(scene[2]), mask, 5000).item(), 0.0, 1e-6);
  std::vector<std::array<Tensor, 4>> zero{zero_flows(n, n)};
  EXPECT_GT(flow_alignment_loss<float>(zero, nb, to_tensor(scene[2]), mask, 5000).item(), 1e-3);
}

TEST(FlowAlignment, NoGradientWhereWellExposed) {
  Rng rng(8);
  std::array<Tensor, 4> f;
  for (int k = 0; k < 4; ++k) {
    f[k] = random_tensor<float>({1, 2, 8 >> k, 8 >> k}, rng, -0.4, 0.4);
    f[k].set_requires_grad(true);
  }
  Tensor mask({1, 1, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 4; ++x) mask.mutable_data()[y * 8 + x] = 1.0f;
  std::vector<std::array<Tensor, 4>> flows{f};
  std::vector<Tensor> nb{random_tensor<float>({1, 3, 8, 8}, rng, 0, 1)};
  backward(flow_alignment_loss<float>(flows, nb, random_tensor<float>({1, 3, 8, 8}, rng, 0, 1), mask, 5000));
  const auto g = f[0].grad();
  double masked = 0, open = 0;
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) (x < 4 ? masked : open) += std::abs(g[(c * 8 + y) * 8 + x]);
  EXPECT_EQ(masked, 0.0);
  EXPECT_GT(open, 0.0);
}

TEST(FlowAlignment, RejectsLevelMismatch) {
  std::array<Tensor, 4> f = zero_flows(16, 16);
  f[2] = Tensor({1, 2, 8, 8});
  std::vector<std::array<Tensor, 4>> flows{f};
  std::vector<Tensor> nb{Tensor({1, 3, 16, 16})};
  EXPECT_THROW(flow_alignment_loss<float>(flows, nb, Tensor({1, 3, 16, 16}), Tensor({1, 1, 16, 16}), 5000),
               ShapeError);
  std::vector<Tensor> two{Tensor({1, 3, 16, 16}), Tensor({1, 3, 16, 16})};
  EXPECT_THROW(flow_alignment_loss<float>(flows, two, Tensor({1, 3, 16, 16}), Tensor({1, 1, 16, 16}), 5000),
               std::invalid_argument);
}

TEST(Total, WeightedSum) {
  EXPECT_NEAR(total_loss(1, 1, 1, 1, 1).total, 2.03, 1e-12);
  EXPECT_EQ(total_loss(0.3, 0.4, 5, 6, 7, {0, 0}).total, 0.3 + 0.4);
  EXPECT_EQ(total_loss(0, 0, 0, 0, 0).total, 0.0);
  Rng rng(9);
  std::uniform_real_distribution<double> d(0, 3);
  for (int i = 0; i < 100; ++i) {
    const double c[5] = {d(rng), d(rng), d(rng), d(rng), d(rng)};
    const double expect = (c[0] + c[1]) + 0.01 * (c[2] + c[3]) + 0.01 * c[4];
    EXPECT_NEAR(total_loss(c[0], c[1], c[2], c[3], c[4]).total, expect, 1e-7);
  }
}

TEST(Total, TensorFormMatchesScalarForm) {
  LossTerms<double> t{TensorD::scalar(0.5), TensorD::scalar(0.25), TensorD::scalar(3), TensorD::scalar(4),
                      TensorD::scalar(2)};
  const LossBreakdown b = breakdown(t);
  EXPECT_NEAR(total_loss(t).item(), b.total, 1e-15);
  EXPECT_NEAR(b.total, 0.75 + 0.07 + 0.02, 1e-15);
}

// Finite differences on 1x2x8x8 inputs.

TEST(LossGrad, CensusAndL1) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    std::vector<TensorD> in{random_tensor<double>({1, 2, 8, 8}, rng, 0, 1),
                            random_tensor<double>({1, 2, 8, 8}, rng, 0, 1)};
    EXPECT_LT(grad_check([](const auto& v) { return census_loss(v[0], v[1]); }, in).rel_error, 1e-3);
    EXPECT_LT(grad_check([](const auto& v) { return l1_loss(v[0], v[1]); }, in).rel_error, 1e-3);
    EXPECT_LT(grad_check([](const auto& v) { return image_loss(v[0], v[1], v[0], v[1], 5000).second; }, in)
                  .rel_error,
              1e-3);
  }
}

TEST(LossGrad, FlowAlignment) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed + 100);
    const TensorD nb = random_tensor<double>({1, 2, 8, 8}, rng, 0, 1);
    const TensorD ref = random_tensor<double>({1, 2, 8, 8}, rng, 0, 1);
    const TensorD mask = random_tensor<double>({1, 1, 8, 8}, rng, 0, 1);
    std::vector<TensorD> in;
    for (int k = 0; k < 4; ++k) in.push_back(random_tensor<double>({1, 2, 8 >> k, 8 >> k}, rng, -0.7, 0.7));
    auto f = [&](const std::vector<TensorD>& v) {
      std::vector<std::array<TensorD, 4>> flows{{v[0], v[1], v[2], v[3]}};
      std::vector<TensorD> nbs{nb};
      return flow_alignment_loss<double>(flows, nbs, ref, mask, 5000);
    };
    EXPECT_LT(grad_check(f, in).rel_error, 1e-3) << seed;
  }
}
