#include <gtest/gtest.h>

#include <filesystem>

#include "nechdr/flow_ops.hpp"
#include "nechdr/image_io.hpp"
#include "nechdr/ops.hpp"
#include "test_support.hpp"

using namespace nechdr;
using namespace nechdr::testkit;

TEST(Warp, MatchesBruteForceSampling) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    Tensor src = random_tensor<float>({2, 3, 8, 8}, rng);
    Tensor flow = random_tensor<float>({2, 2, 8, 8}, rng, -3.5, 3.5);
    EXPECT_LT(max_abs_diff(warp(src, flow), ref_warp(src, flow)), 1e-5);
  }
}

TEST(Warp, ZeroFlowIsIdentity) {
  Rng rng(1);
  Tensor src = random_tensor<float>({1, 3, 5, 6}, rng);
  EXPECT_EQ(max_abs_diff(warp(src, Tensor({1, 2, 5, 6})), src), 0.0);
}

TEST(Warp, IntegerShiftSamplesNeighbour) {
  Rng rng(2);
  Tensor src = random_tensor<float>({1, 1, 4, 6}, rng);
  Tensor flow({1, 2, 4, 6});
  for (std::size_t i = 0; i < 24; ++i) flow.mutable_data()[i] = 1.0f;  // u = +1
  Tensor out = warp(src, flow);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 5; ++x) EXPECT_EQ(out.at(0, 0, y, x), src.at(0, 0, y, x + 1));
    EXPECT_EQ(out.at(0, 0, y, 5), src.at(0, 0, y, 5));  // clamped at the border
  }
}

TEST(Warp, RejectsMismatchedFlow) {
  EXPECT_THROW(warp(Tensor({1, 3, 4, 4}), Tensor({1, 3, 4, 4})), ShapeError);
  EXPECT_THROW(warp(Tensor({1, 3, 4, 4}), Tensor({1, 2, 4, 5})), ShapeError);
  EXPECT_THROW(warp(Tensor({2, 3, 4, 4}), Tensor({1, 2, 4, 4})), ShapeError);
}

TEST(Warp, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    TensorD src = random_tensor<double>({1, 2, 6, 6}, rng);
    // Flows stay inside the frame so no sample sits on the clamp boundary.
    TensorD flow = random_tensor<double>({1, 2, 6, 6}, rng, -0.9, 0.9);
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) {
        auto d = flow.mutable_data();
        d[y * 6 + x] = std::clamp(d[y * 6 + x], 0.05 - x, 4.95 - x);
        d[36 + y * 6 + x] = std::clamp(d[36 + y * 6 + x], 0.05 - y, 4.95 - y);
      }
    const GradCheck g = grad_check(
        [&](const std::vector<TensorD>& in) { return project(warp(in[0], in[1]), seed + 100); }, {src, flow});
    EXPECT_LT(g.rel_error, 1e-6);
  }
}

TEST(Warp, FlowGradientVanishesWhereClamped) {
  TensorD src({1, 1, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) src.mutable_data()[i] = static_cast<double>(i * i);
  TensorD flow({1, 2, 3, 3}, 5.0);  // every sample far outside on both axes
  flow.set_requires_grad(true);
  backward(reduce_sum(warp(src, flow)));
  for (double g : flow.grad()) EXPECT_EQ(g, 0.0);
}

TEST(FlowUpscale, ScalesExtentAndMagnitude) {
  Tensor f({1, 2, 4, 4}, 0.75f);
  Tensor up = flow_upscale(f, 4);
  EXPECT_EQ(up.shape(), (Shape{1, 2, 16, 16}));
  for (float v : up.data()) EXPECT_FLOAT_EQ(v, 3.0f);
  EXPECT_TRUE(flow_upscale(f, 1).shares_storage(f));
  EXPECT_THROW(flow_upscale(Tensor({1, 3, 4, 4}), 2), ShapeError);
}

TEST(FlowUpscale, ShiftIsPreservedAcrossScales) {
  // A level-1 flow of 0.5 px warps a full-resolution ramp by exactly 1 px.
  Tensor f({1, 2, 4, 4});
  for (int i = 0; i < 16; ++i) f.mutable_data()[i] = 0.5f;
  Tensor up = flow_upscale(f, 2);
  Tensor ramp({1, 1, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) ramp.mutable_data()[y * 8 + x] = static_cast<float>(x);
  Tensor out = warp(ramp, up);
  EXPECT_FLOAT_EQ(out.at(0, 0, 3, 2), 3.0f);
}

TEST(FlowDump, WritesThreeChannelPfm) {
  const auto path = std::filesystem::temp_directory_path() / "nechdr_flow.pfm";
  Tensor f({1, 2, 2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6, -1, -2, -3, -4, -5, -6});
  write_flow_pfm(f, path);
  const HdrImage img = read_pfm(path);
  EXPECT_EQ(img.at(0, 1, 2), 6.0f);
  EXPECT_EQ(img.at(1, 0, 0), -1.0f);
  EXPECT_EQ(img.at(2, 1, 1), 0.0f);
}
