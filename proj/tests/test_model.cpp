#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <cstring>
#include <set>

#include "model_fixtures.hpp"
#include "nechdr/checkpoint.hpp"
#include "nechdr/image_io.hpp"
#include "nechdr/model.hpp"
#include "nechdr/ops.hpp"

using namespace nechdr;
using namespace nechdr::testkit;

TEST(Arch, DerivedCounts) {
  const ArchConfig two = ArchConfig::lightweight(Variant::kTwoExposure);
  EXPECT_EQ(two.channels, (std::array<int, 4>{24, 36, 54, 72}));
  EXPECT_EQ(two.frame_count(), 3);
  EXPECT_EQ(two.fused_count(), 5);
  EXPECT_EQ(two.blend_image_count(), 9);
  const ArchConfig three = ArchConfig::lightweight(Variant::kThreeExposure);
  EXPECT_EQ(three.frame_count(), 5);
  EXPECT_EQ(three.completion_count(), 2);
  EXPECT_EQ(three.fused_count(), 8);
  EXPECT_EQ(three.blend_image_count(), 15);
}

TEST(Arch, ValidateRejectsBadWidths) {
  ArchConfig a;
  a.channels = {24, 24, 54, 72};
  EXPECT_THROW(a.validate(), std::invalid_argument);
  a.channels = {0, 36, 54, 72};
  EXPECT_THROW(a.validate(), std::invalid_argument);
  a = ArchConfig{};
  a.blend_hidden = {0, 4};
  EXPECT_THROW(a.validate(), std::invalid_argument);
  EXPECT_EQ(parse_variant("three"), Variant::kThreeExposure);
  EXPECT_THROW(parse_variant("four"), std::invalid_argument);
}

TEST(Params, DeterministicPerSeed) {
  const ArchConfig a = tiny_arch(Variant::kTwoExposure);
  const ModelParams p1 = init_params(a, 7), p2 = init_params(a, 7), p3 = init_params(a, 8);
  bool any_diff = false;
  for (const auto& [name, t] : p1) {
    EXPECT_EQ(max_abs_diff(t, p2.at(name)), 0.0) << name;
    any_diff |= max_abs_diff(t, p3.at(name)) > 0;
  }
  EXPECT_TRUE(any_diff);
}

TEST(Params, InitialisationConventions) {
  const ModelParams p = init_params(tiny_arch(Variant::kTwoExposure), 1);
  for (const auto& [name, t] : p) {
    if (name.ends_with(".bias")) {
      for (float v : t.data()) EXPECT_EQ(v, 0.0f) << name;
    } else if (name.ends_with(".slope")) {
      for (float v : t.data()) EXPECT_EQ(v, 0.25f) << name;
    } else if (name.find(".flow.") != std::string::npos) {
      for (float v : t.data()) EXPECT_EQ(v, 0.0f) << name;
    }
  }
  EXPECT_THROW(p.at("encoder.level9.conv1.weight"), std::out_of_range);
}

TEST(Params, CountMatchesClosedForm) {
  // Closed form of the lightweight two-exposure topology, written out by hand.
  const long c[5] = {3, 24, 36, 54, 72};
  auto conv = [](long in, long out, long k, bool prelu) { return in * out * k * k + out + (prelu ? out : 0); };
  long total = 0;
  for (int k = 1; k <= 4; ++k) total += conv(c[k - 1], c[k], 3, true) + conv(c[k], c[k], 3, true);
  for (int k = 3; k >= 1; --k) {
    const long in = 2 * c[k] + (k < 3 ? c[k + 1] : 0);
    total += conv(in, c[k], 3, true) + conv(c[k], c[k], 3, true);
  }
  total += conv(6 + c[1], c[1], 3, true) + conv(c[1], c[1], 3, true) + conv(c[1], 4, 3, false);
  for (int k = 4; k >= 1; --k) {
    const long in = k == 4 ? 3 * c[4] : 5 * c[k] + 4;
    const long finer = k >= 2 ? c[k - 1] : c[1];
    total += conv(in, c[k], 3, true) + conv(c[k], c[k], 3, true);
    total += conv(c[k], finer, 4, false) + conv(c[k], 4, 3, false);
  }
  total += conv(c[1], 3, 3, false);
  const long b1 = 16, b2 = 32;
  total += conv(27, b1, 3, true) + conv(b1, b2, 3, true) + conv(b2, b2, 3, true) + conv(b2, b1, 4, false) +
           conv(2 * b1, b1, 3, true) + conv(b1, 5, 3, false);
  const ModelParams p = init_params(ArchConfig::lightweight(Variant::kTwoExposure), 0);
  EXPECT_EQ(static_cast<long>(count_params(p)), total);
}

TEST(Params, LayerNamesAreUnique) {
  std::set<std::string> names;
  for (const auto& l : describe_layers(ArchConfig::lightweight(Variant::kThreeExposure))) {
    EXPECT_TRUE(names.insert(l.name).second) << l.name;
  }
}

TEST(Encoder, PyramidExtentsAndChannels) {
  const ArchConfig a = tiny_arch(Variant::kTwoExposure);
  const ModelParams p = init_params(a, 0);
  Rng rng(1);
  NoGradGuard guard;
  const auto pyr = encode(random_tensor<float>({1, 3, 32, 48}, rng, 0, 1), p, a);
  for (int k = 1; k <= 4; ++k) {
    EXPECT_EQ(pyr.level(k).shape(), (Shape{1, a.channels[k - 1], 32 >> k, 48 >> k}));
  }
  EXPECT_THROW(encode(Tensor({1, 3, 24, 32}), p, a), ShapeError);
  EXPECT_THROW(encode(Tensor({1, 1, 32, 32}), p, a), ShapeError);
}

TEST(Encoder, SharedWeightsGiveIdenticalPyramids) {
  const ArchConfig a = tiny_arch(Variant::kTwoExposure);
  const ModelParams p = init_params(a, 3);
  Rng rng(2);
  NoGradGuard guard;
  Tensor f = random_tensor<float>({1, 3, 16, 16}, rng, 0, 1);
  const auto p1 = encode(f, p, a), p2 = encode(f.detach(), p, a);
  for (int k = 1; k <= 4; ++k) EXPECT_EQ(max_abs_diff(p1.level(k), p2.level(k)), 0.0);
}

TEST(Encoder, BatchInvariance) {
  const ArchConfig a = tiny_arch(Variant::kTwoExposure);
  const ModelParams p = init_params(a, 4);
  Rng rng(3);
  NoGradGuard guard;
  Tensor f1 = random_tensor<float>({1, 3, 32, 32}, rng, 0, 1);
  Tensor f2 = random_tensor<float>({1, 3, 32, 32}, rng, 0, 1);
  std::vector<float> both(f1.data().begin(), f1.data().end());
  both.insert(both.end(), f2.data().begin(), f2.data().end());
  const auto pb = encode(Tensor({2, 3, 32, 32}, both), p, a);
  const auto p1 = encode(f1, p, a), p2 = encode(f2, p, a);
  for (int k = 1; k <= 4; ++k) {
    const std::size_t half = p1.level(k).numel();
    auto d = pb.level(k).data();
    EXPECT_LT(max_abs_diff(d.subspan(0, half), p1.level(k).data()), 1e-5);
    EXPECT_LT(max_abs_diff(d.subspan(half), p2.level(k).data()), 1e-5);
  }
}

TEST(Completion, CoarserInputContract) {
  const ArchConfig a = tiny_arch(Variant::kTwoExposure);
  const ModelParams p = init_params(a, 0);
  NoGradGuard guard;
  Tensor f3({1, 8, 4, 4});
  EXPECT_NO_THROW(complete_level(f3, f3, std::optional<Tensor>{}, p, 3));
  EXPECT_THROW(complete_level(f3, f3, std::optional<Tensor>(Tensor({1, 10, 4, 4})), p, 3), std::invalid_argument);
  Tensor f2({1, 6, 8, 8});
  EXPECT_THROW(complete_level(f2, f2, std::optional<Tensor>{}, p, 2), std::invalid_argument);
  EXPECT_THROW(complete_level(f2, f2, std::optional<Tensor>(Tensor({1, 8, 4, 4})), p, 2), ShapeError);
  EXPECT_THROW(complete_level(f2, f2, std::optional<Tensor>{}, p, 4), std::invalid_argument);
}

TEST(Completion, FinalLevelOutputsClampedFrame) {
  const ArchConfig a = tiny_arch(Variant::kTwoExposure);
  const ModelParams p = init_params(a, 5);
  Rng rng(5);
  NoGradGuard guard;
  Tensor l1 = random_tensor<float>({1, 3, 16, 16}, rng, 0, 1);
  Tensor l2 = random_tensor<float>({1, 3, 16, 16}, rng, 0, 1);
  Tensor up = random_tensor<float>({1, 4, 16, 16}, rng, -5, 5);
  Tensor out = complete_level(l1, l2, std::optional<Tensor>(up), p, 0);
  EXPECT_EQ(out.shape(), (Shape{1, 3, 16, 16}));
  for (float v : out.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Render, ZeroFlowHeadEmitsZeroFlows) {
  const ArchConfig a = tiny_arch(Variant::kTwoExposure);
  const ModelParams p = init_params(a, 0);
  NoGradGuard guard;
  std::vector<Tensor> level4(3, Tensor({1, 10, 2, 2}, 0.3f));
  const auto r = render_level<float>(level4, {}, p, a, 4);
  ASSERT_EQ(r.flows.size(), 2u);
  EXPECT_EQ(r.flows[0].shape(), (Shape{1, 2, 4, 4}));
  for (const auto& f : r.flows)
    for (float v : f.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(r.feature.shape(), (Shape{1, 8, 4, 4}));
}

TEST(Render, RejectsInputsFromWrongLevel) {
  const ArchConfig a = tiny_arch(Variant::kTwoExposure);
  const ModelParams p = init_params(a, 0);
  NoGradGuard guard;
  std::vector<Tensor> wrong(3, Tensor({1, 8, 4, 4}));
  EXPECT_THROW(render_level<float>(wrong, {}, p, a, 4), ShapeError);
  std::vector<Tensor> mixed{Tensor({1, 10, 2, 2}), Tensor({1, 10, 4, 4}), Tensor({1, 10, 2, 2})};
  EXPECT_THROW(render_level<float>(mixed, {}, p, a, 4), ShapeError);
  std::vector<Tensor> flows{Tensor({1, 2, 4, 4}), Tensor({1, 2, 4, 4})};
  EXPECT_THROW(render_level<float>(wrong, flows, p, a, 4), std::invalid_argument);
}

TEST(Fuse, EqualWeightsGiveMeanAndOneHotSelects) {
  Rng rng(6);
  std::vector<Tensor> imgs;
  for (int i = 0; i < 5; ++i) imgs.push_back(random_tensor<float>({1, 3, 4, 4}, rng, 0, 2));
  Tensor eq({1, 5, 4, 4}, 0.5f);
  Tensor mean = fuse<float>(imgs, eq);
  for (std::size_t i = 0; i < mean.numel(); ++i) {
    double m = 0;
    for (const auto& t : imgs) m += t.data()[i];
    EXPECT_NEAR(mean.data()[i], m / 5, 1e-6);
  }
  Tensor one_hot({1, 5, 4, 4});
  for (int i = 0; i < 16; ++i) one_hot.mutable_data()[i] = 1.0f;
  EXPECT_EQ(max_abs_diff(fuse<float>(imgs, one_hot), imgs[0]), 0.0);
  EXPECT_THROW(fuse<float>(imgs, Tensor({1, 4, 4, 4})), ShapeError);
}

TEST(Forward, TwoExposureShapesAndInvariants) {
  const ArchConfig a = tiny_arch(Variant::kTwoExposure);
  ModelParams p = init_params(a, 1);
  randomize_flow_heads(p, 2);
  NoGradGuard guard;
  const auto out = forward(random_window<float>(a, 32, 32, 3), p, a, 2.2);
  ASSERT_EQ(out.completed_ldr.size(), 1u);
  EXPECT_EQ(out.completed_ldr[0].shape(), (Shape{1, 3, 32, 32}));
  EXPECT_EQ(out.hdr.shape(), (Shape{1, 3, 32, 32}));
  EXPECT_EQ(out.coarse_hdr.shape(), (Shape{1, 3, 32, 32}));
  EXPECT_EQ(out.weights.shape(), (Shape{1, 5, 32, 32}));
  EXPECT_EQ(out.fused.size(), 5u);
  EXPECT_EQ(out.blend_input_images, 9);
  ASSERT_EQ(out.flows.size(), 2u);
  for (int k = 0; k < 4; ++k) EXPECT_EQ(out.flows[0][k].shape(), (Shape{1, 2, 32 >> k, 32 >> k}));
  for (int k = 1; k <= 3; ++k) {
    EXPECT_EQ(out.hdr_features[k - 1].shape(), (Shape{1, a.channels[k - 1], 32 >> k, 32 >> k}));
    EXPECT_EQ(out.completed_features[0][k - 1].shape(), (Shape{1, a.channels[k - 1], 32 >> k, 32 >> k}));
  }
  for (float v : out.hdr.data()) EXPECT_GE(v, 0.0f);
  for (float v : out.weights.data()) EXPECT_GE(v, 0.0f);
}

TEST(Forward, BlendIsConvexCombination) {
  const ArchConfig a = tiny_arch(Variant::kTwoExposure);
  ModelParams p = init_params(a, 9);
  randomize_flow_heads(p, 9);
  NoGradGuard guard;
  const auto out = forward(random_window<float>(a, 16, 32, 4), p, a, 2.2);
  for (std::size_t i = 0; i < out.hdr.numel(); ++i) {
    float lo = out.fused[0].data()[i], hi = lo;
    for (const auto& f : out.fused) {
      lo = std::min(lo, f.data()[i]);
      hi = std::max(hi, f.data()[i]);
    }
    EXPECT_GE(out.hdr.data()[i], lo - 1e-6f * std::max(1.0f, std::abs(lo)));
    EXPECT_LE(out.hdr.data()[i], hi + 1e-6f * std::max(1.0f, std::abs(hi)));
  }
}

TEST(Forward, ThreeExposureUsesSharedCompletionTwice) {
  const ArchConfig a = tiny_arch(Variant::kThreeExposure);
  const ModelParams p = init_params(a, 1);
  NoGradGuard guard;
  const auto out = forward(random_window<float>(a, 16, 16, 5), p, a, 2.2);
  EXPECT_EQ(out.completed_ldr.size(), 2u);
  EXPECT_EQ(out.completion_calls, 8);  // levels 3..0 for each missing exposure
  EXPECT_EQ(out.blend_input_images, 15);
  EXPECT_EQ(out.fused.size(), 8u);
  EXPECT_EQ(out.flows.size(), 4u);
  EXPECT_EQ(out.hdr.shape(), (Shape{1, 3, 16, 16}));
}

TEST(Forward, RejectsWrongFrameCountOrVariant) {
  const ArchConfig two = tiny_arch(Variant::kTwoExposure);
  const ArchConfig three = tiny_arch(Variant::kThreeExposure);
  const ModelParams p = init_params(two, 1);
  NoGradGuard guard;
  auto win = random_window<float>(three, 16, 16, 1);
  EXPECT_THROW(forward_two_exposure(win, p, two, 2.2), std::invalid_argument);
  EXPECT_THROW(forward_three_exposure(random_window<float>(two, 16, 16, 1), init_params(three, 1), two, 2.2),
               std::invalid_argument);
}

TEST(Forward, EveryParameterGroupReceivesGradient) {
  const ArchConfig a = tiny_arch(Variant::kTwoExposure);
  ModelParams p = init_params(a, 2);
  randomize_flow_heads(p, 3);
  const auto out = forward(random_window<float>(a, 16, 16, 6), p, a, 2.2);
  Tensor loss = reduce_mean(out.hdr) + reduce_mean(out.completed_ldr[0]);
  for (const auto& f : out.flows[0]) loss = loss + reduce_mean(f * f);
  backward(loss);
  for (const char* group : {"encoder.", "complete.", "render.", "blend."}) {
    double norm = 0;
    for (const auto& [name, t] : p) {
      if (name.rfind(group, 0) != 0 || !t.has_grad()) continue;
      for (float g : t.grad()) norm += std::abs(g);
    }
    EXPECT_GT(norm, 0.0) << group;
  }
}

TEST(Padding, ReflectAndCrop) {
  Tensor t({1, 1, 3, 5});
  for (int i = 0; i < 15; ++i) t.mutable_data()[i] = static_cast<float>(i);
  Tensor p = pad_reflect(t, 4);
  EXPECT_EQ(p.shape(), (Shape{1, 1, 4, 8}));
  EXPECT_EQ(p.at(0, 0, 3, 0), t.at(0, 0, 1, 0));
  EXPECT_EQ(p.at(0, 0, 0, 5), t.at(0, 0, 0, 3));
  EXPECT_EQ(max_abs_diff(crop(p, 3, 5), t), 0.0);
  EXPECT_THROW(pad_reflect(Tensor({1, 1, 2, 2}), 16), ShapeError);
}

// Checkpoints

namespace {

std::filesystem::path ckpt_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("nechdr_ckpt_" + name + ".bin");
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  Checkpoint c;
  c.arch = tiny_arch(Variant::kTwoExposure);
  c.params = init_params(c.arch, 11);
  OptimState o;
  o.step = 3;
  o.config.lr = 2e-4;
  o.m["x"] = {1.0f, -2.0f};
  o.v["x"] = {0.5f, 0.25f};
  c.optim = o;
  save_checkpoint(c, ckpt_path("rt"));
  const Checkpoint back = load_checkpoint(ckpt_path("rt"), c.arch);
  EXPECT_EQ(back.arch, c.arch);
  ASSERT_EQ(back.params.size(), c.params.size());
  for (const auto& [name, t] : c.params) {
    const auto& u = back.params.at(name);
    ASSERT_EQ(u.shape(), t.shape());
    EXPECT_EQ(std::memcmp(u.data().data(), t.data().data(), t.numel() * 4), 0) << name;
  }
  ASSERT_TRUE(back.optim.has_value());
  EXPECT_EQ(back.optim->step, 3);
  EXPECT_EQ(back.optim->config.lr, 2e-4);
  EXPECT_EQ(back.optim->m.at("x"), o.m["x"]);
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(c));
}

TEST(Checkpoint, TruncatedFileFails) {
  Checkpoint c;
  c.arch = tiny_arch(Variant::kTwoExposure);
  c.params = init_params(c.arch, 1);
  auto bytes = encode_checkpoint(c);
  for (std::size_t cut : {std::size_t{4}, std::size_t{30}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<unsigned char> part(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    EXPECT_THROW(decode_checkpoint(part), FormatError) << cut;
  }
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
}

TEST(Checkpoint, VariantMismatchNamesBoth) {
  Checkpoint c;
  c.arch = tiny_arch(Variant::kTwoExposure);
  c.params = init_params(c.arch, 1);
  save_checkpoint(c, ckpt_path("variant"));
  try {
    load_checkpoint(ckpt_path("variant"), tiny_arch(Variant::kThreeExposure));
    FAIL();
  } catch (const CheckpointError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("two"), std::string::npos);
    EXPECT_NE(msg.find("three"), std::string::npos);
  }
}

TEST(Checkpoint, LayerShapeMismatchNamesLayer) {
  Checkpoint c;
  c.arch = tiny_arch(Variant::kTwoExposure);
  c.params = init_params(c.arch, 1);
  c.params.set("blend.head.bias", Tensor({1, 7, 1, 1}));
  try {
    check_compatible(c, c.arch);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("blend.head.bias"), std::string::npos);
  }
  c.params = init_params(c.arch, 1);
  c.params.set("extra.weight", Tensor({1, 1, 1, 1}));
  EXPECT_THROW(check_compatible(c, c.arch), CheckpointError);
}

TEST(Checkpoint, UnsupportedVersionRejected) {
  Checkpoint c;
  c.arch = tiny_arch(Variant::kTwoExposure);
  c.params = init_params(c.arch, 1);
  auto bytes = encode_checkpoint(c);
  bytes[8] = 99;
  EXPECT_THROW(decode_checkpoint(bytes), CheckpointError);
}

TEST(Forward, GradientMatchesFiniteDifferences) {
  for (Variant v : {Variant::kTwoExposure, Variant::kThreeExposure}) {
    const ArchConfig a = tiny_arch(v);
    ModelParams pf = init_params(a, 21);
    randomize_flow_heads(pf, 22, 0.2);
    const auto pd = pf.cast<double>();
    const auto win = random_window<double>(a, 16, 16, 23);
    std::vector<std::string> names;
    std::vector<TensorD> inputs = win.frames;
    for (const auto& [name, t] : pd) {
      names.push_back(name);
      inputs.push_back(t);
    }
    const std::size_t nf = win.frames.size();
    auto f = [&](const std::vector<TensorD>& in) {
      FrameWindow<double> w{{in.begin(), in.begin() + static_cast<long>(nf)}, win.exposures};
      BasicModelParams<double> p;
      for (std::size_t i = 0; i < names.size(); ++i) p.set(names[i], in[nf + i]);
      const auto out = forward(w, p, a, 2.2);
      TensorD s = project(out.hdr, 1);
      for (const auto& c : out.completed_ldr) s = s + project(c, 2);
      return s;
    };
    Rng rng(24);
    std::vector<std::vector<std::size_t>> coords;
    for (const auto& t : inputs) {
      std::uniform_int_distribution<std::size_t> pick(0, t.numel() - 1);
      coords.push_back({pick(rng), pick(rng)});
    }
    const GradCheck g = grad_check(f, inputs, coords);
    EXPECT_LT(g.rel_error, 1e-4) << to_string(v);
    EXPECT_GT(g.fd_norm, 0.0);
  }
}
