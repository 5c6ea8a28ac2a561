#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "helpers.hpp"
#include "ride/model.hpp"
#include "ride/selfsup.hpp"
#include "ride/selftest.hpp"

using namespace ride;
using ride::testing::max_abs_diff;
using ride::testing::random_tensor;

TEST(RideConfig, PresetsAndCrop) {
  const RideConfig r = RideConfig::ride();
  EXPECT_EQ(r.conv_layers(), 9);
  EXPECT_EQ(r.crop_total(), 36);
  EXPECT_EQ(r.crop_per_side(), 18);
  EXPECT_EQ(r.descriptor_dim(), 128);
  EXPECT_EQ(RideConfig::ride_large().descriptor_dim(), 256);
  EXPECT_EQ(RideConfig::preset("desk").crop_total(), 36);
  EXPECT_EQ(RideConfig::toy().group_order, 4);
  EXPECT_EQ(RideConfig::toy().block_widths.size(), 2u);
  EXPECT_THROW(RideConfig::preset("huge"), ContractError);
}

TEST(RideConfig, ValidateRejectsBadShapes) {
  auto expect_bad = [](auto mutate) {
    RideConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ContractError);
  };
  expect_bad([](RideConfig& c) { c.group_order = 1; });
  expect_bad([](RideConfig& c) { c.block_widths.clear(); });
  expect_bad([](RideConfig& c) { c.block_widths = {4, 0}; });
  expect_bad([](RideConfig& c) { c.kernel_size = 4; });
  expect_bad([](RideConfig& c) { c.descriptor_channels = 0; });
  expect_bad([](RideConfig& c) { c.convs_per_block = 0; });
}

TEST(RideModel, OutputShapesAndRanges) {
  Rng rng(1);
  RideModel model(RideConfig::desk(), rng);
  Rng img_rng(2);
  const Tensor x = random_tensor(img_rng, {2, 1, 50, 46}, DType::f32, 0.0, 1.0);
  const RideOutput out = model.forward(x, true);
  EXPECT_EQ(out.keypoints.shape(), (Shape{2, 14, 10}));
  EXPECT_EQ(out.orientation.shape(), (Shape{2, 8, 14, 10}));
  EXPECT_EQ(out.descriptor.values.shape(), (Shape{2, 8, 8, 14, 10}));
  EXPECT_EQ(out.detector.values.shape(), (Shape{2, 1, 8, 14, 10}));
  for (double k : out.keypoints.to_vector()) {
    EXPECT_GT(k, 0.0);
    EXPECT_LT(k, 1.0);
  }
  // The orientation histogram is the first descriptor group-channel.
  EXPECT_EQ(out.orientation.to_vector(), reshape(slice(out.descriptor.values, 1, 0, 1), {2, 8, 14, 10}).to_vector());
  EXPECT_THROW(model.forward(Tensor::zeros({1, 1, 36, 60})), ContractError);
  EXPECT_THROW(model.forward(Tensor::zeros({1, 2, 60, 60})), ShapeError);
}

TEST(RideModel, ParameterCountFollowsChannelPlan) {
  Rng rng(3);
  const RideConfig c = RideConfig::desk();
  RideModel model(c, rng);
  std::int64_t expected = 0;
  int cin = 0;
  for (int w : c.block_widths)
    for (int i = 0; i < c.convs_per_block; ++i) {
      expected += (cin == 0 ? w * 25 : w * cin * 8 * 25) + 2 * w;
      cin = w;
    }
  expected += cin * 8 * 25 + c.descriptor_channels * cin * 8 * 25;
  std::int64_t total = 0;
  for (const auto& p : model.parameters()) {
    EXPECT_TRUE(p.requires_grad());
    total += p.numel();
  }
  EXPECT_EQ(total, expected);
}

TEST(RideModel, InitializationIsSeededAndKaimingBounded) {
  Rng a(4), b(4), c(5);
  RideModel ma(RideConfig::desk(), a), mb(RideConfig::desk(), b), mc(RideConfig::desk(), c);
  const auto pa = ma.parameters(), pb = mb.parameters(), pc = mc.parameters();
  EXPECT_EQ(pa[0].to_vector(), pb[0].to_vector());
  EXPECT_NE(pa[0].to_vector(), pc[0].to_vector());
  const double bound = std::sqrt(6.0 / 25.0);
  for (double w : pa[0].to_vector()) EXPECT_LE(std::abs(w), bound + 1e-6);
}

TEST(RideModel, CheckpointRoundTrip) {
  Rng rng(6);
  RideModel model(RideConfig::desk(), rng);
  Rng img(7);
  const Tensor x = random_tensor(img, {1, 1, 48, 48}, DType::f32, 0.0, 1.0);
  model.forward(x, true);  // move the running statistics off their defaults
  const auto path = std::filesystem::temp_directory_path() / "ride_model_roundtrip.ckpt";
  model.save(path, 42);
  std::int64_t iteration = 0;
  RideModel loaded = RideModel::load(path, &iteration);
  std::filesystem::remove(path);
  EXPECT_EQ(iteration, 42);
  EXPECT_EQ(loaded.config().block_widths, model.config().block_widths);
  EXPECT_EQ(loaded.config().steering, model.config().steering);
  const RideOutput a = model.forward(x, false), b = loaded.forward(x, false);
  EXPECT_EQ(a.keypoints.to_vector(), b.keypoints.to_vector());
  EXPECT_EQ(a.descriptor.values.to_vector(), b.descriptor.values.to_vector());

  NamedTensors broken = model.checkpoint(0);
  for (auto& [name, t] : broken)
    if (name == "detector.weight") t = Tensor::zeros({1});
  EXPECT_THROW(RideModel::from_checkpoint(broken), ShapeError);
}

TEST(EstimateOrientation, ArgmaxWithTiesToSmallest) {
  // [B=1, G=4, H=1, W=3]
  const Tensor v = Tensor::from_data({1, 4, 1, 3}, std::vector<double>{0, 5, 1,   //
                                                                        3, 5, 1,   //
                                                                        1, 2, 1,   //
                                                                        3, 0, 1});
  EXPECT_EQ(estimate_orientation(v), (std::vector<int>{1, 0, 0}));
}

TEST(InvariantDescriptors, MatchesLoopOracle) {
  Rng rng(8);
  const int b = 2, c = 3, g = 4, h = 2, w = 3;
  const GroupFeatureMap f(random_tensor(rng, {b, c, g, h, w}, DType::f64), CyclicGroup(g));
  std::vector<int> orient(static_cast<std::size_t>(b * h * w));
  for (auto& o : orient) o = static_cast<int>(rng.uniform_int(0, g - 1));
  const auto out = invariant_descriptors(f, orient).to_vector();
  const auto v = f.values.to_vector();
  for (int n = 0; n < b; ++n)
    for (int p = 0; p < h * w; ++p) {
      const int o = orient[static_cast<std::size_t>(n * h * w + p)];
      std::vector<double> d;
      double norm = 0;
      for (int ch = 0; ch < c; ++ch)
        for (int k = 0; k < g; ++k) {
          d.push_back(v[static_cast<std::size_t>(((n * c + ch) * g + (k + o) % g) * h * w + p)]);
          norm += d.back() * d.back();
        }
      for (int q = 0; q < c * g; ++q)
        EXPECT_NEAR(out[static_cast<std::size_t>((n * c * g + q) * h * w + p)], d[static_cast<std::size_t>(q)] / std::sqrt(norm),
                    1e-12);
    }
}

TEST(InvariantDescriptors, ShiftCancellation) {
  Rng rng(9);
  const GroupFeatureMap f(random_tensor(rng, {1, 2, 8, 3, 3}), CyclicGroup(8));
  const std::vector<int> zero(9, 0);
  for (int s = 0; s < 8; ++s) {
    const std::vector<int> shifted(9, s);
    EXPECT_EQ(invariant_descriptors(cyclic_shift(f, s), shifted).to_vector(),
              invariant_descriptors(f, zero).to_vector());
  }
}

TEST(TopK, MatchesSortOracleAndTieRule) {
  Rng rng(10);
  const Tensor scores = random_tensor(rng, {12, 9}, DType::f64);
  const auto top = top_k_keypoints(scores, 100);
  auto v = scores.to_vector();
  std::vector<std::pair<double, int>> all;
  for (int i = 0; i < 108; ++i) all.emplace_back(-v[static_cast<std::size_t>(i)], i);
  std::sort(all.begin(), all.end());
  ASSERT_EQ(top.size(), 100u);
  for (std::size_t i = 0; i < 100; ++i) {
    EXPECT_EQ(top[i].row * 9 + top[i].col, all[i].second);
    EXPECT_EQ(top[i].score, -all[i].first);
  }
  EXPECT_EQ(top_k_keypoints(scores, 1000).size(), 108u);

  const Tensor uniform = Tensor::full({4, 4}, 0.5);
  const auto tied = top_k_keypoints(uniform, 3);
  ASSERT_EQ(tied.size(), 3u);
  EXPECT_EQ(tied[0].col, 0);
  EXPECT_EQ(tied[1].col, 1);
  EXPECT_EQ(tied[2].col, 2);

  std::vector<double> peak(16 * 16, 0.1);
  peak[5 * 16 + 7] = 0.9;
  const auto one = top_k_keypoints(Tensor::from_data({1, 16, 16}, peak), 1);
  EXPECT_EQ(one[0].row, 5);
  EXPECT_EQ(one[0].col, 7);
  EXPECT_THROW(top_k_keypoints(uniform, 0), ContractError);
}

TEST(RideModel, ExactC4InvarianceUntrained) {
  for (std::uint64_t seed : {11u, 12u}) {
    Rng rng(seed);
    RideModel model(RideConfig::desk(), rng);
    const Image img = synth_texture(rng, 52);
    const C4Report rep = measure_c4_invariance(model, img);
    EXPECT_LT(rep.max_keypoint_diff, 1e-4);
    EXPECT_GT(rep.min_cosine, 0.9999);
  }
}

TEST(RideModel, BilinearSteeringKeepsC4Exact) {
  Rng rng(13);
  RideConfig c = RideConfig::desk();
  c.steering = KernelSteering::bilinear;
  RideModel model(c, rng);
  const C4Report rep = measure_c4_invariance(model, synth_texture(rng, 48));
  EXPECT_LT(rep.max_keypoint_diff, 1e-4);
  EXPECT_GT(rep.min_cosine, 0.9999);
}
