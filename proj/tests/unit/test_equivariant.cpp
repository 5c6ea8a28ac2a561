#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "ride/equivariant.hpp"
#include "ride/selfsup.hpp"

using namespace ride;
using ride::testing::max_abs_diff;
using ride::testing::max_gradient_error;
using ride::testing::random_param;
using ride::testing::random_tensor;

namespace {

Tensor delta_kernel(int k, int row, int col) {
  std::vector<double> v(static_cast<std::size_t>(k * k), 0.0);
  v[static_cast<std::size_t>(row * k + col)] = 1.0;
  return Tensor::from_data({k, k}, v);
}

// Lattice rotation of a [B, C, G, H, W] map with the group axis advanced by
// `slots`.
Tensor rotate_and_shift(const GroupFeatureMap& f, int turns, int slots) {
  return cyclic_shift(rot90(f.values, turns), 2, slots);
}

// Relative L2 error between F_A(p)[g] and F_B(H p)[g + 1] over the central
// half of the output, sampling F_B bilinearly.
double step_rotation_error(const GroupFeatureMap& fa, const GroupFeatureMap& fb, const Homography& hom,
                           double crop) {
  const std::int64_t c = fa.channels(), g = fa.group.order(), h = fa.height(), w = fa.width();
  const auto a = fa.values.to_vector(), b = fb.values.to_vector();
  double num = 0.0, den = 0.0;
  for (std::int64_t r = h / 4; r < 3 * h / 4; ++r)
    for (std::int64_t col = w / 4; col < 3 * w / 4; ++col) {
      const Eigen::Vector2d q = hom.apply(static_cast<double>(col) + crop + 0.5, static_cast<double>(r) + crop + 0.5);
      const double u = q.x() - crop - 0.5, v = q.y() - crop - 0.5;
      const auto c0 = static_cast<std::int64_t>(std::floor(u)), r0 = static_cast<std::int64_t>(std::floor(v));
      const double fu = u - static_cast<double>(c0), fv = v - static_cast<double>(r0);
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t k = 0; k < g; ++k) {
          const double x = a[static_cast<std::size_t>(((ch * g + k) * h + r) * w + col)];
          const auto kb = (k + 1) % g;
          auto at = [&](std::int64_t rr, std::int64_t cc) {
            return b[static_cast<std::size_t>(((ch * g + kb) * h + rr) * w + cc)];
          };
          const double y = (1 - fv) * ((1 - fu) * at(r0, c0) + fu * at(r0, c0 + 1)) +
                           fv * ((1 - fu) * at(r0 + 1, c0) + fu * at(r0 + 1, c0 + 1));
          num += (x - y) * (x - y);
          den += x * x;
        }
    }
  return std::sqrt(num / den);
}

}  // namespace

TEST(CyclicGroup, BasicsAndNearestIndex) {
  const CyclicGroup g(8);
  EXPECT_DOUBLE_EQ(g.step_degrees(), 45.0);
  EXPECT_EQ(g.wrap(-1), 7);
  EXPECT_EQ(g.wrap(17), 1);
  EXPECT_EQ(g.nearest_index(44.0), 1);
  EXPECT_EQ(g.nearest_index(-44.0), 7);
  EXPECT_EQ(g.nearest_index(22.5), 0);  // exact tie goes to the smaller index
  EXPECT_EQ(g.nearest_index(359.0), 0);
  EXPECT_THROW(CyclicGroup(1), ContractError);
}

TEST(RotateKernel, IdentityAndQuarterTurn) {
  Rng rng(1);
  const Tensor base = random_tensor(rng, {5, 5}, DType::f64);
  const CyclicGroup g8(8);
  EXPECT_EQ(rotate_kernel(base, 0, g8).to_vector(), base.to_vector());
  const auto r = rotate_kernel(delta_kernel(5, 0, 2), 2, g8).to_vector();
  EXPECT_EQ(r, delta_kernel(5, 2, 0).to_vector());
  EXPECT_THROW(rotate_kernel(random_tensor(rng, {4, 4}), 1, g8), ContractError);
  EXPECT_THROW(rotate_kernel(random_tensor(rng, {4, 5}), 1, g8), ShapeError);
}

TEST(RotateKernel, ComposeMatchesDirect) {
  Rng rng(2);
  const CyclicGroup g8(8);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor base = random_tensor(rng, {5, 5}, DType::f64);
    for (auto steering : {KernelSteering::bilinear, KernelSteering::harmonic}) {
      const Tensor two = rotate_kernel(rotate_kernel(base, 1, g8, steering), 2, g8, KernelSteering::bilinear);
      EXPECT_LT(max_abs_diff(two, rotate_kernel(base, 3, g8, steering)), 1e-6);
    }
  }
}

TEST(RotateKernel, HarmonicIsARepresentationOfC4) {
  Rng rng(3);
  const CyclicGroup g8(8);
  const Tensor base = random_tensor(rng, {5, 5}, DType::f64);
  for (int k = 0; k < 8; ++k) {
    const Tensor slot = rotate_kernel(base, k, g8, KernelSteering::harmonic);
    const Tensor quarter = rot90(reshape(slot, {1, 1, 5, 5}), 1);
    const Tensor next = rotate_kernel(base, k + 2, g8, KernelSteering::harmonic);
    EXPECT_EQ(reshape(quarter, {5, 5}).to_vector(), next.to_vector()) << "slot " << k;
  }
  // Slot 0 is a projection: applying it twice changes nothing.
  const Tensor p = rotate_kernel(base, 0, g8, KernelSteering::harmonic);
  EXPECT_LT(max_abs_diff(rotate_kernel(p, 0, g8, KernelSteering::harmonic), p), 1e-12);
}

TEST(RotateKernel, HarmonicRotationOfRadialKernelIsExact) {
  // A centered Gaussian lies in the span of the zero-frequency rings up to
  // the fit; every rotated copy must equal slot 0.
  std::vector<double> v(25);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) v[static_cast<std::size_t>(i * 5 + j)] = std::exp(-((i - 2) * (i - 2) + (j - 2) * (j - 2)) / 2.0);
  const Tensor base = Tensor::from_data({5, 5}, v);
  const CyclicGroup g8(8);
  const Tensor s0 = rotate_kernel(base, 0, g8, KernelSteering::harmonic);
  for (int k = 1; k < 8; ++k) EXPECT_LT(max_abs_diff(rotate_kernel(base, k, g8, KernelSteering::harmonic), s0), 1e-12);
}

TEST(LiftingConv, ConstantImageGivesKernelMassPerSlot) {
  Rng rng(13);
  const Tensor kernel = random_tensor(rng, {1, 1, 5, 5}, DType::f64);
  const Tensor image = Tensor::full({1, 1, 9, 9}, 0.5, DType::f64);
  const CyclicGroup g8(8);
  const GroupFeatureMap out = lifting_conv(image, kernel, g8);
  ASSERT_EQ(out.values.shape(), (Shape{1, 1, 8, 5, 5}));
  const auto v = out.values.to_vector();
  for (int g = 0; g < 8; ++g) {
    const double mass = sum(rotate_kernel(reshape(kernel, {5, 5}), g, g8)).item();
    for (int p = 0; p < 25; ++p) EXPECT_NEAR(v[static_cast<std::size_t>(g * 25 + p)], 0.5 * mass, 1e-12);
  }
}

TEST(LiftingConv, RadialKernelGivesIdenticalSlots) {
  std::vector<double> v(25);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) v[static_cast<std::size_t>(i * 5 + j)] = std::exp(-((i - 2) * (i - 2) + (j - 2) * (j - 2)) / 2.0);
  Rng rng(14);
  const Tensor image = random_tensor(rng, {1, 1, 9, 9});
  const KernelRotator rot(5, CyclicGroup(8), KernelSteering::harmonic);
  const GroupFeatureMap out = lifting_conv(image, Tensor::from_data({1, 1, 5, 5}, v).to(DType::f32), rot);
  const auto slot0 = slice(out.values, 2, 0, 1).to_vector();
  for (int g = 1; g < 8; ++g) EXPECT_LT(max_abs_diff(slice(out.values, 2, g, 1).to_vector(), slot0), 1e-6);
}

TEST(LiftingConv, ExactC4Equivariance) {
  Rng rng(4);
  for (auto steering : {KernelSteering::bilinear, KernelSteering::harmonic}) {
    const KernelRotator rot(5, CyclicGroup(8), steering);
    const Tensor image = random_tensor(rng, {2, 1, 15, 15});
    const Tensor kernels = random_tensor(rng, {3, 1, 5, 5});
    const GroupFeatureMap a = lifting_conv(image, kernels, rot);
    const GroupFeatureMap b = lifting_conv(rot90(image, 1), kernels, rot);
    EXPECT_LT(max_abs_diff(b.values, rotate_and_shift(a, 1, 2)), 1e-5);
  }
}

TEST(LiftingConv, ApproximateC8EquivarianceOnSmoothTexture) {
  Rng rng(5);
  const Image img = smooth_disk_texture(rng, 96);
  const Homography hom = Homography::rotation(45.0, 48.0, 48.0);
  const Image rotated = warp_image(img, hom);
  const KernelRotator rot(5, CyclicGroup(8), KernelSteering::harmonic);
  const Tensor kernels = random_tensor(rng, {4, 1, 5, 5});
  const GroupFeatureMap a = lifting_conv(img.to_tensor(), kernels, rot);
  const GroupFeatureMap b = lifting_conv(rotated.to_tensor(), kernels, rot);
  EXPECT_LT(step_rotation_error(a, b, hom, 2.0), 0.05);
}

TEST(GroupConv, TwoElementGroupIsCirculantMix) {
  // |G|=2, one channel, 1x1 kernels [w0, w1]: out_g = sum_h in_h * w[(h - g) mod 2].
  const Tensor kernels = Tensor::from_data({1, 1, 2, 1, 1}, std::vector<double>{2.0, 3.0});
  const Tensor x = Tensor::from_data({1, 1, 2, 1, 1}, std::vector<double>{5.0, 7.0});
  const GroupFeatureMap out = group_conv(GroupFeatureMap(x, CyclicGroup(2)), kernels);
  EXPECT_EQ(out.values.to_vector(), (std::vector<double>{5 * 2 + 7 * 3, 5 * 3 + 7 * 2}));
}

TEST(GroupConv, MatchesSixLoopReference) {
  Rng rng(6);
  const CyclicGroup g(4);
  const int cin = 2, cout = 3, n = 4, h = 8, w = 7, k = 3;
  const Tensor x = random_tensor(rng, {1, cin, n, h, w}, DType::f64);
  const Tensor base = random_tensor(rng, {cout, cin, n, k, k}, DType::f64);
  const auto out = group_conv(GroupFeatureMap(x, g), base).values.to_vector();
  const auto xv = x.to_vector();
  const int oh = h - k + 1, ow = w - k + 1;
  double worst = 0.0;
  for (int co = 0; co < cout; ++co)
    for (int go = 0; go < n; ++go) {
      std::vector<std::vector<double>> rotated(static_cast<std::size_t>(cin * n));
      for (int ci = 0; ci < cin; ++ci)
        for (int hh = 0; hh < n; ++hh) {
          const Tensor slot = reshape(slice(slice(slice(base, 0, co, 1), 1, ci, 1), 2, g.wrap(hh - go), 1), {k, k});
          rotated[static_cast<std::size_t>(ci * n + hh)] = rotate_kernel(slot, go, g).to_vector();
        }
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double acc = 0.0;
          for (int ci = 0; ci < cin; ++ci)
            for (int hh = 0; hh < n; ++hh)
              for (int u = 0; u < k; ++u)
                for (int v = 0; v < k; ++v)
                  acc += xv[static_cast<std::size_t>(((ci * n + hh) * h + i + u) * w + j + v)] *
                         rotated[static_cast<std::size_t>(ci * n + hh)][static_cast<std::size_t>(u * k + v)];
          worst = std::max(worst, std::abs(acc - out[static_cast<std::size_t>(((co * n + go) * oh + i) * ow + j)]));
        }
    }
  EXPECT_LT(worst, 1e-12);
}

TEST(GroupConv, ExactC4Equivariance) {
  Rng rng(7);
  for (auto steering : {KernelSteering::bilinear, KernelSteering::harmonic}) {
    const KernelRotator rot(5, CyclicGroup(8), steering);
    const GroupFeatureMap x(random_tensor(rng, {1, 2, 8, 13, 13}), CyclicGroup(8));
    const Tensor base = random_tensor(rng, {2, 2, 8, 5, 5}, DType::f32, -0.12, 0.12);  // Kaiming-scale weights
    const GroupFeatureMap a = group_conv(x, base, rot);
    for (int turns = 1; turns <= 3; ++turns) {
      const GroupFeatureMap xr(rotate_and_shift(x, turns, 2 * turns), x.group);
      const GroupFeatureMap b = group_conv(xr, base, rot);
      EXPECT_LT(max_abs_diff(b.values, rotate_and_shift(a, turns, 2 * turns)), 1e-5);
    }
  }
}

TEST(GroupConv, RejectsMismatchedGroups) {
  Rng rng(8);
  const GroupFeatureMap x(random_tensor(rng, {1, 2, 4, 8, 8}), CyclicGroup(4));
  EXPECT_THROW(group_conv(x, random_tensor(rng, {1, 2, 8, 3, 3})), ShapeError);
  EXPECT_THROW(group_conv(x, random_tensor(rng, {1, 3, 4, 3, 3})), ShapeError);
  EXPECT_THROW(GroupFeatureMap(random_tensor(rng, {1, 2, 3, 4, 4}), CyclicGroup(4)), ShapeError);
}

TEST(EquivariantGrad, LiftingAndGroupConv) {
  Rng rng(9);
  for (auto steering : {KernelSteering::bilinear, KernelSteering::harmonic}) {
    const KernelRotator rot(3, CyclicGroup(4), steering);
    Tensor image = random_param(rng, {1, 1, 7, 7});
    Tensor k1 = random_param(rng, {2, 1, 3, 3});
    Tensor k2 = random_param(rng, {1, 2, 4, 3, 3});
    Tensor probe = random_tensor(rng, {1, 1, 4, 3, 3}, DType::f64);
    auto loss = [&] {
      const GroupFeatureMap h = lifting_conv(image, k1, rot);
      return sum(mul(group_conv(GroupFeatureMap(relu(h.values), h.group), k2, rot).values, probe));
    };
    EXPECT_LT(max_gradient_error({image, k1, k2}, loss), 1e-7);
  }
}

TEST(GroupPool, MaxAndShiftInvariance) {
  Rng rng(10);
  const GroupFeatureMap x(random_tensor(rng, {2, 3, 8, 4, 5}), CyclicGroup(8));
  const auto pooled = group_pool(x).to_vector();
  const auto v = x.values.to_vector();
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < 20; ++p) {
        double best = -INFINITY;
        for (int g = 0; g < 8; ++g) best = std::max(best, v[static_cast<std::size_t>(((b * 3 + c) * 8 + g) * 20 + p)]);
        EXPECT_EQ(pooled[static_cast<std::size_t>((b * 3 + c) * 20 + p)], best);
      }
  for (int s = -3; s <= 11; ++s) EXPECT_EQ(group_pool(cyclic_shift(x, s)).to_vector(), pooled);
  const Tensor same = Tensor::full({1, 1, 4, 2, 2}, 1.5);
  EXPECT_EQ(group_pool(GroupFeatureMap(same, CyclicGroup(4))).to_vector(), std::vector<double>(4, 1.5));
}

TEST(CyclicShift, ConventionAndGroupAction) {
  const Tensor x = Tensor::from_data({4}, std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(cyclic_shift(x, 0, 0).to_vector(), x.to_vector());
  EXPECT_EQ(cyclic_shift(x, 0, 1).to_vector(), (std::vector<double>{4, 1, 2, 3}));
  EXPECT_EQ(cyclic_shift(x, 0, -1).to_vector(), (std::vector<double>{2, 3, 4, 1}));
  Rng rng(11);
  const Tensor y = random_tensor(rng, {2, 8, 3});
  for (int s = -9; s <= 9; ++s) {
    EXPECT_EQ(cyclic_shift(cyclic_shift(y, 1, s), 1, -s).to_vector(), y.to_vector());
    for (int t = -2; t <= 2; ++t)
      EXPECT_EQ(cyclic_shift(cyclic_shift(y, 1, s), 1, t).to_vector(), cyclic_shift(y, 1, s + t).to_vector());
  }
}

TEST(CyclicShift, PerPixelOffsetsMatchScalarShifts) {
  Rng rng(12);
  const GroupFeatureMap x(random_tensor(rng, {1, 2, 4, 2, 3}), CyclicGroup(4));
  const std::vector<int> offsets{0, 1, 2, 3, -1, 5};
  const auto out = cyclic_shift(x, offsets).values.to_vector();
  for (std::size_t p = 0; p < offsets.size(); ++p) {
    const auto ref = cyclic_shift(x, offsets[p]).values.to_vector();
    for (int c = 0; c < 2; ++c)
      for (int g = 0; g < 4; ++g) {
        const auto q = static_cast<std::size_t>((c * 4 + g) * 6) + p;
        EXPECT_EQ(out[q], ref[q]);
      }
  }
  const std::vector<int> wrong{0, 1};
  EXPECT_THROW(cyclic_shift(x, wrong), ShapeError);
}

TEST(CyclicShiftGrad, IsAPermutation) {
  Rng rng(13);
  Tensor x = random_param(rng, {2, 4, 3});
  Tensor probe = random_tensor(rng, {2, 4, 3}, DType::f64);
  EXPECT_LT(max_gradient_error({x}, [&] { return sum(mul(cyclic_shift(x, 1, 3), probe)); }), 1e-8);
}

TEST(Rot90, ConventionAndInverse) {
  const Tensor x = Tensor::from_data({1, 2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  // out[i][j] = in[j][W-1-i]
  EXPECT_EQ(rot90(x, 1).to_vector(), (std::vector<double>{3, 6, 2, 5, 1, 4}));
  EXPECT_EQ(rot90(x, 1).shape(), (Shape{1, 3, 2}));
  EXPECT_EQ(rot90(rot90(x, 1), 3).to_vector(), x.to_vector());
  EXPECT_EQ(rot90(x, 4).to_vector(), x.to_vector());
  EXPECT_EQ(rot90(x, -1).to_vector(), rot90(x, 3).to_vector());
}
