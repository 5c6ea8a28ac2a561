#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include <Eigen/LU>

#include "ride/equivariant.hpp"
#include "ride/image.hpp"
#include "ride/selfsup.hpp"

using namespace ride;

namespace {

Image ramp(std::int64_t h, std::int64_t w) {
  Image img(h, w);
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c) img.at(r, c) = static_cast<float>((r * w + c) % 97) / 96.0f;
  return img;
}

}  // namespace

TEST(Homography, IdentityAndComponents) {
  const Homography id = Homography::compose(0, 1, 0, 0, 0, 0, 30, 40);
  EXPECT_TRUE(id.matrix.isApprox(Eigen::Matrix3d::Identity()));
  const Homography t = Homography::compose(0, 1, 3, -2, 0, 0, 10, 10);
  const Eigen::Vector2d p = t.apply(5, 7);
  EXPECT_NEAR(p.x(), 8, 1e-12);
  EXPECT_NEAR(p.y(), 5, 1e-12);
  const Homography s = Homography::compose(0, 2, 0, 0, 0, 0, 10, 10);
  EXPECT_NEAR(s.apply(12, 10).x(), 14, 1e-12);
  EXPECT_NEAR(s.apply(10, 10).y(), 10, 1e-12);
}

TEST(Homography, RotationIsCounterClockwiseOnScreen) {
  // y points down, so a CCW quarter turn sends +x to -y.
  const Homography r = Homography::rotation(90, 0, 0);
  const Eigen::Vector2d p = r.apply(1, 0);
  EXPECT_NEAR(p.x(), 0, 1e-15);
  EXPECT_NEAR(p.y(), -1, 1e-15);
  EXPECT_EQ(r.matrix(0, 0), 0.0);
}

TEST(Homography, RecomposeMatchesRandomSamples) {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const Homography h = sample_homography(rng, HomographyRanges{}, 120, 90);
    EXPECT_TRUE(h.recompose().isApprox(h.matrix, 1e-12));
    EXPECT_LE(std::abs(h.rotation_degrees), 22.34);
    EXPECT_GE(h.scale, 0.87);
    EXPECT_LE(h.scale, 1.15);
    EXPECT_LE(std::abs(h.tx), 0.05 * 90 + 1e-12);
    EXPECT_LE(std::abs(h.ty), 0.05 * 120 + 1e-12);
    EXPECT_NEAR(h.cx, 45, 1e-12);
    EXPECT_NEAR(h.cy, 60, 1e-12);
    // Centre moves only by the translation and perspective terms.
    const Eigen::Vector2d c = h.apply(h.cx, h.cy);
    EXPECT_NEAR(c.x(), h.cx + h.tx, 1e-9);
    EXPECT_NEAR(c.y(), h.cy + h.ty, 1e-9);
  }
  const Homography z = sample_homography(rng, HomographyRanges::zero(), 64, 64);
  EXPECT_TRUE(z.matrix.isApprox(Eigen::Matrix3d::Identity()));
}

TEST(Homography, SamplingIsDeterministic) {
  Rng a(7), b(7);
  for (int i = 0; i < 5; ++i)
    EXPECT_EQ(sample_homography(a, {}, 64, 64).matrix, sample_homography(b, {}, 64, 64).matrix);
}

TEST(Warp, QuarterRotationEqualsLatticeRotation) {
  const Image img = ramp(24, 24);
  for (int q = 1; q <= 3; ++q) {
    const Image warped = rotate_image(img, 90.0 * q);
    const Tensor expected = rot90(img.to_tensor(DType::f32), q);
    const auto e = expected.to_vector();
    for (std::size_t i = 0; i < e.size(); ++i) ASSERT_NEAR(warped.pixels[i], e[i], 1e-6) << "q=" << q;
  }
}

TEST(Warp, IdentityAndFill) {
  const Image img = ramp(16, 20);
  const Image same = warp_image(img, Homography::identity());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(same.pixels[i], img.pixels[i], 1e-6);
  const Image shifted = warp_image(img, Homography::compose(0, 1, 100, 0, 0, 0, 10, 8));
  for (float v : shifted.pixels) EXPECT_EQ(v, 0.5f);
}

TEST(Correspondences, IdentityMapsEveryPixelToItself) {
  const CyclicGroup g(8);
  const auto set = compute_correspondences(Homography::identity(), 40, 50, 40, 50, 6, g);
  EXPECT_EQ(set.grid_a_height, 28);
  EXPECT_EQ(set.grid_a_width, 38);
  ASSERT_EQ(set.size(), 28u * 38u);
  for (const auto& p : set.pairs) EXPECT_EQ(p.a, p.b);
  EXPECT_EQ(set.gt_orientation_index, 0);
}

TEST(Correspondences, MatchBruteForceProjection) {
  Rng rng(3);
  const CyclicGroup g(8);
  for (int trial = 0; trial < 10; ++trial) {
    const Homography h = sample_homography(rng, HomographyRanges::full_rotation(), 60, 60);
    const std::int64_t crop = 8, n = 60 - 2 * crop;
    const auto set = compute_correspondences(h, 60, 60, 60, 60, crop, g);
    EXPECT_EQ(set.gt_orientation_index, g.nearest_index(h.rotation_degrees));
    std::set<std::int64_t> seen_a, seen_b;
    for (const auto& p : set.pairs) {
      EXPECT_TRUE(seen_a.insert(p.a).second);
      EXPECT_TRUE(seen_b.insert(p.b).second);
      const double x = static_cast<double>(p.a % n + crop) + 0.5, y = static_cast<double>(p.a / n + crop) + 0.5;
      const Eigen::Vector3d q = h.matrix * Eigen::Vector3d(x, y, 1.0);
      EXPECT_EQ(static_cast<std::int64_t>(std::floor(q.x() / q.z())) - crop, p.b % n);
      EXPECT_EQ(static_cast<std::int64_t>(std::floor(q.y() / q.z())) - crop, p.b / n);
    }
    EXPECT_GT(set.size(), static_cast<std::size_t>(n * n / 4));
  }
}

TEST(Correspondences, QuarterTurnIsAPermutation) {
  const CyclicGroup g(8);
  const auto set = compute_correspondences(Homography::rotation(90, 20, 20), 40, 40, 40, 40, 4, g);
  EXPECT_EQ(set.size(), 32u * 32u);
  EXPECT_EQ(set.gt_orientation_index, 2);
  // Top-left corner of A lands at the bottom-left of B.
  for (const auto& p : set.pairs)
    if (p.a == 0) EXPECT_EQ(p.b, 31 * 32);
}

TEST(Photometric, ZeroRangesAreIdentity) {
  Rng rng(4);
  const Image img = synth_texture(rng, 40);
  const Image out = photometric_augment(img, rng, PhotometricRanges::zero());
  EXPECT_EQ(out.pixels, img.pixels);
}

TEST(Photometric, ParamsActAsDocumented) {
  Rng rng(5);
  Image img(1, 3);
  img.pixels = {0.25f, 0.5f, 0.81f};
  const Image g = apply_photometric(img, {0.5, 1.0, 0.0, 0.0}, rng);
  EXPECT_NEAR(g.pixels[0], 0.5, 1e-6);
  EXPECT_NEAR(g.pixels[2], 0.9, 1e-6);
  const Image c = apply_photometric(img, {1.0, 2.0, 0.1, 0.0}, rng);
  EXPECT_NEAR(c.pixels[0], 0.1, 1e-6);
  EXPECT_NEAR(c.pixels[1], 0.6, 1e-6);
  EXPECT_EQ(c.pixels[2], 1.0f);
  for (float v : photometric_augment(img, rng, {}).pixels) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(SyntheticData, TextureRangeAndDeterminism) {
  Rng a(9), b(9);
  const Image x = synth_texture(a, 64), y = synth_texture(b, 64);
  EXPECT_EQ(x.pixels, y.pixels);
  float lo = 1, hi = 0;
  for (float v : x.pixels) lo = std::min(lo, v), hi = std::max(hi, v);
  EXPECT_NEAR(lo, 0.05f, 1e-5);
  EXPECT_NEAR(hi, 0.95f, 1e-5);
  const auto corpus = synth_corpus(Rng(9), 3, 32);
  ASSERT_EQ(corpus.size(), 3u);
  EXPECT_NE(corpus[0].pixels, corpus[1].pixels);
  EXPECT_EQ(corpus[2].pixels, synth_corpus(Rng(9), 3, 32)[2].pixels);
}

TEST(SyntheticData, DiskMaskFillsCorners) {
  Rng rng(10);
  const Image masked = disk_mask(synth_texture(rng, 64));
  EXPECT_NEAR(masked.at(0, 0), 0.5f, 1e-3);
  EXPECT_NEAR(masked.at(63, 63), 0.5f, 1e-3);
}

TEST(TrainingPairs, ShapesAndDeterminism) {
  const CyclicGroup g(8);
  Rng src(11);
  const Image img = synth_texture(src, 80);
  Rng a(12), b(12);
  const TrainingPair p = make_training_pair(img, a, {}, {}, 10, g);
  const TrainingPair q = make_training_pair(img, b, {}, {}, 10, g);
  EXPECT_EQ(p.image_a.height, 80);
  EXPECT_EQ(p.image_b.width, 80);
  EXPECT_EQ(p.image_a.pixels, q.image_a.pixels);
  EXPECT_EQ(p.image_b.pixels, q.image_b.pixels);
  EXPECT_EQ(p.correspondences.pairs, q.correspondences.pairs);
  EXPECT_FALSE(p.correspondences.empty());
}

TEST(ImageIo, PgmRoundTripAndListing) {
  const auto dir = std::filesystem::temp_directory_path() / "ride_image_io";
  std::filesystem::create_directories(dir);
  const Image img = ramp(13, 17);
  write_pgm(dir / "b.pgm", img);
  write_pgm(dir / "a.pgm", img);
  const Image back = read_image(dir / "b.pgm");
  ASSERT_EQ(back.height, 13);
  ASSERT_EQ(back.width, 17);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], img.pixels[i], 0.5 / 255 + 1e-6);
  const auto files = list_images(dir);
  ASSERT_EQ(files.size(), 2u);
  EXPECT_EQ(files[0].filename(), "a.pgm");
  EXPECT_THROW(read_image(dir / "missing.pgm"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(ImageOps, DownsampleAndBilinear) {
  Image img(4, 4);
  for (std::int64_t i = 0; i < 16; ++i) img.pixels[static_cast<std::size_t>(i)] = static_cast<float>(i);
  const Image d = downsample(img, 2);
  ASSERT_EQ(d.height, 2);
  EXPECT_FLOAT_EQ(d.at(0, 0), (0 + 1 + 4 + 5) / 4.0f);
  EXPECT_FLOAT_EQ(d.at(1, 1), (10 + 11 + 14 + 15) / 4.0f);
  EXPECT_FLOAT_EQ(sample_bilinear(img, 0.5, 0.5, -1), 0.0f);
  EXPECT_FLOAT_EQ(sample_bilinear(img, 1.0, 0.5, -1), 0.5f);
  EXPECT_FLOAT_EQ(sample_bilinear(img, 1.5, 1.0, -1), 3.0f);
  EXPECT_FLOAT_EQ(sample_bilinear(img, -3, 2, -1), -1.0f);
}
