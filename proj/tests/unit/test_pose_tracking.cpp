#include <gtest/gtest.h>

#include <cmath>

#include <Eigen/Geometry>

#include "ride/error.hpp"
#include "ride/pose.hpp"
#include "ride/rng.hpp"
#include "ride/tracking.hpp"

using namespace ride;

namespace {

struct Scene {
  std::vector<Eigen::Vector2d> a, b;
  Eigen::Matrix3d rotation;
  Eigen::Vector3d translation;
  CameraIntrinsics camera{500, 500, 320, 240};
};

// Points in front of both cameras; the first `outliers` B positions are
// replaced by uniform pixels.
Scene make_scene(std::uint64_t seed, int count, int outliers, double noise_px = 0.0) {
  Rng rng(seed);
  Scene s;
  const Eigen::Vector3d axis = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized();
  s.rotation = Eigen::AngleAxisd(0.2, axis).toRotationMatrix();
  s.translation = Eigen::Vector3d(1.0, 0.2, 0.1).normalized();
  while (static_cast<int>(s.a.size()) < count) {
    const Eigen::Vector3d x(rng.uniform(-2, 2), rng.uniform(-1.5, 1.5), rng.uniform(4, 8));
    const Eigen::Vector3d y = s.rotation * x + s.translation;
    if (y.z() < 1.0) continue;
    const auto& c = s.camera;
    s.a.emplace_back(c.fx * x.x() / x.z() + c.cx, c.fy * x.y() / x.z() + c.cy);
    s.b.emplace_back(c.fx * y.x() / y.z() + c.cx + rng.normal(0, noise_px),
                     c.fy * y.y() / y.z() + c.cy + rng.normal(0, noise_px));
  }
  for (int i = 0; i < outliers; ++i) s.b[static_cast<std::size_t>(i)] = {rng.uniform(0, 640), rng.uniform(0, 480)};
  return s;
}

PoseError solve(const Scene& s, std::uint64_t seed) {
  RansacOptions o;
  o.seed = seed;
  const PoseEstimate est = estimate_relative_pose(s.a, s.b, s.camera, s.camera, o);
  if (!est.valid) return {INFINITY, INFINITY, INFINITY};
  return pose_error(est.rotation, est.translation, s.rotation, s.translation);
}

}  // namespace

TEST(PoseError, AnglesAndSignAgnosticTranslation) {
  const Eigen::Matrix3d r = Eigen::AngleAxisd(0.1, Eigen::Vector3d::UnitY()).toRotationMatrix();
  const Eigen::Vector3d t(1, 0, 0);
  const PoseError e = pose_error(r, -t, Eigen::Matrix3d::Identity(), t);
  EXPECT_NEAR(e.rotation_deg, 0.1 * 180 / M_PI, 1e-9);
  EXPECT_NEAR(e.translation_deg, 0.0, 1e-6);
  const PoseError f = pose_error(Eigen::Matrix3d::Identity(), Eigen::Vector3d(1, 1, 0), Eigen::Matrix3d::Identity(), t);
  EXPECT_NEAR(f.translation_deg, 45.0, 1e-9);
  EXPECT_EQ(f.combined, f.translation_deg);
}

TEST(EightPoint, RecoversEssentialOnCleanData) {
  const Scene s = make_scene(1, 30, 0);
  std::vector<Eigen::Vector2d> xa, xb;
  for (std::size_t i = 0; i < s.a.size(); ++i) {
    xa.push_back(s.camera.normalize(s.a[i]));
    xb.push_back(s.camera.normalize(s.b[i]));
  }
  Eigen::Matrix3d e;
  ASSERT_TRUE(eight_point(xa, xb, e));
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(e);
  EXPECT_NEAR(svd.singularValues()(0), svd.singularValues()(1), 1e-9 * svd.singularValues()(0));
  EXPECT_NEAR(svd.singularValues()(2), 0.0, 1e-12);
  for (std::size_t i = 0; i < xa.size(); ++i) EXPECT_LT(sampson_distance(e, xa[i], xb[i]), 1e-16);
  Eigen::Matrix3d r;
  Eigen::Vector3d t;
  EXPECT_EQ(decompose_essential(e, xa, xb, r, t), 30);
  EXPECT_LT(pose_error(r, t, s.rotation, s.translation).combined, 1e-4);
}

TEST(RelativePose, NoiselessSceneIsExact) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) EXPECT_LT(solve(make_scene(seed, 100, 0), seed).combined, 0.5);
}

TEST(RelativePose, SurvivesHalfOutliers) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Scene s = make_scene(seed, 100, 50);
    EXPECT_LT(solve(s, seed).combined, 2.0) << seed;
  }
}

TEST(RelativePose, SmallNoiseStaysAccurate) {
  EXPECT_LT(solve(make_scene(9, 100, 20, 0.25), 3).combined, 2.5);
}

TEST(RelativePose, PermutationInvariantUpToSeed) {
  const Scene s = make_scene(4, 100, 30);
  Scene p = s;
  Rng rng(5);
  for (std::size_t i = p.a.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
    std::swap(p.a[i], p.a[j]);
    std::swap(p.b[i], p.b[j]);
  }
  std::vector<double> diffs;
  for (std::uint64_t seed = 0; seed < 10; ++seed) diffs.push_back(std::abs(solve(s, seed).combined - solve(p, seed).combined));
  std::nth_element(diffs.begin(), diffs.begin() + 5, diffs.end());
  EXPECT_LT(diffs[5], 0.1);
}

TEST(RelativePose, DegenerateInputsAreFlagged) {
  Scene s = make_scene(6, 50, 0);
  const auto few = estimate_relative_pose(std::span(s.a).first(7), std::span(s.b).first(7), s.camera, s.camera);
  EXPECT_FALSE(few.valid);
  // Zero baseline: B sees the same pixels.
  const auto still = estimate_relative_pose(s.a, s.a, s.camera, s.camera);
  EXPECT_FALSE(still.valid);
  EXPECT_FALSE(still.failure.empty());
}

TEST(CameraIntrinsics, RejectsNonPositiveFocal) {
  EXPECT_THROW((CameraIntrinsics{0, 1, 0, 0}.validate()), ContractError);
  EXPECT_NO_THROW((CameraIntrinsics{2, 1, 0, 0}.validate()));
}

namespace {

MatchSet translated_matches(const std::vector<Eigen::Vector2d>& kps, const Eigen::Vector2d& shift) {
  MatchSet m;
  for (std::size_t i = 0; i < kps.size(); ++i) {
    m.keypoints_a.push_back(kps[i]);
    m.keypoints_b.push_back(kps[i] + shift);
    m.matches.push_back({static_cast<std::int64_t>(i), static_cast<std::int64_t>(i), 1.0});
  }
  return m;
}

}  // namespace

TEST(TrackPoints, UsesFourClosestMatches) {
  // Six keypoints around a point at the origin; the two far ones move wildly.
  const std::vector<Eigen::Vector2d> kps{{1, 0}, {0, 2}, {-3, 0}, {0, -4}, {50, 50}, {-60, 10}};
  MatchSet m;
  const std::vector<Eigen::Vector2d> moves{{1, 0}, {3, 0}, {1, 2}, {3, 2}, {100, 100}, {-50, 0}};
  for (std::size_t i = 0; i < kps.size(); ++i) {
    m.keypoints_a.push_back(kps[i]);
    m.keypoints_b.push_back(kps[i] + moves[i]);
    m.matches.push_back({static_cast<std::int64_t>(i), static_cast<std::int64_t>(i), 1.0});
  }
  const std::vector<Eigen::Vector2d> point{{0, 0}};
  const auto tracked = track_points(point, m);
  ASSERT_TRUE(tracked[0].has_value());
  EXPECT_NEAR(tracked[0]->x(), 2.0, 1e-12);
  EXPECT_NEAR(tracked[0]->y(), 1.0, 1e-12);

  m.matches.resize(3);
  EXPECT_FALSE(track_points(point, m)[0].has_value());
}

TEST(TrackingError, GlobalTranslationIsRecovered) {
  Rng rng(7);
  std::vector<Eigen::Vector2d> kps;
  for (int i = 0; i < 200; ++i) kps.emplace_back(rng.uniform(0, 640), rng.uniform(0, 480));
  const std::vector<Eigen::Vector2d> points{{100, 100}, {320, 240}, {600, 400}};
  std::vector<TrackedFrame> frames;
  for (int f = 1; f <= 3; ++f) {
    const Eigen::Vector2d shift(10.0 * f, 0);
    TrackedFrame fr{translated_matches(kps, shift), {}};
    for (const auto& p : points) fr.truth.push_back(p + shift);
    frames.push_back(fr);
  }
  const TrackingResult r = tracking_error(points, frames, 480);
  ASSERT_EQ(r.per_point.size(), 3u);
  for (double e : r.per_point) EXPECT_LT(e, 0.2 / 480);
  EXPECT_EQ(r.evaluated_frames, (std::vector<int>{3, 3, 3}));
  EXPECT_LT(r.mean, 0.2 / 480);
}

TEST(TrackingError, NoisyMatchesAverageDown) {
  Rng rng(8);
  std::vector<Eigen::Vector2d> kps;
  for (int i = 0; i < 400; ++i) kps.emplace_back(rng.uniform(0, 640), rng.uniform(0, 480));
  std::vector<Eigen::Vector2d> points;
  for (int i = 0; i < 100; ++i) points.emplace_back(rng.uniform(50, 590), rng.uniform(50, 430));
  TrackedFrame fr{translated_matches(kps, {0, 0}), points};
  for (auto& b : fr.matches.keypoints_b) b += Eigen::Vector2d(rng.normal(0, 2), rng.normal(0, 2));
  const TrackingResult r = tracking_error(points, std::span(&fr, 1), 480);
  // Mean of four 2-D Gaussian offsets: expected norm sqrt(pi/2) * 2 / 2.
  const double expected = std::sqrt(M_PI / 2.0) / 480;
  EXPECT_GT(r.mean, expected / 2);
  EXPECT_LT(r.mean, expected * 2);
}

TEST(TrackingError, UnevaluatedPointsAreNan) {
  const std::vector<Eigen::Vector2d> kps{{0, 0}, {1, 1}};
  const std::vector<Eigen::Vector2d> points{{0, 0}};
  TrackedFrame fr{translated_matches(kps, {1, 0}), points};
  const TrackingResult r = tracking_error(points, std::span(&fr, 1), 480);
  EXPECT_TRUE(std::isnan(r.per_point[0]));
  EXPECT_TRUE(std::isnan(r.mean));
  EXPECT_EQ(r.evaluated_frames[0], 0);
}
