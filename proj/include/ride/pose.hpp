#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace ride {

struct CameraIntrinsics {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;

  /// Pixel -> normalized camera coordinates.
  [[nodiscard]] Eigen::Vector2d normalize(const Eigen::Vector2d& p) const {
    return {(p.x() - cx) / fx, (p.y() - cy) / fy};
  }
  void validate() const;
};

struct RansacOptions {
  int iterations = 2000;
  /// Inlier threshold on the Sampson distance, in pixels (converted with the mean focal length).
  double threshold_px = 1.0;
  std::uint64_t seed = 0;
  /// Extra 8-point draws from each new best consensus set.
  int local_iterations = 20;
};

/// Relative pose with x_b ~ R x_a + t, |t| = 1.
struct PoseEstimate {
  bool valid = false;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  std::vector<std::int64_t> inliers;
  std::string failure;  // reason when !valid
};

/// Essential matrix from >= 8 normalized correspondences, projected onto
/// the essential manifold. Returns false for a rank-deficient system.
bool eight_point(std::span<const Eigen::Vector2d> xa, std::span<const Eigen::Vector2d> xb, Eigen::Matrix3d& e);

/// Squared Sampson distance of a normalized correspondence.
double sampson_distance(const Eigen::Matrix3d& e, const Eigen::Vector2d& xa, const Eigen::Vector2d& xb);

/// The (R, t) among the four decompositions of `e` placing the most points
/// in front of both cameras; returns that count.
int decompose_essential(const Eigen::Matrix3d& e, std::span<const Eigen::Vector2d> xa,
                        std::span<const Eigen::Vector2d> xb, Eigen::Matrix3d& rotation, Eigen::Vector3d& translation);

/// RANSAC over the 8-point solver with Sampson scoring, refit on inliers.
/// Pixel inputs; fewer than 8 points, degenerate geometry or no parallax
/// produce an invalid estimate.
PoseEstimate estimate_relative_pose(std::span<const Eigen::Vector2d> points_a,
                                    std::span<const Eigen::Vector2d> points_b, const CameraIntrinsics& camera_a,
                                    const CameraIntrinsics& camera_b, const RansacOptions& options = {});

struct PoseError {
  double rotation_deg = 0.0;
  double translation_deg = 0.0;
  double combined = 0.0;  // max of the two
};

/// Translation error is the angle between directions, sign-agnostic.
PoseError pose_error(const Eigen::Matrix3d& r_est, const Eigen::Vector3d& t_est, const Eigen::Matrix3d& r_true,
                     const Eigen::Vector3d& t_true);

}  // namespace ride
