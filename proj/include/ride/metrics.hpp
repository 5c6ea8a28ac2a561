#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "ride/matching.hpp"

namespace ride {

/// Fraction of matches whose A keypoint, mapped by `homography`, lands
/// within each threshold (pixels) of its B keypoint. No matches gives 0.
std::vector<double> mean_matching_accuracy(const MatchSet& matches, const Eigen::Matrix3d& homography,
                                           std::span<const double> thresholds);

inline constexpr double kMmaThresholds[] = {3.0, 5.0, 10.0};
inline constexpr double kPoseAucThresholds[] = {5.0, 10.0, 20.0};

/// Area under the cumulative error curve on [0, tau], divided by tau, for
/// each tau. Failures are passed as +infinity.
std::vector<double> pose_error_auc(std::span<const double> errors, std::span<const double> thresholds);

}  // namespace ride
