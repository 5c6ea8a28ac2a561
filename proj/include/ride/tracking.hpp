#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "ride/matching.hpp"

namespace ride {

inline constexpr int kTrackingNeighbours = 4;

/// Moves each tracking point by the mean displacement of the 4 matched
/// frame-0 keypoints closest to it (A side of `matches` is frame 0). Points
/// with fewer than 4 matches available are unevaluated (nullopt). Distance
/// ties go to the earlier match.
std::vector<std::optional<Eigen::Vector2d>> track_points(std::span<const Eigen::Vector2d> points,
                                                         const MatchSet& matches);

struct TrackedFrame {
  MatchSet matches;                        // frame 0 -> this frame
  std::vector<Eigen::Vector2d> truth;      // ground-truth positions of the tracking points
};

struct TrackingResult {
  /// Mean over evaluated frames of the error / height, per point; NaN if never evaluated.
  std::vector<double> per_point;
  std::vector<int> evaluated_frames;
  /// Mean over points with at least one evaluation; NaN if none.
  double mean = 0.0;
};

TrackingResult tracking_error(std::span<const Eigen::Vector2d> points, std::span<const TrackedFrame> frames,
                              double image_height);

}  // namespace ride
