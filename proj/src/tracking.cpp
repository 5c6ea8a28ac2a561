#include "ride/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ride/error.hpp"

namespace ride {

std::vector<std::optional<Eigen::Vector2d>> track_points(std::span<const Eigen::Vector2d> points,
                                                         const MatchSet& matches) {
  std::vector<std::optional<Eigen::Vector2d>> out(points.size());
  const std::size_t m = matches.matches.size();
  if (m < static_cast<std::size_t>(kTrackingNeighbours)) return out;
  std::vector<std::size_t> order(m);
  std::vector<double> dist(m);
  for (std::size_t p = 0; p < points.size(); ++p) {
    for (std::size_t i = 0; i < m; ++i) {
      const auto& kp = matches.keypoints_a.at(static_cast<std::size_t>(matches.matches[i].a));
      dist[i] = (kp - points[p]).squaredNorm();
    }
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + kTrackingNeighbours, order.end(),
                      [&](std::size_t a, std::size_t b) { return dist[a] != dist[b] ? dist[a] < dist[b] : a < b; });
    Eigen::Vector2d motion = Eigen::Vector2d::Zero();
    for (int k = 0; k < kTrackingNeighbours; ++k) {
      const auto& match = matches.matches[order[static_cast<std::size_t>(k)]];
      motion += matches.keypoints_b.at(static_cast<std::size_t>(match.b)) -
                matches.keypoints_a.at(static_cast<std::size_t>(match.a));
    }
    out[p] = points[p] + motion / kTrackingNeighbours;
  }
  return out;
}

TrackingResult tracking_error(std::span<const Eigen::Vector2d> points, std::span<const TrackedFrame> frames,
                              double image_height) {
  if (!(image_height > 0.0)) throw ContractError("image height must be positive");
  const std::size_t n = points.size();
  std::vector<double> sum(n, 0.0);
  TrackingResult result;
  result.evaluated_frames.assign(n, 0);
  for (const auto& frame : frames) {
    if (frame.truth.size() != n) throw ShapeError("ground truth must list every tracking point");
    const auto tracked = track_points(points, frame.matches);
    for (std::size_t p = 0; p < n; ++p) {
      if (!tracked[p]) continue;
      sum[p] += (*tracked[p] - frame.truth[p]).norm() / image_height;
      ++result.evaluated_frames[p];
    }
  }
  result.per_point.assign(n, std::numeric_limits<double>::quiet_NaN());
  double total = 0.0;
  int counted = 0;
  for (std::size_t p = 0; p < n; ++p) {
    if (result.evaluated_frames[p] == 0) continue;
    result.per_point[p] = sum[p] / result.evaluated_frames[p];
    total += result.per_point[p];
    ++counted;
  }
  result.mean = counted > 0 ? total / counted : std::numeric_limits<double>::quiet_NaN();
  return result;
}

}  // namespace ride
