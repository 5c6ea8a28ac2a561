#include "ride/metrics.hpp"

#include <algorithm>

#include "ride/error.hpp"

namespace ride {

std::vector<double> mean_matching_accuracy(const MatchSet& matches, const Eigen::Matrix3d& homography,
                                           std::span<const double> thresholds) {
  std::vector<double> out(thresholds.size(), 0.0);
  if (matches.matches.empty()) return out;
  std::vector<std::size_t> correct(thresholds.size(), 0);
  for (const auto& m : matches.matches) {
    const Eigen::Vector2d& pa = matches.keypoints_a.at(static_cast<std::size_t>(m.a));
    const Eigen::Vector2d& pb = matches.keypoints_b.at(static_cast<std::size_t>(m.b));
    const Eigen::Vector3d q = homography * pa.homogeneous();
    const double err = (q.hnormalized() - pb).norm();
    for (std::size_t t = 0; t < thresholds.size(); ++t)
      if (err <= thresholds[t]) ++correct[t];
  }
  for (std::size_t t = 0; t < thresholds.size(); ++t)
    out[t] = static_cast<double>(correct[t]) / static_cast<double>(matches.matches.size());
  return out;
}

std::vector<double> pose_error_auc(std::span<const double> errors, std::span<const double> thresholds) {
  if (errors.empty()) throw ContractError("pose AUC needs at least one error");
  std::vector<double> e(errors.begin(), errors.end());
  std::sort(e.begin(), e.end());
  const auto n = static_cast<double>(e.size());
  std::vector<double> xs{0.0}, recall{0.0};
  for (std::size_t i = 0; i < e.size(); ++i) {
    xs.push_back(e[i]);
    recall.push_back(static_cast<double>(i + 1) / n);
  }
  std::vector<double> out;
  for (double tau : thresholds) {
    if (!(tau > 0.0)) throw ContractError("AUC threshold must be positive");
    const auto last = static_cast<std::size_t>(std::lower_bound(xs.begin(), xs.end(), tau) - xs.begin());
    std::vector<double> x(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(last));
    std::vector<double> r(recall.begin(), recall.begin() + static_cast<std::ptrdiff_t>(last));
    x.push_back(tau);
    r.push_back(recall[last - 1]);
    double area = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) area += 0.5 * (r[i] + r[i - 1]) * (x[i] - x[i - 1]);
    out.push_back(area / tau);
  }
  return out;
}

}  // namespace ride
