#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "ride/tensor.hpp"

namespace ride {

struct Match {
  std::int64_t a;
  std::int64_t b;
  double score;
};

/// Matches between two keypoint sets. Positions are full-image (x, y).
struct MatchSet {
  std::vector<Match> matches;
  std::vector<Eigen::Vector2d> keypoints_a;
  std::vector<Eigen::Vector2d> keypoints_b;

  [[nodiscard]] std::size_t size() const { return matches.size(); }
};

/// Row-major descriptor matrix [N, D].
using DescriptorMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

DescriptorMatrix to_descriptor_matrix(const Tensor& descriptors);

/// Mutual nearest neighbours under the dot product; ties go to the smaller
/// index. Scores are the dot products. Sorted by index into A.
std::vector<Match> match_mnn(const DescriptorMatrix& a, const DescriptorMatrix& b);

/// Mutual argmax of the dual-softmax probabilities P of S / temperature,
/// kept when P >= threshold. Scores are the probabilities.
std::vector<Match> match_dual_softmax(const DescriptorMatrix& a, const DescriptorMatrix& b,
                                      double temperature = 0.1, double threshold = 0.9);

}  // namespace ride
