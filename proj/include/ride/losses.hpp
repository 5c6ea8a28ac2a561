#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ride/model.hpp"
#include "ride/rng.hpp"
#include "ride/selfsup.hpp"
#include "ride/tensor.hpp"

namespace ride {

inline constexpr double kLogFloor = 1e-12;

/// Values of maps [B, ..., H, W] for image `batch_index` at row-major
/// pixel indices, as rows: [N, prod(...)].
Tensor gather_pixels(const Tensor& maps, std::int64_t batch_index, std::span<const std::int64_t> pixels);

/// Histogram alignment loss on raw histograms sampled at corresponding
/// pixels ([N, |G|] each, row k of A corresponds to row k of B).
Tensor orientation_loss(const Tensor& va, const Tensor& vb, int gt_orientation_index);

/// softmax_rows(S / t) * softmax_cols(S / t).
Tensor dual_softmax(const Tensor& scores, double temperature);

/// Negative log of the dual-softmax probability of the true pairs; row k of
/// `da` corresponds to row k of `db` ([N, D], unit rows).
Tensor description_loss(const Tensor& da, const Tensor& db, double temperature);
/// Same value evaluated in row/column blocks of at most `block` entries,
/// never materializing the full score matrix.
Tensor description_loss_blockwise(const Tensor& da, const Tensor& db, double temperature, std::int64_t block);

/// Indices k for which pair k is a mutual nearest neighbour of the two sets.
std::vector<std::int64_t> mutual_pairs(const Tensor& da, const Tensor& db);

struct KeypointLabels {
  std::vector<float> a;  // row-major over A's output grid
  std::vector<float> b;
};

/// Marks both pixels of every correspondence that is also a mutual nearest
/// neighbour pair of the sampled descriptors.
KeypointLabels keypoint_labels(const Tensor& da, const Tensor& db, std::span<const Correspondence> pairs,
                               std::int64_t grid_a_pixels, std::int64_t grid_b_pixels);

/// Mean binary cross-entropy of each map against its labels, summed over
/// the two maps. Maps may have any shape with matching label counts.
Tensor keypoint_loss(const Tensor& ka, const Tensor& kb, std::span<const float> labels_a,
                     std::span<const float> labels_b);

struct LossBreakdown {
  Tensor l_orientation;
  Tensor l_description;
  Tensor l_keypoint;
  Tensor total;
  double lambda_o = 10.0;
};

LossBreakdown total_loss(const Tensor& l_orientation, const Tensor& l_description, const Tensor& l_keypoint,
                         double lambda_o = 10.0);

struct LossOptions {
  double lambda_o = 10.0;
  double temperature = 1.0 / 20.0;
  /// Correspondences kept per pair (uniformly subsampled); 0 keeps all.
  std::int64_t max_correspondences = 1024;
  /// 0 evaluates the description loss monolithically.
  std::int64_t block_size = 0;
  /// Used instead of the MNN labels when set (e.g. to hold them fixed).
  const KeypointLabels* fixed_labels = nullptr;
};

/// Full training objective for one pair of a batched forward: image
/// `index_a` of `out` is view A, `index_b` is view B.
LossBreakdown pair_loss(const RideOutput& out, std::int64_t index_a, std::int64_t index_b,
                        const CorrespondenceSet& corr, const LossOptions& options, Rng& rng,
                        KeypointLabels* labels_used = nullptr);

}  // namespace ride
