#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ride/image.hpp"
#include "ride/matching.hpp"
#include "ride/model.hpp"
#include "ride/tensor_io.hpp"
#include "ride/tracking.hpp"

namespace ride {

/// Keypoints of one image: full-image pixel-center positions (x, y), scores,
/// estimated orientation indices and unit invariant descriptors.
struct Features {
  std::vector<Eigen::Vector2d> positions;
  std::vector<double> scores;
  std::vector<int> orientations;
  DescriptorMatrix descriptors;

  [[nodiscard]] std::size_t size() const { return positions.size(); }
};

/// Inference pass and top-k extraction (no suppression).
Features describe_image(RideModel& model, const Image& image, std::int64_t topk);

/// Descriptors for output-grid pixels of image `batch_index`, aligned by the
/// given orientations and L2-normalized.
DescriptorMatrix sample_descriptors(const GroupFeatureMap& descriptor, std::int64_t batch_index,
                                    std::span<const std::int64_t> pixels, std::span<const int> orientations);

/// Container entries "keypoints" [N, 2], "scores" [N], "descriptors" [N, D].
NamedTensors features_to_tensors(const Features& features);
Features features_from_tensors(const NamedTensors& tensors);

enum class Matcher { mnn, dual_softmax };

struct MatcherOptions {
  Matcher kind = Matcher::mnn;
  double temperature = 0.1;
  double threshold = 0.9;
};

Matcher parse_matcher(const std::string& name);
MatchSet match_features(const Features& a, const Features& b, const MatcherOptions& options = {});

struct SweepRow {
  std::int64_t image = 0;
  double angle = 0.0;
  double mma3 = 0.0, mma5 = 0.0, mma10 = 0.0;
  std::size_t matches = 0;
};

std::vector<double> default_sweep_angles();

/// For each image and angle: rotate about the center (same canvas, mid-gray
/// fill), describe both, match, and score against the exact rotation.
std::vector<SweepRow> rotation_sweep(RideModel& model, const std::vector<Image>& images,
                                     std::span<const double> angles, std::int64_t topk,
                                     const MatcherOptions& matcher = {});

/// Frame 0 carries the tracking points; truths[i] lists their positions in frames[i + 1].
TrackingResult evaluate_tracking(RideModel& model, const std::vector<Image>& frames,
                                 std::span<const Eigen::Vector2d> points,
                                 const std::vector<std::vector<Eigen::Vector2d>>& truths, std::int64_t topk,
                                 const MatcherOptions& matcher = {});

}  // namespace ride
