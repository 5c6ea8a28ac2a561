#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ride/gradcheck.hpp"
#include "ride/image.hpp"
#include "ride/model.hpp"

namespace ride {

struct C4Report {
  double max_keypoint_diff = 0.0;  // max |K(rot90 I) - rot90 K(I)|
  double min_cosine = 1.0;         // over every output pixel
};

/// Compares the network on `image` (square) and its lattice 90-degree
/// rotation. Descriptors are aligned with the estimated orientation on the
/// original and with that orientation plus |G|/4 on the rotated copy.
C4Report measure_c4_invariance(RideModel& model, const Image& image);

/// Median cosine similarity between aligned descriptors of `image` and of
/// its bilinear rotation by one group step, over output pixels whose
/// distance from the center is at most `central_fraction` of the output
/// half-size. The rotated map is sampled bilinearly at the mapped position.
double measure_step_rotation_cosine(RideModel& model, const Image& image, double central_fraction = 0.6);

/// Finite-difference check of the full training loss (keypoint labels held
/// fixed) on the two-block C4 network with a 182-pixel texture scaled to 46.
GradCheckResult toy_loss_gradcheck(std::uint64_t seed, const GradCheckOptions& options = {});

struct SelfTestResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Equivariance and invariance property suites on randomly initialized
/// networks. Deterministic for a given seed.
std::vector<SelfTestResult> run_selftest(std::uint64_t seed);

}  // namespace ride
