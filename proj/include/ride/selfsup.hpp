#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "ride/equivariant.hpp"
#include "ride/image.hpp"
#include "ride/rng.hpp"

namespace ride {

/// Planar homography built as T_center * T_translate * R * S * P * T_-center.
///
/// R rotates counter-clockwise on screen by rotation_degrees. The matrix maps
/// continuous coordinates of the source image to those of the warped image.
struct Homography {
  Eigen::Matrix3d matrix = Eigen::Matrix3d::Identity();
  double rotation_degrees = 0.0;
  double scale = 1.0;
  double tx = 0.0, ty = 0.0;
  double px = 0.0, py = 0.0;
  double cx = 0.0, cy = 0.0;

  static Homography identity() { return {}; }
  static Homography compose(double rotation_degrees, double scale, double tx, double ty, double px,
                            double py, double cx, double cy);
  static Homography rotation(double degrees, double cx, double cy);

  /// Matrix rebuilt from the stored components.
  [[nodiscard]] Eigen::Matrix3d recompose() const;
  [[nodiscard]] Eigen::Vector2d apply(double x, double y) const;
  [[nodiscard]] Eigen::Vector2d apply(const Eigen::Vector2d& p) const { return apply(p.x(), p.y()); }
};

struct HomographyRanges {
  double rotation_degrees = 22.34;
  double scale_min = 0.87;
  double scale_max = 1.15;
  double translation_fraction = 0.05;
  double perspective = 2e-4;

  static HomographyRanges zero() { return {0.0, 1.0, 1.0, 0.0, 0.0}; }
  static HomographyRanges full_rotation() {
    HomographyRanges r;
    r.rotation_degrees = 180.0;
    return r;
  }
};

/// Samples about the center of a height x width image. Scale is log-uniform.
Homography sample_homography(Rng& rng, const HomographyRanges& ranges, std::int64_t height,
                             std::int64_t width);

/// Same-size warp with mid-gray fill.
Image warp_image(const Image& image, const Homography& h);
/// Rotation about the image center, same canvas, mid-gray fill.
Image rotate_image(const Image& image, double degrees);

struct Correspondence {
  std::int64_t a;  // row-major index into A's output grid
  std::int64_t b;
  bool operator==(const Correspondence&) const = default;
};

struct CorrespondenceSet {
  std::vector<Correspondence> pairs;
  Homography homography;
  int gt_orientation_index = 0;
  std::int64_t grid_a_height = 0, grid_a_width = 0;
  std::int64_t grid_b_height = 0, grid_b_width = 0;

  [[nodiscard]] bool empty() const { return pairs.empty(); }
  [[nodiscard]] std::size_t size() const { return pairs.size(); }
};

/// Ground-truth pixel pairs between the output grids of A and B. `crop` is
/// the per-side shrink of the network (grid index i sits at full-image pixel
/// i + crop). Pairs whose B pixel is hit more than once are dropped.
CorrespondenceSet compute_correspondences(const Homography& h, std::int64_t height_a, std::int64_t width_a,
                                          std::int64_t height_b, std::int64_t width_b, std::int64_t crop,
                                          const CyclicGroup& group);

struct PhotometricParams {
  double gamma = 1.0;
  double contrast = 1.0;
  double brightness = 0.0;
  double noise_sigma = 0.0;
};

struct PhotometricRanges {
  double brightness = 0.2;
  double contrast_min = 0.8, contrast_max = 1.2;
  double gamma_min = 0.8, gamma_max = 1.2;
  double noise_sigma = 0.02;

  static PhotometricRanges zero() { return {0.0, 1.0, 1.0, 1.0, 1.0, 0.0}; }
};

/// Gamma, contrast about 0.5, brightness shift, Gaussian noise, clamp to [0, 1].
Image apply_photometric(const Image& image, const PhotometricParams& params, Rng& rng);
Image photometric_augment(const Image& image, Rng& rng, const PhotometricRanges& ranges);

struct TrainingPair {
  Image image_a;
  Image image_b;
  CorrespondenceSet correspondences;
};

/// Warps `image` by a sampled homography and augments both views.
TrainingPair make_training_pair(const Image& image, Rng& rng, const HomographyRanges& geometry,
                                const PhotometricRanges& photometric, std::int64_t crop,
                                const CyclicGroup& group);

/// Multi-octave value noise with Gaussian blobs and soft edges, normalized to [0.05, 0.95].
Image synth_texture(Rng& rng, std::int64_t size);
std::vector<Image> synth_corpus(const Rng& rng, int n, std::int64_t size);

/// Low-frequency texture blended into mid-gray outside a centered disk.
Image smooth_disk_texture(Rng& rng, std::int64_t size);
/// Blends `image` toward `fill` outside a centered disk of radius_fraction * size/2.
Image disk_mask(const Image& image, double radius_fraction = 0.92, double softness = 6.0, float fill = 0.5f);

}  // namespace ride
