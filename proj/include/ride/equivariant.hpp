#pragma once

#include <memory>
#include <span>
#include <vector>

#include "ride/tensor.hpp"

namespace ride {

/// Cyclic rotation group C_N. Element k is an in-plane rotation by
/// k * 360/N degrees, counter-clockwise as seen on screen (rows grow down).
class CyclicGroup {
 public:
  explicit CyclicGroup(int order = 8);

  [[nodiscard]] int order() const { return order_; }
  [[nodiscard]] double step_degrees() const { return 360.0 / order_; }
  [[nodiscard]] int wrap(int k) const { return ((k % order_) + order_) % order_; }
  [[nodiscard]] double angle_degrees(int k) const { return wrap(k) * step_degrees(); }
  /// Nearest group element to an angle; exact half-way ties go to the smaller index.
  [[nodiscard]] int nearest_index(double degrees) const;

  bool operator==(const CyclicGroup&) const = default;

 private:
  int order_;
};

/// Feature tensor [B, C, |G|, H, W] in the regular representation.
struct GroupFeatureMap {
  Tensor values;
  CyclicGroup group;

  GroupFeatureMap(Tensor v, CyclicGroup g);

  [[nodiscard]] std::int64_t batch() const { return values.dim(0); }
  [[nodiscard]] std::int64_t channels() const { return values.dim(1); }
  [[nodiscard]] std::int64_t height() const { return values.dim(3); }
  [[nodiscard]] std::int64_t width() const { return values.dim(4); }
};

/// How rotated copies of a k x k kernel are produced for angles that are
/// not multiples of 90 degrees (those are always exact index permutations).
enum class KernelSteering {
  /// Bilinear resampling about the kernel center; samples outside the
  /// k x k support read as zero.
  bilinear,
  /// Least-squares projection onto band-limited ring harmonics (Gaussian
  /// rings at integer radii, angular frequency <= min(radius, |G|/2 - 1)),
  /// rotated analytically and resampled. Slot 0 is the projection itself.
  harmonic,
};

/// Radial width of each harmonic ring, in pixels.
inline constexpr double kHarmonicRingWidth = 0.4;

/// Precomputed linear maps from a base kernel to each of its |G| rotated
/// copies, stored as sparse taps.
class KernelRotator {
 public:
  struct Tap {
    int source;
    double weight;
  };

  KernelRotator(int ksize, CyclicGroup group, KernelSteering steering = KernelSteering::bilinear);

  [[nodiscard]] int ksize() const { return ksize_; }
  [[nodiscard]] const CyclicGroup& group() const { return group_; }
  [[nodiscard]] KernelSteering steering() const { return steering_; }
  /// Taps feeding output position `index` (row-major) under rotation `angle_index`.
  [[nodiscard]] const std::vector<Tap>& taps(int angle_index, int index) const;

  /// [C, 1, k, k] -> [C*|G|, 1, k, k]; output channel c*|G|+g is base c rotated by g.
  [[nodiscard]] Tensor expand_lifting(const Tensor& base) const;
  /// [Cout, Cin, |G|, k, k] -> [Cout*|G|, Cin*|G|, k, k]; block (g, h) holds
  /// base[:, :, (h - g) mod |G|] rotated by g.
  [[nodiscard]] Tensor expand_group(const Tensor& base) const;

 private:
  int ksize_;
  CyclicGroup group_;
  KernelSteering steering_;
  using Table = std::vector<std::vector<std::vector<Tap>>>;  // [angle][position] -> taps
  std::shared_ptr<const Table> table_;
};

/// Base kernel [k, k] (odd k) rotated by angle_index * 360/|G| degrees.
Tensor rotate_kernel(const Tensor& base, int angle_index, const CyclicGroup& group,
                     KernelSteering steering = KernelSteering::bilinear);

/// Lifts a grayscale image [B, 1, H, W] to the group with base kernels [C, 1, k, k].
GroupFeatureMap lifting_conv(const Tensor& image, const Tensor& base_kernels, const CyclicGroup& group);
GroupFeatureMap lifting_conv(const Tensor& image, const Tensor& base_kernels, const KernelRotator& rotator);

/// Group correlation with base kernels [Cout, Cin, |G|, k, k].
GroupFeatureMap group_conv(const GroupFeatureMap& input, const Tensor& base_kernels);
GroupFeatureMap group_conv(const GroupFeatureMap& input, const Tensor& base_kernels,
                           const KernelRotator& rotator);

/// Max over the group axis: [B, C, |G|, H, W] -> [B, C, H, W].
Tensor group_pool(const GroupFeatureMap& input);

/// Slot g of the result is slot (g - offset) mod n of `x` along `axis`.
Tensor cyclic_shift(const Tensor& x, int axis, int offset);
GroupFeatureMap cyclic_shift(const GroupFeatureMap& x, int offset);
/// Per-pixel offsets, row-major over [B, H, W].
GroupFeatureMap cyclic_shift(const GroupFeatureMap& x, std::span<const int> offsets);

/// Lattice rotation of the two trailing axes by quarter_turns * 90 degrees
/// counter-clockwise (out[i][j] = in[j][W-1-i] per turn). Not differentiable.
Tensor rot90(const Tensor& x, int quarter_turns);

}  // namespace ride
