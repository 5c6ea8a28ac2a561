#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ride/equivariant.hpp"
#include "ride/rng.hpp"
#include "ride/tensor.hpp"
#include "ride/tensor_io.hpp"

namespace ride {

/// Network shape. Widths count group-channels; each carries |G| slots.
struct RideConfig {
  int group_order = 8;
  std::vector<int> block_widths{8, 8, 16, 16};
  int convs_per_block = 2;
  int descriptor_channels = 16;
  int kernel_size = 5;
  KernelSteering steering = KernelSteering::harmonic;

  [[nodiscard]] int conv_layers() const {
    return static_cast<int>(block_widths.size()) * convs_per_block + 1;
  }
  /// Total spatial shrink per axis.
  [[nodiscard]] int crop_total() const { return conv_layers() * (kernel_size - 1); }
  [[nodiscard]] int crop_per_side() const { return crop_total() / 2; }
  [[nodiscard]] int descriptor_dim() const { return descriptor_channels * group_order; }

  void validate() const;

  static RideConfig ride();
  static RideConfig ride_large();
  /// CPU-sized variant used for the bundled training runs.
  static RideConfig desk();
  /// Two blocks on C4, for gradient checks.
  static RideConfig toy();
  /// Looks up "ride", "ride-l", "desk" or "toy".
  static RideConfig preset(const std::string& name);
};

struct RideOutput {
  GroupFeatureMap detector;    // F_K [B, 1, |G|, H', W']
  GroupFeatureMap descriptor;  // F_D [B, C_D, |G|, H', W']
  Tensor keypoints;            // K [B, H', W'], sigmoid of the group-pooled F_K
  Tensor orientation;          // V [B, |G|, H', W'], raw (softmax not applied)
};

class RideModel {
 public:
  RideModel(const RideConfig& config, Rng& rng, DType dtype = DType::f32);

  [[nodiscard]] const RideConfig& config() const { return config_; }
  [[nodiscard]] const CyclicGroup& group() const { return group_; }
  [[nodiscard]] DType dtype() const { return dtype_; }

  /// images: [B, 1, H, W] with H, W > crop_total. Training mode uses batch
  /// statistics and updates the running estimates.
  RideOutput forward(const Tensor& images, bool training = false);

  /// Learnable leaves, in a fixed order.
  [[nodiscard]] std::vector<Tensor> parameters() const;
  /// Parameters and running statistics under stable names.
  [[nodiscard]] NamedTensors state() const;
  void load_state(const NamedTensors& state);

  /// Weights, running statistics and meta.* records (config, iteration).
  [[nodiscard]] NamedTensors checkpoint(std::int64_t iteration) const;
  static RideModel from_checkpoint(const NamedTensors& tensors, std::int64_t* iteration = nullptr);
  void save(const std::filesystem::path& path, std::int64_t iteration) const;
  static RideModel load(const std::filesystem::path& path, std::int64_t* iteration = nullptr);

 private:
  struct Layer {
    std::string name;
    Tensor weight;
    bool normalized = false;
    Tensor gamma, beta, running_mean, running_var;
  };

  GroupFeatureMap apply(const Layer& layer, const GroupFeatureMap& input, bool training, bool activate);

  RideConfig config_;
  CyclicGroup group_;
  KernelRotator rotator_;
  DType dtype_;
  std::vector<Layer> backbone_;
  Layer detector_;
  Layer descriptor_;
};

/// Argmax over the group axis of V [B, |G|, H, W]; ties go to the smallest
/// index. Result is row-major over [B, H, W].
std::vector<int> estimate_orientation(const Tensor& orientation);

/// Aligns each pixel's group axis by its orientation (slot g of the result
/// is slot g + o of F_D), flattens channel-major to C_D*|G| and L2-normalizes.
/// Returns [B, C_D*|G|, H, W].
Tensor invariant_descriptors(const GroupFeatureMap& descriptor, std::span<const int> orientations);

struct ScoredPixel {
  std::int64_t row;
  std::int64_t col;
  double score;
};

/// The k highest values of a single map [H, W] (or [1, H, W]); descending
/// score, ties in row-major order.
std::vector<ScoredPixel> top_k_keypoints(const Tensor& scores, std::int64_t k);

}  // namespace ride
