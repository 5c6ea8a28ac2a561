#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ride/config.hpp"
#include "ride/image.hpp"
#include "ride/losses.hpp"
#include "ride/model.hpp"
#include "ride/selfsup.hpp"

namespace ride {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected ADAM update in place; `step` counts from 1.
template <typename T>
void adam_update(std::span<T> weights, std::span<const T> grads, std::span<T> m, std::span<T> v, std::int64_t step,
                 const AdamOptions& options);

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);

  /// Applies the accumulated gradients of every parameter.
  void step();
  void zero_grad();
  [[nodiscard]] std::int64_t steps() const { return step_; }

 private:
  std::vector<Tensor> params_;
  std::vector<Tensor> m_, v_;
  AdamOptions options_;
  std::int64_t step_ = 0;
};

struct TrainConfig {
  std::int64_t iterations = 2000;
  int batch_size = 2;
  AdamOptions adam;
  double lambda_o = 10.0;
  double temperature = 1.0 / 20.0;
  std::int64_t crop = 182;
  std::uint64_t seed = 0;
  RideConfig model = RideConfig::desk();
  std::int64_t max_correspondences = 1024;
  /// 0 disables validation.
  std::int64_t validation_every = 250;
  int validation_images = 8;
  std::int64_t validation_topk = 256;
  HomographyRanges geometry;
  PhotometricRanges photometric;

  void validate() const;
  /// Overrides from a key = value file; unknown keys are rejected.
  static TrainConfig from_config(const KeyValueConfig& cfg);
  static std::vector<std::string> known_keys();
};

struct TrainRecord {
  std::int64_t iteration = 0;
  double l_orientation = 0.0;
  double l_description = 0.0;
  double l_keypoint = 0.0;
  double total = 0.0;
  std::optional<double> validation_mma;
  int skipped_pairs = 0;
};

struct TrainResult {
  std::vector<TrainRecord> log;
  double best_validation_mma = -1.0;
  std::int64_t best_iteration = 0;
  int skipped_pairs = 0;
};

struct TrainOutputs {
  /// When set, receives last.ckpt, best.ckpt and train_log.csv.
  std::optional<std::filesystem::path> directory;
  std::function<void(const TrainRecord&)> on_record;
};

/// Held-out validation textures and their fixed homographies.
struct ValidationSet {
  std::vector<Image> images;
  std::vector<Homography> homographies;
};

ValidationSet make_validation_set(const Rng& rng, int count, std::int64_t size, const HomographyRanges& geometry);
/// Mean MMA@3px of MNN matches between each image and its warp.
double validation_mma(RideModel& model, const ValidationSet& set, std::int64_t topk);

/// Trains `model` in place. On return the model holds the weights of the
/// best validation checkpoint (the last ones when validation is disabled).
TrainResult train(RideModel& model, const std::vector<Image>& corpus, const TrainConfig& config,
                  const TrainOutputs& outputs = {});

void write_train_log(const std::filesystem::path& path, const std::vector<TrainRecord>& log);

}  // namespace ride
