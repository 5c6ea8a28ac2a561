#include "ride/evaluation.hpp"

#include <cmath>

#include "ride/metrics.hpp"
#include "ride/selfsup.hpp"

namespace ride {

DescriptorMatrix sample_descriptors(const GroupFeatureMap& descriptor, std::int64_t batch_index,
                                    std::span<const std::int64_t> pixels, std::span<const int> orientations) {
  if (pixels.size() != orientations.size()) throw ShapeError("one orientation per pixel is required");
  const std::int64_t c = descriptor.channels(), g = descriptor.group.order();
  const std::int64_t hw = descriptor.height() * descriptor.width();
  const std::vector<double> v = [&] {
    NoGradGuard guard;
    return slice(descriptor.values, 0, batch_index, 1).to_vector();
  }();
  DescriptorMatrix out(static_cast<Eigen::Index>(pixels.size()), c * g);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const auto p = pixels[i];
    if (p < 0 || p >= hw) throw ShapeError("descriptor pixel out of range");
    const int o = descriptor.group.wrap(orientations[i]);
    double norm = 0.0;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      for (std::int64_t k = 0; k < g; ++k) {
        const double x = v[static_cast<std::size_t>((ch * g + (k + o) % g) * hw + p)];
        out(static_cast<Eigen::Index>(i), ch * g + k) = static_cast<float>(x);
        norm += x * x;
      }
    }
    norm = std::sqrt(norm);
    if (norm > 0.0) out.row(static_cast<Eigen::Index>(i)) /= static_cast<float>(norm);
  }
  return out;
}

Features describe_image(RideModel& model, const Image& image, std::int64_t topk) {
  NoGradGuard guard;
  const RideOutput out = model.forward(image.to_tensor(model.dtype()), false);
  const auto w = out.keypoints.dim(2), hw = out.keypoints.dim(1) * w;
  const auto top = top_k_keypoints(out.keypoints, topk);
  const double offset = model.config().crop_per_side() + 0.5;
  const std::int64_t g = model.group().order();
  const std::vector<double> hist = out.orientation.to_vector();

  Features f;
  std::vector<std::int64_t> pixels;
  for (const auto& kp : top) {
    const auto p = kp.row * w + kp.col;
    pixels.push_back(p);
    f.positions.emplace_back(static_cast<double>(kp.col) + offset, static_cast<double>(kp.row) + offset);
    f.scores.push_back(kp.score);
    int best = 0;
    for (std::int64_t k = 1; k < g; ++k)
      if (hist[static_cast<std::size_t>(k * hw + p)] > hist[static_cast<std::size_t>(best * hw + p)])
        best = static_cast<int>(k);
    f.orientations.push_back(best);
  }
  f.descriptors = sample_descriptors(out.descriptor, 0, pixels, f.orientations);
  return f;
}

NamedTensors features_to_tensors(const Features& f) {
  const auto n = static_cast<std::int64_t>(f.size());
  std::vector<float> kp, scores;
  for (std::size_t i = 0; i < f.size(); ++i) {
    kp.push_back(static_cast<float>(f.positions[i].x()));
    kp.push_back(static_cast<float>(f.positions[i].y()));
    scores.push_back(static_cast<float>(f.scores[i]));
  }
  std::vector<float> desc(f.descriptors.data(), f.descriptors.data() + f.descriptors.size());
  return {{"keypoints", Tensor::from_data({n, 2}, std::move(kp))},
          {"scores", Tensor::from_data({n}, std::move(scores))},
          {"descriptors", Tensor::from_data({n, f.descriptors.cols()}, std::move(desc))}};
}

Features features_from_tensors(const NamedTensors& tensors) {
  const Tensor& kp = find_tensor(tensors, "keypoints");
  const Tensor& scores = find_tensor(tensors, "scores");
  const Tensor& desc = find_tensor(tensors, "descriptors");
  if (kp.rank() != 2 || kp.dim(1) != 2 || scores.rank() != 1 || desc.rank() != 2 || scores.dim(0) != kp.dim(0) ||
      desc.dim(0) != kp.dim(0))
    throw IoError("malformed feature file");
  Features f;
  const auto k = kp.to_vector(), s = scores.to_vector();
  for (std::int64_t i = 0; i < kp.dim(0); ++i) {
    f.positions.emplace_back(k[static_cast<std::size_t>(2 * i)], k[static_cast<std::size_t>(2 * i + 1)]);
    f.scores.push_back(s[static_cast<std::size_t>(i)]);
  }
  f.descriptors = to_descriptor_matrix(desc);
  return f;
}

Matcher parse_matcher(const std::string& name) {
  if (name == "mnn") return Matcher::mnn;
  if (name == "dual-softmax") return Matcher::dual_softmax;
  throw ContractError("unknown matcher '" + name + "' (expected mnn or dual-softmax)");
}

MatchSet match_features(const Features& a, const Features& b, const MatcherOptions& options) {
  MatchSet m;
  m.keypoints_a = a.positions;
  m.keypoints_b = b.positions;
  m.matches = options.kind == Matcher::mnn
                  ? match_mnn(a.descriptors, b.descriptors)
                  : match_dual_softmax(a.descriptors, b.descriptors, options.temperature, options.threshold);
  return m;
}

std::vector<double> default_sweep_angles() {
  std::vector<double> a;
  for (int d = 0; d < 360; d += 10) a.push_back(d);
  return a;
}

std::vector<SweepRow> rotation_sweep(RideModel& model, const std::vector<Image>& images,
                                     std::span<const double> angles, std::int64_t topk,
                                     const MatcherOptions& matcher) {
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = images[i];
    const Features fa = describe_image(model, img, topk);
    for (double angle : angles) {
      const Homography h = Homography::rotation(angle, static_cast<double>(img.width) / 2.0,
                                                static_cast<double>(img.height) / 2.0);
      const Features fb = describe_image(model, warp_image(img, h), topk);
      const MatchSet m = match_features(fa, fb, matcher);
      const auto acc = mean_matching_accuracy(m, h.matrix, kMmaThresholds);
      rows.push_back({static_cast<std::int64_t>(i), angle, acc[0], acc[1], acc[2], m.size()});
    }
  }
  return rows;
}

TrackingResult evaluate_tracking(RideModel& model, const std::vector<Image>& frames,
                                 std::span<const Eigen::Vector2d> points,
                                 const std::vector<std::vector<Eigen::Vector2d>>& truths, std::int64_t topk,
                                 const MatcherOptions& matcher) {
  if (frames.empty()) throw ContractError("tracking needs at least one frame");
  if (truths.size() + 1 != frames.size()) throw ShapeError("ground truth is required for every frame after the first");
  const Features f0 = describe_image(model, frames[0], topk);
  std::vector<TrackedFrame> tracked;
  for (std::size_t i = 1; i < frames.size(); ++i)
    tracked.push_back({match_features(f0, describe_image(model, frames[i], topk), matcher), truths[i - 1]});
  return tracking_error(points, tracked, static_cast<double>(frames[0].height));
}

}  // namespace ride
