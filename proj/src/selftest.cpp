#include "ride/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ride/evaluation.hpp"
#include "ride/losses.hpp"
#include "ride/selfsup.hpp"

namespace ride {

namespace {

Image rot90_image(const Image& img) {
  const Tensor r = rot90(img.to_tensor(), 1);
  Image out(r.dim(2), r.dim(3));
  const auto v = r.data<float>();
  std::copy(v.begin(), v.end(), out.pixels.begin());
  return out;
}

double dot_rows(const DescriptorMatrix& a, const DescriptorMatrix& b, Eigen::Index i) {
  return static_cast<double>(a.row(i).dot(b.row(i)));
}

std::string fmt(const char* pattern, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

}  // namespace

C4Report measure_c4_invariance(RideModel& model, const Image& image) {
  if (image.height != image.width) throw ContractError("C4 check needs a square image");
  const int g = model.group().order();
  if (g % 4 != 0) throw ContractError("C4 check needs a group order divisible by 4");
  NoGradGuard guard;
  const RideOutput a = model.forward(image.to_tensor(model.dtype()), true);
  const RideOutput b = model.forward(rot90_image(image).to_tensor(model.dtype()), true);

  C4Report report;
  const auto expected = rot90(a.keypoints, 1).to_vector();
  const auto actual = b.keypoints.to_vector();
  for (std::size_t i = 0; i < expected.size(); ++i)
    report.max_keypoint_diff = std::max(report.max_keypoint_diff, std::abs(expected[i] - actual[i]));

  const auto h = a.keypoints.dim(1), w = a.keypoints.dim(2);
  const auto orient = estimate_orientation(a.orientation);
  std::vector<std::int64_t> pix_a, pix_b;
  std::vector<int> o_a, o_b;
  for (std::int64_t r = 0; r < h; ++r) {
    for (std::int64_t c = 0; c < w; ++c) {
      pix_a.push_back(r * w + c);
      pix_b.push_back((w - 1 - c) * w + r);
      const int o = orient[static_cast<std::size_t>(r * w + c)];
      o_a.push_back(o);
      o_b.push_back(o + g / 4);
    }
  }
  const DescriptorMatrix da = sample_descriptors(a.descriptor, 0, pix_a, o_a);
  const DescriptorMatrix db = sample_descriptors(b.descriptor, 0, pix_b, o_b);
  for (Eigen::Index i = 0; i < da.rows(); ++i) report.min_cosine = std::min(report.min_cosine, dot_rows(da, db, i));
  return report;
}

double measure_step_rotation_cosine(RideModel& model, const Image& image, double central_fraction) {
  NoGradGuard guard;
  const int g = model.group().order();
  const double step = 360.0 / g;
  const Homography hom = Homography::rotation(step, static_cast<double>(image.width) / 2.0,
                                              static_cast<double>(image.height) / 2.0);
  const RideOutput a = model.forward(image.to_tensor(model.dtype()), true);
  const RideOutput b = model.forward(warp_image(image, hom).to_tensor(model.dtype()), true);

  const auto h = a.keypoints.dim(1), w = a.keypoints.dim(2);
  const std::int64_t c_d = a.descriptor.channels();
  const double crop = model.config().crop_per_side();
  const auto orient = estimate_orientation(a.orientation);
  const std::vector<double> fb = b.descriptor.values.to_vector();
  const std::int64_t hw = h * w;

  std::vector<std::int64_t> pix;
  std::vector<int> o_a;
  std::vector<Eigen::Vector2d> mapped;
  const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double radius = central_fraction * 0.5 * static_cast<double>(std::min(h, w));
  for (std::int64_t r = 0; r < h; ++r) {
    for (std::int64_t c = 0; c < w; ++c) {
      if (std::hypot(static_cast<double>(r) - cy, static_cast<double>(c) - cx) > radius) continue;
      const Eigen::Vector2d q = hom.apply(static_cast<double>(c) + crop + 0.5, static_cast<double>(r) + crop + 0.5);
      const double u = q.x() - crop - 0.5, v = q.y() - crop - 0.5;
      if (u < 0 || v < 0 || u > static_cast<double>(w - 1) || v > static_cast<double>(h - 1)) continue;
      pix.push_back(r * w + c);
      o_a.push_back(orient[static_cast<std::size_t>(r * w + c)]);
      mapped.emplace_back(u, v);
    }
  }
  if (pix.empty()) throw ContractError("no central pixels to compare");
  const DescriptorMatrix da = sample_descriptors(a.descriptor, 0, pix, o_a);

  std::vector<double> cosines;
  std::vector<double> desc(static_cast<std::size_t>(c_d * g));
  for (std::size_t i = 0; i < pix.size(); ++i) {
    const double u = mapped[i].x(), v = mapped[i].y();
    const auto c0 = std::min<std::int64_t>(static_cast<std::int64_t>(u), w - 2);
    const auto r0 = std::min<std::int64_t>(static_cast<std::int64_t>(v), h - 2);
    const double fu = u - static_cast<double>(c0), fv = v - static_cast<double>(r0);
    const int o = (o_a[i] + 1) % g;
    double norm = 0.0;
    for (std::int64_t ch = 0; ch < c_d; ++ch) {
      for (std::int64_t k = 0; k < g; ++k) {
        const auto base = (ch * g + (k + o) % g) * hw;
        auto at = [&](std::int64_t rr, std::int64_t cc) { return fb[static_cast<std::size_t>(base + rr * w + cc)]; };
        const double x = (1 - fv) * ((1 - fu) * at(r0, c0) + fu * at(r0, c0 + 1)) +
                         fv * ((1 - fu) * at(r0 + 1, c0) + fu * at(r0 + 1, c0 + 1));
        desc[static_cast<std::size_t>(ch * g + k)] = x;
        norm += x * x;
      }
    }
    norm = std::sqrt(norm);
    double dot = 0.0;
    for (std::size_t k = 0; k < desc.size(); ++k)
      dot += static_cast<double>(da(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))) * desc[k];
    cosines.push_back(norm > 0.0 ? dot / norm : 0.0);
  }
  std::nth_element(cosines.begin(), cosines.begin() + static_cast<std::ptrdiff_t>(cosines.size() / 2), cosines.end());
  return cosines[cosines.size() / 2];
}

GradCheckResult toy_loss_gradcheck(std::uint64_t seed, const GradCheckOptions& options) {
  const Rng root(seed);
  Rng model_rng = root.substream("model");
  RideModel model(RideConfig::toy(), model_rng, DType::f64);
  Rng image_rng = root.substream("image");
  const Image source = synth_texture(image_rng, 182);
  const Eigen::Matrix3d to_46 = Eigen::Vector3d(46.0 / 182.0, 46.0 / 182.0, 1.0).asDiagonal();
  const Image image = warp_image(source, to_46, 46, 46);
  Rng pair_rng = root.substream("pair");
  const TrainingPair pair = make_training_pair(image, pair_rng, HomographyRanges{}, PhotometricRanges{},
                                               model.config().crop_per_side(), model.group());
  const Tensor batch = images_to_batch({&pair.image_a, &pair.image_b}, DType::f64);

  LossOptions loss_options;
  loss_options.max_correspondences = 0;
  KeypointLabels labels;
  {
    Rng unused(0);
    const RideOutput out = model.forward(batch, true);
    pair_loss(out, 0, 1, pair.correspondences, loss_options, unused, &labels);
  }
  loss_options.fixed_labels = &labels;
  auto loss_fn = [&]() {
    Rng unused(0);
    const RideOutput out = model.forward(batch, true);
    return pair_loss(out, 0, 1, pair.correspondences, loss_options, unused).total;
  };
  return gradcheck(loss_fn, model.parameters(), options);
}

std::vector<SelfTestResult> run_selftest(std::uint64_t seed) {
  std::vector<SelfTestResult> results;
  const Rng root(seed);
  auto record = [&](std::string name, bool ok, std::string detail) {
    results.push_back({std::move(name), ok, std::move(detail)});
  };

  {
    // Rotating by 45 then 90 degrees equals rotating by 135 degrees directly.
    Rng rng = root.substream("kernel");
    std::vector<double> v(25);
    for (auto& x : v) x = rng.uniform(-1, 1);
    const Tensor base = Tensor::from_data({5, 5}, v);
    const CyclicGroup g8(8);
    const auto two = rotate_kernel(rotate_kernel(base, 1, g8), 2, g8).to_vector();
    const auto direct = rotate_kernel(base, 3, g8).to_vector();
    double diff = 0;
    for (std::size_t i = 0; i < two.size(); ++i) diff = std::max(diff, std::abs(two[i] - direct[i]));
    record("kernel-rotation-composition", diff < 1e-6, fmt("max diff %.3e", diff));
  }
  {
    Rng rng = root.substream("shift");
    std::vector<float> v(2 * 3 * 8 * 4 * 4);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    const GroupFeatureMap x(Tensor::from_data({2, 3, 8, 4, 4}, v), CyclicGroup(8));
    bool inverse = true, action = true, pool = true;
    const auto pooled = group_pool(x).to_vector();
    for (int s = -9; s <= 9; ++s) {
      inverse = inverse && cyclic_shift(cyclic_shift(x, s), -s).values.to_vector() == x.values.to_vector();
      action = action && cyclic_shift(cyclic_shift(x, s), 3).values.to_vector() == cyclic_shift(x, s + 3).values.to_vector();
      pool = pool && group_pool(cyclic_shift(x, s)).to_vector() == pooled;
    }
    record("cyclic-shift-inverse", inverse, "bit-exact over shifts -9..9");
    record("cyclic-shift-group-action", action, "bit-exact over shifts -9..9");
    record("group-pool-shift-invariance", pool, "bit-exact over shifts -9..9");
  }

  Rng model_rng = root.substream("model");
  RideModel model(RideConfig::desk(), model_rng);
  {
    Rng rng = root.substream("c4-image");
    const Image img = synth_texture(rng, 2 * model.config().crop_total() + 8);
    const C4Report rep = measure_c4_invariance(model, img);
    record("c4-keypoint-map", rep.max_keypoint_diff < 1e-4, fmt("max diff %.3e", rep.max_keypoint_diff));
    record("c4-aligned-descriptors", rep.min_cosine > 0.9999, fmt("min cosine %.6f", rep.min_cosine));
  }
  {
    Rng rng = root.substream("c8-image");
    const Image img = smooth_disk_texture(rng, 2 * model.config().crop_total() + 24);
    const double med = measure_step_rotation_cosine(model, img);
    record("c8-aligned-descriptors", med > 0.98, fmt("median cosine %.4f", med));
  }
  {
    NoGradGuard guard;
    Rng rng = root.substream("invariance");
    const Image img = synth_texture(rng, model.config().crop_total() + 24);
    const RideOutput out = model.forward(img.to_tensor(), true);
    const auto orient = estimate_orientation(out.orientation);
    std::vector<int> zeros(orient.size(), 0), shifted(orient.size(), 3);
    const auto d0 = invariant_descriptors(out.descriptor, zeros).to_vector();
    const auto d3 = invariant_descriptors(cyclic_shift(out.descriptor, 3), shifted).to_vector();
    record("descriptor-shift-cancellation", d0 == d3, "bit-exact");

    const auto d = invariant_descriptors(out.descriptor, orient);
    const auto norms = sum(mul(d, d), 1).to_vector();
    double worst = 0.0;
    for (double n : norms) worst = std::max(worst, std::abs(std::sqrt(n) - 1.0));
    record("descriptor-unit-norm", worst < 1e-5, fmt("max |norm-1| %.3e", worst));

    const auto hist = sum(softmax(out.orientation, 1), 1).to_vector();
    double hworst = 0.0;
    for (double s : hist) hworst = std::max(hworst, std::abs(s - 1.0));
    record("orientation-histogram-normalized", hworst < 1e-5, fmt("max |sum-1| %.3e", hworst));

    const auto k = out.keypoints.to_vector();
    const bool open_unit = std::all_of(k.begin(), k.end(), [](double x) { return x > 0.0 && x < 1.0; });
    record("keypoint-scores-in-open-unit-interval", open_unit, "");
  }
  return results;
}

}  // namespace ride
