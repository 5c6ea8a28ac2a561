#include "ride/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ride/matching.hpp"

namespace ride {

Tensor gather_pixels(const Tensor& maps, std::int64_t batch_index, std::span<const std::int64_t> pixels) {
  if (maps.rank() < 3) throw ShapeError("pixel gather needs maps [B, ..., H, W]");
  const auto& s = maps.shape();
  const std::int64_t hw = s[s.size() - 2] * s[s.size() - 1];
  const std::int64_t m = maps.numel() / (s[0] * hw);
  Tensor one = reshape(slice(maps, 0, batch_index, 1), {m, hw});
  return transpose(index_select(one, 1, pixels));
}

Tensor orientation_loss(const Tensor& va, const Tensor& vb, int gt_orientation_index) {
  if (va.rank() != 2 || va.shape() != vb.shape()) throw ShapeError("histograms must be matching [N, G]");
  if (va.dim(0) == 0) throw ContractError("orientation loss needs at least one correspondence");
  const Tensor pa = softmax(va, 1);
  const Tensor pb = cyclic_shift(softmax(vb, 1), 1, -gt_orientation_index);
  const double norm = static_cast<double>(va.dim(0) * va.dim(1));
  return mul_scalar(sum(mul(pa, log(clamp_min(pb, kLogFloor)))), -1.0 / norm);
}

Tensor dual_softmax(const Tensor& scores, double temperature) {
  if (!(temperature > 0.0)) throw ContractError("temperature must be positive");
  if (scores.rank() != 2) throw ShapeError("score matrix must be 2-D");
  const Tensor s = mul_scalar(scores, 1.0 / temperature);
  return mul(softmax(s, 1), softmax(s, 0));
}

namespace {

void check_pair_sets(const Tensor& da, const Tensor& db) {
  if (da.rank() != 2 || da.shape() != db.shape()) throw ShapeError("descriptor sets must be matching [N, D]");
  if (da.dim(0) == 0) throw ContractError("description loss needs at least one correspondence");
}

}  // namespace

Tensor description_loss(const Tensor& da, const Tensor& db, double temperature) {
  check_pair_sets(da, db);
  const auto n = da.dim(0);
  const Tensor p = dual_softmax(matmul(da, transpose(db)), temperature);
  std::vector<std::int64_t> diag(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < n; ++k) diag[static_cast<std::size_t>(k)] = k * n + k;
  return neg(mean(log(clamp_min(gather_flat(p, diag), kLogFloor))));
}

Tensor description_loss_blockwise(const Tensor& da, const Tensor& db, double temperature, std::int64_t block) {
  check_pair_sets(da, db);
  if (!(temperature > 0.0)) throw ContractError("temperature must be positive");
  if (block < 1) throw ContractError("block size must be positive");
  const auto n = da.dim(0);
  const double inv_t = 1.0 / temperature;
  auto lse_blocks = [&](const Tensor& rows, const Tensor& cols) {
    std::vector<Tensor> parts;
    const Tensor cols_t = transpose(cols);
    for (std::int64_t start = 0; start < n; start += block) {
      const auto len = std::min(block, n - start);
      parts.push_back(logsumexp(mul_scalar(matmul(slice(rows, 0, start, len), cols_t), inv_t), 1));
    }
    return parts.size() == 1 ? parts.front() : concat(parts, 0);
  };
  const Tensor diag = mul_scalar(sum(mul(da, db), 1), 2.0 * inv_t);
  const Tensor log_p = sub(sub(diag, lse_blocks(da, db)), lse_blocks(db, da));
  return neg(mean(clamp_min(log_p, std::log(kLogFloor))));
}

std::vector<std::int64_t> mutual_pairs(const Tensor& da, const Tensor& db) {
  const auto matches = match_mnn(to_descriptor_matrix(da), to_descriptor_matrix(db));
  std::vector<std::int64_t> out;
  for (const auto& m : matches)
    if (m.a == m.b) out.push_back(m.a);
  return out;
}

KeypointLabels keypoint_labels(const Tensor& da, const Tensor& db, std::span<const Correspondence> pairs,
                               std::int64_t grid_a_pixels, std::int64_t grid_b_pixels) {
  if (static_cast<std::int64_t>(pairs.size()) != da.dim(0) || da.dim(0) != db.dim(0))
    throw ShapeError("one descriptor row per correspondence is required");
  KeypointLabels labels{std::vector<float>(static_cast<std::size_t>(grid_a_pixels), 0.0f),
                        std::vector<float>(static_cast<std::size_t>(grid_b_pixels), 0.0f)};
  for (auto k : mutual_pairs(da, db)) {
    labels.a[static_cast<std::size_t>(pairs[static_cast<std::size_t>(k)].a)] = 1.0f;
    labels.b[static_cast<std::size_t>(pairs[static_cast<std::size_t>(k)].b)] = 1.0f;
  }
  return labels;
}

namespace {

Tensor bce_mean(const Tensor& k, std::span<const float> labels) {
  if (static_cast<std::int64_t>(labels.size()) != k.numel()) throw ShapeError("label count does not match map");
  Tensor y = Tensor::from_data(k.shape(), std::vector<float>(labels.begin(), labels.end()));
  if (k.dtype() != DType::f32) y = y.to(k.dtype());
  const Tensor one_minus_y = add_scalar(neg(y), 1.0);
  const Tensor pos = mul(y, log(clamp_min(k, kLogFloor)));
  const Tensor negative = mul(one_minus_y, log(clamp_min(add_scalar(neg(k), 1.0), kLogFloor)));
  return neg(mean(add(pos, negative)));
}

}  // namespace

Tensor keypoint_loss(const Tensor& ka, const Tensor& kb, std::span<const float> labels_a,
                     std::span<const float> labels_b) {
  return add(bce_mean(ka, labels_a), bce_mean(kb, labels_b));
}

LossBreakdown total_loss(const Tensor& l_orientation, const Tensor& l_description, const Tensor& l_keypoint,
                         double lambda_o) {
  LossBreakdown out{l_orientation, l_description, l_keypoint, {}, lambda_o};
  out.total = add(add(mul_scalar(l_orientation, lambda_o), l_description), l_keypoint);
  return out;
}

LossBreakdown pair_loss(const RideOutput& out, std::int64_t index_a, std::int64_t index_b,
                        const CorrespondenceSet& corr, const LossOptions& options, Rng& rng,
                        KeypointLabels* labels_used) {
  if (corr.empty()) throw ContractError("pair has no correspondences");
  std::vector<Correspondence> pairs = corr.pairs;
  if (options.max_correspondences > 0 && static_cast<std::int64_t>(pairs.size()) > options.max_correspondences) {
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    const auto keep = static_cast<std::size_t>(options.max_correspondences);
    for (std::size_t i = 0; i < keep; ++i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                              static_cast<std::int64_t>(order.size()) - 1));
      std::swap(order[i], order[j]);
    }
    order.resize(keep);
    std::sort(order.begin(), order.end());
    std::vector<Correspondence> kept;
    kept.reserve(keep);
    for (auto i : order) kept.push_back(pairs[i]);
    pairs = std::move(kept);
  }

  const auto n = static_cast<std::int64_t>(pairs.size());
  std::vector<std::int64_t> pix_a, pix_b;
  pix_a.reserve(pairs.size());
  pix_b.reserve(pairs.size());
  for (const auto& p : pairs) {
    pix_a.push_back(p.a);
    pix_b.push_back(p.b);
  }
  const std::int64_t c = out.descriptor.channels(), g = out.descriptor.group.order();
  const Tensor fa = gather_pixels(out.descriptor.values, index_a, pix_a);
  const Tensor fb = gather_pixels(out.descriptor.values, index_b, pix_b);

  const Tensor l_o = orientation_loss(slice(fa, 1, 0, g), slice(fb, 1, 0, g), corr.gt_orientation_index);

  const Tensor da = l2_normalize(fa, 1);
  const Tensor aligned_b = reshape(cyclic_shift(reshape(fb, {n, c, g}), 2, -corr.gt_orientation_index), {n, c * g});
  const Tensor db = l2_normalize(aligned_b, 1);
  const Tensor l_d = options.block_size > 0
                         ? description_loss_blockwise(da, db, options.temperature, options.block_size)
                         : description_loss(da, db, options.temperature);

  KeypointLabels labels;
  if (options.fixed_labels != nullptr) {
    labels = *options.fixed_labels;
  } else {
    NoGradGuard guard;
    labels = keypoint_labels(da.detach(), db.detach(), pairs, corr.grid_a_height * corr.grid_a_width,
                             corr.grid_b_height * corr.grid_b_width);
  }
  if (labels_used != nullptr) *labels_used = labels;
  const Tensor ka = slice(out.keypoints, 0, index_a, 1);
  const Tensor kb = slice(out.keypoints, 0, index_b, 1);
  const Tensor l_k = keypoint_loss(ka, kb, labels.a, labels.b);
  return total_loss(l_o, l_d, l_k, options.lambda_o);
}

}  // namespace ride
