#include "ride/selfsup.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/LU>

namespace ride {

namespace {

// cos/sin that are exact at multiples of 90 degrees.
std::pair<double, double> cos_sin_degrees(double degrees) {
  const double quarter = degrees / 90.0;
  if (quarter == std::round(quarter)) {
    const int q = ((static_cast<int>(std::lround(quarter)) % 4) + 4) % 4;
    constexpr double c[] = {1, 0, -1, 0};
    constexpr double s[] = {0, 1, 0, -1};
    return {c[q], s[q]};
  }
  const double r = degrees * std::numbers::pi / 180.0;
  return {std::cos(r), std::sin(r)};
}

}  // namespace

Homography Homography::compose(double rotation_degrees, double scale, double tx, double ty, double px,
                               double py, double cx, double cy) {
  Homography h;
  h.rotation_degrees = rotation_degrees;
  h.scale = scale;
  h.tx = tx;
  h.ty = ty;
  h.px = px;
  h.py = py;
  h.cx = cx;
  h.cy = cy;
  h.matrix = h.recompose();
  return h;
}

Homography Homography::rotation(double degrees, double cx, double cy) {
  return compose(degrees, 1.0, 0.0, 0.0, 0.0, 0.0, cx, cy);
}

Eigen::Matrix3d Homography::recompose() const {
  const auto [c, s] = cos_sin_degrees(rotation_degrees);
  Eigen::Matrix3d to_center = Eigen::Matrix3d::Identity();
  to_center(0, 2) = cx;
  to_center(1, 2) = cy;
  Eigen::Matrix3d from_center = Eigen::Matrix3d::Identity();
  from_center(0, 2) = -cx;
  from_center(1, 2) = -cy;
  Eigen::Matrix3d translate = Eigen::Matrix3d::Identity();
  translate(0, 2) = tx;
  translate(1, 2) = ty;
  // y points down, so an on-screen counter-clockwise turn is x' = c x + s y, y' = -s x + c y.
  Eigen::Matrix3d rotate;
  rotate << c, s, 0, -s, c, 0, 0, 0, 1;
  Eigen::Matrix3d scaling = Eigen::Matrix3d::Identity();
  scaling(0, 0) = scale;
  scaling(1, 1) = scale;
  Eigen::Matrix3d perspective = Eigen::Matrix3d::Identity();
  perspective(2, 0) = px;
  perspective(2, 1) = py;
  Eigen::Matrix3d m = to_center * translate * rotate * scaling * perspective * from_center;
  return m / m(2, 2);
}

Eigen::Vector2d Homography::apply(double x, double y) const {
  const Eigen::Vector3d p = matrix * Eigen::Vector3d(x, y, 1.0);
  return {p.x() / p.z(), p.y() / p.z()};
}

Homography sample_homography(Rng& rng, const HomographyRanges& ranges, std::int64_t height,
                             std::int64_t width) {
  const double cx = static_cast<double>(width) / 2.0, cy = static_cast<double>(height) / 2.0;
  while (true) {
    const double rot = rng.uniform(-ranges.rotation_degrees, ranges.rotation_degrees);
    const double scale = std::exp(rng.uniform(std::log(ranges.scale_min), std::log(ranges.scale_max)));
    const double tx = rng.uniform(-ranges.translation_fraction, ranges.translation_fraction) * static_cast<double>(width);
    const double ty = rng.uniform(-ranges.translation_fraction, ranges.translation_fraction) * static_cast<double>(height);
    const double px = rng.uniform(-ranges.perspective, ranges.perspective);
    const double py = rng.uniform(-ranges.perspective, ranges.perspective);
    Homography h = Homography::compose(rot, scale, tx, ty, px, py, cx, cy);
    if (std::abs(h.matrix.determinant()) > 1e-8) return h;
  }
}

Image warp_image(const Image& image, const Homography& h) {
  return warp_image(image, h.matrix, image.height, image.width, 0.5f);
}

Image rotate_image(const Image& image, double degrees) {
  const auto h = Homography::rotation(degrees, static_cast<double>(image.width) / 2.0,
                                      static_cast<double>(image.height) / 2.0);
  return warp_image(image, h);
}

CorrespondenceSet compute_correspondences(const Homography& h, std::int64_t height_a, std::int64_t width_a,
                                          std::int64_t height_b, std::int64_t width_b, std::int64_t crop,
                                          const CyclicGroup& group) {
  CorrespondenceSet out;
  out.homography = h;
  out.gt_orientation_index = group.nearest_index(h.rotation_degrees);
  out.grid_a_height = std::max<std::int64_t>(height_a - 2 * crop, 0);
  out.grid_a_width = std::max<std::int64_t>(width_a - 2 * crop, 0);
  out.grid_b_height = std::max<std::int64_t>(height_b - 2 * crop, 0);
  out.grid_b_width = std::max<std::int64_t>(width_b - 2 * crop, 0);

  const std::int64_t nb = out.grid_b_height * out.grid_b_width;
  std::vector<int> hits(static_cast<std::size_t>(nb), 0);
  std::vector<Correspondence> candidates;
  candidates.reserve(static_cast<std::size_t>(out.grid_a_height * out.grid_a_width));
  for (std::int64_t r = 0; r < out.grid_a_height; ++r) {
    for (std::int64_t c = 0; c < out.grid_a_width; ++c) {
      const Eigen::Vector2d p = h.apply(static_cast<double>(c + crop) + 0.5, static_cast<double>(r + crop) + 0.5);
      if (!std::isfinite(p.x()) || !std::isfinite(p.y())) continue;
      const double gx = std::floor(p.x() - static_cast<double>(crop));
      const double gy = std::floor(p.y() - static_cast<double>(crop));
      if (gx < 0 || gy < 0 || gx >= static_cast<double>(out.grid_b_width) ||
          gy >= static_cast<double>(out.grid_b_height))
        continue;
      const auto ib = static_cast<std::int64_t>(gy) * out.grid_b_width + static_cast<std::int64_t>(gx);
      ++hits[static_cast<std::size_t>(ib)];
      candidates.push_back({r * out.grid_a_width + c, ib});
    }
  }
  for (const auto& p : candidates)
    if (hits[static_cast<std::size_t>(p.b)] == 1) out.pairs.push_back(p);
  return out;
}

Image apply_photometric(const Image& image, const PhotometricParams& params, Rng& rng) {
  Image out = image;
  for (auto& v : out.pixels) {
    double x = v;
    if (params.gamma != 1.0) x = std::pow(std::max(x, 0.0), params.gamma);
    if (params.contrast != 1.0) x = (x - 0.5) * params.contrast + 0.5;
    if (params.brightness != 0.0) x += params.brightness;
    if (params.noise_sigma > 0.0) x += rng.normal(0.0, params.noise_sigma);
    v = static_cast<float>(std::clamp(x, 0.0, 1.0));
  }
  return out;
}

Image photometric_augment(const Image& image, Rng& rng, const PhotometricRanges& ranges) {
  PhotometricParams p;
  p.gamma = rng.uniform(ranges.gamma_min, ranges.gamma_max);
  p.contrast = rng.uniform(ranges.contrast_min, ranges.contrast_max);
  p.brightness = rng.uniform(-ranges.brightness, ranges.brightness);
  p.noise_sigma = ranges.noise_sigma;
  return apply_photometric(image, p, rng);
}

TrainingPair make_training_pair(const Image& image, Rng& rng, const HomographyRanges& geometry,
                                const PhotometricRanges& photometric, std::int64_t crop,
                                const CyclicGroup& group) {
  TrainingPair pair;
  const Homography h = sample_homography(rng, geometry, image.height, image.width);
  pair.image_a = photometric_augment(image, rng, photometric);
  pair.image_b = photometric_augment(warp_image(image, h), rng, photometric);
  pair.correspondences =
      compute_correspondences(h, image.height, image.width, image.height, image.width, crop, group);
  return pair;
}

namespace {

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// One octave of value noise: random lattice values every `spacing` pixels.
void add_value_noise(Image& img, Rng& rng, double spacing, double amplitude) {
  const auto cells_y = static_cast<std::int64_t>(std::ceil(static_cast<double>(img.height) / spacing)) + 2;
  const auto cells_x = static_cast<std::int64_t>(std::ceil(static_cast<double>(img.width) / spacing)) + 2;
  std::vector<double> lattice(static_cast<std::size_t>(cells_y * cells_x));
  for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
  const double ox = rng.uniform(0.0, spacing), oy = rng.uniform(0.0, spacing);
  for (std::int64_t r = 0; r < img.height; ++r) {
    const double fy = (static_cast<double>(r) + oy) / spacing;
    const auto iy = static_cast<std::int64_t>(fy);
    const double ty = smoothstep(fy - static_cast<double>(iy));
    for (std::int64_t c = 0; c < img.width; ++c) {
      const double fx = (static_cast<double>(c) + ox) / spacing;
      const auto ix = static_cast<std::int64_t>(fx);
      const double tx = smoothstep(fx - static_cast<double>(ix));
      auto L = [&](std::int64_t y, std::int64_t x) { return lattice[static_cast<std::size_t>(y * cells_x + x)]; };
      const double top = (1 - tx) * L(iy, ix) + tx * L(iy, ix + 1);
      const double bottom = (1 - tx) * L(iy + 1, ix) + tx * L(iy + 1, ix + 1);
      img.at(r, c) += static_cast<float>(amplitude * ((1 - ty) * top + ty * bottom));
    }
  }
}

void normalize_range(Image& img, float lo, float hi) {
  const auto [mn, mx] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  const float a = *mn, b = *mx;
  const float span = b - a > 1e-12f ? b - a : 1.0f;
  for (auto& v : img.pixels) v = lo + (hi - lo) * (v - a) / span;
}

}  // namespace

Image synth_texture(Rng& rng, std::int64_t size) {
  Image img(size, size, 0.0f);
  const double s = static_cast<double>(size);
  add_value_noise(img, rng, 32.0, 1.0);
  add_value_noise(img, rng, 12.0, 0.6);
  add_value_noise(img, rng, 5.0, 0.3);

  const int blobs = 10 + static_cast<int>(s * s / 1500.0);
  for (int i = 0; i < blobs; ++i) {
    const double bx = rng.uniform(0.0, s), by = rng.uniform(0.0, s);
    const double sigma = rng.uniform(2.0, 8.0);
    const double amp = rng.uniform(0.6, 1.4) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    const double aspect = rng.uniform(0.5, 1.0);
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double ct = std::cos(theta), st = std::sin(theta);
    const auto r0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(by - 4 * sigma));
    const auto r1 = std::min<std::int64_t>(size, static_cast<std::int64_t>(by + 4 * sigma) + 1);
    const auto c0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(bx - 4 * sigma));
    const auto c1 = std::min<std::int64_t>(size, static_cast<std::int64_t>(bx + 4 * sigma) + 1);
    for (std::int64_t r = r0; r < r1; ++r) {
      for (std::int64_t c = c0; c < c1; ++c) {
        const double dx = static_cast<double>(c) + 0.5 - bx, dy = static_cast<double>(r) + 0.5 - by;
        const double u = ct * dx + st * dy, v = (-st * dx + ct * dy) / aspect;
        img.at(r, c) += static_cast<float>(amp * std::exp(-(u * u + v * v) / (2 * sigma * sigma)));
      }
    }
  }

  const int edges = 3 + static_cast<int>(s / 60.0);
  for (int i = 0; i < edges; ++i) {
    const double ex = rng.uniform(0.0, s), ey = rng.uniform(0.0, s);
    const double theta = rng.uniform(0.0, 2 * std::numbers::pi);
    const double nx = std::cos(theta), ny = std::sin(theta);
    const double amp = rng.uniform(0.3, 0.7);
    const double width = rng.uniform(0.7, 2.0);
    const double reach = rng.uniform(0.2, 0.5) * s;
    for (std::int64_t r = 0; r < size; ++r) {
      for (std::int64_t c = 0; c < size; ++c) {
        const double dx = static_cast<double>(c) + 0.5 - ex, dy = static_cast<double>(r) + 0.5 - ey;
        const double d = nx * dx + ny * dy;
        const double along = -ny * dx + nx * dy;
        const double fade = std::exp(-(along * along) / (2 * reach * reach));
        img.at(r, c) += static_cast<float>(amp * fade * std::tanh(d / width));
      }
    }
  }
  normalize_range(img, 0.05f, 0.95f);
  return img;
}

std::vector<Image> synth_corpus(const Rng& rng, int n, std::int64_t size) {
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng local = rng.substream("texture-" + std::to_string(i));
    out.push_back(synth_texture(local, size));
  }
  return out;
}

Image disk_mask(const Image& image, double radius_fraction, double softness, float fill) {
  Image out = image;
  const double cx = static_cast<double>(image.width) / 2.0, cy = static_cast<double>(image.height) / 2.0;
  const double radius = radius_fraction * std::min(cx, cy);
  for (std::int64_t r = 0; r < image.height; ++r) {
    for (std::int64_t c = 0; c < image.width; ++c) {
      const double d = std::hypot(static_cast<double>(c) + 0.5 - cx, static_cast<double>(r) + 0.5 - cy);
      double w = 1.0;
      if (d >= radius) w = 0.0;
      else if (d > radius - softness) w = smoothstep((radius - d) / softness);
      out.at(r, c) = static_cast<float>(w * image.at(r, c) + (1.0 - w) * fill);
    }
  }
  return out;
}

Image smooth_disk_texture(Rng& rng, std::int64_t size) {
  Image img(size, size, 0.0f);
  add_value_noise(img, rng, 16.0, 1.0);
  add_value_noise(img, rng, 9.0, 0.5);
  normalize_range(img, 0.1f, 0.9f);
  return disk_mask(img, 0.95, 8.0, 0.5f);
}

}  // namespace ride
