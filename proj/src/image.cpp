#include "ride/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include <Eigen/LU>

namespace ride {

Image::Image(std::int64_t h, std::int64_t w, float value)
    : height(h), width(w), pixels(static_cast<std::size_t>(h * w), value) {}

Tensor Image::to_tensor(DType dtype) const {
  Tensor t = Tensor::from_data({1, 1, height, width}, pixels);
  return dtype == DType::f32 ? t : t.to(dtype);
}

Image Image::crop(std::int64_t top, std::int64_t left, std::int64_t h, std::int64_t w) const {
  if (top < 0 || left < 0 || top + h > height || left + w > width)
    throw ShapeError("crop window outside the image");
  Image out(h, w);
  for (std::int64_t r = 0; r < h; ++r)
    std::copy_n(pixels.begin() + (top + r) * width + left, w, out.pixels.begin() + r * w);
  return out;
}

Image downsample(const Image& image, int factor) {
  if (factor < 1) throw ContractError("downsampling factor must be positive");
  Image out(image.height / factor, image.width / factor);
  const float inv = 1.0f / static_cast<float>(factor * factor);
  for (std::int64_t r = 0; r < out.height; ++r) {
    for (std::int64_t c = 0; c < out.width; ++c) {
      float acc = 0.0f;
      for (int i = 0; i < factor; ++i)
        for (int j = 0; j < factor; ++j) acc += image.at(r * factor + i, c * factor + j);
      out.at(r, c) = acc * inv;
    }
  }
  return out;
}

Tensor images_to_batch(const std::vector<const Image*>& images, DType dtype) {
  if (images.empty()) throw ContractError("empty image batch");
  const auto h = images[0]->height, w = images[0]->width;
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(images.size()) * static_cast<std::size_t>(h * w));
  for (const Image* im : images) {
    if (im->height != h || im->width != w) throw ShapeError("images in a batch must share a size");
    data.insert(data.end(), im->pixels.begin(), im->pixels.end());
  }
  Tensor t = Tensor::from_data({static_cast<std::int64_t>(images.size()), 1, h, w}, std::move(data));
  return dtype == DType::f32 ? t : t.to(dtype);
}

float sample_bilinear(const Image& image, double x, double y, float fill) {
  if (!(x >= 0.0 && y >= 0.0 && x <= static_cast<double>(image.width) &&
        y <= static_cast<double>(image.height)))
    return fill;
  const double u = x - 0.5, v = y - 0.5;
  const double fu = std::floor(u), fv = std::floor(v);
  const double a = u - fu, b = v - fv;
  auto clampi = [](std::int64_t i, std::int64_t n) { return std::clamp<std::int64_t>(i, 0, n - 1); };
  const auto c0 = clampi(static_cast<std::int64_t>(fu), image.width);
  const auto c1 = clampi(static_cast<std::int64_t>(fu) + 1, image.width);
  const auto r0 = clampi(static_cast<std::int64_t>(fv), image.height);
  const auto r1 = clampi(static_cast<std::int64_t>(fv) + 1, image.height);
  if (a == 0.0 && b == 0.0) return image.at(r0, c0);
  const double top = (1.0 - a) * image.at(r0, c0) + a * image.at(r0, c1);
  const double bottom = (1.0 - a) * image.at(r1, c0) + a * image.at(r1, c1);
  return static_cast<float>((1.0 - b) * top + b * bottom);
}

Image warp_image(const Image& source, const Eigen::Matrix3d& homography, std::int64_t out_h,
                 std::int64_t out_w, float fill) {
  const Eigen::Matrix3d inv = homography.inverse();
  Image out(out_h, out_w);
#pragma omp parallel for if (out_h * out_w > 65536)
  for (std::int64_t r = 0; r < out_h; ++r) {
    for (std::int64_t c = 0; c < out_w; ++c) {
      const Eigen::Vector3d p = inv * Eigen::Vector3d(c + 0.5, r + 0.5, 1.0);
      if (p.z() <= 0.0) {
        out.at(r, c) = fill;
        continue;
      }
      out.at(r, c) = sample_bilinear(source, p.x() / p.z(), p.y() / p.z(), fill);
    }
  }
  return out;
}

namespace {

Image read_pgm(std::istream& in, const std::filesystem::path& path) {
  std::string magic;
  in >> magic;
  if (magic != "P5") throw IoError(path.string() + ": only binary PGM (P5) is supported");
  auto next_int = [&]() {
    int v = 0;
    while (true) {
      in >> std::ws;
      if (in.peek() == '#') {
        std::string comment;
        std::getline(in, comment);
        continue;
      }
      if (!(in >> v)) throw IoError(path.string() + ": malformed PGM header");
      return v;
    }
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  in.get();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw IoError(path.string() + ": unsupported PGM dimensions or depth");
  Image img(h, w);
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw IoError(path.string() + ": truncated PGM data");
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = static_cast<float>(raw[i]) / static_cast<float>(maxval);
  return img;
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw IoError(path.string() + ": " + png.message);
  png.format = PNG_FORMAT_GRAY;
  std::vector<unsigned char> raw(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, raw.data(), 0, nullptr)) {
    png_image_free(&png);
    throw IoError(path.string() + ": " + png.message);
  }
  Image img(png.height, png.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
  return img;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  const int first = in.peek();
  if (first == 'P') return read_pgm(in, path);
  if (first == 0x89) return read_png(path);
  throw IoError(path.string() + ": unrecognized image format");
}

void write_pgm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> raw(image.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    raw[i] = static_cast<unsigned char>(std::lround(std::clamp(image.pixels[i], 0.0f, 1.0f) * 255.0f));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw IoError(dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".pgm" || ext == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace ride
