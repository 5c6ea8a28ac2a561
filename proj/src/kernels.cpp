#include "ride/kernels.hpp"

#include <omp.h>

#include <Eigen/Core>
#include <algorithm>
#include <cstring>
#include <vector>

namespace ride::kernels {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Output rows handled per GEMM tile; keeps the column buffer near 4k columns.
std::int64_t tile_rows(const ConvDims& d) {
  const std::int64_t ow = d.out_width();
  const std::int64_t k = d.in_channels * d.ksize * d.ksize;
  std::int64_t rows = std::max<std::int64_t>(1, 4096 / std::max<std::int64_t>(ow, 1));
  while (rows > 1 && k * rows * ow > (std::int64_t{1} << 23)) rows /= 2;
  return std::min(rows, d.out_height());
}

template <typename T>
void im2col_rows(const ConvDims& d, const T* image, std::int64_t r0, std::int64_t rows, T* col) {
  const std::int64_t ow = d.out_width();
  const std::int64_t p = rows * ow;
  std::int64_t row_index = 0;
  for (std::int64_t ci = 0; ci < d.in_channels; ++ci) {
    const T* plane = image + ci * d.height * d.width;
    for (std::int64_t ky = 0; ky < d.ksize; ++ky) {
      for (std::int64_t kx = 0; kx < d.ksize; ++kx, ++row_index) {
        T* dst = col + row_index * p;
        for (std::int64_t r = 0; r < rows; ++r) {
          std::memcpy(dst + r * ow, plane + (r0 + r + ky) * d.width + kx, sizeof(T) * ow);
        }
      }
    }
  }
}

template <typename T>
void col2im_rows(const ConvDims& d, const T* col, std::int64_t r0, std::int64_t rows, T* image) {
  const std::int64_t ow = d.out_width();
  const std::int64_t p = rows * ow;
  std::int64_t row_index = 0;
  for (std::int64_t ci = 0; ci < d.in_channels; ++ci) {
    T* plane = image + ci * d.height * d.width;
    for (std::int64_t ky = 0; ky < d.ksize; ++ky) {
      for (std::int64_t kx = 0; kx < d.ksize; ++kx, ++row_index) {
        const T* src = col + row_index * p;
        for (std::int64_t r = 0; r < rows; ++r) {
          T* dst = plane + (r0 + r + ky) * d.width + kx;
          const T* s = src + r * ow;
#pragma omp simd
          for (std::int64_t c = 0; c < ow; ++c) dst[c] += s[c];
        }
      }
    }
  }
}

}  // namespace

int max_threads() { return omp_get_max_threads(); }

namespace omp {

template <typename T>
void conv2d_forward(const ConvDims& d, const T* input, const T* kernel, T* output) {
  const std::int64_t oh = d.out_height();
  const std::int64_t ow = d.out_width();
  const std::int64_t kdim = d.in_channels * d.ksize * d.ksize;
  const std::int64_t rows = tile_rows(d);
  const std::int64_t tiles = (oh + rows - 1) / rows;
  const std::int64_t jobs = d.batch * tiles;
  Eigen::Map<const RowMat<T>> w(kernel, d.out_channels, kdim);

#pragma omp parallel
  {
    std::vector<T> col(static_cast<std::size_t>(kdim * rows * ow));
#pragma omp for schedule(static)
    for (std::int64_t job = 0; job < jobs; ++job) {
      const std::int64_t b = job / tiles;
      const std::int64_t r0 = (job % tiles) * rows;
      const std::int64_t nr = std::min(rows, oh - r0);
      const std::int64_t p = nr * ow;
      im2col_rows(d, input + b * d.in_channels * d.height * d.width, r0, nr, col.data());
      Eigen::Map<const RowMat<T>> c(col.data(), kdim, p);
      StridedMap<T> out(output + b * d.out_channels * oh * ow + r0 * ow, d.out_channels, p,
                        Eigen::OuterStride<>(oh * ow));
      out.noalias() = w * c;
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvDims& d, const T* grad_output, const T* kernel, T* grad_input) {
  const std::int64_t oh = d.out_height();
  const std::int64_t ow = d.out_width();
  const std::int64_t kdim = d.in_channels * d.ksize * d.ksize;
  const std::int64_t rows = tile_rows(d);
  Eigen::Map<const RowMat<T>> w(kernel, d.out_channels, kdim);

  // Tiles of one image overlap in input rows, so images are the parallel unit.
#pragma omp parallel
  {
    std::vector<T> col(static_cast<std::size_t>(kdim * rows * ow));
#pragma omp for schedule(static)
    for (std::int64_t b = 0; b < d.batch; ++b) {
      for (std::int64_t r0 = 0; r0 < oh; r0 += rows) {
        const std::int64_t nr = std::min(rows, oh - r0);
        const std::int64_t p = nr * ow;
        ConstStridedMap<T> g(grad_output + b * d.out_channels * oh * ow + r0 * ow, d.out_channels,
                             p, Eigen::OuterStride<>(oh * ow));
        Eigen::Map<RowMat<T>> c(col.data(), kdim, p);
        c.noalias() = w.transpose() * g;
        col2im_rows(d, col.data(), r0, nr, grad_input + b * d.in_channels * d.height * d.width);
      }
    }
  }
}

template <typename T>
void conv2d_backward_kernel(const ConvDims& d, const T* input, const T* grad_output, T* grad_kernel) {
  const std::int64_t oh = d.out_height();
  const std::int64_t ow = d.out_width();
  const std::int64_t kdim = d.in_channels * d.ksize * d.ksize;
  const std::int64_t rows = tile_rows(d);
  const std::int64_t tiles = (oh + rows - 1) / rows;
  const std::int64_t jobs = d.batch * tiles;
  const int threads = omp_get_max_threads();
  std::vector<RowMat<T>> partial(static_cast<std::size_t>(threads),
                                 RowMat<T>::Zero(d.out_channels, kdim));

#pragma omp parallel num_threads(threads)
  {
    std::vector<T> col(static_cast<std::size_t>(kdim * rows * ow));
    RowMat<T>& acc = partial[static_cast<std::size_t>(omp_get_thread_num())];
#pragma omp for schedule(static)
    for (std::int64_t job = 0; job < jobs; ++job) {
      const std::int64_t b = job / tiles;
      const std::int64_t r0 = (job % tiles) * rows;
      const std::int64_t nr = std::min(rows, oh - r0);
      const std::int64_t p = nr * ow;
      im2col_rows(d, input + b * d.in_channels * d.height * d.width, r0, nr, col.data());
      Eigen::Map<const RowMat<T>> c(col.data(), kdim, p);
      ConstStridedMap<T> g(grad_output + b * d.out_channels * oh * ow + r0 * ow, d.out_channels, p,
                           Eigen::OuterStride<>(oh * ow));
      acc.noalias() += g * c.transpose();
    }
  }
  // Fixed reduction order keeps results reproducible for a given thread count.
  Eigen::Map<RowMat<T>> gk(grad_kernel, d.out_channels, kdim);
  for (const auto& p : partial) gk += p;
}

template void conv2d_forward<float>(const ConvDims&, const float*, const float*, float*);
template void conv2d_forward<double>(const ConvDims&, const double*, const double*, double*);
template void conv2d_backward_input<float>(const ConvDims&, const float*, const float*, float*);
template void conv2d_backward_input<double>(const ConvDims&, const double*, const double*, double*);
template void conv2d_backward_kernel<float>(const ConvDims&, const float*, const float*, float*);
template void conv2d_backward_kernel<double>(const ConvDims&, const double*, const double*,
                                             double*);

}  // namespace omp

namespace reference {

template <typename T>
void conv2d_forward(const ConvDims& d, const T* input, const T* kernel, T* output) {
  const std::int64_t oh = d.out_height();
  const std::int64_t ow = d.out_width();
  const std::int64_t k = d.ksize;
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t co = 0; co < d.out_channels; ++co)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t x = 0; x < ow; ++x) {
          T acc = 0;
          for (std::int64_t ci = 0; ci < d.in_channels; ++ci)
            for (std::int64_t ky = 0; ky < k; ++ky)
              for (std::int64_t kx = 0; kx < k; ++kx)
                acc += input[((b * d.in_channels + ci) * d.height + y + ky) * d.width + x + kx] *
                       kernel[((co * d.in_channels + ci) * k + ky) * k + kx];
          output[((b * d.out_channels + co) * oh + y) * ow + x] = acc;
        }
}

template <typename T>
void conv2d_backward_input(const ConvDims& d, const T* grad_output, const T* kernel, T* grad_input) {
  const std::int64_t oh = d.out_height();
  const std::int64_t ow = d.out_width();
  const std::int64_t k = d.ksize;
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t co = 0; co < d.out_channels; ++co)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t x = 0; x < ow; ++x) {
          const T g = grad_output[((b * d.out_channels + co) * oh + y) * ow + x];
          for (std::int64_t ci = 0; ci < d.in_channels; ++ci)
            for (std::int64_t ky = 0; ky < k; ++ky)
              for (std::int64_t kx = 0; kx < k; ++kx)
                grad_input[((b * d.in_channels + ci) * d.height + y + ky) * d.width + x + kx] +=
                    g * kernel[((co * d.in_channels + ci) * k + ky) * k + kx];
        }
}

template <typename T>
void conv2d_backward_kernel(const ConvDims& d, const T* input, const T* grad_output, T* grad_kernel) {
  const std::int64_t oh = d.out_height();
  const std::int64_t ow = d.out_width();
  const std::int64_t k = d.ksize;
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t co = 0; co < d.out_channels; ++co)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t x = 0; x < ow; ++x) {
          const T g = grad_output[((b * d.out_channels + co) * oh + y) * ow + x];
          for (std::int64_t ci = 0; ci < d.in_channels; ++ci)
            for (std::int64_t ky = 0; ky < k; ++ky)
              for (std::int64_t kx = 0; kx < k; ++kx)
                grad_kernel[((co * d.in_channels + ci) * k + ky) * k + kx] +=
                    g * input[((b * d.in_channels + ci) * d.height + y + ky) * d.width + x + kx];
        }
}

template void conv2d_forward<float>(const ConvDims&, const float*, const float*, float*);
template void conv2d_forward<double>(const ConvDims&, const double*, const double*, double*);
template void conv2d_backward_input<float>(const ConvDims&, const float*, const float*, float*);
template void conv2d_backward_input<double>(const ConvDims&, const double*, const double*, double*);
template void conv2d_backward_kernel<float>(const ConvDims&, const float*, const float*, float*);
template void conv2d_backward_kernel<double>(const ConvDims&, const double*, const double*,
                                             double*);

}  // namespace reference
}  // namespace ride::kernels
