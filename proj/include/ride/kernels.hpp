#pragma once

#include <cstdint>

// Convolution kernels behind conv2d_valid. The `omp` variants tile the work
// across OpenMP threads and hand each tile to a GEMM; the `reference`
// variants are plain loops kept as the test oracle and benchmark baseline.

namespace ride::kernels {

struct ConvDims {
  std::int64_t batch = 1;
  std::int64_t in_channels = 1;
  std::int64_t height = 1;
  std::int64_t width = 1;
  std::int64_t out_channels = 1;
  std::int64_t ksize = 1;

  [[nodiscard]] std::int64_t out_height() const { return height - ksize + 1; }
  [[nodiscard]] std::int64_t out_width() const { return width - ksize + 1; }
};

namespace omp {

template <typename T>
void conv2d_forward(const ConvDims& d, const T* input, const T* kernel, T* output);
/// Accumulates into grad_input.
template <typename T>
void conv2d_backward_input(const ConvDims& d, const T* grad_output, const T* kernel, T* grad_input);
/// Accumulates into grad_kernel.
template <typename T>
void conv2d_backward_kernel(const ConvDims& d, const T* input, const T* grad_output, T* grad_kernel);

}  // namespace omp

namespace reference {

template <typename T>
void conv2d_forward(const ConvDims& d, const T* input, const T* kernel, T* output);
template <typename T>
void conv2d_backward_input(const ConvDims& d, const T* grad_output, const T* kernel, T* grad_input);
template <typename T>
void conv2d_backward_kernel(const ConvDims& d, const T* input, const T* grad_output, T* grad_kernel);

}  // namespace reference

/// Number of OpenMP threads the parallel kernels use.
int max_threads();

}  // namespace ride::kernels
