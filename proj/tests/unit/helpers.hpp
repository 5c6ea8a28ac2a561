#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ride/rng.hpp"
#include "ride/tensor.hpp"

namespace ride::testing {

inline Tensor random_tensor(Rng& rng, const Shape& shape, DType dtype = DType::f32, double lo = -1.0,
                            double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  Tensor t = Tensor::from_data(shape, v);
  return dtype == DType::f64 ? t : t.to(dtype);
}

inline Tensor random_param(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  Tensor t = random_tensor(rng, shape, DType::f64, lo, hi);
  t.set_requires_grad(true);
  return t;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  return max_abs_diff(a.to_vector(), b.to_vector());
}

// Plain-loop valid cross-correlation [B,Cin,H,W] x [Cout,Cin,k,k].
inline std::vector<double> naive_conv(const std::vector<double>& x, const std::vector<double>& w, int b, int cin,
                                      int h, int wd, int cout, int k) {
  const int oh = h - k + 1, ow = wd - k + 1;
  std::vector<double> y(static_cast<std::size_t>(b * cout * oh * ow), 0.0);
  for (int n = 0; n < b; ++n)
    for (int co = 0; co < cout; ++co)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double acc = 0.0;
          for (int ci = 0; ci < cin; ++ci)
            for (int u = 0; u < k; ++u)
              for (int v = 0; v < k; ++v)
                acc += x[static_cast<std::size_t>(((n * cin + ci) * h + i + u) * wd + j + v)] *
                       w[static_cast<std::size_t>(((co * cin + ci) * k + u) * k + v)];
          y[static_cast<std::size_t>(((n * cout + co) * oh + i) * ow + j)] = acc;
        }
  return y;
}

// Central-difference derivative of a scalar function of one tensor element.
template <typename F>
double numeric_derivative(Tensor& param, std::size_t index, F&& f, double h = 1e-6) {
  auto d = param.data<double>();
  const double saved = d[index];
  d[index] = saved + h;
  const double up = f();
  d[index] = saved - h;
  const double down = f();
  d[index] = saved;
  return (up - down) / (2.0 * h);
}

// Compares backward() against central differences for every element.
template <typename F>
double max_gradient_error(std::vector<Tensor> params, F&& loss_fn) {
  for (auto& p : params) p.zero_grad();
  backward(loss_fn());
  double worst = 0.0;
  for (auto& p : params) {
    const auto analytic = p.grad().to_vector();
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      NoGradGuard guard;
      const double numeric = numeric_derivative(p, i, [&] { return loss_fn().item(); });
      const double scale = std::max({1.0, std::abs(numeric), std::abs(analytic[i])});
      worst = std::max(worst, std::abs(numeric - analytic[i]) / scale);
    }
  }
  return worst;
}

}  // namespace ride::testing
