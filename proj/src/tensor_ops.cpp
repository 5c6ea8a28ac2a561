#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "ride/kernels.hpp"
#include "ride/tensor.hpp"

namespace ride {
namespace {

constexpr std::int64_t kParallelThreshold = 1 << 15;

int normalize_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  return a;
}

struct AxisSplit {
  std::int64_t outer = 1;
  std::int64_t n = 1;
  std::int64_t inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.n = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape without_axis(Shape s, int axis) {
  s.erase(s.begin() + axis);
  return s;
}

void check_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  if (a.dtype() != b.dtype()) throw ShapeError(std::string(op) + ": dtype mismatch");
}

// Gradient buffer of parent i, or an empty span if that parent takes none.
template <typename T>
std::span<T> parent_grad(detail::Node& self, std::size_t i) {
  auto& p = *self.parents[i];
  return p.requires_grad ? p.grad_span<T>() : std::span<T>{};
}

template <typename T>
std::span<const T> parent_data(detail::Node& self, std::size_t i) {
  return self.parents[i]->buf<T>();
}

template <typename T>
std::span<const T> self_grad(detail::Node& self) {
  return self.gbuf<T>();
}

// Elementwise unary op with a derivative expressed through input x and output y.
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  return dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    const auto n = static_cast<std::int64_t>(x.size());
    std::vector<T> y(x.size());
#pragma omp parallel for if (n > kParallelThreshold)
    for (std::int64_t i = 0; i < n; ++i) y[i] = fwd(x[i]);
    return Tensor::make_result<T>(a.shape(), std::move(y), {a}, [deriv](detail::Node& self) {
      auto g = self_grad<T>(self);
      auto ga = parent_grad<T>(self, 0);
      auto xs = parent_data<T>(self, 0);
      auto ys = std::span<const T>(self.buf<T>());
      const auto m = static_cast<std::int64_t>(g.size());
#pragma omp parallel for if (m > kParallelThreshold)
      for (std::int64_t i = 0; i < m; ++i) ga[i] += g[i] * deriv(xs[i], ys[i]);
    });
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same(a, b, "add");
  return dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto z = b.data<T>();
    std::vector<T> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + z[i];
    return Tensor::make_result<T>(a.shape(), std::move(y), {a, b}, [](detail::Node& self) {
      auto g = self_grad<T>(self);
      for (std::size_t p = 0; p < 2; ++p) {
        auto gp = parent_grad<T>(self, p);
        if (gp.empty()) continue;
        for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
      }
    });
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same(a, b, "sub");
  return dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto z = b.data<T>();
    std::vector<T> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] - z[i];
    return Tensor::make_result<T>(a.shape(), std::move(y), {a, b}, [](detail::Node& self) {
      auto g = self_grad<T>(self);
      if (auto ga = parent_grad<T>(self, 0); !ga.empty())
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      if (auto gb = parent_grad<T>(self, 1); !gb.empty())
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same(a, b, "mul");
  return dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto z = b.data<T>();
    std::vector<T> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * z[i];
    return Tensor::make_result<T>(a.shape(), std::move(y), {a, b}, [](detail::Node& self) {
      auto g = self_grad<T>(self);
      auto xa = parent_data<T>(self, 0);
      auto xb = parent_data<T>(self, 1);
      if (auto ga = parent_grad<T>(self, 0); !ga.empty())
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * xb[i];
      if (auto gb = parent_grad<T>(self, 1); !gb.empty())
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xa[i];
    });
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](auto x) { return x + static_cast<decltype(x)>(s); },
               [](auto, auto) { return 1; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary(a, [s](auto x) { return x * static_cast<decltype(x)>(s); },
               [s](auto x, auto) { return static_cast<decltype(x)>(s); });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor relu(const Tensor& a) {
  return unary(a, [](auto x) { return x > 0 ? x : decltype(x)(0); },
               [](auto x, auto) { return x > 0 ? decltype(x)(1) : decltype(x)(0); });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a,
               [](auto x) {
                 using T = decltype(x);
                 return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
               },
               [](auto, auto y) { return y * (decltype(y)(1) - y); });
}

Tensor log(const Tensor& a) {
  return unary(a, [](auto x) { return std::log(x); }, [](auto x, auto) { return decltype(x)(1) / x; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](auto x) { return std::exp(x); }, [](auto, auto y) { return y; });
}

Tensor clamp_min(const Tensor& a, double floor) {
  return unary(a,
               [floor](auto x) {
                 const auto f = static_cast<decltype(x)>(floor);
                 return x > f ? x : f;
               },
               [floor](auto x, auto) {
                 return x > static_cast<decltype(x)>(floor) ? decltype(x)(1) : decltype(x)(0);
               });
}

Tensor sum(const Tensor& a) {
  return dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    double acc = 0;
    for (auto v : x) acc += v;
    return Tensor::make_result<T>({}, {static_cast<T>(acc)}, {a}, [](detail::Node& self) {
      const T g = self_grad<T>(self)[0];
      auto ga = parent_grad<T>(self, 0);
      for (auto& v : ga) v += g;
    });
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ContractError("mean of an empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum(const Tensor& a, int axis) {
  axis = normalize_axis(axis, a.rank());
  const AxisSplit s = split_at(a.shape(), axis);
  return dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    std::vector<T> y(static_cast<std::size_t>(s.outer * s.inner), T(0));
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t j = 0; j < s.n; ++j)
        for (std::int64_t i = 0; i < s.inner; ++i)
          y[o * s.inner + i] += x[(o * s.n + j) * s.inner + i];
    return Tensor::make_result<T>(without_axis(a.shape(), axis), std::move(y), {a},
                                  [s](detail::Node& self) {
                                    auto g = self_grad<T>(self);
                                    auto ga = parent_grad<T>(self, 0);
                                    for (std::int64_t o = 0; o < s.outer; ++o)
                                      for (std::int64_t j = 0; j < s.n; ++j)
                                        for (std::int64_t i = 0; i < s.inner; ++i)
                                          ga[(o * s.n + j) * s.inner + i] += g[o * s.inner + i];
                                  });
  });
}

Tensor mean(const Tensor& a, int axis) {
  const int ax = normalize_axis(axis, a.rank());
  if (a.dim(ax) == 0) throw ContractError("mean over an empty axis");
  return mul_scalar(sum(a, ax), 1.0 / static_cast<double>(a.dim(ax)));
}

Tensor max(const Tensor& a, int axis) {
  axis = normalize_axis(axis, a.rank());
  const AxisSplit s = split_at(a.shape(), axis);
  if (s.n == 0) throw ContractError("max over an empty axis");
  return dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    const std::int64_t m = s.outer * s.inner;
    std::vector<T> y(static_cast<std::size_t>(m));
    std::vector<std::int64_t> arg(static_cast<std::size_t>(m));
#pragma omp parallel for if (m > kParallelThreshold)
    for (std::int64_t q = 0; q < m; ++q) {
      const std::int64_t o = q / s.inner;
      const std::int64_t i = q % s.inner;
      std::int64_t best = 0;
      T bv = x[o * s.n * s.inner + i];
      for (std::int64_t j = 1; j < s.n; ++j) {
        const T v = x[(o * s.n + j) * s.inner + i];
        if (v > bv) {
          bv = v;
          best = j;
        }
      }
      y[q] = bv;
      arg[q] = best;
    }
    return Tensor::make_result<T>(
        without_axis(a.shape(), axis), std::move(y), {a},
        [s, arg = std::move(arg)](detail::Node& self) {
          auto g = self_grad<T>(self);
          auto ga = parent_grad<T>(self, 0);
          for (std::int64_t q = 0; q < s.outer * s.inner; ++q) {
            const std::int64_t o = q / s.inner;
            const std::int64_t i = q % s.inner;
            ga[(o * s.n + arg[q]) * s.inner + i] += g[q];
          }
        });
  });
}

Tensor softmax(const Tensor& a, int axis) {
  axis = normalize_axis(axis, a.rank());
  const AxisSplit s = split_at(a.shape(), axis);
  return dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    std::vector<T> y(x.size());
    const std::int64_t m = s.outer * s.inner;
#pragma omp parallel for if (m * s.n > kParallelThreshold)
    for (std::int64_t q = 0; q < m; ++q) {
      const std::int64_t base = (q / s.inner) * s.n * s.inner + q % s.inner;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::int64_t j = 0; j < s.n; ++j) mx = std::max(mx, x[base + j * s.inner]);
      T z = 0;
      for (std::int64_t j = 0; j < s.n; ++j) {
        const T e = std::exp(x[base + j * s.inner] - mx);
        y[base + j * s.inner] = e;
        z += e;
      }
      for (std::int64_t j = 0; j < s.n; ++j) y[base + j * s.inner] /= z;
    }
    return Tensor::make_result<T>(a.shape(), std::move(y), {a}, [s](detail::Node& self) {
      auto g = self_grad<T>(self);
      auto ga = parent_grad<T>(self, 0);
      auto ys = std::span<const T>(self.buf<T>());
      const std::int64_t mm = s.outer * s.inner;
#pragma omp parallel for if (mm * s.n > kParallelThreshold)
      for (std::int64_t q = 0; q < mm; ++q) {
        const std::int64_t base = (q / s.inner) * s.n * s.inner + q % s.inner;
        T dot = 0;
        for (std::int64_t j = 0; j < s.n; ++j) dot += g[base + j * s.inner] * ys[base + j * s.inner];
        for (std::int64_t j = 0; j < s.n; ++j) {
          const std::int64_t k = base + j * s.inner;
          ga[k] += ys[k] * (g[k] - dot);
        }
      }
    });
  });
}

Tensor logsumexp(const Tensor& a, int axis) {
  axis = normalize_axis(axis, a.rank());
  const AxisSplit s = split_at(a.shape(), axis);
  return dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    const std::int64_t m = s.outer * s.inner;
    std::vector<T> y(static_cast<std::size_t>(m));
#pragma omp parallel for if (m * s.n > kParallelThreshold)
    for (std::int64_t q = 0; q < m; ++q) {
      const std::int64_t base = (q / s.inner) * s.n * s.inner + q % s.inner;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::int64_t j = 0; j < s.n; ++j) mx = std::max(mx, x[base + j * s.inner]);
      T z = 0;
      for (std::int64_t j = 0; j < s.n; ++j) z += std::exp(x[base + j * s.inner] - mx);
      y[q] = mx + std::log(z);
    }
    return Tensor::make_result<T>(without_axis(a.shape(), axis), std::move(y), {a},
                                  [s](detail::Node& self) {
                                    auto g = self_grad<T>(self);
                                    auto ga = parent_grad<T>(self, 0);
                                    auto xs = parent_data<T>(self, 0);
                                    auto ys = std::span<const T>(self.buf<T>());
                                    for (std::int64_t q = 0; q < s.outer * s.inner; ++q) {
                                      const std::int64_t base =
                                          (q / s.inner) * s.n * s.inner + q % s.inner;
                                      for (std::int64_t j = 0; j < s.n; ++j) {
                                        const std::int64_t k = base + j * s.inner;
                                        ga[k] += g[q] * std::exp(xs[k] - ys[q]);
                                      }
                                    }
                                  });
  });
}

Tensor l2_normalize(const Tensor& a, int axis, std::int64_t* zero_vectors) {
  axis = normalize_axis(axis, a.rank());
  const AxisSplit s = split_at(a.shape(), axis);
  return dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    const std::int64_t m = s.outer * s.inner;
    std::vector<T> y(x.size());
    std::vector<T> norms(static_cast<std::size_t>(m));
    std::int64_t zeros = 0;
#pragma omp parallel for if (m * s.n > kParallelThreshold) reduction(+ : zeros)
    for (std::int64_t q = 0; q < m; ++q) {
      const std::int64_t base = (q / s.inner) * s.n * s.inner + q % s.inner;
      T ss = 0;
      for (std::int64_t j = 0; j < s.n; ++j) ss += x[base + j * s.inner] * x[base + j * s.inner];
      const T nrm = std::sqrt(ss);
      norms[q] = nrm;
      if (nrm == T(0)) {
        ++zeros;
        for (std::int64_t j = 0; j < s.n; ++j) y[base + j * s.inner] = 0;
      } else {
        for (std::int64_t j = 0; j < s.n; ++j) y[base + j * s.inner] = x[base + j * s.inner] / nrm;
      }
    }
    if (zero_vectors) *zero_vectors = zeros;
    return Tensor::make_result<T>(
        a.shape(), std::move(y), {a}, [s, norms = std::move(norms)](detail::Node& self) {
          auto g = self_grad<T>(self);
          auto ga = parent_grad<T>(self, 0);
          auto ys = std::span<const T>(self.buf<T>());
          const std::int64_t mm = s.outer * s.inner;
#pragma omp parallel for if (mm * s.n > kParallelThreshold)
          for (std::int64_t q = 0; q < mm; ++q) {
            if (norms[q] == T(0)) continue;
            const std::int64_t base = (q / s.inner) * s.n * s.inner + q % s.inner;
            T dot = 0;
            for (std::int64_t j = 0; j < s.n; ++j) dot += ys[base + j * s.inner] * g[base + j * s.inner];
            for (std::int64_t j = 0; j < s.n; ++j) {
              const std::int64_t k = base + j * s.inner;
              ga[k] += (g[k] - ys[k] * dot) / norms[q];
            }
          }
        });
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  if (a.dtype() != b.dtype()) throw ShapeError("matmul: dtype mismatch");
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  return dispatch(a.dtype(), [&]<typename T>() {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    std::vector<T> y(static_cast<std::size_t>(m * n));
    Eigen::Map<Mat>(y.data(), m, n).noalias() =
        Eigen::Map<const Mat>(a.data<T>().data(), m, k) * Eigen::Map<const Mat>(b.data<T>().data(), k, n);
    return Tensor::make_result<T>({m, n}, std::move(y), {a, b}, [m, k, n](detail::Node& self) {
      Eigen::Map<const Mat> g(self_grad<T>(self).data(), m, n);
      if (auto ga = parent_grad<T>(self, 0); !ga.empty())
        Eigen::Map<Mat>(ga.data(), m, k).noalias() +=
            g * Eigen::Map<const Mat>(parent_data<T>(self, 1).data(), k, n).transpose();
      if (auto gb = parent_grad<T>(self, 1); !gb.empty())
        Eigen::Map<Mat>(gb.data(), k, n).noalias() +=
            Eigen::Map<const Mat>(parent_data<T>(self, 0).data(), m, k).transpose() * g;
    });
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects a 2-D tensor");
  const std::int64_t r = a.dim(0), c = a.dim(1);
  return dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    std::vector<T> y(x.size());
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) y[j * r + i] = x[i * c + j];
    return Tensor::make_result<T>({c, r}, std::move(y), {a}, [r, c](detail::Node& self) {
      auto g = self_grad<T>(self);
      auto ga = parent_grad<T>(self, 0);
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    });
  });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (numel(shape) != a.numel())
    throw ShapeError("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
  return dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    return Tensor::make_result<T>(shape, std::vector<T>(x.begin(), x.end()), {a},
                                  [](detail::Node& self) {
                                    auto g = self_grad<T>(self);
                                    auto ga = parent_grad<T>(self, 0);
                                    const auto n = static_cast<std::int64_t>(g.size());
#pragma omp parallel for if (n > kParallelThreshold)
                                    for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
                                  });
  });
}

Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t length) {
  axis = normalize_axis(axis, a.rank());
  const AxisSplit s = split_at(a.shape(), axis);
  if (start < 0 || length < 0 || start + length > s.n)
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for axis of size " + std::to_string(s.n));
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  return dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    std::vector<T> y(static_cast<std::size_t>(s.outer * length * s.inner));
    for (std::int64_t o = 0; o < s.outer; ++o)
      std::copy_n(x.begin() + (o * s.n + start) * s.inner, length * s.inner,
                  y.begin() + o * length * s.inner);
    return Tensor::make_result<T>(out_shape, std::move(y), {a},
                                  [s, start, length](detail::Node& self) {
                                    auto g = self_grad<T>(self);
                                    auto ga = parent_grad<T>(self, 0);
                                    for (std::int64_t o = 0; o < s.outer; ++o)
                                      for (std::int64_t i = 0; i < length * s.inner; ++i)
                                        ga[(o * s.n + start) * s.inner + i] +=
                                            g[o * length * s.inner + i];
                                  });
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat of no tensors");
  axis = normalize_axis(axis, parts[0].rank());
  Shape out_shape = parts[0].shape();
  std::int64_t total = 0;
  std::vector<std::int64_t> sizes;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank() || p.dtype() != parts[0].dtype())
      throw ShapeError("concat: rank or dtype mismatch");
    for (int d = 0; d < p.rank(); ++d)
      if (d != axis && p.dim(d) != parts[0].dim(d)) throw ShapeError("concat: shape mismatch");
    sizes.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  const AxisSplit s = split_at(out_shape, axis);
  return dispatch(parts[0].dtype(), [&]<typename T>() {
    std::vector<T> y(static_cast<std::size_t>(numel(out_shape)));
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto x = parts[k].data<T>();
      for (std::int64_t o = 0; o < s.outer; ++o)
        std::copy_n(x.begin() + o * sizes[k] * s.inner, sizes[k] * s.inner,
                    y.begin() + (o * s.n + offset) * s.inner);
      offset += sizes[k];
    }
    return Tensor::make_result<T>(out_shape, std::move(y), parts, [s, sizes](detail::Node& self) {
      auto g = self_grad<T>(self);
      std::int64_t off = 0;
      for (std::size_t k = 0; k < sizes.size(); ++k) {
        auto gp = parent_grad<T>(self, k);
        if (!gp.empty())
          for (std::int64_t o = 0; o < s.outer; ++o)
            for (std::int64_t i = 0; i < sizes[k] * s.inner; ++i)
              gp[o * sizes[k] * s.inner + i] += g[(o * s.n + off) * s.inner + i];
        off += sizes[k];
      }
    });
  });
}

Tensor index_select(const Tensor& a, int axis, std::span<const std::int64_t> indices) {
  axis = normalize_axis(axis, a.rank());
  const AxisSplit s = split_at(a.shape(), axis);
  for (auto idx : indices)
    if (idx < 0 || idx >= s.n)
      throw ShapeError("gather index " + std::to_string(idx) + " out of bounds for axis of size " +
                       std::to_string(s.n));
  Shape out_shape = a.shape();
  const auto len = static_cast<std::int64_t>(indices.size());
  out_shape[static_cast<std::size_t>(axis)] = len;
  std::vector<std::int64_t> idx(indices.begin(), indices.end());
  return dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    std::vector<T> y(static_cast<std::size_t>(s.outer * len * s.inner));
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t j = 0; j < len; ++j)
        std::copy_n(x.begin() + (o * s.n + idx[j]) * s.inner, s.inner,
                    y.begin() + (o * len + j) * s.inner);
    return Tensor::make_result<T>(out_shape, std::move(y), {a},
                                  [s, len, idx = std::move(idx)](detail::Node& self) {
                                    auto g = self_grad<T>(self);
                                    auto ga = parent_grad<T>(self, 0);
                                    for (std::int64_t o = 0; o < s.outer; ++o)
                                      for (std::int64_t j = 0; j < len; ++j)
                                        for (std::int64_t i = 0; i < s.inner; ++i)
                                          ga[(o * s.n + idx[j]) * s.inner + i] +=
                                              g[(o * len + j) * s.inner + i];
                                  });
  });
}

Tensor gather_flat(const Tensor& a, std::span<const std::int64_t> indices) {
  const std::int64_t n = a.numel();
  for (auto idx : indices)
    if (idx < 0 || idx >= n)
      throw ShapeError("gather index " + std::to_string(idx) + " out of bounds for " +
                       std::to_string(n) + " elements");
  std::vector<std::int64_t> idx(indices.begin(), indices.end());
  return dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    std::vector<T> y(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) y[j] = x[idx[j]];
    const Shape shape{static_cast<std::int64_t>(idx.size())};
    return Tensor::make_result<T>(shape, std::move(y), {a},
                                  [idx = std::move(idx)](detail::Node& self) {
                                    auto g = self_grad<T>(self);
                                    auto ga = parent_grad<T>(self, 0);
                                    for (std::size_t j = 0; j < idx.size(); ++j) ga[idx[j]] += g[j];
                                  });
  });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training, double momentum,
                  double eps) {
  if (x.rank() < 2) throw ShapeError("batch_norm expects at least [B, C]");
  const std::int64_t c = x.dim(1);
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &running_mean, &running_var})
    if (t->rank() != 1 || t->dim(0) != c || t->dtype() != x.dtype())
      throw ShapeError("batch_norm: parameter shape must be [" + std::to_string(c) + "]");
  const AxisSplit s = split_at(x.shape(), 1);
  const std::int64_t count = s.outer * s.inner;
  if (training && count < 2) throw ContractError("batch_norm needs more than one value per channel");
  return dispatch(x.dtype(), [&]<typename T>() {
    auto xs = x.data<T>();
    auto gm = gamma.data<T>();
    auto bt = beta.data<T>();
    auto rm = running_mean.data<T>();
    auto rv = running_var.data<T>();
    std::vector<T> mu(static_cast<std::size_t>(c)), inv_std(static_cast<std::size_t>(c));
    for (std::int64_t ch = 0; ch < c; ++ch) {
      if (training) {
        double m = 0, v = 0;
        for (std::int64_t o = 0; o < s.outer; ++o)
          for (std::int64_t i = 0; i < s.inner; ++i) m += xs[(o * c + ch) * s.inner + i];
        m /= static_cast<double>(count);
        for (std::int64_t o = 0; o < s.outer; ++o)
          for (std::int64_t i = 0; i < s.inner; ++i) {
            const double d = xs[(o * c + ch) * s.inner + i] - m;
            v += d * d;
          }
        v /= static_cast<double>(count);
        mu[ch] = static_cast<T>(m);
        inv_std[ch] = static_cast<T>(1.0 / std::sqrt(v + eps));
        rm[ch] = static_cast<T>((1.0 - momentum) * rm[ch] + momentum * m);
        rv[ch] = static_cast<T>((1.0 - momentum) * rv[ch] +
                                momentum * v * static_cast<double>(count) / static_cast<double>(count - 1));
      } else {
        mu[ch] = rm[ch];
        inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[ch]) + eps));
      }
    }
    std::vector<T> y(xs.size());
    const std::int64_t planes = s.outer * c;
#pragma omp parallel for if (planes * s.inner > kParallelThreshold)
    for (std::int64_t q = 0; q < planes; ++q) {
      const std::int64_t ch = q % c;
      const T scale = gm[ch] * inv_std[ch];
      const T shift = bt[ch] - mu[ch] * scale;
      for (std::int64_t i = 0; i < s.inner; ++i) y[q * s.inner + i] = xs[q * s.inner + i] * scale + shift;
    }
    return Tensor::make_result<T>(
        x.shape(), std::move(y), {x, gamma, beta},
        [s, c, count, training, mu = std::move(mu), inv_std = std::move(inv_std)](detail::Node& self) {
          auto g = self_grad<T>(self);
          auto xin = parent_data<T>(self, 0);
          auto gmv = parent_data<T>(self, 1);
          auto gx = parent_grad<T>(self, 0);
          auto gg = parent_grad<T>(self, 1);
          auto gb = parent_grad<T>(self, 2);
          for (std::int64_t ch = 0; ch < c; ++ch) {
            double sum_g = 0, sum_gx = 0;
            for (std::int64_t o = 0; o < s.outer; ++o)
              for (std::int64_t i = 0; i < s.inner; ++i) {
                const std::int64_t k = (o * c + ch) * s.inner + i;
                const double xhat = (xin[k] - mu[ch]) * inv_std[ch];
                sum_g += g[k];
                sum_gx += g[k] * xhat;
              }
            if (!gg.empty()) gg[ch] += static_cast<T>(sum_gx);
            if (!gb.empty()) gb[ch] += static_cast<T>(sum_g);
            if (gx.empty()) continue;
            const double scale = static_cast<double>(gmv[ch]) * inv_std[ch];
            const double mean_g = sum_g / static_cast<double>(count);
            const double mean_gx = sum_gx / static_cast<double>(count);
            for (std::int64_t o = 0; o < s.outer; ++o)
              for (std::int64_t i = 0; i < s.inner; ++i) {
                const std::int64_t k = (o * c + ch) * s.inner + i;
                if (training) {
                  const double xhat = (xin[k] - mu[ch]) * inv_std[ch];
                  gx[k] += static_cast<T>(scale * (g[k] - mean_g - xhat * mean_gx));
                } else {
                  gx[k] += static_cast<T>(scale * g[k]);
                }
              }
          }
        });
  });
}

Tensor conv2d_valid(const Tensor& input, const Tensor& kernel) {
  if (input.rank() != 4 || kernel.rank() != 4)
    throw ShapeError("conv2d_valid expects [B,Cin,H,W] and [Cout,Cin,k,k]");
  if (input.dtype() != kernel.dtype()) throw ShapeError("conv2d_valid: dtype mismatch");
  kernels::ConvDims d;
  d.batch = input.dim(0);
  d.in_channels = input.dim(1);
  d.height = input.dim(2);
  d.width = input.dim(3);
  d.out_channels = kernel.dim(0);
  d.ksize = kernel.dim(2);
  if (kernel.dim(1) != d.in_channels)
    throw ShapeError("conv2d_valid: kernel expects " + std::to_string(kernel.dim(1)) +
                     " input channels, got " + std::to_string(d.in_channels));
  if (kernel.dim(3) != d.ksize) throw ShapeError("conv2d_valid: kernel must be square");
  if (d.ksize > d.height || d.ksize > d.width)
    throw ShapeError("conv2d_valid: kernel " + std::to_string(d.ksize) + " larger than input " +
                     to_string(input.shape()));
  return dispatch(input.dtype(), [&]<typename T>() {
    std::vector<T> y(static_cast<std::size_t>(d.batch * d.out_channels * d.out_height() * d.out_width()));
    kernels::omp::conv2d_forward<T>(d, input.data<T>().data(), kernel.data<T>().data(), y.data());
    return Tensor::make_result<T>({d.batch, d.out_channels, d.out_height(), d.out_width()},
                                  std::move(y), {input, kernel}, [d](detail::Node& self) {
                                    auto g = self_grad<T>(self);
                                    if (auto gi = parent_grad<T>(self, 0); !gi.empty())
                                      kernels::omp::conv2d_backward_input<T>(
                                          d, g.data(), parent_data<T>(self, 1).data(), gi.data());
                                    if (auto gk = parent_grad<T>(self, 1); !gk.empty())
                                      kernels::omp::conv2d_backward_kernel<T>(
                                          d, parent_data<T>(self, 0).data(), g.data(), gk.data());
                                  });
  });
}

}  // namespace ride
