#include "ride/equivariant.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

namespace ride {

CyclicGroup::CyclicGroup(int order) : order_(order) {
  if (order < 2) throw ContractError("cyclic group order must be at least 2");
}

int CyclicGroup::nearest_index(double degrees) const {
  double a = std::fmod(degrees, 360.0);
  if (a < 0) a += 360.0;
  const double f = a / step_degrees();
  const double lo = std::floor(f);
  const double frac = f - lo;
  const int below = wrap(static_cast<int>(lo));
  const int above = wrap(static_cast<int>(lo) + 1);
  if (std::abs(frac - 0.5) < 1e-9) return std::min(below, above);
  return frac < 0.5 ? below : above;
}

GroupFeatureMap::GroupFeatureMap(Tensor v, CyclicGroup g) : values(std::move(v)), group(g) {
  if (values.rank() != 5)
    throw ShapeError("group feature map must be [B,C,|G|,H,W], got " + to_string(values.shape()));
  if (values.dim(2) != group.order())
    throw ShapeError("group axis has length " + std::to_string(values.dim(2)) +
                     " but the group order is " + std::to_string(group.order()));
}

namespace {

using Taps = std::vector<KernelRotator::Tap>;

// Taps of the kernel rotated by theta (radians, |theta| < 90 degrees) using
// bilinear resampling; samples outside the support read as zero.
std::vector<Taps> bilinear_rotation(int k, double theta) {
  const double c = (k - 1) / 2.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  std::vector<Taps> out(static_cast<std::size_t>(k * k));
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      auto& taps = out[static_cast<std::size_t>(i * k + j)];
      if (theta == 0.0) {
        taps.push_back({i * k + j, 1.0});
        continue;
      }
      const double x = j - c, y = i - c;
      const double sx = cs * x - sn * y + c;
      const double sy = sn * x + cs * y + c;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      const int xs[2] = {x0, x0 + 1};
      const int ys[2] = {y0, y0 + 1};
      const double wx[2] = {1.0 - fx, fx};
      const double wy[2] = {1.0 - fy, fy};
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          const double w = wy[a] * wx[b];
          if (w <= 1e-12 || ys[a] < 0 || ys[a] >= k || xs[b] < 0 || xs[b] >= k) continue;
          taps.push_back({ys[a] * k + xs[b], w});
        }
    }
  }
  return out;
}

// Ring-harmonic functions exp(-(rho - r)^2 / 2 s^2) * {cos, sin}(m phi)
// sampled at the source positions of a rotation by theta. Rows are functions.
Eigen::MatrixXd harmonic_basis(int k, int group_order, double theta) {
  const double c = (k - 1) / 2.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  std::vector<std::vector<double>> rows;
  for (int ring = 0; ring <= (k - 1) / 2; ++ring) {
    const int max_frequency = std::min(ring, group_order / 2 - 1);
    for (int m = 0; m <= max_frequency; ++m) {
      for (int part = 0; part < (m == 0 ? 1 : 2); ++part) {
        std::vector<double> f(static_cast<std::size_t>(k * k));
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j) {
            const double x = j - c, y = i - c;
            const double sx = cs * x - sn * y, sy = sn * x + cs * y;
            const double rho = std::hypot(sx, sy), phi = std::atan2(sy, sx);
            const double d = rho - ring;
            const double radial = std::exp(-d * d / (2.0 * kHarmonicRingWidth * kHarmonicRingWidth));
            double v = 0.0;
            if (m == 0) v = radial;
            else if (rho > 1e-9) v = radial * (part == 0 ? std::cos(m * phi) : std::sin(m * phi));
            f[static_cast<std::size_t>(i * k + j)] = v;
          }
        rows.push_back(std::move(f));
      }
    }
  }
  Eigen::MatrixXd b(static_cast<Eigen::Index>(rows.size()), k * k);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int q = 0; q < k * k; ++q) b(static_cast<Eigen::Index>(r), q) = rows[r][static_cast<std::size_t>(q)];
  return b;
}

// Least-squares projection of the kernel onto the ring harmonics, rotated
// analytically by theta and resampled on the grid.
std::vector<Taps> harmonic_rotation(int k, int group_order, double theta) {
  const Eigen::MatrixXd b0 = harmonic_basis(k, group_order, 0.0);
  const Eigen::MatrixXd pinv = b0.completeOrthogonalDecomposition().pseudoInverse();
  const Eigen::MatrixXd op = pinv * harmonic_basis(k, group_order, theta);  // [input, output]
  std::vector<Taps> out(static_cast<std::size_t>(k * k));
  for (int p = 0; p < k * k; ++p)
    for (int q = 0; q < k * k; ++q)
      if (std::abs(op(q, p)) > 1e-12) out[static_cast<std::size_t>(p)].push_back({q, op(q, p)});
  return out;
}

}  // namespace

KernelRotator::KernelRotator(int ksize, CyclicGroup group, KernelSteering steering)
    : ksize_(ksize), group_(group), steering_(steering) {
  if (ksize < 1 || ksize % 2 == 0) throw ContractError("kernel rotation requires an odd kernel size");
  const int n = group.order();
  const int k = ksize;
  auto table = std::make_shared<Table>(static_cast<std::size_t>(n));
  for (int g = 0; g < n; ++g) {
    // g * 360/n = quarter * 90 + rest * 90/n degrees
    const int quarter = (4 * g) / n;
    const int rest = 4 * g - quarter * n;
    const double theta = (90.0 * rest / n) * std::numbers::pi / 180.0;
    const auto partial = steering == KernelSteering::bilinear ? bilinear_rotation(k, theta)
                                                              : harmonic_rotation(k, n, theta);
    auto& positions = (*table)[static_cast<std::size_t>(g)];
    positions.resize(static_cast<std::size_t>(k * k));
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        int pi = i, pj = j;
        for (int q = 0; q < quarter; ++q) {
          const int t = pi;
          pi = pj;
          pj = k - 1 - t;
        }
        positions[static_cast<std::size_t>(i * k + j)] = partial[static_cast<std::size_t>(pi * k + pj)];
      }
    }
  }
  table_ = std::move(table);
}

const std::vector<KernelRotator::Tap>& KernelRotator::taps(int angle_index, int index) const {
  return (*table_)[static_cast<std::size_t>(group_.wrap(angle_index))][static_cast<std::size_t>(index)];
}

Tensor KernelRotator::expand_lifting(const Tensor& base) const {
  if (base.rank() != 4 || base.dim(1) != 1 || base.dim(2) != ksize_ || base.dim(3) != ksize_)
    throw ShapeError("lifting base kernels must be [C,1," + std::to_string(ksize_) + "," +
                     std::to_string(ksize_) + "], got " + to_string(base.shape()));
  const std::int64_t channels = base.dim(0);
  const int n = group_.order();
  const int kk = ksize_ * ksize_;
  return dispatch(base.dtype(), [&]<typename T>() {
    auto src = base.data<T>();
    std::vector<T> out(static_cast<std::size_t>(channels * n * kk), T(0));
    for (std::int64_t c = 0; c < channels; ++c)
      for (int g = 0; g < n; ++g)
        for (int p = 0; p < kk; ++p) {
          T acc = 0;
          for (const auto& t : taps(g, p)) acc += static_cast<T>(t.weight) * src[c * kk + t.source];
          out[(c * n + g) * kk + p] = acc;
        }
    return Tensor::make_result<T>(
        {channels * n, 1, ksize_, ksize_}, std::move(out), {base},
        [table = table_, channels, n, kk](detail::Node& self) {
          auto g_out = std::span<const T>(self.gbuf<T>());
          auto g_in = self.parents[0]->grad_span<T>();
          for (std::int64_t c = 0; c < channels; ++c)
            for (int g = 0; g < n; ++g)
              for (int p = 0; p < kk; ++p) {
                const T go = g_out[(c * n + g) * kk + p];
                for (const auto& t : (*table)[g][p])
                  g_in[c * kk + t.source] += static_cast<T>(t.weight) * go;
              }
        });
  });
}

Tensor KernelRotator::expand_group(const Tensor& base) const {
  const int n = group_.order();
  if (base.rank() != 5 || base.dim(2) != n || base.dim(3) != ksize_ || base.dim(4) != ksize_)
    throw ShapeError("group base kernels must be [Cout,Cin," + std::to_string(n) + "," +
                     std::to_string(ksize_) + "," + std::to_string(ksize_) + "], got " +
                     to_string(base.shape()));
  const std::int64_t cout = base.dim(0), cin = base.dim(1);
  const int kk = ksize_ * ksize_;
  return dispatch(base.dtype(), [&]<typename T>() {
    auto src = base.data<T>();
    std::vector<T> out(static_cast<std::size_t>(cout * n * cin * n * kk), T(0));
    auto src_index = [=](std::int64_t co, std::int64_t ci, int slot) {
      return ((co * cin + ci) * n + slot) * kk;
    };
    auto dst_index = [=](std::int64_t co, int g, std::int64_t ci, int h) {
      return ((co * n + g) * cin * n + ci * n + h) * kk;
    };
    for (std::int64_t co = 0; co < cout; ++co)
      for (int g = 0; g < n; ++g)
        for (std::int64_t ci = 0; ci < cin; ++ci)
          for (int h = 0; h < n; ++h) {
            const auto s = src_index(co, ci, group_.wrap(h - g));
            const auto d = dst_index(co, g, ci, h);
            for (int p = 0; p < kk; ++p) {
              T acc = 0;
              for (const auto& t : taps(g, p)) acc += static_cast<T>(t.weight) * src[s + t.source];
              out[d + p] = acc;
            }
          }
    return Tensor::make_result<T>(
        {cout * n, cin * n, ksize_, ksize_}, std::move(out), {base},
        [table = table_, grp = group_, cout, cin, n, kk, src_index, dst_index](detail::Node& self) {
          auto g_out = std::span<const T>(self.gbuf<T>());
          auto g_in = self.parents[0]->grad_span<T>();
          for (std::int64_t co = 0; co < cout; ++co)
            for (int g = 0; g < n; ++g)
              for (std::int64_t ci = 0; ci < cin; ++ci)
                for (int h = 0; h < n; ++h) {
                  const auto s = src_index(co, ci, grp.wrap(h - g));
                  const auto d = dst_index(co, g, ci, h);
                  for (int p = 0; p < kk; ++p) {
                    const T go = g_out[d + p];
                    for (const auto& t : (*table)[g][p])
                      g_in[s + t.source] += static_cast<T>(t.weight) * go;
                  }
                }
        });
  });
}

Tensor rotate_kernel(const Tensor& base, int angle_index, const CyclicGroup& group, KernelSteering steering) {
  if (base.rank() != 2 || base.dim(0) != base.dim(1))
    throw ShapeError("rotate_kernel expects a square [k,k] kernel");
  const auto k = static_cast<int>(base.dim(0));
  if (k % 2 == 0) throw ContractError("rotate_kernel requires an odd kernel size");
  const KernelRotator rotator(k, group, steering);
  const Tensor all = rotator.expand_lifting(reshape(base, {1, 1, k, k}));
  return reshape(slice(all, 0, group.wrap(angle_index), 1), {k, k});
}

GroupFeatureMap lifting_conv(const Tensor& image, const Tensor& base_kernels,
                             const KernelRotator& rotator) {
  if (image.rank() != 4 || image.dim(1) != 1)
    throw ShapeError("lifting_conv expects a grayscale [B,1,H,W] image, got " +
                     to_string(image.shape()));
  const Tensor out = conv2d_valid(image, rotator.expand_lifting(base_kernels));
  const std::int64_t n = rotator.group().order();
  return {reshape(out, {out.dim(0), out.dim(1) / n, n, out.dim(2), out.dim(3)}), rotator.group()};
}

GroupFeatureMap lifting_conv(const Tensor& image, const Tensor& base_kernels,
                             const CyclicGroup& group) {
  return lifting_conv(image, base_kernels,
                      KernelRotator(static_cast<int>(base_kernels.dim(-1)), group));
}

GroupFeatureMap group_conv(const GroupFeatureMap& input, const Tensor& base_kernels,
                           const KernelRotator& rotator) {
  if (!(input.group == rotator.group()) || base_kernels.rank() != 5 ||
      base_kernels.dim(2) != input.group.order())
    throw ShapeError("group_conv: group order mismatch between input and kernels");
  if (base_kernels.dim(1) != input.channels())
    throw ShapeError("group_conv: kernels expect " + std::to_string(base_kernels.dim(1)) +
                     " input channels, got " + std::to_string(input.channels()));
  const std::int64_t n = input.group.order();
  const Tensor flat = reshape(input.values, {input.batch(), input.channels() * n, input.height(),
                                             input.width()});
  const Tensor out = conv2d_valid(flat, rotator.expand_group(base_kernels));
  return {reshape(out, {out.dim(0), out.dim(1) / n, n, out.dim(2), out.dim(3)}), input.group};
}

GroupFeatureMap group_conv(const GroupFeatureMap& input, const Tensor& base_kernels) {
  if (base_kernels.rank() != 5) throw ShapeError("group_conv expects [Cout,Cin,|G|,k,k] kernels");
  if (base_kernels.dim(2) != input.group.order())
    throw ShapeError("group_conv: group order mismatch between input and kernels");
  return group_conv(input, base_kernels,
                    KernelRotator(static_cast<int>(base_kernels.dim(-1)), input.group));
}

Tensor group_pool(const GroupFeatureMap& input) { return max(input.values, 2); }

Tensor cyclic_shift(const Tensor& x, int axis, int offset) {
  const int r = x.rank();
  const int ax = axis < 0 ? axis + r : axis;
  if (ax < 0 || ax >= r) throw ShapeError("cyclic_shift: axis out of range");
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.dim(i);
  for (int i = ax + 1; i < r; ++i) inner *= x.dim(i);
  const std::int64_t n = x.dim(ax);
  const std::int64_t s = ((offset % n) + n) % n;
  return dispatch(x.dtype(), [&]<typename T>() {
    auto in = x.data<T>();
    std::vector<T> out(in.size());
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t g = 0; g < n; ++g) {
        const std::int64_t from = (g - s + n) % n;
        std::copy_n(in.begin() + (o * n + from) * inner, inner, out.begin() + (o * n + g) * inner);
      }
    return Tensor::make_result<T>(x.shape(), std::move(out), {x},
                                  [outer, inner, n, s](detail::Node& self) {
                                    auto go = std::span<const T>(self.gbuf<T>());
                                    auto gi = self.parents[0]->grad_span<T>();
                                    for (std::int64_t o = 0; o < outer; ++o)
                                      for (std::int64_t g = 0; g < n; ++g) {
                                        const std::int64_t from = (g - s + n) % n;
                                        for (std::int64_t i = 0; i < inner; ++i)
                                          gi[(o * n + from) * inner + i] += go[(o * n + g) * inner + i];
                                      }
                                  });
  });
}

GroupFeatureMap cyclic_shift(const GroupFeatureMap& x, int offset) {
  return {cyclic_shift(x.values, 2, offset), x.group};
}

GroupFeatureMap cyclic_shift(const GroupFeatureMap& x, std::span<const int> offsets) {
  const std::int64_t b = x.batch(), c = x.channels(), h = x.height(), w = x.width();
  const std::int64_t n = x.group.order();
  const std::int64_t hw = h * w;
  if (static_cast<std::int64_t>(offsets.size()) != b * hw)
    throw ShapeError("cyclic_shift: expected " + std::to_string(b * hw) + " per-pixel offsets");
  std::vector<int> shift(offsets.size());
  for (std::size_t i = 0; i < offsets.size(); ++i) shift[i] = x.group.wrap(offsets[i]);
  auto source_slot = [n](std::int64_t g, int s) { return (g - s + n) % n; };
  Tensor out = dispatch(x.values.dtype(), [&]<typename T>() {
    auto in = x.values.data<T>();
    std::vector<T> res(in.size());
    for (std::int64_t bi = 0; bi < b; ++bi)
      for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t g = 0; g < n; ++g) {
          const std::int64_t dst = ((bi * c + ci) * n + g) * hw;
          for (std::int64_t p = 0; p < hw; ++p) {
            const std::int64_t from = source_slot(g, shift[bi * hw + p]);
            res[dst + p] = in[((bi * c + ci) * n + from) * hw + p];
          }
        }
    return Tensor::make_result<T>(
        x.values.shape(), std::move(res), {x.values},
        [b, c, n, hw, shift, source_slot](detail::Node& self) {
          auto go = std::span<const T>(self.gbuf<T>());
          auto gi = self.parents[0]->grad_span<T>();
          for (std::int64_t bi = 0; bi < b; ++bi)
            for (std::int64_t ci = 0; ci < c; ++ci)
              for (std::int64_t g = 0; g < n; ++g) {
                const std::int64_t dst = ((bi * c + ci) * n + g) * hw;
                for (std::int64_t p = 0; p < hw; ++p) {
                  const std::int64_t from = source_slot(g, shift[bi * hw + p]);
                  gi[((bi * c + ci) * n + from) * hw + p] += go[dst + p];
                }
              }
        });
  });
  return {out, x.group};
}

Tensor rot90(const Tensor& x, int quarter_turns) {
  if (x.rank() < 2) throw ShapeError("rot90 needs at least two axes");
  const int q = ((quarter_turns % 4) + 4) % 4;
  Tensor cur = x.detach();
  for (int t = 0; t < q; ++t) {
    const std::int64_t h = cur.dim(-2), w = cur.dim(-1);
    const std::int64_t planes = cur.numel() / (h * w);
    Shape shape = cur.shape();
    shape[shape.size() - 2] = w;
    shape[shape.size() - 1] = h;
    cur = dispatch(cur.dtype(), [&]<typename T>() {
      auto in = cur.data<T>();
      std::vector<T> out(in.size());
      for (std::int64_t p = 0; p < planes; ++p)
        for (std::int64_t i = 0; i < w; ++i)
          for (std::int64_t j = 0; j < h; ++j)
            out[p * h * w + i * h + j] = in[p * h * w + j * w + (w - 1 - i)];
      return Tensor::from_data(shape, std::move(out));
    });
  }
  return cur;
}

}  // namespace ride
