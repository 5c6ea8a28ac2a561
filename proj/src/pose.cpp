#include "ride/pose.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <Eigen/Dense>

#include "ride/error.hpp"
#include "ride/rng.hpp"

namespace ride {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0 && fy > 0.0)) throw ContractError("focal lengths must be positive");
}

namespace {

// Hartley conditioning: centroid to origin, mean distance sqrt(2).
Eigen::Matrix3d conditioning(std::span<const Eigen::Vector2d> pts) {
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double d = 0.0;
  for (const auto& p : pts) d += (p - c).norm();
  d /= static_cast<double>(pts.size());
  const double s = d > 1e-12 ? std::sqrt(2.0) / d : 1.0;
  Eigen::Matrix3d t;
  t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return t;
}

Eigen::Matrix3d project_essential(const Eigen::Matrix3d& e) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d s = svd.singularValues();
  const double m = 0.5 * (s(0) + s(1));
  return svd.matrixU() * Eigen::Vector3d(m, m, 0.0).asDiagonal() * svd.matrixV().transpose();
}

Eigen::Vector3d bearing(const Eigen::Vector2d& x) { return x.homogeneous().normalized(); }

}  // namespace

bool eight_point(std::span<const Eigen::Vector2d> xa, std::span<const Eigen::Vector2d> xb, Eigen::Matrix3d& e) {
  if (xa.size() != xb.size() || xa.size() < 8) return false;
  const Eigen::Matrix3d ta = conditioning(xa), tb = conditioning(xb);
  Eigen::MatrixXd a(static_cast<Eigen::Index>(xa.size()), 9);
  for (std::size_t i = 0; i < xa.size(); ++i) {
    const Eigen::Vector3d p = ta * xa[i].homogeneous();
    const Eigen::Vector3d q = tb * xb[i].homogeneous();
    a.row(static_cast<Eigen::Index>(i)) << q.x() * p.x(), q.x() * p.y(), q.x(), q.y() * p.x(), q.y() * p.y(), q.y(),
        p.x(), p.y(), 1.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(0) <= 0.0 || sv(7) / sv(0) < 1e-9) return false;
  const Eigen::VectorXd v = svd.matrixV().col(8);
  Eigen::Matrix3d f;
  f << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
  e = project_essential(tb.transpose() * f * ta);
  const double n = e.norm();
  if (!(n > 0.0) || !std::isfinite(n)) return false;
  e /= n;
  return true;
}

double sampson_distance(const Eigen::Matrix3d& e, const Eigen::Vector2d& xa, const Eigen::Vector2d& xb) {
  const Eigen::Vector3d pa = xa.homogeneous(), pb = xb.homogeneous();
  const Eigen::Vector3d ea = e * pa;
  const Eigen::Vector3d etb = e.transpose() * pb;
  const double num = pb.dot(ea);
  const double den = ea.x() * ea.x() + ea.y() * ea.y() + etb.x() * etb.x() + etb.y() * etb.y();
  return den > 0.0 ? num * num / den : std::numeric_limits<double>::infinity();
}

int decompose_essential(const Eigen::Matrix3d& e, std::span<const Eigen::Vector2d> xa,
                        std::span<const Eigen::Vector2d> xb, Eigen::Matrix3d& rotation, Eigen::Vector3d& translation) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU(), v = svd.matrixV();
  if (u.determinant() < 0) u = -u;
  if (v.determinant() < 0) v = -v;
  Eigen::Matrix3d w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Eigen::Matrix3d rs[2] = {u * w * v.transpose(), u * w.transpose() * v.transpose()};
  const Eigen::Vector3d tu = u.col(2);
  int best = -1;
  for (const auto& r : rs) {
    for (double sign : {1.0, -1.0}) {
      const Eigen::Vector3d t = sign * tu;
      int front = 0;
      for (std::size_t i = 0; i < xa.size(); ++i) {
        // lambda_b xb = lambda_a R xa + t, solved in least squares.
        Eigen::Matrix<double, 3, 2> m;
        m.col(0) = r * xa[i].homogeneous();
        m.col(1) = -xb[i].homogeneous();
        const Eigen::Vector2d depth = m.colPivHouseholderQr().solve(-t);
        if (depth(0) > 0.0 && depth(1) > 0.0) ++front;
      }
      if (front > best) {
        best = front;
        rotation = r;
        translation = t.normalized();
      }
    }
  }
  return best;
}

PoseEstimate estimate_relative_pose(std::span<const Eigen::Vector2d> points_a,
                                    std::span<const Eigen::Vector2d> points_b, const CameraIntrinsics& camera_a,
                                    const CameraIntrinsics& camera_b, const RansacOptions& options) {
  camera_a.validate();
  camera_b.validate();
  if (points_a.size() != points_b.size()) throw ShapeError("point lists differ in length");
  PoseEstimate out;
  const std::size_t n = points_a.size();
  if (n < 8) {
    out.failure = "fewer than 8 matches";
    return out;
  }
  std::vector<Eigen::Vector2d> xa(n), xb(n);
  for (std::size_t i = 0; i < n; ++i) {
    xa[i] = camera_a.normalize(points_a[i]);
    xb[i] = camera_b.normalize(points_b[i]);
  }
  const double focal = 0.25 * (camera_a.fx + camera_a.fy + camera_b.fx + camera_b.fy);
  const double thr = options.threshold_px / focal;
  const double thr2 = thr * thr;

  auto inliers_of = [&](const Eigen::Matrix3d& e) {
    std::vector<std::int64_t> in;
    for (std::size_t i = 0; i < n; ++i)
      if (sampson_distance(e, xa[i], xb[i]) < thr2) in.push_back(static_cast<std::int64_t>(i));
    return in;
  };

  Rng rng(options.seed);
  Rng local = rng.substream("local");
  std::vector<std::size_t> idx(n);
  std::vector<Eigen::Vector2d> sa(8), sb(8);
  std::vector<std::int64_t> best_inliers;
  Eigen::Matrix3d best_e = Eigen::Matrix3d::Zero();
  for (int it = 0; it < options.iterations; ++it) {
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t k = 0; k < 8; ++k) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(k), static_cast<std::int64_t>(n) - 1));
      std::swap(idx[k], idx[j]);
      sa[k] = xa[idx[k]];
      sb[k] = xb[idx[k]];
    }
    Eigen::Matrix3d e;
    if (!eight_point(sa, sb, e)) continue;
    auto in = inliers_of(e);
    if (in.size() <= best_inliers.size()) continue;
    best_inliers = std::move(in);
    best_e = e;
    // Local optimization: resample from the new consensus set.
    for (int r = 0; r < options.local_iterations && best_inliers.size() > 8; ++r) {
      const auto m = best_inliers.size();
      std::vector<std::int64_t> pool = best_inliers;
      for (std::size_t k = 0; k < 8; ++k) {
        const auto j = static_cast<std::size_t>(local.uniform_int(static_cast<std::int64_t>(k), static_cast<std::int64_t>(m) - 1));
        std::swap(pool[k], pool[j]);
        sa[k] = xa[static_cast<std::size_t>(pool[k])];
        sb[k] = xb[static_cast<std::size_t>(pool[k])];
      }
      Eigen::Matrix3d le;
      if (!eight_point(sa, sb, le)) continue;
      auto lin = inliers_of(le);
      if (lin.size() > best_inliers.size()) {
        best_inliers = std::move(lin);
        best_e = le;
      }
    }
  }
  if (best_inliers.size() < 8) {
    out.failure = "degenerate configuration";
    return out;
  }

  auto subset = [&](const std::vector<std::int64_t>& in, std::vector<Eigen::Vector2d>& ia,
                    std::vector<Eigen::Vector2d>& ib) {
    ia.clear();
    ib.clear();
    for (auto i : in) {
      ia.push_back(xa[static_cast<std::size_t>(i)]);
      ib.push_back(xb[static_cast<std::size_t>(i)]);
    }
  };
  std::vector<Eigen::Vector2d> ia, ib;
  subset(best_inliers, ia, ib);
  Eigen::Matrix3d refit;
  if (eight_point(ia, ib, refit)) {
    auto in = inliers_of(refit);
    if (in.size() >= best_inliers.size()) {
      best_inliers = std::move(in);
      best_e = refit;
      subset(best_inliers, ia, ib);
    }
  }

  // Pure rotation (no baseline) leaves the translation direction undefined.
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < ia.size(); ++i) h += bearing(ia[i]) * bearing(ib[i]).transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> ksvd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d fix = Eigen::Matrix3d::Identity();
  fix(2, 2) = (ksvd.matrixV() * ksvd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
  const Eigen::Matrix3d r_only = ksvd.matrixV() * fix * ksvd.matrixU().transpose();
  std::vector<double> residual;
  for (std::size_t i = 0; i < ia.size(); ++i)
    residual.push_back(std::acos(std::clamp(bearing(ib[i]).dot(r_only * bearing(ia[i])), -1.0, 1.0)));
  std::nth_element(residual.begin(), residual.begin() + static_cast<std::ptrdiff_t>(residual.size() / 2), residual.end());
  if (residual[residual.size() / 2] < thr) {
    out.failure = "no parallax";
    out.inliers = best_inliers;
    return out;
  }

  decompose_essential(best_e, ia, ib, out.rotation, out.translation);
  out.inliers = std::move(best_inliers);
  out.valid = true;
  return out;
}

PoseError pose_error(const Eigen::Matrix3d& r_est, const Eigen::Vector3d& t_est, const Eigen::Matrix3d& r_true,
                     const Eigen::Vector3d& t_true) {
  constexpr double deg = 180.0 / std::numbers::pi;
  PoseError e;
  const double c = std::clamp(((r_est.transpose() * r_true).trace() - 1.0) / 2.0, -1.0, 1.0);
  e.rotation_deg = std::acos(c) * deg;
  const double nt = t_est.norm() * t_true.norm();
  const double ct = nt > 0.0 ? std::clamp(t_est.dot(t_true) / nt, -1.0, 1.0) : 1.0;
  const double theta = std::acos(ct) * deg;
  e.translation_deg = std::min(theta, 180.0 - theta);
  e.combined = std::max(e.rotation_deg, e.translation_deg);
  return e;
}

}  // namespace ride
