#include "ride/matching.hpp"

#include <cmath>
#include <limits>

namespace ride {

namespace {

constexpr Eigen::Index kBlockRows = 1024;

template <typename Visit>
void for_each_score_block(const DescriptorMatrix& a, const DescriptorMatrix& b, Visit&& visit) {
  Eigen::MatrixXf block;
  for (Eigen::Index start = 0; start < a.rows(); start += kBlockRows) {
    const Eigen::Index rows = std::min(kBlockRows, a.rows() - start);
    block.noalias() = a.middleRows(start, rows) * b.transpose();
    visit(start, block);
  }
}

void check_dims(const DescriptorMatrix& a, const DescriptorMatrix& b) {
  if (a.rows() > 0 && b.rows() > 0 && a.cols() != b.cols())
    throw ShapeError("descriptor sets differ in dimension");
}

}  // namespace

DescriptorMatrix to_descriptor_matrix(const Tensor& descriptors) {
  if (descriptors.rank() != 2) throw ShapeError("descriptors must be [N, D]");
  DescriptorMatrix m(descriptors.dim(0), descriptors.dim(1));
  const auto v = descriptors.to_vector();
  for (std::size_t i = 0; i < v.size(); ++i) m.data()[i] = static_cast<float>(v[i]);
  return m;
}

std::vector<Match> match_mnn(const DescriptorMatrix& a, const DescriptorMatrix& b) {
  check_dims(a, b);
  std::vector<Match> out;
  if (a.rows() == 0 || b.rows() == 0) return out;
  const auto na = a.rows(), nb = b.rows();
  std::vector<Eigen::Index> row_best(static_cast<std::size_t>(na));
  std::vector<float> row_val(static_cast<std::size_t>(na));
  std::vector<Eigen::Index> col_best(static_cast<std::size_t>(nb), -1);
  std::vector<float> col_val(static_cast<std::size_t>(nb), -std::numeric_limits<float>::infinity());
  for_each_score_block(a, b, [&](Eigen::Index start, const Eigen::MatrixXf& s) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      Eigen::Index best = 0;
      float best_v = s(i, 0);
      for (Eigen::Index j = 0; j < nb; ++j) {
        const float v = s(i, j);
        if (v > best_v) {
          best_v = v;
          best = j;
        }
        if (v > col_val[static_cast<std::size_t>(j)] || col_best[static_cast<std::size_t>(j)] < 0) {
          col_val[static_cast<std::size_t>(j)] = v;
          col_best[static_cast<std::size_t>(j)] = start + i;
        }
      }
      row_best[static_cast<std::size_t>(start + i)] = best;
      row_val[static_cast<std::size_t>(start + i)] = best_v;
    }
  });
  for (Eigen::Index i = 0; i < na; ++i) {
    const auto j = row_best[static_cast<std::size_t>(i)];
    if (col_best[static_cast<std::size_t>(j)] == i) out.push_back({i, j, row_val[static_cast<std::size_t>(i)]});
  }
  return out;
}

std::vector<Match> match_dual_softmax(const DescriptorMatrix& a, const DescriptorMatrix& b,
                                      double temperature, double threshold) {
  if (!(temperature > 0.0)) throw ContractError("temperature must be positive");
  if (threshold < 0.0 || threshold > 1.0) throw ContractError("threshold must lie in [0, 1]");
  check_dims(a, b);
  std::vector<Match> out;
  if (a.rows() == 0 || b.rows() == 0) return out;
  const auto na = a.rows(), nb = b.rows();
  const double inv_t = 1.0 / temperature;

  // Log-sum-exp of S / t along rows and (online) along columns.
  std::vector<double> row_lse(static_cast<std::size_t>(na));
  std::vector<double> col_max(static_cast<std::size_t>(nb), -std::numeric_limits<double>::infinity());
  std::vector<double> col_sum(static_cast<std::size_t>(nb), 0.0);
  for_each_score_block(a, b, [&](Eigen::Index start, const Eigen::MatrixXf& s) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < nb; ++j) m = std::max(m, s(i, j) * inv_t);
      double acc = 0.0;
      for (Eigen::Index j = 0; j < nb; ++j) {
        const double v = s(i, j) * inv_t;
        acc += std::exp(v - m);
        auto& cm = col_max[static_cast<std::size_t>(j)];
        auto& cs = col_sum[static_cast<std::size_t>(j)];
        if (v > cm) {
          cs = cs * std::exp(cm - v) + 1.0;
          cm = v;
        } else {
          cs += std::exp(v - cm);
        }
      }
      row_lse[static_cast<std::size_t>(start + i)] = m + std::log(acc);
    }
  });
  std::vector<double> col_lse(static_cast<std::size_t>(nb));
  for (Eigen::Index j = 0; j < nb; ++j)
    col_lse[static_cast<std::size_t>(j)] = col_max[static_cast<std::size_t>(j)] + std::log(col_sum[static_cast<std::size_t>(j)]);

  // log P(i, j) = 2 S / t - row_lse(i) - col_lse(j).
  std::vector<Eigen::Index> row_best(static_cast<std::size_t>(na));
  std::vector<double> row_logp(static_cast<std::size_t>(na));
  std::vector<Eigen::Index> col_best(static_cast<std::size_t>(nb), -1);
  std::vector<double> col_logp(static_cast<std::size_t>(nb), -std::numeric_limits<double>::infinity());
  for_each_score_block(a, b, [&](Eigen::Index start, const Eigen::MatrixXf& s) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const Eigen::Index gi = start + i;
      const double ri = row_lse[static_cast<std::size_t>(gi)];
      Eigen::Index best = -1;
      double best_v = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < nb; ++j) {
        const double lp = 2.0 * s(i, j) * inv_t - ri - col_lse[static_cast<std::size_t>(j)];
        if (best < 0 || lp > best_v) {
          best_v = lp;
          best = j;
        }
        if (col_best[static_cast<std::size_t>(j)] < 0 || lp > col_logp[static_cast<std::size_t>(j)]) {
          col_logp[static_cast<std::size_t>(j)] = lp;
          col_best[static_cast<std::size_t>(j)] = gi;
        }
      }
      row_best[static_cast<std::size_t>(gi)] = best;
      row_logp[static_cast<std::size_t>(gi)] = best_v;
    }
  });
  for (Eigen::Index i = 0; i < na; ++i) {
    const auto j = row_best[static_cast<std::size_t>(i)];
    if (col_best[static_cast<std::size_t>(j)] != i) continue;
    const double p = std::exp(row_logp[static_cast<std::size_t>(i)]);
    if (p >= threshold) out.push_back({i, j, p});
  }
  return out;
}

}  // namespace ride
