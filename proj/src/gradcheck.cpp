#include "ride/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace ride {

GradCheckResult gradcheck(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& params,
                          const GradCheckOptions& options) {
  for (const auto& p : params)
    if (p.dtype() != DType::f64 || !p.requires_grad() || !p.is_leaf())
      throw ContractError("gradcheck parameters must be 64-bit leaves requiring grad");

  std::vector<Tensor> ps = params;
  for (auto& p : ps) p.zero_grad();
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (const auto& p : ps) analytic.push_back(p.grad().to_vector());

  GradCheckResult result;
  std::vector<double> errors;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto values = ps[k].data<double>();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double plus = loss_fn().item();
      values[i] = saved - options.step;
      const double minus = loss_fn().item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      const double rel = std::abs(a - numeric) / denom;
      errors.push_back(rel);
      ++result.checked;
      if (rel < options.tolerance) ++result.passed;
      result.max_relative_error = std::max(result.max_relative_error, rel);
    }
  }
  if (!errors.empty()) {
    auto mid = errors.begin() + static_cast<std::ptrdiff_t>(errors.size() / 2);
    std::nth_element(errors.begin(), mid, errors.end());
    result.median_relative_error = *mid;
  }
  return result;
}

}  // namespace ride
