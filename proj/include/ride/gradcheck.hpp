#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ride/tensor.hpp"

namespace ride {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error, guards exact zeros.
  double denominator_floor = 1e-8;
};

struct GradCheckResult {
  std::int64_t checked = 0;
  std::int64_t passed = 0;
  double max_relative_error = 0.0;
  double median_relative_error = 0.0;

  [[nodiscard]] double pass_fraction() const {
    return checked == 0 ? 1.0 : static_cast<double>(passed) / static_cast<double>(checked);
  }
};

/// Compares backward() gradients of `loss_fn` with central finite
/// differences over every element of `params` (64-bit leaves). `loss_fn`
/// must be a deterministic function of the parameter values.
GradCheckResult gradcheck(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& params,
                          const GradCheckOptions& options = {});

}  // namespace ride
