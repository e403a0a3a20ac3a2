#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "mfflow/numeric.hpp"

namespace testing {

/// Mean of f over n draws and its standard error.
inline mfflow::MeanAndError sample_stat(int n, const std::function<double()>& draw) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = draw();
  return mfflow::mean_and_error(v);
}

/// |estimate - truth| within k standard errors.
inline bool within_se(const mfflow::MeanAndError& e, double truth, double k = 3.0) {
  return std::abs(e.mean - truth) <= k * e.stderr_;
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

}  // namespace testing
