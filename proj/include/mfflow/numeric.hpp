#pragma once

#include <span>
#include <vector>

namespace mfflow {

inline double relu(double z) { return z > 0.0 ? z : 0.0; }

/// ReLU subgradient with the convention relu'(0) = 0.
inline double relu_grad(double z) { return z > 0.0 ? 1.0 : 0.0; }

/// Pairwise (tree) summation in a fixed order: deterministic, O(eps log n) error.
double pairwise_sum(std::span<const double> values);

struct MeanAndError {
  double mean = 0.0;
  double stderr_ = 0.0;  // standard error of the mean
};

/// Sample mean and its standard error (unbiased variance / n).
MeanAndError mean_and_error(std::span<const double> values);

/// Gauss-Legendre nodes and weights on [lo, hi].
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
QuadratureRule gauss_legendre(int n, double lo, double hi);

}  // namespace mfflow
