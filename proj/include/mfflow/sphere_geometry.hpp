#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mfflow/random.hpp"

namespace mfflow {

/// Ambient dimension split along a subspace H = span(e_1, ..., e_{d_H}).
class SplitDims {
 public:
  /// Requires 1 <= d_H and d_perp >= 1.
  SplitDims(int d_H, int d_perp);
  static SplitDims from_ambient(int d, int d_H);

  int d() const noexcept { return d_H_ + d_perp_; }
  int d_H() const noexcept { return d_H_; }
  int d_perp() const noexcept { return d_perp_; }

  friend bool operator==(const SplitDims&, const SplitDims&) = default;

 private:
  int d_H_;
  int d_perp_;
};

/// Law of the angle between a uniform point of S^{d-1} and H: density
/// proportional to cos(t)^{d_H-1} sin(t)^{d_perp-1} on [0, pi/2].
class AngleLaw {
 public:
  explicit AngleLaw(SplitDims dims) : dims_(dims) {}

  const SplitDims& dims() const noexcept { return dims_; }
  /// Unnormalized total mass (1/2) B(d_H/2, d_perp/2).
  double mass() const;
  /// Normalized density on [0, pi/2].
  double density(double theta) const;

 private:
  SplitDims dims_;
};

/// n uniform points on S^{p-1}, one per column (p x n).
Eigen::MatrixXd sample_uniform_sphere(int p, int n, RandomSource& rng);

/// n angles theta = arccos(sqrt(X)), X ~ Beta(d_H/2, d_perp/2).
std::vector<double> sample_angle_gamma(const SplitDims& dims, int n, RandomSource& rng);

/// n draws of the first coordinate of a uniform point on S^{p-1}:
/// eps * sqrt(X), X ~ Beta(1/2, (p-1)/2). For p = 1 this is uniform on {-1, +1}.
std::vector<double> sample_radial_gamma_p(int p, int n, RandomSource& rng);

/// cos(theta) zH + sin(theta) zPerp, with H occupying the leading coordinates.
Eigen::VectorXd compose_disintegration(double theta, const Eigen::VectorXd& zH,
                                       const Eigen::VectorXd& zPerp);

/// Uniform points on S^{d-1} drawn through the (angle, H-direction,
/// H-perp-direction) factorization; d x n.
Eigen::MatrixXd sample_sphere_by_disintegration(const SplitDims& dims, int n, RandomSource& rng);

/// 2 pi^{p/2} / Gamma(p/2).
double sphere_surface_area(int p);

/// Normalizer of the radial law: B(1/2, (p-1)/2); equals 2 for p = 1.
double radial_law_mass(int p);

}  // namespace mfflow
