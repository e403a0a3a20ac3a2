#include "mfflow/sphere_geometry.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "mfflow/errors.hpp"

namespace mfflow {

namespace {

constexpr double kUnitInputTol = 1e-9;

}  // namespace

SplitDims::SplitDims(int d_H, int d_perp) : d_H_(d_H), d_perp_(d_perp) {
  if (d_H < 1) throw InvalidArgument("SplitDims: d_H must be >= 1");
  if (d_perp < 1) throw InvalidArgument("SplitDims: d_perp must be >= 1 (d_H < d)");
}

SplitDims SplitDims::from_ambient(int d, int d_H) {
  if (d_H >= d)
    throw InvalidArgument("SplitDims: d_H=" + std::to_string(d_H) + " must be < d=" +
                          std::to_string(d));
  return SplitDims(d_H, d - d_H);
}

double AngleLaw::mass() const { return 0.5 * std::beta(0.5 * dims_.d_H(), 0.5 * dims_.d_perp()); }

double AngleLaw::density(double theta) const {
  if (theta < 0.0 || theta > 0.5 * std::numbers::pi) return 0.0;
  return std::pow(std::cos(theta), dims_.d_H() - 1) * std::pow(std::sin(theta), dims_.d_perp() - 1) /
         mass();
}

Eigen::MatrixXd sample_uniform_sphere(int p, int n, RandomSource& rng) {
  if (p < 1 || n < 1) throw InvalidArgument("sample_uniform_sphere: p and n must be >= 1");
  Eigen::MatrixXd out(p, n);
  for (int j = 0; j < n; ++j) {
    double norm = 0.0;
    do {
      for (int k = 0; k < p; ++k) out(k, j) = rng.normal();
      norm = out.col(j).norm();
    } while (norm == 0.0);
    out.col(j) /= norm;
  }
  return out;
}

std::vector<double> sample_angle_gamma(const SplitDims& dims, int n, RandomSource& rng) {
  if (n < 0) throw InvalidArgument("sample_angle_gamma: negative count");
  std::vector<double> out(static_cast<std::size_t>(n));
  const double a = 0.5 * dims.d_H();
  const double b = 0.5 * dims.d_perp();
  for (auto& theta : out) theta = std::acos(std::sqrt(rng.beta(a, b)));
  return out;
}

std::vector<double> sample_radial_gamma_p(int p, int n, RandomSource& rng) {
  if (p < 1) throw InvalidArgument("sample_radial_gamma_p: p must be >= 1");
  if (n < 0) throw InvalidArgument("sample_radial_gamma_p: negative count");
  std::vector<double> out(static_cast<std::size_t>(n));
  if (p == 1) {
    for (auto& r : out) r = rng.sign();
    return out;
  }
  const double b = 0.5 * (p - 1);
  for (auto& r : out) {
    const int eps = rng.sign();
    r = eps * std::sqrt(rng.beta(0.5, b));
  }
  return out;
}

Eigen::VectorXd compose_disintegration(double theta, const Eigen::VectorXd& zH,
                                       const Eigen::VectorXd& zPerp) {
  if (std::abs(zH.norm() - 1.0) > kUnitInputTol || std::abs(zPerp.norm() - 1.0) > kUnitInputTol)
    throw InvalidArgument("compose_disintegration: zH and zPerp must be unit vectors");
  Eigen::VectorXd u(zH.size() + zPerp.size());
  u.head(zH.size()) = std::cos(theta) * zH;
  u.tail(zPerp.size()) = std::sin(theta) * zPerp;
  return u;
}

Eigen::MatrixXd sample_sphere_by_disintegration(const SplitDims& dims, int n, RandomSource& rng) {
  const auto theta = sample_angle_gamma(dims, n, rng);
  const Eigen::MatrixXd zH = sample_uniform_sphere(dims.d_H(), n, rng);
  const Eigen::MatrixXd zPerp = sample_uniform_sphere(dims.d_perp(), n, rng);
  Eigen::MatrixXd out(dims.d(), n);
  for (int j = 0; j < n; ++j)
    out.col(j) = compose_disintegration(theta[static_cast<std::size_t>(j)], zH.col(j), zPerp.col(j));
  return out;
}

double sphere_surface_area(int p) {
  if (p < 1) throw InvalidArgument("sphere_surface_area: p must be >= 1");
  return 2.0 * std::pow(std::numbers::pi, 0.5 * p) / std::tgamma(0.5 * p);
}

double radial_law_mass(int p) {
  if (p < 1) throw InvalidArgument("radial_law_mass: p must be >= 1");
  if (p == 1) return 2.0;
  return std::beta(0.5, 0.5 * (p - 1));
}

}  // namespace mfflow
