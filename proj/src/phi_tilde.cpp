// phi~(theta; phi) = E[relu(r a + s b)], a = cos(phi) cos(theta), b = sin(phi) sin(theta),
// r and s independent first coordinates of uniform points on S^{d_H-1} and S^{d_perp-1}.
//
// Both laws are symmetric, so E[relu(X)] = E|X| / 2 and only |a|, |b| matter.
// Conditioning on c = s |b|, the r-integral h(c) = E_r| |a| r + c | is closed
// form in terms of the regularized incomplete beta function; the remaining
// s-integral is done by Gauss-Legendre after s = sin(u), split at the point
// |c| = |a| past which h(c) = |c| and the tail is again closed form.

#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <tuple>

#include "mfflow/errors.hpp"
#include "mfflow/reduced_flow.hpp"

namespace mfflow {

namespace {

constexpr double kHalfPi = 0.5 * std::numbers::pi;

/// Helpers for the radial law of dimension p (first coordinate on S^{p-1}).
struct RadialLaw {
  int p;
  double norm;  // B(1/2, (p-1)/2)

  explicit RadialLaw(int dim) : p(dim), norm(radial_law_mass(dim)) {}

  /// E[r ; r > t] for |t| < 1.
  double upper_first_moment(double t) const {
    if (p == 1) return 0.5;
    return std::pow(1.0 - t * t, 0.5 * (p - 1)) / ((p - 1) * norm);
  }

  /// P(|r| < |t|) = I_{t^2}(1/2, (p-1)/2).
  double central_mass(double t) const {
    if (p == 1) return 0.0;
    return boost::math::ibeta(0.5, 0.5 * (p - 1), t * t);
  }

  /// E_r |A r + c| for A > 0.
  double abs_affine_mean(double A, double c) const {
    const double ac = std::abs(c);
    if (p == 1) return std::max(A, ac);
    if (ac >= A) return ac;
    const double t0 = -c / A;
    // h = 2 A E[r; r > t0] + c (1 - 2 F(t0)),  c (1 - 2F(t0)) = |c| P(|r| < |t0|)
    return 2.0 * A * upper_first_moment(t0) + ac * central_mass(t0);
  }
};

double phi_tilde_gauss(const SplitDims& dims, double theta, double phi, int nodes) {
  const RadialLaw rlaw(dims.d_H());
  const RadialLaw slaw(dims.d_perp());
  const double A = std::abs(std::cos(phi) * std::cos(theta));
  const double B = std::abs(std::sin(phi) * std::sin(theta));

  if (B == 0.0) return A * rlaw.upper_first_moment(0.0);
  if (A == 0.0) return B * slaw.upper_first_moment(0.0);

  // E_s h(|s| B)
  double expectation = 0.0;
  if (slaw.p == 1) {
    expectation = rlaw.abs_affine_mean(A, B);
  } else {
    const double s_kink = A / B;
    double tail = 0.0;
    double upper_u = kHalfPi;
    if (s_kink < 1.0) {
      tail = B * 2.0 * slaw.upper_first_moment(s_kink);
      upper_u = std::asin(s_kink);
    }
    // |s| has density 2 (1 - s^2)^{(q-3)/2} / norm on [0, 1]; with s = sin(u)
    // this is 2 cos(u)^{q-2} du / norm.
    const auto rule = gauss_legendre(nodes, 0.0, upper_u);
    double body = 0.0;
    for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
      const double u = rule.nodes[k];
      const double w = 2.0 * std::pow(std::cos(u), slaw.p - 2) / slaw.norm;
      body += rule.weights[k] * w * rlaw.abs_affine_mean(A, std::sin(u) * B);
    }
    expectation = body + tail;
  }
  return 0.5 * expectation;
}

double phi_tilde_monte_carlo(const SplitDims& dims, double theta, double phi, int samples,
                             std::uint64_t seed) {
  RandomSource rng(seed, 0x9e3779b9U);
  const auto r = sample_radial_gamma_p(dims.d_H(), samples, rng);
  const auto s = sample_radial_gamma_p(dims.d_perp(), samples, rng);
  std::vector<double> vals(static_cast<std::size_t>(samples));
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = kernel_psi(r[i], s[i], theta, phi);
  return pairwise_sum(vals) / samples;
}

double fold_angle(double angle) {
  double a = std::fmod(std::abs(angle), std::numbers::pi);
  if (a > kHalfPi) a = std::numbers::pi - a;
  return a;
}

}  // namespace

double phi_tilde(const SplitDims& dims, double theta, double phi, const QuadratureSpec& spec) {
  if (spec.count < 1) throw InvalidArgument("phi_tilde: quadrature count must be >= 1");
  switch (spec.kind) {
    case QuadratureSpec::Kind::MonteCarlo:
      return phi_tilde_monte_carlo(dims, theta, phi, spec.count, spec.seed);
    case QuadratureSpec::Kind::Gauss:
      return phi_tilde_gauss(dims, theta, phi, spec.count);
  }
  return 0.0;
}

PhiTildeTable::PhiTildeTable(const SplitDims& dims, int grid, int gauss_nodes)
    : dims_(dims), grid_(grid), step_(0.0) {
  if (grid < 2) throw InvalidArgument("PhiTildeTable: grid must be >= 2");
  step_ = kHalfPi / (grid - 1);
  const auto n = static_cast<std::size_t>(grid);
  values_.assign(n * n, 0.0);
  const auto spec = QuadratureSpec::gauss(gauss_nodes);
  // phi~ is symmetric in (theta, phi).
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double v = phi_tilde(dims, step_ * i, step_ * j, spec);
      values_[i * n + j] = v;
      values_[j * n + i] = v;
    }
  }
}

std::shared_ptr<const PhiTildeTable> PhiTildeTable::cached(const SplitDims& dims, int grid) {
  static std::mutex mutex;
  static std::map<std::tuple<int, int, int>, std::shared_ptr<const PhiTildeTable>> cache;
  const auto key = std::make_tuple(dims.d_H(), dims.d_perp(), grid);
  std::lock_guard lock(mutex);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto table = std::make_shared<const PhiTildeTable>(dims, grid);
  cache.emplace(key, table);
  return table;
}

double PhiTildeTable::operator()(double theta, double phi) const {
  const double x = fold_angle(theta) / step_;
  const double y = fold_angle(phi) / step_;
  const int last = grid_ - 1;
  const int i = std::min(static_cast<int>(x), last - 1);
  const int j = std::min(static_cast<int>(y), last - 1);
  const double fx = x - i;
  const double fy = y - j;
  const auto n = static_cast<std::size_t>(grid_);
  const auto at = [&](int a, int b) {
    return values_[static_cast<std::size_t>(a) * n + static_cast<std::size_t>(b)];
  };
  return (1.0 - fx) * ((1.0 - fy) * at(i, j) + fy * at(i, j + 1)) +
         fx * ((1.0 - fy) * at(i + 1, j) + fy * at(i + 1, j + 1));
}

}  // namespace mfflow
