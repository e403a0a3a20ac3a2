#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <tuple>

#include "mfflow/errors.hpp"
#include "mfflow/parallel.hpp"
#include "mfflow/reduced_flow.hpp"

namespace mfflow {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kHalfPi = 0.5 * kPi;
constexpr int kInnerNodes = 48;

/// Maps theta onto [0, pi/2]; the sign tells how d/dtheta transforms.
double fold(double theta, double& sign) {
  double a = std::fmod(theta, kPi);
  if (a < 0.0) a += kPi;
  sign = 1.0;
  if (a > kHalfPi) {
    a = kPi - a;
    sign = -1.0;
  }
  if (theta < 0.0) sign = -sign;
  return a;
}

}  // namespace

struct AngleLawQuadrature::Splines {
  std::vector<boost::math::interpolators::cardinal_cubic_b_spline<double>> per_node;
};

AngleLawQuadrature::AngleLawQuadrature(const SplitDims& dims, int nodes, int theta_grid)
    : dims_(dims), splines_(std::make_unique<Splines>()) {
  if (nodes < 2) throw InvalidArgument("AngleLawQuadrature: nodes must be >= 2");
  if (theta_grid < 5) throw InvalidArgument("AngleLawQuadrature: theta grid must be >= 5");
  const AngleLaw law(dims);
  const auto rule = gauss_legendre(nodes, 0.0, kHalfPi);
  phi_ = rule.nodes;
  weight_.resize(phi_.size());
  for (std::size_t n = 0; n < phi_.size(); ++n) weight_[n] = rule.weights[n] * law.density(phi_[n]);

  const double step = kHalfPi / (theta_grid - 1);
  const auto spec = QuadratureSpec::gauss(kInnerNodes);
  std::vector<std::vector<double>> samples(phi_.size(), std::vector<double>(static_cast<std::size_t>(theta_grid)));
  parallel_for(phi_.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t n = begin; n < end; ++n)
      for (int i = 0; i < theta_grid; ++i)
        samples[n][static_cast<std::size_t>(i)] = phi_tilde(dims, step * i, phi_[n], spec);
  }, 1);
  splines_->per_node.reserve(phi_.size());
  for (auto& row : samples)
    splines_->per_node.emplace_back(row.data(), row.size(), 0.0, step, 0.0, 0.0);
}

AngleLawQuadrature::~AngleLawQuadrature() = default;

std::shared_ptr<const AngleLawQuadrature> AngleLawQuadrature::cached(const SplitDims& dims, int nodes,
                                                                     int theta_grid) {
  static std::mutex mutex;
  static std::map<std::tuple<int, int, int, int>, std::shared_ptr<const AngleLawQuadrature>> cache;
  const auto key = std::make_tuple(dims.d_H(), dims.d_perp(), nodes, theta_grid);
  std::lock_guard lock(mutex);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto q = std::make_shared<const AngleLawQuadrature>(dims, nodes, theta_grid);
  cache.emplace(key, q);
  return q;
}

void AngleLawQuadrature::kernel_row(double theta, double* value, double* slope) const {
  double sign = 1.0;
  const double t = fold(theta, sign);
  for (std::size_t n = 0; n < phi_.size(); ++n) {
    const auto& s = splines_->per_node[n];
    value[n] = s(t);
    if (slope) slope[n] = sign * s.prime(t);
  }
}

Eigen::VectorXd AngleLawQuadrature::predict_at_nodes(const ReducedCloud& cloud) const {
  const auto n = static_cast<Eigen::Index>(phi_.size());
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd row(n);
  for (int j = 0; j < cloud.size(); ++j) {
    kernel_row(cloud.theta[j], row.data(), nullptr);
    f += cloud.c[j] * row;
  }
  return cloud.atom_weight * f;
}

double AngleLawQuadrature::objective(const ReducedCloud& cloud) const {
  const Eigen::VectorXd f = predict_at_nodes(cloud);
  double total = 0.0;
  for (std::size_t n = 0; n < phi_.size(); ++n) {
    const double r = std::cos(phi_[n]) - f[static_cast<Eigen::Index>(n)];
    total += weight_[n] * 0.5 * r * r;
  }
  return total;
}

GVEstimate AngleLawQuadrature::g_v(const ReducedCloud& cloud) const {
  const auto n = static_cast<Eigen::Index>(phi_.size());
  const Eigen::VectorXd f = predict_at_nodes(cloud);
  Eigen::VectorXd wr(n);
  for (Eigen::Index k = 0; k < n; ++k)
    wr[k] = weight_[static_cast<std::size_t>(k)] * (std::cos(phi_[static_cast<std::size_t>(k)]) - f[k]);

  GVEstimate out;
  out.g.resize(cloud.size());
  out.v.resize(cloud.size());
  parallel_for(static_cast<std::size_t>(cloud.size()), [&](std::size_t begin, std::size_t end) {
    Eigen::VectorXd value(n), slope(n);
    for (std::size_t j = begin; j < end; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      kernel_row(cloud.theta[jj], value.data(), slope.data());
      out.g[jj] = wr.dot(value);
      out.v[jj] = wr.dot(slope);
    }
  }, 64);
  return out;
}

std::pair<double, double> AngleLawQuadrature::target_term(double theta) const {
  std::vector<double> value(phi_.size()), slope(phi_.size());
  kernel_row(theta, value.data(), slope.data());
  double h = 0.0, dh = 0.0;
  for (std::size_t n = 0; n < phi_.size(); ++n) {
    const double w = weight_[n] * std::cos(phi_[n]);
    h += w * value[n];
    dh += w * slope[n];
  }
  return {h, dh};
}

}  // namespace mfflow
