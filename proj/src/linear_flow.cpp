#include "mfflow/linear_flow.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mfflow/errors.hpp"

namespace mfflow {

namespace {

constexpr double kMaxCondition = 1e12;
constexpr double kGapFloor = 1e-14;
constexpr int kMinFitPoints = 10;

}  // namespace

Dataset::Dataset(Eigen::MatrixXd x, Eigen::VectorXd y) : x_(std::move(x)), y_(std::move(y)) {
  if (x_.rows() < 1 || x_.cols() < 1) throw InvalidArgument("Dataset: empty design");
  if (y_.size() != x_.rows()) throw InvalidArgument("Dataset: x and y lengths differ");
  if (!x_.allFinite() || !y_.allFinite()) throw InvalidArgument("Dataset: non-finite entries");
  const auto n = static_cast<double>(x_.rows());
  c_ = x_.transpose() * x_ / n;
  c_ = 0.5 * (c_ + c_.transpose()).eval();
  beta_ = x_.transpose() * y_ / n;
}

Dataset Dataset::figure1_recipe(int n, int d, RandomSource& rng) {
  if (n < 1 || d < 1) throw InvalidArgument("figure1_recipe: n and d must be positive");
  Eigen::MatrixXd x(n, d);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k) x(i, k) = rng.uniform(-1.0, 1.0);
  const double y_star = rng.normal();
  const double sd = std::sqrt(2.0);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = y_star + sd * rng.normal();
  return {std::move(x), std::move(y)};
}

OlsSolution ols_optimum(const Dataset& data) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(data.second_moment(), Eigen::EigenvaluesOnly);
  OlsSolution out;
  out.lambda_min = eig.eigenvalues().minCoeff();
  out.lambda_max = eig.eigenvalues().maxCoeff();
  if (!(out.lambda_min > 0.0) || out.lambda_max / out.lambda_min > kMaxCondition)
    throw IllPosed("ols_optimum: second-moment matrix is singular or badly conditioned");
  out.w_star = data.second_moment().ldlt().solve(data.beta());
  out.q_min = q_value_and_grad(data, out.w_star).value;
  return out;
}

QValueGrad q_value_and_grad(const Dataset& data, const Eigen::VectorXd& w) {
  if (w.size() != data.d()) throw InvalidArgument("q_value_and_grad: dimension mismatch");
  const Eigen::VectorXd r = data.y() - data.x() * w;
  return {0.5 * r.squaredNorm() / data.n(), data.second_moment() * w - data.beta()};
}

double q_gap(const Dataset& data, const OlsSolution& ols, const Eigen::VectorXd& w) {
  const Eigen::VectorXd e = w - ols.w_star;
  return 0.5 * e.dot(data.second_moment() * e);
}

LinearFlowState init_linear_state(std::shared_ptr<const Dataset> data, int m, RandomSource& rng,
                                  bool zero_start) {
  if (!data) throw InvalidArgument("init_linear_state: no dataset");
  if (data->d() < 2) throw InvalidArgument("init_linear_state: need d >= 2");
  const auto dims = SplitDims::from_ambient(data->d(), 1);
  if (!zero_start) return {init_cloud(dims, m, rng), std::move(data)};
  if (m < 2 || m % 2 != 0) throw InvalidArgument("init_linear_state: zero start needs an even width");
  const ParticleCloud half = init_cloud(dims, m / 2, rng);
  ParticleCloud cloud{dims, Eigen::VectorXd(m), Eigen::MatrixXd(m, dims.d())};
  cloud.a << half.a, half.a;
  cloud.b << half.b, -half.b;
  return {std::move(cloud), std::move(data)};
}

Eigen::MatrixXd h_matrix(const ParticleCloud& cloud) {
  Eigen::MatrixXd h = cloud.b.transpose() * cloud.b;
  h.diagonal().array() += cloud.a.squaredNorm();
  h /= 4.0 * cloud.width();
  return 0.5 * (h + h.transpose());
}

double min_eigenvalue(const Eigen::MatrixXd& symmetric) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetric, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

Velocity linear_velocity(const LinearFlowState& state) {
  // mean_i R(x_i) x_i = beta - C w = -grad Q(w)
  const Eigen::VectorXd g = q_value_and_grad(*state.data, state.w()).grad;
  Velocity v;
  v.a = -0.5 * (state.cloud.b * g);
  v.b = -0.5 * state.cloud.a * g.transpose();
  return v;
}

LinearFlowState step_mean_field_linear(LinearFlowState state, double eta, std::size_t iteration) {
  if (!(eta >= 0.0)) throw InvalidArgument("step_mean_field_linear: eta must be >= 0");
  if (eta == 0.0) return state;
  const Velocity v = linear_velocity(state);
  state.cloud.a += eta * v.a;
  state.cloud.b += eta * v.b;
  if (!state.cloud.a.allFinite() || !state.cloud.b.allFinite())
    throw NumericalBlowup("step_mean_field_linear: non-finite particle", iteration);
  return state;
}

RateFit fit_exponential_rate(std::span<const double> t, std::span<const double> gap) {
  if (t.size() != gap.size()) throw InvalidArgument("fit_exponential_rate: length mismatch");
  std::vector<double> ts, ls;
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (gap[k] > kGapFloor && std::isfinite(gap[k])) {
      ts.push_back(t[k]);
      ls.push_back(std::log(gap[k]));
    }
  }
  if (static_cast<int>(ts.size()) < kMinFitPoints)
    throw InsufficientData("fit_exponential_rate: fewer than 10 usable points");
  const std::size_t start = ts.size() / 2;
  const auto n = static_cast<double>(ts.size() - start);
  double mt = 0.0, ml = 0.0;
  for (std::size_t k = start; k < ts.size(); ++k) {
    mt += ts[k];
    ml += ls[k];
  }
  mt /= n;
  ml /= n;
  double stt = 0.0, stl = 0.0, sll = 0.0;
  for (std::size_t k = start; k < ts.size(); ++k) {
    stt += (ts[k] - mt) * (ts[k] - mt);
    stl += (ts[k] - mt) * (ls[k] - ml);
    sll += (ls[k] - ml) * (ls[k] - ml);
  }
  if (!(stt > 0.0)) throw InsufficientData("fit_exponential_rate: all times coincide");
  const double slope = stl / stt;
  RateFit out;
  out.rate = -slope;
  out.points_used = static_cast<int>(n);
  const double ss_res = sll - slope * stl;
  out.r2 = sll > 0.0 ? std::max(0.0, 1.0 - ss_res / sll) : 1.0;
  return out;
}

std::vector<Eigen::VectorXd> gd_on_q_baseline(const Dataset& data, const Eigen::VectorXd& w0, double lr,
                                              int steps) {
  if (!(lr > 0.0)) throw InvalidArgument("gd_on_q_baseline: lr must be > 0");
  if (steps < 0) throw InvalidArgument("gd_on_q_baseline: negative step count");
  if (w0.size() != data.d()) throw InvalidArgument("gd_on_q_baseline: dimension mismatch");
  std::vector<Eigen::VectorXd> traj;
  traj.reserve(static_cast<std::size_t>(steps) + 1);
  traj.push_back(w0);
  Eigen::VectorXd w = w0;
  for (int k = 0; k < steps; ++k) {
    w -= lr * (data.second_moment() * w - data.beta());
    traj.push_back(w);
  }
  return traj;
}

}  // namespace mfflow
