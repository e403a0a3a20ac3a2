#pragma once

#include <Eigen/Dense>
#include <memory>
#include <span>
#include <vector>

#include "mfflow/mean_field_flow.hpp"
#include "mfflow/random.hpp"

namespace mfflow {

/// Finite regression dataset; rows of x are the inputs.
class Dataset {
 public:
  Dataset(Eigen::MatrixXd x, Eigen::VectorXd y);

  /// x_i ~ U([-1, 1]^d), y_i ~ N(y*, 2) i.i.d. with a single y* ~ N(0, 1).
  static Dataset figure1_recipe(int n, int d, RandomSource& rng);

  int n() const noexcept { return static_cast<int>(x_.rows()); }
  int d() const noexcept { return static_cast<int>(x_.cols()); }
  const Eigen::MatrixXd& x() const noexcept { return x_; }
  const Eigen::VectorXd& y() const noexcept { return y_; }
  /// C = (1/n) sum x_i x_i^T
  const Eigen::MatrixXd& second_moment() const noexcept { return c_; }
  /// beta = (1/n) sum y_i x_i
  const Eigen::VectorXd& beta() const noexcept { return beta_; }

 private:
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  Eigen::MatrixXd c_;
  Eigen::VectorXd beta_;
};

struct OlsSolution {
  Eigen::VectorXd w_star;
  double q_min = 0.0;
  double lambda_min = 0.0;  // smallest eigenvalue of C
  double lambda_max = 0.0;
};

/// Minimizer of Q; throws IllPosed when C is singular or its condition
/// number exceeds 1e12.
OlsSolution ols_optimum(const Dataset& data);

struct QValueGrad {
  double value = 0.0;
  Eigen::VectorXd grad;
};
/// Q(w) = (1/2n) sum (y_i - w^T x_i)^2 and its gradient C w - beta.
QValueGrad q_value_and_grad(const Dataset& data, const Eigen::VectorXd& w);

/// Q(w) - Q(w*) evaluated as (w - w*)^T C (w - w*) / 2, which stays accurate
/// far below the scale of Q itself.
double q_gap(const Dataset& data, const OlsSolution& ols, const Eigen::VectorXd& w);

/// A particle cloud trained with the activation x -> x/2 on a fixed dataset.
struct LinearFlowState {
  ParticleCloud cloud;
  std::shared_ptr<const Dataset> data;

  /// w = (1/2m) sum a_j b_j
  Eigen::VectorXd w() const { return linear_coefficients(cloud); }
};

/// |a_j| = ||b_j|| = 1 with a_j = +-1 and b_j uniform on the sphere.
/// With zero_start, particles come in pairs (a, b), (a, -b) so that w = 0;
/// m must then be even. Requires d >= 2.
LinearFlowState init_linear_state(std::shared_ptr<const Dataset> data, int m, RandomSource& rng,
                                  bool zero_start = false);

/// H = (1/4m) (sum b_j b_j^T + (sum a_j^2) I)
Eigen::MatrixXd h_matrix(const ParticleCloud& cloud);
double min_eigenvalue(const Eigen::MatrixXd& symmetric);

/// Per-particle velocity under the linear activation.
Velocity linear_velocity(const LinearFlowState& state);

/// Explicit Euler step of every particle; throws NumericalBlowup on overflow.
LinearFlowState step_mean_field_linear(LinearFlowState state, double eta, std::size_t iteration = 0);

struct RateFit {
  double rate = 0.0;  // positive means decay
  double r2 = 0.0;
  int points_used = 0;
};
/// Least-squares fit of log(gap) against t over the final half of the
/// entries with gap > 1e-14. Throws InsufficientData below 10 such entries.
RateFit fit_exponential_rate(std::span<const double> t, std::span<const double> gap);

/// Plain gradient descent on Q; returns w0 followed by every iterate.
std::vector<Eigen::VectorXd> gd_on_q_baseline(const Dataset& data, const Eigen::VectorXd& w0, double lr,
                                              int steps);

}  // namespace mfflow
