#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mfflow/random.hpp"
#include "mfflow/reduced_flow.hpp"
#include "mfflow/sphere_geometry.hpp"

namespace mfflow {

/// Width-m two-layer ReLU network f(x) = (1/m) sum_j a_j relu(b_j . x).
/// Row j of b is the input weight vector of neuron j.
struct ParticleCloud {
  SplitDims dims;
  Eigen::VectorXd a;
  Eigen::MatrixXd b;

  int width() const noexcept { return static_cast<int>(a.size()); }
};

/// Target function f*.
class TargetSpec {
 public:
  enum class Kind { NormOnSubspace, OddLinearCombination, Custom };
  using Callback = std::function<double(const Eigen::VectorXd&)>;

  /// x -> ||x_H||.
  static TargetSpec norm_on_subspace(const SplitDims& dims);
  /// x -> sum_k linear_k x_k + cubic_k x_k^3 (missing coefficients are zero).
  static TargetSpec odd_linear_combination(std::vector<double> linear, std::vector<double> cubic = {});
  static TargetSpec custom(Callback fn, std::string name = "custom");

  Kind kind() const noexcept { return kind_; }
  const std::string& name() const noexcept { return name_; }
  const std::vector<double>& linear() const noexcept { return linear_; }
  const std::vector<double>& cubic() const noexcept { return cubic_; }
  int subspace_dim() const noexcept { return d_H_; }

  double operator()(const Eigen::VectorXd& x) const;
  /// Values at the columns of points (d x n).
  Eigen::VectorXd evaluate(const Eigen::MatrixXd& points) const;

 private:
  Kind kind_ = Kind::Custom;
  std::string name_;
  int d_H_ = 0;
  std::vector<double> linear_;
  std::vector<double> cubic_;
  Callback callback_;
};

enum class Flavor { Invariant, AntiInvariant };

/// Orthogonal T acting on particles as (a, b) -> (a, T b) (invariant) or
/// (-a, T b) (anti-invariant).
class OrthogonalTransform {
 public:
  /// Throws InvalidArgument unless T^T T = I within 1e-10 entrywise.
  OrthogonalTransform(Eigen::MatrixXd matrix, Flavor flavor);

  static OrthogonalTransform identity(int d, Flavor flavor = Flavor::Invariant);
  static OrthogonalTransform negation(int d, Flavor flavor = Flavor::Invariant);
  /// Flips the sign of coordinate `axis` (0-based).
  static OrthogonalTransform reflection(int d, int axis, Flavor flavor = Flavor::Invariant);

  const Eigen::MatrixXd& matrix() const noexcept { return matrix_; }
  Flavor flavor() const noexcept { return flavor_; }
  double sign() const noexcept { return flavor_ == Flavor::Invariant ? 1.0 : -1.0; }
  int dim() const noexcept { return static_cast<int>(matrix_.rows()); }

  OrthogonalTransform compose(const OrthogonalTransform& rhs) const;

 private:
  Eigen::MatrixXd matrix_;
  Flavor flavor_;
};

/// Closure of the generators under composition (identity included).
/// Throws GroupTooLarge if more than max_size elements appear.
std::vector<OrthogonalTransform> generate_group(std::span<const OrthogonalTransform> generators,
                                                std::size_t max_size = 64);

ParticleCloud init_cloud(const SplitDims& dims, int m, RandomSource& rng);

/// Replaces every particle by its orbit under the group generated by
/// `transforms`; the width is multiplied by the group size.
ParticleCloud symmetrize_cloud(const ParticleCloud& cloud,
                               std::span<const OrthogonalTransform> transforms);

/// Appends T y for every group element T to a d x n batch.
Eigen::MatrixXd symmetrize_batch(const Eigen::MatrixXd& batch,
                                 std::span<const OrthogonalTransform> group);

double predict(const ParticleCloud& cloud, const Eigen::VectorXd& x);
/// Predictions at the columns of points (d x n).
Eigen::VectorXd predict_batch(const ParticleCloud& cloud, const Eigen::MatrixXd& points);

/// Per-particle velocity (a-component, b-component); row j of `b` is the
/// b-velocity of particle j.
struct Velocity {
  Eigen::VectorXd a;
  Eigen::MatrixXd b;
};

/// Mean-field velocity -grad F'_mu at each particle, with the expectation
/// over the input law replaced by the average over `batch` (d x n).
Velocity velocity(const ParticleCloud& cloud, const TargetSpec& target, const Eigen::MatrixXd& batch);

/// Velocity with the expectation taken exactly over the uniform sphere, for
/// the target x -> ||x_H||. Interactions use the closed-form arc-cosine
/// kernel; the target term comes from `quad`.
Velocity population_velocity(const ParticleCloud& cloud, const AngleLawQuadrature& quad);

/// Explicit Euler step along population_velocity.
ParticleCloud step_population(ParticleCloud cloud, const AngleLawQuadrature& quad, double eta,
                              std::size_t iteration = 0);

/// E (||y_H|| - f(y))^2 / 2 over the uniform sphere, same ingredients.
double population_loss(const ParticleCloud& cloud, const AngleLawQuadrature& quad);

/// Empirical loss (1/n) sum_i (f*(y_i) - f(y_i))^2 / 2 over the batch, with
/// the standard error of the per-point losses.
MeanAndError batch_loss(const ParticleCloud& cloud, const TargetSpec& target,
                        const Eigen::MatrixXd& batch);

/// How step() obtains its batches.
struct BatchSpec {
  enum class Mode { Fresh, Frozen };
  Mode mode = Mode::Fresh;
  int size = 1000;
  /// When non-empty, every drawn point y is accompanied by T y for each
  /// element of the group generated by these transforms.
  std::vector<OrthogonalTransform> symmetrize_with;
};

/// Produces the batch used at each iteration; fresh batches are seeded by
/// (seed, iteration) so any iteration can be replayed in isolation.
class BatchSampler {
 public:
  BatchSampler(const SplitDims& dims, BatchSpec spec, std::uint64_t seed);

  const Eigen::MatrixXd& batch(std::size_t iteration);
  int points_per_batch() const;

 private:
  Eigen::MatrixXd draw(std::size_t iteration) const;

  SplitDims dims_;
  BatchSpec spec_;
  std::vector<OrthogonalTransform> group_;
  std::uint64_t seed_;
  Eigen::MatrixXd current_;
  bool have_frozen_ = false;
};

/// Explicit Euler step (a_j, b_j) += eta * velocity_j.
ParticleCloud step(ParticleCloud cloud, const TargetSpec& target, double eta,
                   const Eigen::MatrixXd& batch, std::size_t iteration = 0);
ParticleCloud step(ParticleCloud cloud, const TargetSpec& target, double eta, BatchSampler& sampler,
                   std::size_t iteration);

/// max_j | |a_j| - ||b_j|| |
double cone_drift(const ParticleCloud& cloud);

/// Angle representation: c_j = sign(a_j) |a_j| ||b_j|| / m, theta_j = arccos(||b_H|| / ||b||).
ReducedCloud project_to_angles(const ParticleCloud& cloud);

/// max over test points (columns) of |f(T x) - f(x)| (invariant) or |f(T x) + f(x)|.
double invariance_defect(const ParticleCloud& cloud, const OrthogonalTransform& transform,
                         const Eigen::MatrixXd& test_points);

/// f(u_H + r e_perp_1) for each r, where e_perp_1 is coordinate d_H.
std::vector<double> perp_dependence_scan(const ParticleCloud& cloud, const Eigen::VectorXd& uH,
                                         std::span<const double> r_grid);

struct LossPair {
  double full = 0.0;  // L(f)
  double odd = 0.0;   // L(f_odd), f_odd(x) = (f(x) - f(-x)) / 2
};
LossPair odd_part_loss_gap(const ParticleCloud& cloud, const TargetSpec& target,
                           const Eigen::MatrixXd& batch);

/// w = (1 / 2m) sum_j a_j b_j
Eigen::VectorXd linear_coefficients(const ParticleCloud& cloud);

}  // namespace mfflow
