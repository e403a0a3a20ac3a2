#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "mfflow/numeric.hpp"
#include "mfflow/random.hpp"
#include "mfflow/sphere_geometry.hpp"

namespace mfflow {

/// Atoms of the pair of angle measures (tau+, tau-):
///   tau+ - tau- = atom_weight * sum_j c_j delta_{theta_j}.
/// Clouds built by init_reduced carry raw masses c_j = +-1 with
/// atom_weight = 1/m; clouds built by project_to_angles fold the 1/m into
/// c_j and use atom_weight = 1.
struct ReducedCloud {
  SplitDims dims;
  Eigen::VectorXd c;
  Eigen::VectorXd theta;
  std::vector<int> eps;
  double atom_weight = 1.0;
  // Cumulative event counters maintained by step_reduced.
  std::int64_t sign_flip_events = 0;
  std::int64_t overshoot_events = 0;

  int size() const noexcept { return static_cast<int>(c.size()); }
};

/// Monte-Carlo draws for one iteration of the angle flow.
struct McBatch {
  Eigen::VectorXd phi;  // ~ angle law
  Eigen::VectorXd r;    // ~ radial law in dimension d_H
  Eigen::VectorXd rp;
  Eigen::VectorXd s;    // ~ radial law in dimension d_perp
  Eigen::VectorXd sp;

  int size() const noexcept { return static_cast<int>(phi.size()); }
  static McBatch sample(const SplitDims& dims, int n, RandomSource& rng);
  /// Angles read off the columns of `points` (unit vectors in R^d); the
  /// radial draws are fresh. Lets an angle flow share a particle batch.
  static McBatch from_points(const SplitDims& dims, const Eigen::MatrixXd& points, RandomSource& rng);
};

enum class PrefactorMode { OneOverN, DimensionOverN };
enum class OvershootMode { Allow, Clamp };
enum class Side { Plus, Minus };

/// Euler: c <- (1 + 2 eta eps G) c, theta <- theta + eta eps V.
/// Lifted: the image of one explicit Euler step of the particles (a, b)
/// under the angle projection,
///   c <- c f sqrt(f^2 + (eta V)^2),  theta <- theta + atan2(eta eps V, f),
/// with f = 1 + eta eps G. Both agree to first order in eta; the lifted form
/// tracks a particle simulation step for step.
enum class ReducedScheme { Euler, Lifted };

struct ReducedStepOptions {
  PrefactorMode prefactor = PrefactorMode::OneOverN;
  OvershootMode overshoot = OvershootMode::Allow;
  ReducedScheme scheme = ReducedScheme::Euler;
};

ReducedCloud init_reduced(const SplitDims& dims, int m, RandomSource& rng);

/// relu(r cos(phi) cos(theta) + s sin(phi) sin(theta))
double kernel_psi(double r, double s, double theta, double phi);
/// d/dtheta of kernel_psi, with relu'(0) = 0.
double kernel_chi(double r, double s, double theta, double phi);

struct GVEstimate {
  Eigen::VectorXd g;
  Eigen::VectorXd v;
  // Standard errors of the per-sample contributions (prefactor 1/N only).
  Eigen::VectorXd g_stderr;
  Eigen::VectorXd v_stderr;
};

/// Monte-Carlo estimates of G_t(theta_j) and V_t(theta_j) = G_t'(theta_j).
GVEstimate estimate_g_v(const ReducedCloud& cloud, const McBatch& batch,
                        PrefactorMode prefactor = PrefactorMode::OneOverN,
                        bool with_errors = false);

/// One step of the Wasserstein-Fisher-Rao angle flow (see ReducedScheme).
ReducedCloud step_reduced(ReducedCloud cloud, const McBatch& batch, double eta,
                          const ReducedStepOptions& options = {}, std::size_t iteration = 0);

// --- phi~ : the kernel of the reduced predictor ---------------------------

struct QuadratureSpec {
  enum class Kind { MonteCarlo, Gauss };
  Kind kind = Kind::Gauss;
  int count = 64;
  std::uint64_t seed = 0;

  static QuadratureSpec monte_carlo(int samples, std::uint64_t seed) {
    return {Kind::MonteCarlo, samples, seed};
  }
  static QuadratureSpec gauss(int nodes) { return {Kind::Gauss, nodes, 0}; }
};

/// E[relu(r cos(phi) cos(theta) + s sin(phi) sin(theta))] with r, s drawn
/// from the radial laws of dimensions d_H and d_perp.
double phi_tilde(const SplitDims& dims, double theta, double phi, const QuadratureSpec& spec);

/// phi_tilde tabulated on a uniform grid of [0, pi/2]^2 and bilinearly
/// interpolated. Angles outside [0, pi/2] are folded back, since phi_tilde
/// only depends on |cos| and |sin| of its arguments.
class PhiTildeTable {
 public:
  PhiTildeTable(const SplitDims& dims, int grid, int gauss_nodes = 48);

  /// Shared, lazily built table for (dims, grid).
  static std::shared_ptr<const PhiTildeTable> cached(const SplitDims& dims, int grid = 257);

  double operator()(double theta, double phi) const;
  const SplitDims& dims() const noexcept { return dims_; }
  int grid() const noexcept { return grid_; }

 private:
  SplitDims dims_;
  int grid_;
  double step_;
  std::vector<double> values_;
};

/// Expectations over the input law without sampling: Gauss-Legendre in phi
/// against the angle-law density, with phi~(., phi_n) held at every node as a
/// clamped cubic spline in theta (both end slopes vanish by symmetry).
class AngleLawQuadrature {
 public:
  AngleLawQuadrature(const SplitDims& dims, int nodes = 128, int theta_grid = 257);
  ~AngleLawQuadrature();
  AngleLawQuadrature(const AngleLawQuadrature&) = delete;
  AngleLawQuadrature& operator=(const AngleLawQuadrature&) = delete;

  /// Shared instance per (dims, nodes, theta_grid).
  static std::shared_ptr<const AngleLawQuadrature> cached(const SplitDims& dims, int nodes = 128,
                                                          int theta_grid = 257);

  const SplitDims& dims() const noexcept { return dims_; }
  int nodes() const noexcept { return static_cast<int>(phi_.size()); }

  /// phi~(theta, phi_n) at every node; `slope` (if non-null) receives the
  /// theta-derivatives.
  void kernel_row(double theta, double* value, double* slope) const;
  /// f~ at every node.
  Eigen::VectorXd predict_at_nodes(const ReducedCloud& cloud) const;
  /// A(tau+, tau-).
  double objective(const ReducedCloud& cloud) const;
  /// G and V at every atom (no sampling error; stderr fields stay empty).
  GVEstimate g_v(const ReducedCloud& cloud) const;
  /// E[||x_H|| relu(u . x)] for a unit u at angle theta, and its theta-derivative.
  std::pair<double, double> target_term(double theta) const;

 private:
  struct Splines;
  SplitDims dims_;
  std::vector<double> phi_;
  std::vector<double> weight_;  // Gauss weight times angle-law density
  std::unique_ptr<Splines> splines_;
};

/// One step driven by exact G and V instead of Monte-Carlo estimates. The
/// prefactor option is ignored.
ReducedCloud step_reduced(ReducedCloud cloud, const AngleLawQuadrature& exact, double eta,
                          const ReducedStepOptions& options = {}, std::size_t iteration = 0);

/// f~(phi) = atom_weight * sum_j c_j phi~(theta_j, phi).
double reduced_predict(const ReducedCloud& cloud, double phi, const PhiTildeTable& table);
double reduced_predict(const ReducedCloud& cloud, double phi, const QuadratureSpec& spec);

/// Monte-Carlo estimate of A = E_phi[(cos(phi) - f~(phi))^2 / 2], phi ~ angle law.
MeanAndError objective_a(const ReducedCloud& cloud, int n_mc, RandomSource& rng,
                         const PhiTildeTable& table);
MeanAndError objective_a(const ReducedCloud& cloud, int n_mc, RandomSource& rng);

/// Deterministic evaluation of A by Gauss-Legendre over phi.
double objective_a_quadrature(const ReducedCloud& cloud, const PhiTildeTable& table, int nodes = 256);

/// G_t(theta) = E_phi[(cos(phi) - f~(phi)) phi~(theta, phi)] by quadrature.
double g_quadrature(const ReducedCloud& cloud, double theta, const PhiTildeTable& table,
                    int nodes = 256);

/// Mass tau+ must carry at the Dirac optimum: 2 sqrt(pi) Gamma((d_H+1)/2) / Gamma(d_H/2).
double alpha_expected(int d_H);

struct SideMasses {
  double plus = 0.0;
  double minus = 0.0;
};
SideMasses masses(const ReducedCloud& cloud);

/// W2 distance between the normalized measure of one side and delta_location.
double w2_to_dirac(const ReducedCloud& cloud, Side side, double location);

/// Masses |c_j| (times atom_weight) of one side binned uniformly over
/// [0, pi/2]; angles past either end land in the nearest end bin.
std::vector<double> angle_histogram(const ReducedCloud& cloud, Side side, int bins);

}  // namespace mfflow
