#include "mfflow/reduced_flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mfflow/errors.hpp"
#include "mfflow/parallel.hpp"

namespace mfflow {

namespace {

constexpr double kHalfPi = 0.5 * std::numbers::pi;

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

McBatch McBatch::sample(const SplitDims& dims, int n, RandomSource& rng) {
  if (n < 1) throw InvalidArgument("McBatch::sample: N must be >= 1");
  McBatch batch;
  batch.phi = to_vector(sample_angle_gamma(dims, n, rng));
  batch.r = to_vector(sample_radial_gamma_p(dims.d_H(), n, rng));
  batch.rp = to_vector(sample_radial_gamma_p(dims.d_H(), n, rng));
  batch.s = to_vector(sample_radial_gamma_p(dims.d_perp(), n, rng));
  batch.sp = to_vector(sample_radial_gamma_p(dims.d_perp(), n, rng));
  return batch;
}

McBatch McBatch::from_points(const SplitDims& dims, const Eigen::MatrixXd& points, RandomSource& rng) {
  if (points.rows() != dims.d()) throw InvalidArgument("McBatch::from_points: points must have d rows");
  const int n = static_cast<int>(points.cols());
  if (n < 1) throw InvalidArgument("McBatch::from_points: need at least one point");
  McBatch batch;
  batch.phi.resize(n);
  for (int i = 0; i < n; ++i) {
    const double h = points.col(i).head(dims.d_H()).norm() / points.col(i).norm();
    batch.phi[i] = std::acos(std::min(1.0, h));
  }
  batch.r = to_vector(sample_radial_gamma_p(dims.d_H(), n, rng));
  batch.rp = to_vector(sample_radial_gamma_p(dims.d_H(), n, rng));
  batch.s = to_vector(sample_radial_gamma_p(dims.d_perp(), n, rng));
  batch.sp = to_vector(sample_radial_gamma_p(dims.d_perp(), n, rng));
  return batch;
}

ReducedCloud init_reduced(const SplitDims& dims, int m, RandomSource& rng) {
  if (m < 1) throw InvalidArgument("init_reduced: m must be >= 1");
  ReducedCloud cloud{dims, Eigen::VectorXd(m), Eigen::VectorXd(m), std::vector<int>(m), 1.0 / m};
  for (int j = 0; j < m; ++j) {
    const int sign = rng.sign();
    cloud.c[j] = sign;
    cloud.eps[static_cast<std::size_t>(j)] = sign;
  }
  cloud.theta = to_vector(sample_angle_gamma(dims, m, rng));
  return cloud;
}

double kernel_psi(double r, double s, double theta, double phi) {
  return relu(r * std::cos(phi) * std::cos(theta) + s * std::sin(phi) * std::sin(theta));
}

double kernel_chi(double r, double s, double theta, double phi) {
  const double z = r * std::cos(phi) * std::cos(theta) + s * std::sin(phi) * std::sin(theta);
  return relu_grad(z) * (-(r * std::cos(phi)) * std::sin(theta) + s * std::sin(phi) * std::cos(theta));
}

namespace {

constexpr Eigen::Index kRowChunk = 64;

/// Batch-major evaluation used when no per-sample spread is requested.
GVEstimate estimate_g_v_dense(const ReducedCloud& cloud, const McBatch& batch, double scale) {
  const Eigen::Index m = cloud.size();
  const Eigen::Index n = batch.size();
  const Eigen::ArrayXd cos_t = cloud.theta.array().cos();
  const Eigen::ArrayXd sin_t = cloud.theta.array().sin();
  const Eigen::ArrayXd cos_phi = batch.phi.array().cos();
  const Eigen::ArrayXd sin_phi = batch.phi.array().sin();

  GVEstimate out;
  out.g = Eigen::VectorXd::Zero(m);
  out.v = Eigen::VectorXd::Zero(m);
  // Rows are samples, columns are atoms; buffers are reused across chunks.
  Eigen::MatrixXd z(kRowChunk, m), dz(kRowChunk, m);
  Eigen::VectorXd residual(kRowChunk), a(kRowChunk), b(kRowChunk);
  for (Eigen::Index start = 0; start < n; start += kRowChunk) {
    const Eigen::Index len = std::min(kRowChunk, n - start);
    auto zc = z.topRows(len);
    auto dzc = dz.topRows(len);
    auto res = residual.head(len);
    const auto cp = cos_phi.segment(start, len);
    const auto sp = sin_phi.segment(start, len);

    a.head(len) = (batch.rp.segment(start, len).array() * cp).matrix();
    b.head(len) = (batch.sp.segment(start, len).array() * sp).matrix();
    zc.noalias() = a.head(len) * cos_t.matrix().transpose();
    zc.noalias() += b.head(len) * sin_t.matrix().transpose();
    zc = zc.cwiseMax(0.0);
    res = cp.matrix();
    res.noalias() -= cloud.atom_weight * (zc * cloud.c);

    a.head(len) = (batch.r.segment(start, len).array() * cp).matrix();
    b.head(len) = (batch.s.segment(start, len).array() * sp).matrix();
    zc.noalias() = a.head(len) * cos_t.matrix().transpose();
    zc.noalias() += b.head(len) * sin_t.matrix().transpose();
    dzc.noalias() = b.head(len) * cos_t.matrix().transpose();
    dzc.noalias() -= a.head(len) * sin_t.matrix().transpose();
    dzc = (zc.array() > 0.0).select(dzc, 0.0);
    zc = zc.cwiseMax(0.0);
    out.g.noalias() += zc.transpose() * res;
    out.v.noalias() += dzc.transpose() * res;
  }
  out.g *= scale;
  out.v *= scale;
  return out;
}

}  // namespace

GVEstimate estimate_g_v(const ReducedCloud& cloud, const McBatch& batch, PrefactorMode prefactor,
                        bool with_errors) {
  const int m = cloud.size();
  const int n = batch.size();
  if (n < 1) throw InvalidArgument("estimate_g_v: empty batch");
  const double scale = (prefactor == PrefactorMode::OneOverN ? 1.0 : cloud.dims.d()) / n;
  if (!with_errors) return estimate_g_v_dense(cloud, batch, scale);

  Eigen::VectorXd cos_t(m), sin_t(m);
  for (int j = 0; j < m; ++j) {
    cos_t[j] = std::cos(cloud.theta[j]);
    sin_t[j] = std::sin(cloud.theta[j]);
  }
  Eigen::VectorXd A(n), B(n), Ap(n), Bp(n), cos_phi(n);
  for (int i = 0; i < n; ++i) {
    const double cp = std::cos(batch.phi[i]);
    const double sp = std::sin(batch.phi[i]);
    cos_phi[i] = cp;
    A[i] = batch.r[i] * cp;
    B[i] = batch.s[i] * sp;
    Ap[i] = batch.rp[i] * cp;
    Bp[i] = batch.sp[i] * sp;
  }

  // residual_i = cos(phi_i) - atom_weight * sum_l c_l psi(R'_i, S'_i; theta_l, phi_i)
  Eigen::VectorXd residual(n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t begin, std::size_t end) {
    std::vector<double> terms(static_cast<std::size_t>(m));
    for (std::size_t i = begin; i < end; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      for (int l = 0; l < m; ++l)
        terms[static_cast<std::size_t>(l)] = cloud.c[l] * relu(Ap[ii] * cos_t[l] + Bp[ii] * sin_t[l]);
      residual[ii] = cos_phi[ii] - cloud.atom_weight * pairwise_sum(terms);
    }
  });

  GVEstimate out;
  out.g.resize(m);
  out.v.resize(m);
  if (with_errors) {
    out.g_stderr.resize(m);
    out.v_stderr.resize(m);
  }
  parallel_for(static_cast<std::size_t>(m), [&](std::size_t begin, std::size_t end) {
    std::vector<double> gterms(static_cast<std::size_t>(n));
    std::vector<double> vterms(static_cast<std::size_t>(n));
    for (std::size_t jj = begin; jj < end; ++jj) {
      const auto j = static_cast<Eigen::Index>(jj);
      const double ct = cos_t[j];
      const double st = sin_t[j];
      for (int i = 0; i < n; ++i) {
        const double z = A[i] * ct + B[i] * st;
        const auto k = static_cast<std::size_t>(i);
        if (z > 0.0) {
          gterms[k] = z * residual[i];
          vterms[k] = (-A[i] * st + B[i] * ct) * residual[i];
        } else {
          gterms[k] = 0.0;
          vterms[k] = 0.0;
        }
      }
      out.g[j] = scale * pairwise_sum(gterms);
      out.v[j] = scale * pairwise_sum(vterms);
      if (with_errors) {
        out.g_stderr[j] = mean_and_error(gterms).stderr_ * scale * n;
        out.v_stderr[j] = mean_and_error(vterms).stderr_ * scale * n;
      }
    }
  }, 8);
  return out;
}

namespace {

ReducedCloud apply_update(ReducedCloud cloud, const GVEstimate& gv, double eta, const ReducedStepOptions& options,
                          std::size_t iteration) {
  for (int j = 0; j < cloud.size(); ++j) {
    const double eps = cloud.eps[static_cast<std::size_t>(j)];
    const double before = cloud.theta[j];
    double after = 0.0;
    if (options.scheme == ReducedScheme::Euler) {
      const double factor = 1.0 + 2.0 * eta * eps * gv.g[j];
      if (factor <= 0.0) ++cloud.sign_flip_events;
      cloud.c[j] *= factor;
      after = before + eta * eps * gv.v[j];
    } else {
      const double f = 1.0 + eta * eps * gv.g[j];
      const double turn = eta * gv.v[j];
      if (f <= 0.0) ++cloud.sign_flip_events;
      cloud.c[j] *= f * std::sqrt(f * f + turn * turn);
      after = before + std::atan2(eps * turn, f);
    }
    const bool was_inside = before >= 0.0 && before <= kHalfPi;
    const bool is_inside = after >= 0.0 && after <= kHalfPi;
    if (was_inside && !is_inside) ++cloud.overshoot_events;
    if (options.overshoot == OvershootMode::Clamp) after = std::clamp(after, 0.0, kHalfPi);
    cloud.theta[j] = after;

    if (!std::isfinite(cloud.c[j]) || !std::isfinite(cloud.theta[j]))
      throw NumericalBlowup("step_reduced: non-finite atom " + std::to_string(j), iteration);
  }
  return cloud;
}

}  // namespace

ReducedCloud step_reduced(ReducedCloud cloud, const McBatch& batch, double eta,
                          const ReducedStepOptions& options, std::size_t iteration) {
  if (!(eta >= 0.0)) throw InvalidArgument("step_reduced: eta must be >= 0");
  if (eta == 0.0) return cloud;
  const auto gv = estimate_g_v(cloud, batch, options.prefactor);
  return apply_update(std::move(cloud), gv, eta, options, iteration);
}

ReducedCloud step_reduced(ReducedCloud cloud, const AngleLawQuadrature& exact, double eta,
                          const ReducedStepOptions& options, std::size_t iteration) {
  if (!(eta >= 0.0)) throw InvalidArgument("step_reduced: eta must be >= 0");
  if (!(exact.dims() == cloud.dims)) throw InvalidArgument("step_reduced: quadrature built for other dims");
  if (eta == 0.0) return cloud;
  const auto gv = exact.g_v(cloud);
  return apply_update(std::move(cloud), gv, eta, options, iteration);
}

double reduced_predict(const ReducedCloud& cloud, double phi, const PhiTildeTable& table) {
  std::vector<double> terms(static_cast<std::size_t>(cloud.size()));
  for (int j = 0; j < cloud.size(); ++j)
    terms[static_cast<std::size_t>(j)] = cloud.c[j] * table(cloud.theta[j], phi);
  return cloud.atom_weight * pairwise_sum(terms);
}

double reduced_predict(const ReducedCloud& cloud, double phi, const QuadratureSpec& spec) {
  std::vector<double> terms(static_cast<std::size_t>(cloud.size()));
  for (int j = 0; j < cloud.size(); ++j)
    terms[static_cast<std::size_t>(j)] = cloud.c[j] * phi_tilde(cloud.dims, cloud.theta[j], phi, spec);
  return cloud.atom_weight * pairwise_sum(terms);
}

MeanAndError objective_a(const ReducedCloud& cloud, int n_mc, RandomSource& rng,
                         const PhiTildeTable& table) {
  if (n_mc < 1) throw InvalidArgument("objective_a: n_mc must be >= 1");
  const auto phi = sample_angle_gamma(cloud.dims, n_mc, rng);
  std::vector<double> losses(phi.size());
  parallel_for(phi.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const double r = std::cos(phi[i]) - reduced_predict(cloud, phi[i], table);
      losses[i] = 0.5 * r * r;
    }
  }, 16);
  return mean_and_error(losses);
}

MeanAndError objective_a(const ReducedCloud& cloud, int n_mc, RandomSource& rng) {
  return objective_a(cloud, n_mc, rng, *PhiTildeTable::cached(cloud.dims));
}

double objective_a_quadrature(const ReducedCloud& cloud, const PhiTildeTable& table, int nodes) {
  const AngleLaw law(cloud.dims);
  const auto rule = gauss_legendre(nodes, 0.0, kHalfPi);
  std::vector<double> terms(rule.nodes.size());
  parallel_for(terms.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const double phi = rule.nodes[k];
      const double r = std::cos(phi) - reduced_predict(cloud, phi, table);
      terms[k] = rule.weights[k] * law.density(phi) * 0.5 * r * r;
    }
  }, 16);
  return pairwise_sum(terms);
}

double g_quadrature(const ReducedCloud& cloud, double theta, const PhiTildeTable& table, int nodes) {
  const AngleLaw law(cloud.dims);
  const auto rule = gauss_legendre(nodes, 0.0, kHalfPi);
  std::vector<double> terms(rule.nodes.size());
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const double phi = rule.nodes[k];
    const double r = std::cos(phi) - reduced_predict(cloud, phi, table);
    terms[k] = rule.weights[k] * law.density(phi) * r * table(theta, phi);
  }
  return pairwise_sum(terms);
}

double alpha_expected(int d_H) {
  if (d_H < 1) throw InvalidArgument("alpha_expected: d_H must be >= 1");
  return 2.0 * std::sqrt(std::numbers::pi) *
         std::exp(std::lgamma(0.5 * (d_H + 1)) - std::lgamma(0.5 * d_H));
}

SideMasses masses(const ReducedCloud& cloud) {
  SideMasses out;
  for (int j = 0; j < cloud.size(); ++j) {
    if (cloud.eps[static_cast<std::size_t>(j)] > 0)
      out.plus += cloud.c[j];
    else
      out.minus -= cloud.c[j];
  }
  out.plus *= cloud.atom_weight;
  out.minus *= cloud.atom_weight;
  return out;
}

double w2_to_dirac(const ReducedCloud& cloud, Side side, double location) {
  const int want = side == Side::Plus ? 1 : -1;
  double total = 0.0;
  double moment = 0.0;
  for (int j = 0; j < cloud.size(); ++j) {
    if (cloud.eps[static_cast<std::size_t>(j)] != want) continue;
    const double w = std::abs(cloud.c[j]);
    const double dt = cloud.theta[j] - location;
    total += w;
    moment += w * dt * dt;
  }
  if (!(total > 0.0)) throw UndefinedDistance("w2_to_dirac: selected side has zero mass");
  return std::sqrt(moment / total);
}

std::vector<double> angle_histogram(const ReducedCloud& cloud, Side side, int bins) {
  if (bins < 2) throw InvalidArgument("angle_histogram: need at least 2 bins");
  const int want = side == Side::Plus ? 1 : -1;
  std::vector<double> out(static_cast<std::size_t>(bins), 0.0);
  for (int j = 0; j < cloud.size(); ++j) {
    if (cloud.eps[static_cast<std::size_t>(j)] != want) continue;
    const double pos = cloud.theta[j] / kHalfPi * bins;
    int idx = pos <= 0.0 ? 0 : static_cast<int>(std::min(pos, static_cast<double>(bins - 1)));
    idx = std::clamp(idx, 0, bins - 1);
    out[static_cast<std::size_t>(idx)] += cloud.atom_weight * std::abs(cloud.c[j]);
  }
  return out;
}

}  // namespace mfflow
