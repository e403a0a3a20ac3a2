#include "mfflow/mean_field_flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mfflow/errors.hpp"
#include "mfflow/parallel.hpp"

namespace mfflow {

namespace {

// Batch columns per chunk are chosen so that one m x chunk block stays
// around 2 MB and can be reused across chunks.
constexpr Eigen::Index kChunkElements = 1 << 18;
constexpr double kOrthogonalityTol = 1e-10;
constexpr double kGroupMatchTol = 1e-9;
// Fresh batches live on their own family of streams.
constexpr std::uint64_t kBatchStreamBase = 1ULL << 40;

Eigen::Index chunk_columns(Eigen::Index m) { return std::max<Eigen::Index>(16, kChunkElements / std::max<Eigen::Index>(m, 1)); }

void require_dim(const ParticleCloud& cloud, Eigen::Index rows, const char* where) {
  if (rows != cloud.dims.d())
    throw InvalidArgument(std::string(where) + ": point dimension " + std::to_string(rows) +
                          " does not match d=" + std::to_string(cloud.dims.d()));
}

}  // namespace

// --- TargetSpec ---------------------------------------------------------

TargetSpec TargetSpec::norm_on_subspace(const SplitDims& dims) {
  TargetSpec t;
  t.kind_ = Kind::NormOnSubspace;
  t.name_ = "norm-on-subspace";
  t.d_H_ = dims.d_H();
  return t;
}

TargetSpec TargetSpec::odd_linear_combination(std::vector<double> linear, std::vector<double> cubic) {
  TargetSpec t;
  t.kind_ = Kind::OddLinearCombination;
  t.name_ = "odd-linear-combination";
  t.linear_ = std::move(linear);
  t.cubic_ = std::move(cubic);
  return t;
}

TargetSpec TargetSpec::custom(Callback fn, std::string name) {
  if (!fn) throw InvalidArgument("TargetSpec::custom: empty callback");
  TargetSpec t;
  t.kind_ = Kind::Custom;
  t.name_ = std::move(name);
  t.callback_ = std::move(fn);
  return t;
}

double TargetSpec::operator()(const Eigen::VectorXd& x) const {
  return evaluate(Eigen::MatrixXd(x))(0);
}

Eigen::VectorXd TargetSpec::evaluate(const Eigen::MatrixXd& points) const {
  const Eigen::Index n = points.cols();
  switch (kind_) {
    case Kind::NormOnSubspace:
      if (points.rows() <= d_H_) throw InvalidArgument("TargetSpec: point dimension must exceed d_H");
      return points.topRows(d_H_).colwise().norm().transpose();
    case Kind::OddLinearCombination: {
      if (static_cast<Eigen::Index>(std::max(linear_.size(), cubic_.size())) > points.rows())
        throw InvalidArgument("TargetSpec: more coefficients than coordinates");
      Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
      for (std::size_t k = 0; k < linear_.size(); ++k)
        out += linear_[k] * points.row(static_cast<Eigen::Index>(k)).transpose();
      for (std::size_t k = 0; k < cubic_.size(); ++k)
        out += cubic_[k] * points.row(static_cast<Eigen::Index>(k)).transpose().array().cube().matrix();
      return out;
    }
    case Kind::Custom: {
      Eigen::VectorXd out(n);
      for (Eigen::Index i = 0; i < n; ++i) out[i] = callback_(points.col(i));
      return out;
    }
  }
  return Eigen::VectorXd::Zero(n);
}

// --- OrthogonalTransform ------------------------------------------------

OrthogonalTransform::OrthogonalTransform(Eigen::MatrixXd matrix, Flavor flavor)
    : matrix_(std::move(matrix)), flavor_(flavor) {
  if (matrix_.rows() != matrix_.cols() || matrix_.rows() == 0)
    throw InvalidArgument("OrthogonalTransform: matrix must be square and non-empty");
  const Eigen::MatrixXd gram = matrix_.transpose() * matrix_;
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(matrix_.rows(), matrix_.cols());
  if ((gram - id).cwiseAbs().maxCoeff() > kOrthogonalityTol)
    throw InvalidArgument("OrthogonalTransform: matrix is not orthogonal");
}

OrthogonalTransform OrthogonalTransform::identity(int d, Flavor flavor) {
  return {Eigen::MatrixXd::Identity(d, d), flavor};
}

OrthogonalTransform OrthogonalTransform::negation(int d, Flavor flavor) {
  return {-Eigen::MatrixXd::Identity(d, d), flavor};
}

OrthogonalTransform OrthogonalTransform::reflection(int d, int axis, Flavor flavor) {
  if (axis < 0 || axis >= d) throw InvalidArgument("OrthogonalTransform::reflection: axis out of range");
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(d, d);
  m(axis, axis) = -1.0;
  return {std::move(m), flavor};
}

OrthogonalTransform OrthogonalTransform::compose(const OrthogonalTransform& rhs) const {
  const bool same = flavor_ == rhs.flavor_;
  OrthogonalTransform out = *this;
  out.matrix_ = matrix_ * rhs.matrix_;
  out.flavor_ = same ? Flavor::Invariant : Flavor::AntiInvariant;
  return out;
}

std::vector<OrthogonalTransform> generate_group(std::span<const OrthogonalTransform> generators,
                                                std::size_t max_size) {
  if (generators.empty()) throw InvalidArgument("generate_group: no generators");
  const int d = generators.front().dim();
  for (const auto& g : generators)
    if (g.dim() != d) throw InvalidArgument("generate_group: generators of mixed dimension");

  const auto contains = [](const std::vector<OrthogonalTransform>& set, const OrthogonalTransform& t) {
    return std::any_of(set.begin(), set.end(), [&](const OrthogonalTransform& e) {
      return e.flavor() == t.flavor() &&
             (e.matrix() - t.matrix()).cwiseAbs().maxCoeff() <= kGroupMatchTol;
    });
  };

  std::vector<OrthogonalTransform> group{OrthogonalTransform::identity(d)};
  for (std::size_t next = 0; next < group.size(); ++next) {
    for (const auto& g : generators) {
      auto candidate = g.compose(group[next]);
      if (contains(group, candidate)) continue;
      if (group.size() >= max_size)
        throw GroupTooLarge("generate_group: closure exceeds " + std::to_string(max_size) + " elements");
      group.push_back(std::move(candidate));
    }
  }
  return group;
}

// --- clouds -------------------------------------------------------------

ParticleCloud init_cloud(const SplitDims& dims, int m, RandomSource& rng) {
  if (m < 1) throw InvalidArgument("init_cloud: m must be >= 1");
  ParticleCloud cloud{dims, Eigen::VectorXd(m), Eigen::MatrixXd(m, dims.d())};
  for (int j = 0; j < m; ++j) cloud.a[j] = rng.sign();
  cloud.b = sample_uniform_sphere(dims.d(), m, rng).transpose();
  return cloud;
}

ParticleCloud symmetrize_cloud(const ParticleCloud& cloud,
                               std::span<const OrthogonalTransform> transforms) {
  if (transforms.empty()) return cloud;
  const auto group = generate_group(transforms);
  const int m = cloud.width();
  const auto g = static_cast<int>(group.size());
  ParticleCloud out{cloud.dims, Eigen::VectorXd(m * g), Eigen::MatrixXd(m * g, cloud.dims.d())};
  for (int k = 0; k < g; ++k) {
    const auto& t = group[static_cast<std::size_t>(k)];
    if (t.dim() != cloud.dims.d()) throw InvalidArgument("symmetrize_cloud: transform dimension mismatch");
    out.a.segment(k * m, m) = t.sign() * cloud.a;
    out.b.middleRows(k * m, m) = cloud.b * t.matrix().transpose();
  }
  return out;
}

Eigen::MatrixXd symmetrize_batch(const Eigen::MatrixXd& batch,
                                 std::span<const OrthogonalTransform> group) {
  if (group.empty()) return batch;
  const Eigen::Index n = batch.cols();
  Eigen::MatrixXd out(batch.rows(), n * static_cast<Eigen::Index>(group.size()));
  for (std::size_t k = 0; k < group.size(); ++k)
    out.middleCols(static_cast<Eigen::Index>(k) * n, n) = group[k].matrix() * batch;
  return out;
}

double predict(const ParticleCloud& cloud, const Eigen::VectorXd& x) {
  require_dim(cloud, x.size(), "predict");
  const Eigen::VectorXd z = cloud.b * x;
  return (cloud.a.array() * z.array().max(0.0)).sum() / cloud.width();
}

Eigen::VectorXd predict_batch(const ParticleCloud& cloud, const Eigen::MatrixXd& points) {
  require_dim(cloud, points.rows(), "predict_batch");
  const Eigen::Index chunk = chunk_columns(cloud.width());
  Eigen::VectorXd out(points.cols());
  Eigen::MatrixXd z(cloud.width(), std::min(chunk, points.cols()));
  for (Eigen::Index start = 0; start < points.cols(); start += chunk) {
    const Eigen::Index len = std::min(chunk, points.cols() - start);
    auto zc = z.leftCols(len);
    zc.noalias() = cloud.b * points.middleCols(start, len);
    zc = zc.cwiseMax(0.0);
    out.segment(start, len).noalias() = zc.transpose() * cloud.a;
  }
  return out / cloud.width();
}

Velocity velocity(const ParticleCloud& cloud, const TargetSpec& target, const Eigen::MatrixXd& batch) {
  if (batch.cols() == 0) throw InvalidArgument("velocity: empty batch");
  require_dim(cloud, batch.rows(), "velocity");
  const Eigen::Index m = cloud.width();
  const Eigen::Index n = batch.cols();
  const Eigen::VectorXd fstar = target.evaluate(batch);
  const Eigen::Index chunk = std::min(chunk_columns(m), n);

  Velocity v{Eigen::VectorXd::Zero(m), Eigen::MatrixXd::Zero(m, cloud.dims.d())};
  Eigen::MatrixXd z(m, chunk), gated(m, chunk);
  Eigen::VectorXd residual(chunk);
  for (Eigen::Index start = 0; start < n; start += chunk) {
    const Eigen::Index len = std::min(chunk, n - start);
    const auto y = batch.middleCols(start, len);
    auto zc = z.leftCols(len);
    auto gc = gated.leftCols(len);
    auto res = residual.head(len);
    zc.noalias() = cloud.b * y;
    gc = (zc.array() > 0.0).cast<double>().matrix();
    zc = zc.cwiseMax(0.0);
    res = fstar.segment(start, len);
    res.noalias() -= zc.transpose() * cloud.a / static_cast<double>(m);
    v.a.noalias() += zc * res;
    gc = gc * res.asDiagonal();
    v.b.noalias() += gc * y.transpose();
  }
  v.a /= static_cast<double>(n);
  v.b = (cloud.a / static_cast<double>(n)).asDiagonal() * v.b;
  return v;
}

MeanAndError batch_loss(const ParticleCloud& cloud, const TargetSpec& target,
                        const Eigen::MatrixXd& batch) {
  const Eigen::VectorXd r = target.evaluate(batch) - predict_batch(cloud, batch);
  std::vector<double> losses(static_cast<std::size_t>(r.size()));
  for (Eigen::Index i = 0; i < r.size(); ++i) losses[static_cast<std::size_t>(i)] = 0.5 * r[i] * r[i];
  return mean_and_error(losses);
}

// --- exact expectations ------------------------------------------------

namespace {

constexpr Eigen::Index kGramRows = 256;
constexpr double kAxisTol = 1e-14;

struct Interaction {
  Eigen::VectorXd kernel_sum;  // sum_k a_k kappa(b_k, b_j)
  Eigen::MatrixXd grad_sum;    // sum_k a_k grad_v kappa(b_k, v) at v = b_j
};

// kappa(u, v) = E relu(u.y) relu(v.y) = |u||v| (sin t + (pi - t) cos t) / (2 pi d)
Interaction interaction(const ParticleCloud& cloud, bool with_grad) {
  const Eigen::Index m = cloud.width();
  const int d = cloud.dims.d();
  const double scale = 1.0 / (2.0 * std::numbers::pi * d);
  const Eigen::VectorXd norm = cloud.b.rowwise().norm();
  const Eigen::VectorXd a_norm = cloud.a.cwiseProduct(norm);
  Interaction out{Eigen::VectorXd::Zero(m), with_grad ? Eigen::MatrixXd::Zero(m, d) : Eigen::MatrixXd()};
  const std::size_t blocks = static_cast<std::size_t>((m + kGramRows - 1) / kGramRows);
  parallel_for(blocks, [&](std::size_t begin, std::size_t end) {
    Eigen::MatrixXd gram;
    Eigen::VectorXd ks, side;
    for (std::size_t blk = begin; blk < end; ++blk) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(blk) * kGramRows;
      const Eigen::Index rows = std::min(kGramRows, m - r0);
      gram.noalias() = cloud.b.middleRows(r0, rows) * cloud.b.transpose();
      ks.setZero(rows);
      side.setZero(rows);
      // After this loop gram holds a_k (pi - t) for the gradient product.
      for (Eigen::Index k = 0; k < m; ++k) {
        const double w = a_norm[k];
        for (Eigen::Index i = 0; i < rows; ++i) {
          const double denom = norm[r0 + i] * norm[k];
          const double c = denom > 0.0 ? std::clamp(gram(i, k) / denom, -1.0, 1.0) : 0.0;
          const double bend = std::numbers::pi - std::acos(c);
          const double sine = std::sqrt(std::max(0.0, 1.0 - c * c));
          ks[i] += w * (sine + bend * c);
          side[i] += w * sine;
          gram(i, k) = cloud.a[k] * bend;
        }
      }
      out.kernel_sum.segment(r0, rows) = scale * norm.segment(r0, rows).cwiseProduct(ks);
      if (!with_grad) continue;
      Eigen::MatrixXd g = gram * cloud.b;
      for (Eigen::Index i = 0; i < rows; ++i)
        if (norm[r0 + i] > 0.0) g.row(i) += side[i] / norm[r0 + i] * cloud.b.row(r0 + i);
      out.grad_sum.middleRows(r0, rows) = scale * g;
    }
  }, 1);
  return out;
}

// h(b) = E ||y_H|| relu(b.y) = |b| H(theta) and its gradient H b^ + H' e_theta.
void target_terms(const ParticleCloud& cloud, const AngleLawQuadrature& quad, Eigen::VectorXd* value,
                  Eigen::MatrixXd* grad) {
  const Eigen::Index m = cloud.width();
  const int dH = cloud.dims.d_H();
  const int d = cloud.dims.d();
  if (value) value->resize(m);
  if (grad) grad->setZero(m, d);
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto row = cloud.b.row(j);
    const double nh = row.head(dH).norm();
    const double np = row.tail(d - dH).norm();
    const double n = std::hypot(nh, np);
    if (n == 0.0) {
      if (value) (*value)[j] = 0.0;
      continue;
    }
    const double theta = std::atan2(np, nh);
    const auto [h, dh] = quad.target_term(theta);
    if (value) (*value)[j] = n * h;
    if (!grad) continue;
    grad->row(j) = (h / n) * row;
    if (nh > kAxisTol * n && np > kAxisTol * n) {
      // e_theta = -sin(theta) u_H / |u_H| + cos(theta) u_perp / |u_perp|
      const double s = np / n, c = nh / n;
      grad->row(j).head(dH) -= dh * s / nh * row.head(dH);
      grad->row(j).tail(d - dH) += dh * c / np * row.tail(d - dH);
    }
  }
}

void require_quadrature(const ParticleCloud& cloud, const AngleLawQuadrature& quad, const char* where) {
  if (quad.dims().d_H() != cloud.dims.d_H() || quad.dims().d_perp() != cloud.dims.d_perp())
    throw InvalidArgument(std::string(where) + ": quadrature built for other dimensions");
}

}  // namespace

Velocity population_velocity(const ParticleCloud& cloud, const AngleLawQuadrature& quad) {
  require_quadrature(cloud, quad, "population_velocity");
  const double m = cloud.width();
  Eigen::VectorXd h;
  Eigen::MatrixXd dh;
  target_terms(cloud, quad, &h, &dh);
  const Interaction inter = interaction(cloud, true);
  Velocity v;
  v.a = h - inter.kernel_sum / m;
  v.b = cloud.a.asDiagonal() * (dh - inter.grad_sum / m);
  return v;
}

ParticleCloud step_population(ParticleCloud cloud, const AngleLawQuadrature& quad, double eta,
                              std::size_t iteration) {
  if (!(eta >= 0.0)) throw InvalidArgument("step_population: eta must be >= 0");
  if (eta == 0.0) return cloud;
  const Velocity v = population_velocity(cloud, quad);
  cloud.a += eta * v.a;
  cloud.b += eta * v.b;
  if (!cloud.a.allFinite() || !cloud.b.allFinite())
    throw NumericalBlowup("step_population: non-finite particle", iteration);
  return cloud;
}

double population_loss(const ParticleCloud& cloud, const AngleLawQuadrature& quad) {
  require_quadrature(cloud, quad, "population_loss");
  const double m = cloud.width();
  Eigen::VectorXd h;
  target_terms(cloud, quad, &h, nullptr);
  const Interaction inter = interaction(cloud, false);
  const double target_sq = static_cast<double>(cloud.dims.d_H()) / cloud.dims.d();
  return 0.5 * target_sq - cloud.a.dot(h) / m + 0.5 * cloud.a.dot(inter.kernel_sum) / (m * m);
}

// --- batches and stepping -----------------------------------------------

BatchSampler::BatchSampler(const SplitDims& dims, BatchSpec spec, std::uint64_t seed)
    : dims_(dims), spec_(std::move(spec)), seed_(seed) {
  if (spec_.size < 1) throw InvalidArgument("BatchSampler: batch size must be >= 1");
  if (!spec_.symmetrize_with.empty()) group_ = generate_group(spec_.symmetrize_with);
}

int BatchSampler::points_per_batch() const {
  return spec_.size * static_cast<int>(std::max<std::size_t>(1, group_.size()));
}

Eigen::MatrixXd BatchSampler::draw(std::size_t iteration) const {
  RandomSource rng(seed_, kBatchStreamBase + iteration);
  Eigen::MatrixXd y = sample_uniform_sphere(dims_.d(), spec_.size, rng);
  return group_.empty() ? y : symmetrize_batch(y, group_);
}

const Eigen::MatrixXd& BatchSampler::batch(std::size_t iteration) {
  if (spec_.mode == BatchSpec::Mode::Frozen) {
    if (!have_frozen_) {
      current_ = draw(0);
      have_frozen_ = true;
    }
    return current_;
  }
  current_ = draw(iteration);
  return current_;
}

ParticleCloud step(ParticleCloud cloud, const TargetSpec& target, double eta,
                   const Eigen::MatrixXd& batch, std::size_t iteration) {
  if (!(eta >= 0.0)) throw InvalidArgument("step: eta must be >= 0");
  if (eta == 0.0) return cloud;
  const Velocity v = velocity(cloud, target, batch);
  cloud.a += eta * v.a;
  cloud.b += eta * v.b;
  if (!cloud.a.allFinite() || !cloud.b.allFinite())
    throw NumericalBlowup("step: non-finite particle", iteration);
  return cloud;
}

ParticleCloud step(ParticleCloud cloud, const TargetSpec& target, double eta, BatchSampler& sampler,
                   std::size_t iteration) {
  return step(std::move(cloud), target, eta, sampler.batch(iteration), iteration);
}

double cone_drift(const ParticleCloud& cloud) {
  return (cloud.a.cwiseAbs() - cloud.b.rowwise().norm()).cwiseAbs().maxCoeff();
}

// --- projections and diagnostics ----------------------------------------

ReducedCloud project_to_angles(const ParticleCloud& cloud) {
  const int m = cloud.width();
  const int dH = cloud.dims.d_H();
  ReducedCloud out{cloud.dims, Eigen::VectorXd(m), Eigen::VectorXd(m), std::vector<int>(m), 1.0};
  for (int j = 0; j < m; ++j) {
    const double nb = cloud.b.row(j).norm();
    if (nb == 0.0) throw DegenerateParticle("project_to_angles: particle " + std::to_string(j) + " has b = 0");
    const double nh = cloud.b.row(j).head(dH).norm();
    const double a = cloud.a[j];
    out.eps[static_cast<std::size_t>(j)] = a >= 0.0 ? 1 : -1;
    out.c[j] = a * nb / m;
    out.theta[j] = std::acos(std::clamp(nh / nb, 0.0, 1.0));
  }
  return out;
}

double invariance_defect(const ParticleCloud& cloud, const OrthogonalTransform& transform,
                         const Eigen::MatrixXd& test_points) {
  if (test_points.cols() == 0) return 0.0;
  const Eigen::VectorXd f = predict_batch(cloud, test_points);
  const bool is_identity = transform.matrix().isIdentity(0.0);
  const Eigen::VectorXd ft =
      is_identity ? f : predict_batch(cloud, Eigen::MatrixXd(transform.matrix() * test_points));
  if (transform.flavor() == Flavor::Invariant) return (ft - f).cwiseAbs().maxCoeff();
  return (ft + f).cwiseAbs().maxCoeff();
}

std::vector<double> perp_dependence_scan(const ParticleCloud& cloud, const Eigen::VectorXd& uH,
                                         std::span<const double> r_grid) {
  const int d = cloud.dims.d();
  const int dH = cloud.dims.d_H();
  Eigen::VectorXd base = Eigen::VectorXd::Zero(d);
  if (uH.size() == dH) {
    base.head(dH) = uH;
  } else if (uH.size() == d) {
    if (uH.tail(d - dH).cwiseAbs().maxCoeff() > 1e-9)
      throw InvalidArgument("perp_dependence_scan: uH must lie in H");
    base = uH;
  } else {
    throw InvalidArgument("perp_dependence_scan: uH has wrong dimension");
  }
  if (std::abs(base.norm() - 1.0) > 1e-9) throw InvalidArgument("perp_dependence_scan: uH must be a unit vector");

  Eigen::MatrixXd points(d, static_cast<Eigen::Index>(r_grid.size()));
  for (std::size_t k = 0; k < r_grid.size(); ++k) {
    Eigen::VectorXd x = base;
    x[dH] += r_grid[k];
    points.col(static_cast<Eigen::Index>(k)) = x;
  }
  const Eigen::VectorXd values = predict_batch(cloud, points);
  return {values.data(), values.data() + values.size()};
}

LossPair odd_part_loss_gap(const ParticleCloud& cloud, const TargetSpec& target,
                           const Eigen::MatrixXd& batch) {
  const Eigen::VectorXd fstar = target.evaluate(batch);
  const Eigen::VectorXd f = predict_batch(cloud, batch);
  const Eigen::VectorXd f_neg = predict_batch(cloud, Eigen::MatrixXd(-batch));
  const Eigen::VectorXd f_odd = 0.5 * (f - f_neg);
  const auto n = static_cast<double>(batch.cols());
  return {(fstar - f).squaredNorm() / n, (fstar - f_odd).squaredNorm() / n};
}

Eigen::VectorXd linear_coefficients(const ParticleCloud& cloud) {
  return cloud.b.transpose() * cloud.a / (2.0 * cloud.width());
}

}  // namespace mfflow
