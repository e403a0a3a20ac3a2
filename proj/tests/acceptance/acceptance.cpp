// Acceptance checks, one PASS/FAIL line each. With no arguments every check
// runs; otherwise only the listed numbers. Exit status is non-zero when any
// selected check fails.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "mfflow/csv.hpp"
#include "mfflow/errors.hpp"
#include "mfflow/experiment.hpp"
#include "mfflow/linear_flow.hpp"
#include "mfflow/mean_field_flow.hpp"
#include "mfflow/reduced_flow.hpp"
#include "mfflow/sphere_geometry.hpp"

using namespace mfflow;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kHalfPi = 0.5 * kPi;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

struct ScratchDir {
  fs::path path;
  explicit ScratchDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("mfflow-accept-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path);
  }
  ~ScratchDir() { fs::remove_all(path); }
};

double number(const std::string& s) { return std::stod(s); }

/// Running sums for a two-sample comparison of means.
struct Accumulator {
  double sum = 0.0, sq = 0.0;
  long n = 0;
  void add(double x) {
    sum += x;
    sq += x * x;
    ++n;
  }
  double mean() const { return sum / n; }
  double stderr_() const {
    const double m = mean();
    return std::sqrt(std::max(0.0, (sq / n - m * m)) / (n - 1));
  }
};

// --- 1: disintegration against direct sampling -----------------------------

Outcome disintegration_moments() {
  const SplitDims dims(5, 25);
  const int n = 1'000'000;
  const int chunk = 100'000;
  // Coordinates 0-4 span H, 5-29 its complement.
  using Monomial = std::function<double(const Eigen::VectorXd&)>;
  const std::vector<std::pair<std::string, Monomial>> moments = {
      {"x0", [](const auto& x) { return x[0]; }},
      {"x7", [](const auto& x) { return x[7]; }},
      {"x0^2", [](const auto& x) { return x[0] * x[0]; }},
      {"x7^2", [](const auto& x) { return x[7] * x[7]; }},
      {"x0x1", [](const auto& x) { return x[0] * x[1]; }},
      {"x0x7", [](const auto& x) { return x[0] * x[7]; }},
      {"x7x8", [](const auto& x) { return x[7] * x[8]; }},
      {"x0^3", [](const auto& x) { return x[0] * x[0] * x[0]; }},
      {"x0^2x7", [](const auto& x) { return x[0] * x[0] * x[7]; }},
      {"x0x7^2", [](const auto& x) { return x[0] * x[7] * x[7]; }},
      {"x0x1x2", [](const auto& x) { return x[0] * x[1] * x[2]; }},
      {"x0^4", [](const auto& x) { return std::pow(x[0], 4); }},
      {"x7^4", [](const auto& x) { return std::pow(x[7], 4); }},
      {"x0^2x1^2", [](const auto& x) { return x[0] * x[0] * x[1] * x[1]; }},
      {"x0^2x7^2", [](const auto& x) { return x[0] * x[0] * x[7] * x[7]; }},
      {"x7^2x8^2", [](const auto& x) { return x[7] * x[7] * x[8] * x[8]; }},
      {"x0^3x7", [](const auto& x) { return x[0] * x[0] * x[0] * x[7]; }},
      {"x0x1x7x8", [](const auto& x) { return x[0] * x[1] * x[7] * x[8]; }},
      {"x4^2x29^2", [](const auto& x) { return x[4] * x[4] * x[29] * x[29]; }},
      {"|xH|^2", [](const auto& x) { return x.head(5).squaredNorm(); }},
      {"|xH|^4", [](const auto& x) { return std::pow(x.head(5).squaredNorm(), 2); }},
      {"|xH|^2 x7^2", [](const auto& x) { return x.head(5).squaredNorm() * x[7] * x[7]; }},
      {"(x0+x7)^4", [](const auto& x) { return std::pow(x[0] + x[7], 4); }},
      {"x3 x20^3", [](const auto& x) { return x[3] * std::pow(x[20], 3); }},
  };
  std::vector<Accumulator> direct(moments.size()), composed(moments.size());
  RandomSource rng_direct(101), rng_composed(202);
  for (int done = 0; done < n; done += chunk) {
    const Eigen::MatrixXd a = sample_uniform_sphere(dims.d(), chunk, rng_direct);
    const Eigen::MatrixXd b = sample_sphere_by_disintegration(dims, chunk, rng_composed);
    for (int i = 0; i < chunk; ++i) {
      const Eigen::VectorXd xa = a.col(i), xb = b.col(i);
      for (std::size_t k = 0; k < moments.size(); ++k) {
        direct[k].add(moments[k].second(xa));
        composed[k].add(moments[k].second(xb));
      }
    }
  }
  double worst = 0.0;
  std::string worst_name;
  for (std::size_t k = 0; k < moments.size(); ++k) {
    const double z = std::abs(direct[k].mean() - composed[k].mean()) /
                     std::hypot(direct[k].stderr_(), composed[k].stderr_());
    if (z > worst) {
      worst = z;
      worst_name = moments[k].first;
    }
  }
  return {worst <= 3.0, fmt("%zu moments, largest gap %.2f SE (%s)", moments.size(), worst, worst_name.c_str())};
}

// --- 2: second-moment matrix -----------------------------------------------

Outcome second_moment_matrix() {
  const int n = 1'000'000;
  const int chunk = 100'000;
  std::string detail;
  bool pass = true;
  for (int d : {3, 10, 30}) {
    RandomSource rng(300 + static_cast<std::uint64_t>(d));
    std::vector<Accumulator> acc(static_cast<std::size_t>(d * d));
    for (int done = 0; done < n; done += chunk) {
      const Eigen::MatrixXd y = sample_uniform_sphere(d, chunk, rng);
      for (int c = 0; c < chunk; ++c)
        for (int i = 0; i < d; ++i)
          for (int j = i; j < d; ++j) acc[static_cast<std::size_t>(i * d + j)].add(y(i, c) * y(j, c));
    }
    int bad = 0, entries = 0;
    double worst = 0.0;
    for (int i = 0; i < d; ++i) {
      for (int j = i; j < d; ++j) {
        const auto& a = acc[static_cast<std::size_t>(i * d + j)];
        const double z = std::abs(a.mean() - (i == j ? 1.0 / d : 0.0)) / a.stderr_();
        worst = std::max(worst, z);
        ++entries;
        if (z > 3.0) ++bad;
      }
    }
    pass = pass && bad == 0;
    detail += fmt("d=%d: %d/%d entries beyond 3 SE (max %.2f); ", d, bad, entries, worst);
  }
  return {pass, detail.substr(0, detail.size() - 2)};
}

// --- 3, 4: invariance suite --------------------------------------------------

Outcome invariance_column(const std::string& column, const std::string& label) {
  ScratchDir dir("inv-" + column);
  run(default_config("invariance-suite"), dir.path);
  const CsvTable t = read_csv(dir.path / "metrics.csv");
  const std::size_t col = t.column(column);
  double worst = 0.0;
  int rows = 0;
  std::map<std::string, int> per_case;
  for (const auto& r : t.rows) {
    if (r[col].empty()) continue;
    worst = std::max(worst, number(r[col]));
    ++rows;
    ++per_case[r[t.column("run-id")]];
  }
  const bool pass = rows > 0 && worst <= 1e-10;
  return {pass, fmt("%s over %d logged rows in %zu case(s): max %.3g", label.c_str(), rows, per_case.size(), worst)};
}

// --- 5: linear flow ----------------------------------------------------------

std::vector<double> parse_vector(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ';')) out.push_back(std::stod(item));
  return out;
}

Outcome linear_convergence() {
  ScratchDir dir("linear");
  const ExperimentConfig c = default_config("linear-figure1");
  const auto start = std::chrono::steady_clock::now();
  run(c, dir.path);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const CsvTable opt = read_csv(dir.path / "optimum.csv");
  const std::vector<double> w_star = parse_vector(opt.rows.at(0)[opt.column("w-star")]);
  const CsvTable t = read_csv(dir.path / "metrics.csv");
  std::map<std::string, std::vector<const std::vector<std::string>*>> runs;
  for (const auto& r : t.rows) runs[r[t.column("run-id")]].push_back(&r);

  bool pass = runs.size() == static_cast<std::size_t>(c.runs) + 1;
  double worst_gap = 0.0, worst_w = 0.0, min_r2 = 1.0, min_rate = 1e300;
  for (const auto& [id, rows] : runs) {
    std::vector<double> ts, gaps;
    for (const auto* r : rows) {
      ts.push_back(number((*r)[t.column("t")]));
      gaps.push_back(number((*r)[t.column("loss")]));
    }
    const std::vector<double> w = parse_vector((*rows.back())[t.column("w-coords")]);
    double dw = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) dw = std::max(dw, std::abs(w[i] - w_star[i]));
    worst_w = std::max(worst_w, dw);
    if (id == "gd-on-q") continue;
    worst_gap = std::max(worst_gap, gaps.back());
    try {
      const RateFit fit = fit_exponential_rate(ts, gaps);
      min_r2 = std::min(min_r2, fit.r2);
      min_rate = std::min(min_rate, fit.rate);
    } catch (const InsufficientData&) {
      pass = false;
    }
  }
  pass = pass && worst_gap < 1e-8 && min_r2 > 0.99 && min_rate > 0.0 && worst_w <= 1e-4 && seconds < 60.0;
  return {pass, fmt("%zu runs + baseline: max final gap %.3g, min r2 %.5f, min rate %.4f, max |w - w*| %.3g, %.1f s",
                    runs.size() - 1, worst_gap, min_r2, min_rate, worst_w, seconds)};
}

// --- 6: velocities against finite differences --------------------------------

double half_batch_loss(const ParticleCloud& cloud, const TargetSpec& target, const Eigen::MatrixXd& batch) {
  const Eigen::VectorXd r = target.evaluate(batch) - predict_batch(cloud, batch);
  return 0.5 * r.squaredNorm() / static_cast<double>(r.size());
}

/// Largest per-particle relative error ||v_j - fd_j|| / ||fd_j||.
double fd_error(int m, int d, const std::function<double(const Eigen::VectorXd&, const Eigen::MatrixXd&)>& loss,
                const Eigen::VectorXd& a, const Eigen::MatrixXd& b, const Velocity& v) {
  const double h = 1e-6;
  double worst = 0.0;
  for (int j = 0; j < m; ++j) {
    Eigen::VectorXd fd(d + 1), got(d + 1);
    for (int i = 0; i <= d; ++i) {
      Eigen::VectorXd ap = a, am = a;
      Eigen::MatrixXd bp = b, bm = b;
      if (i == 0) {
        ap[j] += h;
        am[j] -= h;
        got[0] = v.a[j];
      } else {
        bp(j, i - 1) += h;
        bm(j, i - 1) -= h;
        got[i] = v.b(j, i - 1);
      }
      fd[i] = -m * (loss(ap, bp) - loss(am, bm)) / (2 * h);
    }
    worst = std::max(worst, (got - fd).norm() / fd.norm());
  }
  return worst;
}

Outcome velocity_finite_differences() {
  const int m = 20;
  const SplitDims dims = SplitDims::from_ambient(8, 3);
  const TargetSpec target = TargetSpec::norm_on_subspace(dims);
  RandomSource rng(600);
  const Eigen::MatrixXd batch = sample_uniform_sphere(dims.d(), 50, rng);
  // Smooth point: every pre-activation stays clear of the kink.
  ParticleCloud cloud = init_cloud(dims, m, rng);
  for (int tries = 0; (cloud.b * batch).cwiseAbs().minCoeff() < 1e-3; ++tries) {
    if (tries > 1000) return {false, "no smooth draw found"};
    cloud = init_cloud(dims, m, rng);
  }
  const Velocity vr = velocity(cloud, target, batch);
  const double relu_err = fd_error(
      m, dims.d(),
      [&](const Eigen::VectorXd& a, const Eigen::MatrixXd& b) {
        return half_batch_loss(ParticleCloud{dims, a, b}, target, batch);
      },
      cloud.a, cloud.b, vr);

  auto data = std::make_shared<const Dataset>(Dataset::figure1_recipe(100, 5, rng));
  const LinearFlowState state = init_linear_state(data, m, rng);
  const Velocity vl = linear_velocity(state);
  const double lin_err = fd_error(
      m, 5,
      [&](const Eigen::VectorXd& a, const Eigen::MatrixXd& b) {
        return q_value_and_grad(*data, linear_coefficients(ParticleCloud{state.cloud.dims, a, b})).value;
      },
      state.cloud.a, state.cloud.b, vl);
  const bool pass = relu_err <= 1e-6 && lin_err <= 1e-6;
  return {pass, fmt("20 particles, max relative error: relu %.3g, linear %.3g", relu_err, lin_err)};
}

// --- 7: phi~ -----------------------------------------------------------------

Outcome phi_tilde_checks() {
  double worst_closed = 0.0;
  for (int dH : {2, 5}) {
    const SplitDims dims(dH, 30 - dH);
    const double k = std::tgamma(0.5 * dH) / (2.0 * std::sqrt(kPi) * std::tgamma(0.5 * (dH + 1)));
    for (int i = 0; i <= 10; ++i) {
      const double phi = kHalfPi * i / 10.0;
      const double got = phi_tilde(dims, 0.0, phi, QuadratureSpec::gauss(64));
      worst_closed = std::max(worst_closed, std::abs(got - std::cos(phi) * k));
    }
  }

  // Direct double average: u at angle theta and x at angle phi, both built
  // from uniform directions in H and its complement.
  const SplitDims dims(5, 25);
  RandomSource pick(700), rng(701);
  const int n = 1'000'000;
  double worst_z = 0.0;
  for (int p = 0; p < 5; ++p) {
    const double theta = pick.uniform(0.0, kHalfPi);
    const double phi = pick.uniform(0.0, kHalfPi);
    Accumulator acc;
    const int chunk = 100'000;
    for (int done = 0; done < n; done += chunk) {
      const Eigen::MatrixXd uh = sample_uniform_sphere(dims.d_H(), chunk, rng);
      const Eigen::MatrixXd up = sample_uniform_sphere(dims.d_perp(), chunk, rng);
      const Eigen::MatrixXd xh = sample_uniform_sphere(dims.d_H(), chunk, rng);
      const Eigen::MatrixXd xp = sample_uniform_sphere(dims.d_perp(), chunk, rng);
      for (int i = 0; i < chunk; ++i) {
        const Eigen::VectorXd u = compose_disintegration(theta, uh.col(i), up.col(i));
        const Eigen::VectorXd x = compose_disintegration(phi, xh.col(i), xp.col(i));
        acc.add(std::max(0.0, u.dot(x)));
      }
    }
    const double want = phi_tilde(dims, theta, phi, QuadratureSpec::gauss(64));
    worst_z = std::max(worst_z, std::abs(acc.mean() - want) / acc.stderr_());
  }
  const bool pass = worst_closed <= 1e-3 && worst_z <= 3.0;
  return {pass, fmt("closed form max error %.3g; sampled average max gap %.2f SE at 5 angle pairs", worst_closed,
                    worst_z)};
}

// --- 8: stationarity of the single atom --------------------------------------

Outcome single_atom_stationarity() {
  const SplitDims dims(5, 25);
  ReducedCloud atom{dims, Eigen::VectorXd::Constant(1, alpha_expected(5)), Eigen::VectorXd::Zero(1), {1}, 1.0};
  RandomSource rng(800);
  const GVEstimate e = estimate_g_v(atom, McBatch::sample(dims, 1'000'000, rng), PrefactorMode::OneOverN, true);
  const auto table = PhiTildeTable::cached(dims);
  const MeanAndError a = objective_a(atom, 1'000'000, rng, *table);
  const bool pass = std::abs(e.g[0]) < 3.0 * e.g_stderr[0] && std::abs(e.v[0]) < 3.0 * e.v_stderr[0] && a.mean < 1e-4;
  return {pass, fmt("G = %.3g (SE %.3g), V = %.3g (SE %.3g), objective %.3g", e.g[0], e.g_stderr[0], e.v[0],
                    e.v_stderr[0], a.mean)};
}

// --- 9: figure 3 defaults -----------------------------------------------------

Outcome figure3_reproduction() {
  ScratchDir dir("fig3");
  const auto start = std::chrono::steady_clock::now();
  run(default_config("reduced-figure3"), dir.path);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const CsvTable t = read_csv(dir.path / "metrics.csv");
  const auto& first = t.rows.front();
  const auto& last = t.rows.back();
  auto at = [&](const std::vector<std::string>& r, const char* c) { return number(r[t.column(c)]); };
  const double drop = at(first, "loss") / at(last, "loss");
  const double alpha = alpha_expected(5);
  const double mass_err = std::abs(at(last, "plus-mass") - alpha) / alpha;
  const double wp0 = at(first, "w2-plus-to-0"), wp1 = at(last, "w2-plus-to-0");
  const double wm0 = at(first, "w2-minus-to-half-pi"), wm1 = at(last, "w2-minus-to-half-pi");
  const bool pass = drop >= 100.0 && mass_err <= 0.15 && wp1 < wp0 && wm1 < wm0 && wp1 <= 0.5 * wp0;
  return {pass, fmt("loss drop x%.1f, plus-mass %.4f (alpha %.4f, %.1f%% off), W2+ %.4f -> %.4f, W2- %.4f -> %.4f, "
                    "%.0f s",
                    drop, at(last, "plus-mass"), alpha, 100 * mass_err, wp0, wp1, wm0, wm1, seconds)};
}

// --- 10: reduction equivalence ------------------------------------------------

Outcome reduction_equivalence() {
  const auto start = std::chrono::steady_clock::now();
  const ReductionReport r = compare_reduction(default_config("reduction-equivalence"));
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  bool pass = r.widths == std::vector<int>{256, 1024, 4096};
  std::string detail = "start gaps (SE):";
  for (const auto& s : r.starts) {
    const double se = std::hypot(s.full.stderr_, s.reduced.stderr_);
    const double gap = std::abs(s.full.mean - s.reduced.mean);
    pass = pass && gap <= se;
    detail += fmt(" %.2f", gap / se);
  }
  detail += "; median discrepancy:";
  for (std::size_t i = 0; i < r.median_discrepancy.size(); ++i) {
    detail += fmt(" %.3g", r.median_discrepancy[i]);
    if (i > 0) pass = pass && r.median_discrepancy[i] <= r.median_discrepancy[i - 1];
  }
  detail += fmt("; %.0f s", seconds);
  return {pass, detail};
}

// --- 11: perpendicular dependence ---------------------------------------------

Outcome perp_scan_shrinks() {
  ScratchDir dir("perp");
  run(default_config("perp-scan-figure2"), dir.path);
  const CsvTable t = read_csv(dir.path / "scan.csv");
  std::map<int, std::pair<double, double>> range;
  for (const auto& r : t.rows) {
    const int k = std::stoi(r[t.column("iteration")]);
    const double v = number(r[t.column("value")]);
    auto [it, fresh] = range.try_emplace(k, v, v);
    if (!fresh) {
      it->second.first = std::min(it->second.first, v);
      it->second.second = std::max(it->second.second, v);
    }
  }
  const auto& [k0, r0] = *range.begin();
  const auto& [k1, r1] = *range.rbegin();
  const double s0 = r0.second - r0.first, s1 = r1.second - r1.first;
  return {k0 == 0 && k1 > 0 && s1 < s0, fmt("spread over r: %.4g at iteration %d, %.4g at iteration %d", s0, k0, s1, k1)};
}

// --- 12: triple-loop oracle ------------------------------------------------------

Outcome estimator_triple_loop() {
  const SplitDims dims(3, 4);
  RandomSource rng(1200);
  double worst = 0.0;
  for (int fixture = 0; fixture < 20; ++fixture) {
    ReducedCloud cloud{dims, Eigen::VectorXd(2), Eigen::VectorXd(2), {1, -1}, fixture % 2 ? 0.5 : 1.0};
    cloud.c << rng.uniform(0.1, 2.0), -rng.uniform(0.1, 2.0);
    cloud.theta << rng.uniform(0.0, kHalfPi), rng.uniform(0.0, kHalfPi);
    const McBatch b = McBatch::sample(dims, 3, rng);
    for (const bool spread : {false, true}) {
      const GVEstimate e = estimate_g_v(cloud, b, PrefactorMode::OneOverN, spread);
      for (int j = 0; j < 2; ++j) {
        double g = 0.0, v = 0.0;
        for (int i = 0; i < 3; ++i) {
          double f = 0.0;
          for (int l = 0; l < 2; ++l) f += cloud.c[l] * kernel_psi(b.rp[i], b.sp[i], cloud.theta[l], b.phi[i]);
          const double resid = std::cos(b.phi[i]) - cloud.atom_weight * f;
          g += kernel_psi(b.r[i], b.s[i], cloud.theta[j], b.phi[i]) * resid;
          v += kernel_chi(b.r[i], b.s[i], cloud.theta[j], b.phi[i]) * resid;
        }
        worst = std::max({worst, std::abs(e.g[j] - g / 3), std::abs(e.v[j] - v / 3)});
      }
    }
  }
  return {worst <= 1e-14, fmt("20 fixtures x 2 code paths, max deviation %.3g", worst)};
}

const std::map<int, std::pair<std::string, std::function<Outcome()>>>& checks() {
  static const std::map<int, std::pair<std::string, std::function<Outcome()>>> all = {
      {1, {"disintegration moments", disintegration_moments}},
      {2, {"sphere second moments", second_moment_matrix}},
      {3, {"exact invariance", [] { return invariance_column("invariance-defect", "invariance defect"); }}},
      {4, {"odd-target linearity", [] { return invariance_column("linearity-defect", "linearity defect"); }}},
      {5, {"linear flow convergence", linear_convergence}},
      {6, {"velocity finite differences", velocity_finite_differences}},
      {7, {"phi~ closed form and sampling", phi_tilde_checks}},
      {8, {"single atom stationarity", single_atom_stationarity}},
      {9, {"figure 3 reproduction", figure3_reproduction}},
      {10, {"reduction equivalence", reduction_equivalence}},
      {11, {"perpendicular dependence", perp_scan_shrinks}},
      {12, {"estimator triple loop", estimator_triple_loop}},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty())
    for (const auto& [id, check] : checks()) selected.push_back(id);

  int failures = 0;
  for (int id : selected) {
    const auto it = checks().find(id);
    if (it == checks().end()) {
      std::printf("criterion %d: FAIL (no such check)\n", id);
      ++failures;
      continue;
    }
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %2d %-32s %s  %s\n", id, it->second.first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
