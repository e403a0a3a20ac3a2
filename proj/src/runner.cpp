#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>

#include "json.hpp"
#include "mfflow/csv.hpp"
#include "mfflow/errors.hpp"
#include "mfflow/experiment.hpp"
#include "mfflow/linear_flow.hpp"
#include "mfflow/parallel.hpp"

#ifndef MFFLOW_VERSION
#define MFFLOW_VERSION "unknown"
#endif

namespace mfflow {

namespace fs = std::filesystem;

namespace {

constexpr double kHalfPi = 0.5 * std::numbers::pi;

// Stream ids; every consumer of randomness in a run has its own.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kEvalStream = 2;
constexpr std::uint64_t kTestStream = 3;
constexpr std::uint64_t kLinearInitStream = 100;
constexpr std::uint64_t kReducedBatchStream = 1ULL << 32;

bool logged(int k, int log_every) { return k % log_every == 0; }

/// Everything a metrics row may carry; absent values print as empty fields.
struct MetricsRow {
  std::string run_id;
  int iteration = 0;
  double t = 0.0;
  std::optional<double> loss, plus_mass, minus_mass, w2_plus, w2_minus, mass_error_plus, mass_error_minus;
  std::optional<std::int64_t> sign_flips, overshoots;
  std::optional<std::vector<double>> w_coords;
  std::optional<double> invariance_defect, linearity_defect;
};

class MetricsWriter {
 public:
  explicit MetricsWriter(const fs::path& dir)
      : metrics_(dir / "metrics.csv",
                 {"run-id", "iteration", "t", "loss", "plus-mass", "minus-mass", "w2-plus-to-0",
                  "w2-minus-to-half-pi", "mass-error-plus", "mass-error-minus", "sign-flip-count",
                  "overshoot-count", "w-coords", "invariance-defect", "linearity-defect"}),
        timings_(dir / "timings.csv", {"run-id", "iteration", "wall-time"}),
        start_(std::chrono::steady_clock::now()) {}

  void write(const MetricsRow& r) {
    const auto opt_int = [](const std::optional<std::int64_t>& v) { return v ? CsvCell(*v) : CsvCell(); };
    metrics_.row({cell(r.run_id), cell(r.iteration), cell(r.t), cell(r.loss), cell(r.plus_mass),
                  cell(r.minus_mass), cell(r.w2_plus), cell(r.w2_minus), cell(r.mass_error_plus),
                  cell(r.mass_error_minus), opt_int(r.sign_flips), opt_int(r.overshoots),
                  r.w_coords ? cell(format_vector(*r.w_coords)) : CsvCell(), cell(r.invariance_defect),
                  cell(r.linearity_defect)});
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    timings_.row({cell(r.run_id), cell(r.iteration), cell(wall)});
  }

  void close() {
    metrics_.close();
    timings_.close();
  }

 private:
  CsvWriter metrics_;
  CsvWriter timings_;
  std::chrono::steady_clock::time_point start_;
};

std::optional<double> w2_or_empty(const ReducedCloud& cloud, Side side, double location) {
  try {
    return w2_to_dirac(cloud, side, location);
  } catch (const UndefinedDistance&) {
    return std::nullopt;
  }
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  out.close();
  if (out.fail()) throw IoError("write failed on " + path.string());
}

void write_particles(CsvWriter& out, const std::string& run_id, const ParticleCloud& cloud) {
  for (int j = 0; j < cloud.width(); ++j)
    out.row({cell(run_id), cell(j), cell(cloud.a[j]), cell(format_vector(to_std(cloud.b.row(j).transpose())))});
}

/// Base width for a cloud that will be symmetrized over `group_size` elements.
int base_width(int m, std::size_t group_size) {
  return group_size == 0 ? m : m / static_cast<int>(group_size);
}

ParticleCloud symmetric_init(const SplitDims& dims, int m, const std::vector<OrthogonalTransform>& gens,
                             RandomSource& rng) {
  const std::size_t g = gens.empty() ? 0 : generate_group(gens).size();
  const ParticleCloud base = init_cloud(dims, base_width(m, g), rng);
  return gens.empty() ? base : symmetrize_cloud(base, gens);
}

// --- reduced-figure3 ------------------------------------------------------

void run_reduced(const ExperimentConfig& c, const fs::path& dir, std::vector<std::string>& files) {
  const SplitDims dims = c.dims();
  RandomSource init_rng(c.seed, kInitStream);
  ReducedCloud cloud = init_reduced(dims, c.m, init_rng);
  const auto table = PhiTildeTable::cached(dims, c.phi_table_grid);
  const double alpha = alpha_expected(dims.d_H());
  const ReducedStepOptions options{c.prefactor_mode(), c.overshoot_mode(), c.reduced_scheme_mode()};

  MetricsWriter metrics(dir);
  CsvWriter hist(dir / "histograms.csv", {"iteration", "t", "side", "bin-left", "mass"});
  const double bin_width = kHalfPi / c.bins;
  for (int k = 0; k <= c.K; ++k) {
    if (logged(k, c.log_every)) {
      const SideMasses ms = masses(cloud);
      MetricsRow row;
      row.run_id = "reduced";
      row.iteration = k;
      row.t = k * c.eta;
      row.loss = objective_a_quadrature(cloud, *table, c.loss_nodes);
      row.plus_mass = ms.plus;
      row.minus_mass = ms.minus;
      row.w2_plus = w2_or_empty(cloud, Side::Plus, 0.0);
      row.w2_minus = w2_or_empty(cloud, Side::Minus, kHalfPi);
      row.mass_error_plus = std::abs(ms.plus - alpha);
      row.mass_error_minus = std::abs(ms.minus);
      row.sign_flips = cloud.sign_flip_events;
      row.overshoots = cloud.overshoot_events;
      metrics.write(row);
      for (const Side side : {Side::Plus, Side::Minus}) {
        const auto h = angle_histogram(cloud, side, c.bins);
        for (int b = 0; b < c.bins; ++b)
          hist.row({cell(k), cell(k * c.eta), cell(side == Side::Plus ? "plus" : "minus"), cell(b * bin_width),
                    cell(h[static_cast<std::size_t>(b)])});
      }
    }
    if (k == c.K) break;
    RandomSource batch_rng(c.seed, kReducedBatchStream + static_cast<std::uint64_t>(k));
    const McBatch batch = McBatch::sample(dims, c.N, batch_rng);
    cloud = step_reduced(std::move(cloud), batch, c.eta, options, static_cast<std::size_t>(k));
  }
  metrics.close();
  hist.close();

  CsvWriter final_state(dir / "final-state.csv", {"index", "eps", "c", "theta", "atom-weight"});
  for (int j = 0; j < cloud.size(); ++j)
    final_state.row({cell(j), cell(cloud.eps[static_cast<std::size_t>(j)]), cell(cloud.c[j]),
                     cell(cloud.theta[j]), cell(cloud.atom_weight)});
  final_state.close();
  files.insert(files.end(), {"metrics.csv", "timings.csv", "histograms.csv", "final-state.csv"});
}

// --- linear-figure1 -------------------------------------------------------

void run_linear(const ExperimentConfig& c, const fs::path& dir, std::vector<std::string>& files) {
  RandomSource data_rng(c.seed, kInitStream);
  auto data = std::make_shared<const Dataset>(Dataset::figure1_recipe(c.n_samples, c.d, data_rng));
  const OlsSolution ols = ols_optimum(*data);

  MetricsWriter metrics(dir);
  CsvWriter final_state(dir / "final-state.csv", {"run-id", "index", "a", "b"});
  for (int r = 0; r < c.runs; ++r) {
    RandomSource rng(c.seed, kLinearInitStream + static_cast<std::uint64_t>(r));
    LinearFlowState state = init_linear_state(data, c.m, rng, c.zero_start);
    const std::string id = "mean-field-" + std::to_string(r);
    for (int k = 0; k <= c.K; ++k) {
      if (logged(k, c.log_every)) {
        const Eigen::VectorXd w = state.w();
        MetricsRow row;
        row.run_id = id;
        row.iteration = k;
        row.t = k * c.eta;
        row.loss = q_gap(*data, ols, w);
        row.w_coords = to_std(w);
        metrics.write(row);
      }
      if (k == c.K) break;
      state = step_mean_field_linear(std::move(state), c.eta, static_cast<std::size_t>(k));
    }
    write_particles(final_state, id, state.cloud);
  }

  const auto traj = gd_on_q_baseline(*data, Eigen::VectorXd::Zero(c.d), c.eta, c.K);
  for (int k = 0; k <= c.K; ++k) {
    if (!logged(k, c.log_every)) continue;
    const auto& w = traj[static_cast<std::size_t>(k)];
    MetricsRow row;
    row.run_id = "gd-on-q";
    row.iteration = k;
    row.t = k * c.eta;
    row.loss = q_gap(*data, ols, w);
    row.w_coords = to_std(w);
    metrics.write(row);
  }
  metrics.close();
  final_state.close();

  CsvWriter optimum(dir / "optimum.csv", {"w-star", "q-min", "lambda-min", "lambda-max"});
  optimum.row({cell(format_vector(to_std(ols.w_star))), cell(ols.q_min), cell(ols.lambda_min),
               cell(ols.lambda_max)});
  optimum.close();
  files.insert(files.end(), {"metrics.csv", "timings.csv", "final-state.csv", "optimum.csv"});
}

// --- perp-scan-figure2 ----------------------------------------------------

void run_perp_scan(const ExperimentConfig& c, const fs::path& dir, std::vector<std::string>& files) {
  const SplitDims dims = c.dims();
  const TargetSpec target = c.target_spec();
  const auto gens = c.generators();
  RandomSource init_rng(c.seed, kInitStream);
  ParticleCloud cloud = symmetric_init(dims, c.m, gens, init_rng);

  BatchSpec spec;
  spec.mode = c.batch_mode == "frozen" ? BatchSpec::Mode::Frozen : BatchSpec::Mode::Fresh;
  spec.size = c.N;
  spec.symmetrize_with = gens;
  BatchSampler sampler(dims, spec, c.seed);
  RandomSource eval_rng(c.seed, kEvalStream);
  const Eigen::MatrixXd eval = sample_uniform_sphere(dims.d(), c.loss_samples, eval_rng);

  Eigen::VectorXd uH = Eigen::VectorXd::Zero(dims.d_H());
  uH[0] = 1.0;

  MetricsWriter metrics(dir);
  CsvWriter scan(dir / "scan.csv", {"iteration", "t", "r", "value"});
  for (int k = 0; k <= c.K; ++k) {
    if (logged(k, c.log_every)) {
      MetricsRow row;
      row.run_id = "full";
      row.iteration = k;
      row.t = k * c.eta;
      row.loss = batch_loss(cloud, target, eval).mean;
      metrics.write(row);
      const auto values = perp_dependence_scan(cloud, uH, c.r_grid);
      for (std::size_t i = 0; i < values.size(); ++i)
        scan.row({cell(k), cell(k * c.eta), cell(c.r_grid[i]), cell(values[i])});
    }
    if (k == c.K) break;
    cloud = step(std::move(cloud), target, c.eta, sampler, static_cast<std::size_t>(k));
  }
  metrics.close();
  scan.close();

  CsvWriter final_state(dir / "final-state.csv", {"run-id", "index", "a", "b"});
  write_particles(final_state, "full", cloud);
  final_state.close();
  files.insert(files.end(), {"metrics.csv", "timings.csv", "scan.csv", "final-state.csv"});
}

// --- invariance-suite -----------------------------------------------------

struct InvarianceCase {
  std::string id;
  std::vector<OrthogonalTransform> generators;
  TargetSpec target;
  bool linear_check;
};

void run_invariance(const ExperimentConfig& c, const fs::path& dir, std::vector<std::string>& files) {
  const SplitDims dims = c.dims();
  std::vector<InvarianceCase> cases;
  cases.push_back({"reflection-invariant",
                   {OrthogonalTransform::reflection(dims.d(), 0, Flavor::Invariant)},
                   TargetSpec::norm_on_subspace(dims),
                   false});
  cases.push_back({"negation-anti-invariant",
                   {OrthogonalTransform::negation(dims.d(), Flavor::AntiInvariant)},
                   TargetSpec::odd_linear_combination(c.target_linear, c.target_cubic),
                   true});

  RandomSource test_rng(c.seed, kTestStream);
  const Eigen::MatrixXd test = sample_uniform_sphere(dims.d(), c.test_points, test_rng);
  RandomSource eval_rng(c.seed, kEvalStream);
  const Eigen::MatrixXd eval = sample_uniform_sphere(dims.d(), c.loss_samples, eval_rng);

  MetricsWriter metrics(dir);
  CsvWriter final_state(dir / "final-state.csv", {"run-id", "index", "a", "b"});
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const auto& cs = cases[ci];
    const auto group = generate_group(cs.generators);
    RandomSource init_rng(c.seed, kInitStream + 10 * ci);
    ParticleCloud cloud = symmetric_init(dims, c.m, cs.generators, init_rng);
    BatchSpec spec;
    spec.mode = c.batch_mode == "frozen" ? BatchSpec::Mode::Frozen : BatchSpec::Mode::Fresh;
    spec.size = c.N;
    spec.symmetrize_with = cs.generators;
    BatchSampler sampler(dims, spec, c.seed + 7919 * (ci + 1));

    for (int k = 0; k <= c.K; ++k) {
      if (logged(k, c.log_every)) {
        double defect = 0.0;
        for (const auto& t : group) defect = std::max(defect, invariance_defect(cloud, t, test));
        MetricsRow row;
        row.run_id = cs.id;
        row.iteration = k;
        row.t = k * c.eta;
        row.loss = batch_loss(cloud, cs.target, eval).mean;
        row.invariance_defect = defect;
        const Eigen::VectorXd w = linear_coefficients(cloud);
        row.w_coords = to_std(w);
        if (cs.linear_check)
          row.linearity_defect = (predict_batch(cloud, test) - test.transpose() * w).cwiseAbs().maxCoeff();
        metrics.write(row);
      }
      if (k == c.K) break;
      cloud = step(std::move(cloud), cs.target, c.eta, sampler, static_cast<std::size_t>(k));
    }
    write_particles(final_state, cs.id, cloud);
  }
  metrics.close();
  final_state.close();
  files.insert(files.end(), {"metrics.csv", "timings.csv", "final-state.csv"});
}

// --- reduction-equivalence ------------------------------------------------

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// F(mu) estimated as A(P mu) + mean_y [l(f(y)) - l(f_sym(y))], where
/// f_sym(y) = f~(P mu; angle of y) is the orbit average of f. The
/// correction has far smaller variance than l(f) itself.
MeanAndError full_loss_with_control(const ParticleCloud& cloud, const TargetSpec& target,
                                    const Eigen::MatrixXd& eval, const PhiTildeTable& table, int nodes) {
  const ReducedCloud projected = project_to_angles(cloud);
  const double base = objective_a_quadrature(projected, table, nodes);
  const Eigen::VectorXd f = predict_batch(cloud, eval);
  const Eigen::VectorXd fstar = target.evaluate(eval);
  const int dH = cloud.dims.d_H();
  std::vector<double> diffs(static_cast<std::size_t>(eval.cols()));
  parallel_for(diffs.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto col = static_cast<Eigen::Index>(i);
      const double nh = eval.col(col).head(dH).norm();
      const double phi = std::acos(std::clamp(nh / eval.col(col).norm(), 0.0, 1.0));
      const double fsym = reduced_predict(projected, phi, table);
      const double r1 = fstar[col] - f[col];
      const double r2 = fstar[col] - fsym;
      diffs[i] = 0.5 * (r1 * r1 - r2 * r2);
    }
  }, 64);
  MeanAndError out = mean_and_error(diffs);
  out.mean += base;
  return out;
}

// Plain MC of the angle objective on given sample points: f*(y) = cos(phi_y)
// for the norm target, f~ read from the table.
MeanAndError reduced_loss_on_points(const ReducedCloud& cloud, const Eigen::MatrixXd& eval,
                                    const PhiTildeTable& table) {
  const int dH = cloud.dims.d_H();
  std::vector<double> terms(static_cast<std::size_t>(eval.cols()));
  parallel_for(terms.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto col = static_cast<Eigen::Index>(i);
      const double h = std::clamp(eval.col(col).head(dH).norm() / eval.col(col).norm(), 0.0, 1.0);
      const double r = h - reduced_predict(cloud, std::acos(h), table);
      terms[i] = 0.5 * r * r;
    }
  }, 64);
  return mean_and_error(terms);
}

}  // namespace

ReductionReport compare_reduction(const ExperimentConfig& c, const fs::path& out_dir) {
  if (c.target != "norm-on-subspace") throw ConfigError("compare_reduction needs the norm-on-subspace target");
  const SplitDims dims = c.dims();
  const TargetSpec target = c.target_spec();
  const auto gens = c.generators();
  const auto table = PhiTildeTable::cached(dims, c.phi_table_grid);
  const ReducedStepOptions options{c.prefactor_mode(), c.overshoot_mode(), c.reduced_scheme_mode()};
  const std::vector<int> widths = c.m_sweep.empty() ? std::vector<int>{c.m} : c.m_sweep;
  // Exact expectations remove sampling noise from both flows; what is left
  // is the finite-width gap alone.
  std::shared_ptr<const AngleLawQuadrature> exact;
  if (c.batch_mode == "exact") exact = AngleLawQuadrature::cached(dims, c.loss_nodes, c.phi_table_grid);

  RandomSource eval_rng(c.seed, kEvalStream);
  const Eigen::MatrixXd eval = sample_uniform_sphere(dims.d(), c.loss_samples, eval_rng);

  std::optional<CsvWriter> csv;
  std::optional<MetricsWriter> metrics;
  if (!out_dir.empty()) {
    csv.emplace(out_dir / "reduction.csv",
                std::vector<std::string>{"m", "iteration", "t", "full-loss", "full-loss-stderr", "reduced-loss",
                                         "reduced-loss-stderr", "relative-discrepancy"});
    metrics.emplace(out_dir);
  }

  ReductionReport report;
  report.widths = widths;
  for (const int width : widths) {
    RandomSource init_rng(c.seed, kInitStream + 1000 * static_cast<std::uint64_t>(width));
    ParticleCloud full = symmetric_init(dims, width, gens, init_rng);
    ReducedCloud reduced = project_to_angles(full);

    {
      ReductionStart start;
      start.m = width;
      start.full = batch_loss(full, target, eval);
      // Same points for both estimates: their difference then reflects the
      // projection rather than two independent sampling errors.
      start.reduced = reduced_loss_on_points(reduced, eval, *table);
      report.starts.push_back(start);
    }

    BatchSpec spec;
    spec.mode = c.batch_mode == "frozen" ? BatchSpec::Mode::Frozen : BatchSpec::Mode::Fresh;
    spec.size = c.N;
    spec.symmetrize_with = gens;
    // Every width sees the same batch sequence (common random numbers), so
    // the sampling noise shared by all widths cancels from the m-trend.
    BatchSampler sampler(dims, spec, c.seed);

    std::vector<double> discrepancies;
    for (int k = 0; k <= c.K; ++k) {
      if (logged(k, c.log_every)) {
        ReductionRow row;
        row.m = width;
        row.iteration = k;
        if (exact) {
          row.full_loss = population_loss(full, *exact);
          row.full_loss_stderr = 0.0;
          row.reduced_loss = exact->objective(reduced);
        } else {
          const MeanAndError fl = full_loss_with_control(full, target, eval, *table, c.loss_nodes);
          row.full_loss = fl.mean;
          row.full_loss_stderr = fl.stderr_;
          row.reduced_loss = objective_a_quadrature(reduced, *table, c.loss_nodes);
        }
        row.relative_discrepancy = std::abs(row.full_loss - row.reduced_loss) / row.reduced_loss;
        discrepancies.push_back(row.relative_discrepancy);
        report.rows.push_back(row);
        if (csv) {
          csv->row({cell(width), cell(k), cell(k * c.eta), cell(row.full_loss), cell(row.full_loss_stderr),
                    cell(row.reduced_loss), cell(row.reduced_loss_stderr), cell(row.relative_discrepancy)});
          const std::string suffix = "-" + std::to_string(width);
          MetricsRow full_row;
          full_row.run_id = "full" + suffix;
          full_row.iteration = k;
          full_row.t = k * c.eta;
          full_row.loss = row.full_loss;
          metrics->write(full_row);
          const SideMasses ms = masses(reduced);
          MetricsRow red_row;
          red_row.run_id = "reduced" + suffix;
          red_row.iteration = k;
          red_row.t = k * c.eta;
          red_row.loss = row.reduced_loss;
          red_row.plus_mass = ms.plus;
          red_row.minus_mass = ms.minus;
          red_row.sign_flips = reduced.sign_flip_events;
          red_row.overshoots = reduced.overshoot_events;
          metrics->write(red_row);
        }
      }
      if (k == c.K) break;
      if (exact) {
        full = step_population(std::move(full), *exact, c.eta, static_cast<std::size_t>(k));
        reduced = step_reduced(std::move(reduced), *exact, c.eta, options, static_cast<std::size_t>(k));
        continue;
      }
      // Both flows read the same sample points; the angle flow takes their
      // subspace angles, so the sampling noise is shared as well.
      const Eigen::MatrixXd& y = sampler.batch(static_cast<std::size_t>(k));
      full = step(std::move(full), target, c.eta, y, static_cast<std::size_t>(k));
      RandomSource batch_rng(c.seed, kReducedBatchStream + static_cast<std::uint64_t>(k));
      reduced = step_reduced(std::move(reduced), McBatch::from_points(dims, y, batch_rng), c.eta, options,
                             static_cast<std::size_t>(k));
    }
    report.median_discrepancy.push_back(median(discrepancies));
  }

  if (csv) {
    csv->close();
    metrics->close();
    CsvWriter summary(out_dir / "reduction-summary.csv",
                      {"m", "initial-full-loss", "initial-full-stderr", "initial-reduced-loss",
                       "initial-reduced-stderr", "median-relative-discrepancy"});
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const auto& s = report.starts[i];
      summary.row({cell(s.m), cell(s.full.mean), cell(s.full.stderr_), cell(s.reduced.mean),
                   cell(s.reduced.stderr_), cell(report.median_discrepancy[i])});
    }
    summary.close();
  }
  return report;
}

std::string code_version() { return MFFLOW_VERSION; }

RunSummary run(const ExperimentConfig& config, const fs::path& out_dir) {
  validate(config);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  RunSummary summary{out_dir, {"config.json", "manifest.json"}};
  write_text(out_dir / "config.json", config_to_json(config));

  if (config.experiment == "reduced-figure3")
    run_reduced(config, out_dir, summary.files);
  else if (config.experiment == "linear-figure1")
    run_linear(config, out_dir, summary.files);
  else if (config.experiment == "perp-scan-figure2")
    run_perp_scan(config, out_dir, summary.files);
  else if (config.experiment == "invariance-suite")
    run_invariance(config, out_dir, summary.files);
  else if (config.experiment == "reduction-equivalence") {
    compare_reduction(config, out_dir);
    summary.files.insert(summary.files.end(),
                         {"metrics.csv", "timings.csv", "reduction.csv", "reduction-summary.csv"});
  } else {
    throw ConfigError("unknown experiment '" + config.experiment + "'");
  }

  nlohmann::ordered_json manifest;
  manifest["code-version"] = code_version();
  manifest["experiment"] = config.experiment;
  manifest["seed"] = config.seed;
  manifest["threads"] = thread_count();
  manifest["files"] = summary.files;
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return summary;
}

}  // namespace mfflow
