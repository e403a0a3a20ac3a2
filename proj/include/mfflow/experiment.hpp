#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mfflow/mean_field_flow.hpp"
#include "mfflow/reduced_flow.hpp"

namespace mfflow {

/// One group generator as written in a config file.
struct TransformSpec {
  std::string kind = "negation";  // identity | negation | reflection
  int axis = 0;                   // reflection only
  std::string flavor = "invariant";

  OrthogonalTransform build(int d) const;
};

/// Every knob of every experiment. Unused fields are still echoed so that a
/// run directory's config.json is complete.
struct ExperimentConfig {
  std::string experiment = "reduced-figure3";
  int d = 30;
  int d_H = 5;
  int m = 1024;
  double eta = 5e-3;
  int N = 1000;
  int K = 20000;
  std::uint64_t seed = 0;
  int log_every = 100;

  // reduced flow
  int bins = 50;
  std::string prefactor = "d-over-n";  // one-over-n | d-over-n
  std::string overshoot = "allow";     // allow | clamp
  std::string reduced_scheme = "euler";  // euler | lifted
  int loss_nodes = 256;
  int phi_table_grid = 257;

  // full flow
  std::string batch_mode = "fresh";  // fresh | frozen | exact
  std::string target = "norm-on-subspace";
  std::vector<double> target_linear;
  std::vector<double> target_cubic;
  std::vector<TransformSpec> group;
  int loss_samples = 20000;
  std::vector<double> r_grid;
  int test_points = 100;

  // linear flow
  int n_samples = 100;
  int runs = 10;
  bool zero_start = false;

  // reduction equivalence
  std::vector<int> m_sweep;

  SplitDims dims() const { return SplitDims::from_ambient(d, d_H); }
  PrefactorMode prefactor_mode() const;
  OvershootMode overshoot_mode() const;
  ReducedScheme reduced_scheme_mode() const;
  TargetSpec target_spec() const;
  std::vector<OrthogonalTransform> generators() const;
};

const std::vector<std::string>& experiment_names();

/// Defaults for an experiment; throws ConfigError for unknown names.
ExperimentConfig default_config(const std::string& experiment);

/// Parses JSON text: "experiment" selects the defaults, every other key
/// overrides one of them. Unknown keys and invalid values raise ConfigError.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Fully materialized JSON (2-space indent, trailing newline).
std::string config_to_json(const ExperimentConfig& config);
/// Throws ConfigError when a field is out of range.
void validate(const ExperimentConfig& config);

struct RunSummary {
  std::filesystem::path directory;
  std::vector<std::string> files;
};

/// Runs config.experiment and writes its files into `out_dir` (created if
/// needed). Throws ConfigError, NumericalBlowup or IoError.
RunSummary run(const ExperimentConfig& config, const std::filesystem::path& out_dir);

struct ReductionRow {
  int m = 0;
  int iteration = 0;
  double full_loss = 0.0;
  double full_loss_stderr = 0.0;
  double reduced_loss = 0.0;
  double reduced_loss_stderr = 0.0;
  double relative_discrepancy = 0.0;
};

/// Plain Monte-Carlo estimates of both losses at iteration 0.
struct ReductionStart {
  int m = 0;
  MeanAndError full;
  MeanAndError reduced;
};

struct ReductionReport {
  std::vector<ReductionRow> rows;
  std::vector<ReductionStart> starts;
  std::vector<int> widths;
  std::vector<double> median_discrepancy;  // one per width
};

/// Full flow (symmetrized over config.group) against the angle flow started
/// from its projection, for each width in config.m_sweep (or config.m).
/// Writes reduction.csv and a summary into `out_dir` when it is non-empty.
ReductionReport compare_reduction(const ExperimentConfig& config, const std::filesystem::path& out_dir = {});

/// Writes the tidy per-figure CSVs (figure 1, 2 or 3) into the run
/// directory; returns their paths. Throws ConfigError when a required
/// series is missing.
std::vector<std::filesystem::path> emit_figure_data(const std::filesystem::path& run_dir, int figure);

/// Build identifier recorded in manifests.
std::string code_version();

}  // namespace mfflow
