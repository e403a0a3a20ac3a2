#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mfflow/errors.hpp"
#include "mfflow/experiment.hpp"
#include "mfflow/parallel.hpp"

namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kBlowup = 3, kIo = 4 };

struct CommonOptions {
  std::string config_path;
  std::string experiment;
  std::string out;
  std::optional<std::uint64_t> seed;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON config file");
  cmd->add_option("--experiment", o.experiment, "Run an experiment with its defaults (no config file)");
  cmd->add_option("--out", o.out, "Run directory (default: $MFFLOW_OUT/<experiment>-seed<seed>)");
  cmd->add_option("--seed", o.seed, "Overrides the config seed");
  cmd->add_option("--threads", o.threads, "Worker thread cap (1 gives bit-reproducible output)")
      ->check(CLI::NonNegativeNumber);
}

mfflow::ExperimentConfig resolve_config(const CommonOptions& o) {
  if (o.config_path.empty() == o.experiment.empty())
    throw mfflow::ConfigError("pass exactly one of --config or --experiment");
  mfflow::ExperimentConfig c =
      o.config_path.empty() ? mfflow::default_config(o.experiment) : mfflow::load_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  mfflow::validate(c);
  return c;
}

fs::path resolve_out(const CommonOptions& o, const mfflow::ExperimentConfig& c) {
  if (!o.out.empty()) return o.out;
  const char* root = std::getenv("MFFLOW_OUT");
  const fs::path base = root && *root ? fs::path(root) : fs::path("runs");
  return base / (c.experiment + "-seed" + std::to_string(c.seed));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean-field two-layer ReLU network flows and their angle reduction"};
  app.require_subcommand(1);

  CommonOptions run_opts;
  auto* run_cmd = app.add_subcommand("run", "Run one experiment and write its run directory");
  add_common(run_cmd, run_opts);

  CommonOptions cmp_opts;
  auto* cmp_cmd = app.add_subcommand("compare-reduction", "Full flow against the reduced angle flow");
  add_common(cmp_cmd, cmp_opts);

  std::string run_dir;
  int figure = 0;
  auto* emit_cmd = app.add_subcommand("emit-figure-data", "Write tidy per-figure CSVs from a run directory");
  emit_cmd->add_option("--run", run_dir, "Run directory")->required();
  emit_cmd->add_option("--figure", figure, "Figure id (1, 2 or 3)")->required();

  std::string defaults_for;
  auto* defaults_cmd = app.add_subcommand("defaults", "Print the materialized default config of an experiment");
  defaults_cmd->add_option("experiment", defaults_for, "Experiment name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*run_cmd || *cmp_cmd) {
      CommonOptions& o = *run_cmd ? run_opts : cmp_opts;
      if (o.threads > 0) mfflow::set_thread_count(o.threads);
      mfflow::ExperimentConfig c = resolve_config(o);
      if (*cmp_cmd) {
        c.experiment = "reduction-equivalence";
        mfflow::validate(c);
      }
      const fs::path out = resolve_out(o, c);
      const auto summary = mfflow::run(c, out);
      std::cout << summary.directory.string() << '\n';
      if (*cmp_cmd) std::cout << (out / "reduction-summary.csv").string() << '\n';
    } else if (*emit_cmd) {
      for (const auto& p : mfflow::emit_figure_data(run_dir, figure)) std::cout << p.string() << '\n';
    } else if (*defaults_cmd) {
      std::cout << mfflow::config_to_json(mfflow::default_config(defaults_for));
    }
  } catch (const mfflow::NumericalBlowup& e) {
    std::cerr << "numerical blowup at iteration " << e.iteration() << ": " << e.what() << '\n';
    return kBlowup;
  } catch (const mfflow::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const mfflow::ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kConfig;
  } catch (const mfflow::InvalidArgument& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kConfig;
  } catch (const mfflow::IllPosed& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kOk;
}
