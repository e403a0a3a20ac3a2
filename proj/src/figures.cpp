#include <string>

#include "mfflow/csv.hpp"
#include "mfflow/errors.hpp"
#include "mfflow/experiment.hpp"

namespace mfflow {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_semicolons(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(';', start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

fs::path emit_figure1(const fs::path& dir) {
  const CsvTable metrics = read_csv(dir / "metrics.csv");
  const auto id_col = metrics.column("run-id");
  const auto it_col = metrics.column("iteration");
  const auto w_col = metrics.column("w-coords");
  const fs::path out_path = dir / "figure1_trajectories.csv";
  CsvWriter out(out_path, {"run-id", "step", "w1", "w2", "method"});
  std::size_t written = 0;
  for (const auto& row : metrics.rows) {
    if (row[w_col].empty()) continue;
    const auto w = split_semicolons(row[w_col]);
    if (w.size() < 2) throw ConfigError("figure 1 needs at least two w coordinates");
    const std::string method = row[id_col] == "gd-on-q" ? "gd-on-q" : "mean-field";
    out.row({cell(row[id_col]), cell(row[it_col]), cell(w[0]), cell(w[1]), cell(method)});
    ++written;
  }
  out.close();
  if (written == 0) throw ConfigError("metrics.csv carries no w-coords series");
  return out_path;
}

fs::path emit_figure2(const fs::path& dir) {
  const CsvTable scan = read_csv(dir / "scan.csv");
  const auto t_col = scan.column("t");
  const auto r_col = scan.column("r");
  const auto v_col = scan.column("value");
  if (scan.rows.empty()) throw ConfigError("scan.csv is empty");
  const fs::path out_path = dir / "figure2_scan.csv";
  CsvWriter out(out_path, {"t", "r", "value"});
  for (const auto& row : scan.rows) out.row({cell(row[t_col]), cell(row[r_col]), cell(row[v_col])});
  out.close();
  return out_path;
}

std::vector<fs::path> emit_figure3(const fs::path& dir) {
  const CsvTable hist = read_csv(dir / "histograms.csv");
  const CsvTable metrics = read_csv(dir / "metrics.csv");
  if (hist.rows.empty()) throw ConfigError("histograms.csv is empty");

  const fs::path hist_path = dir / "figure3_hist.csv";
  {
    const auto t_col = hist.column("t");
    const auto side_col = hist.column("side");
    const auto bin_col = hist.column("bin-left");
    const auto mass_col = hist.column("mass");
    CsvWriter out(hist_path, {"t", "side", "bin-left", "mass"});
    for (const auto& row : hist.rows)
      out.row({cell(row[t_col]), cell(row[side_col]), cell(row[bin_col]), cell(row[mass_col])});
    out.close();
  }

  const fs::path dist_path = dir / "figure3_dist.csv";
  {
    const auto t_col = metrics.column("t");
    const auto w2p = metrics.column("w2-plus-to-0");
    const auto w2m = metrics.column("w2-minus-to-half-pi");
    const auto mep = metrics.column("mass-error-plus");
    const auto mem = metrics.column("mass-error-minus");
    CsvWriter out(dist_path, {"t", "side", "w2-distance", "mass-error"});
    std::size_t written = 0;
    for (const auto& row : metrics.rows) {
      if (row[mep].empty()) continue;
      out.row({cell(row[t_col]), cell("plus"), cell(row[w2p]), cell(row[mep])});
      out.row({cell(row[t_col]), cell("minus"), cell(row[w2m]), cell(row[mem])});
      ++written;
    }
    out.close();
    if (written == 0) throw ConfigError("metrics.csv carries no mass-error series");
  }
  return {hist_path, dist_path};
}

}  // namespace

std::vector<fs::path> emit_figure_data(const fs::path& run_dir, int figure) {
  if (!fs::is_directory(run_dir)) throw ConfigError("no run directory at " + run_dir.string());
  switch (figure) {
    case 1:
      return {emit_figure1(run_dir)};
    case 2:
      return {emit_figure2(run_dir)};
    case 3:
      return emit_figure3(run_dir);
    default:
      throw ConfigError("figure must be 1, 2 or 3");
  }
}

}  // namespace mfflow
