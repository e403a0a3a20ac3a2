#include "mfflow/csv.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <type_traits>

#include "mfflow/errors.hpp"

namespace mfflow {

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

std::string format_vector(std::span<const double> values) {
  std::string out;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (k) out += ';';
    out += format_double(values[k]);
  }
  return out;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, std::vector<std::string> header)
    : path_(path), width_(header.size()), out_(path) {
  if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  for (std::size_t k = 0; k < header.size(); ++k) out_ << (k ? "," : "") << header[k];
  out_ << '\n';
}

void CsvWriter::row(const std::vector<CsvCell>& cells) {
  if (cells.size() != width_) throw InvalidArgument("CsvWriter: row width does not match header");
  for (std::size_t k = 0; k < cells.size(); ++k) {
    if (k) out_ << ',';
    std::visit(
        [this](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, double>)
            out_ << format_double(v);
          else if constexpr (std::is_same_v<T, std::int64_t>)
            out_ << v;
          else if constexpr (std::is_same_v<T, std::string>)
            out_ << v;
        },
        cells[k]);
  }
  out_ << '\n';
  if (!out_) throw IoError("write failed on " + path_.string());
}

void CsvWriter::close() {
  out_.close();
  if (out_.fail()) throw IoError("closing " + path_.string() + " failed");
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t k = 0; k < header.size(); ++k)
    if (header[k] == name) return k;
  throw ConfigError("missing column '" + name + "'");
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("missing file " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty file " + path.string());
  table.header = split_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_line(line);
    if (fields.size() != table.header.size())
      throw ConfigError("ragged row in " + path.string());
    table.rows.push_back(std::move(fields));
  }
  return table;
}

}  // namespace mfflow
