#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace mfflow {

/// Round-trip formatting for doubles (17 significant digits).
std::string format_double(double value);
/// Values joined by ';' with format_double.
std::string format_vector(std::span<const double> values);

/// A single CSV field. An empty optional prints as an empty field.
using CsvCell = std::variant<std::monostate, double, std::int64_t, std::string>;

inline CsvCell cell(double v) { return v; }
inline CsvCell cell(int v) { return static_cast<std::int64_t>(v); }
inline CsvCell cell(std::int64_t v) { return v; }
inline CsvCell cell(std::size_t v) { return static_cast<std::int64_t>(v); }
inline CsvCell cell(std::string v) { return v; }
inline CsvCell cell(const char* v) { return std::string(v); }
inline CsvCell cell(std::optional<double> v) { return v ? CsvCell(*v) : CsvCell(); }

/// Writes a header on open and one line per row. Throws IoError on failure.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::vector<std::string> header);
  void row(const std::vector<CsvCell>& cells);
  void close();

 private:
  std::filesystem::path path_;
  std::size_t width_;
  std::ofstream out_;
};

/// Header plus string fields; no quoting (the writers never emit commas).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a column; throws ConfigError when absent.
  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace mfflow
