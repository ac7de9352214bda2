#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cbn {

struct MetricsRow {
  std::size_t epoch = 0;
  std::uint64_t iteration = 0;
  std::string split;  // train | eval
  double loss = 0.0;
  double top1 = 0.0;
  double wall_time = 0.0;  // seconds since the run started; written to timing.csv only
  std::size_t effective_window = 1;
  std::vector<std::pair<std::string, double>> diag;  // column name (diag_ prefix) and value
};

/// Shortest round-trip decimal form with at most 17 significant digits, independent of locale.
std::string format_double(double v);

/// metrics.csv: epoch,iteration,split,loss,top1,effective_window[,diag_*].
/// Diag columns are the union over rows in first-seen order; missing cells stay empty.
std::string metrics_csv(const std::vector<MetricsRow>& rows);
/// timing.csv: epoch,iteration,split,wall_time.
std::string timing_csv(const std::vector<MetricsRow>& rows);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(const std::string& name) const;
};

CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace cbn
