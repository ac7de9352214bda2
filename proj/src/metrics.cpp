#include "cbn/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cbn/errors.hpp"

namespace cbn {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::vector<std::string> diag_cols;
  for (const auto& r : rows)
    for (const auto& [name, _] : r.diag)
      if (std::find(diag_cols.begin(), diag_cols.end(), name) == diag_cols.end()) diag_cols.push_back(name);

  std::string out = "epoch,iteration,split,loss,top1,effective_window";
  for (const auto& c : diag_cols) out += "," + c;
  out += "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + std::to_string(r.iteration) + "," + r.split + "," + format_double(r.loss) +
           "," + format_double(r.top1) + "," + std::to_string(r.effective_window);
    for (const auto& c : diag_cols) {
      out += ",";
      for (const auto& [name, v] : r.diag) {
        if (name == c) {
          out += format_double(v);
          break;
        }
      }
    }
    out += "\n";
  }
  return out;
}

std::string timing_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "epoch,iteration,split,wall_time\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + std::to_string(r.iteration) + "," + r.split + "," +
           format_double(r.wall_time) + "\n";
  }
  return out;
}

std::optional<std::size_t> CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  return std::nullopt;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  std::uint64_t offset = 0;
  bool first = true;
  while (std::getline(in, line)) {
    const std::uint64_t line_start = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (first) {
      t.header = std::move(cells);
      first = false;
      continue;
    }
    if (cells.size() != t.header.size()) throw FormatError("CSV row has " + std::to_string(cells.size()) + " cells, header has " + std::to_string(t.header.size()), line_start);
    t.rows.push_back(std::move(cells));
  }
  if (first) throw FormatError("CSV has no header", 0);
  return t;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_csv(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace cbn
