#include "cbn/compare.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "cbn/dataset.hpp"
#include "cbn/errors.hpp"

namespace cbn {

RunCurve read_run(const std::filesystem::path& dir) {
  RunCurve run;
  run.dir = dir;
  const auto meta_path = dir / "run.json";
  const auto bytes = read_file(meta_path);
  try {
    const auto meta = nlohmann::json::parse(bytes.begin(), bytes.end());
    run.name = meta.at("name").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(meta_path.string() + ": " + e.what());
  }

  const CsvTable table = read_csv(dir / "metrics.csv");
  const auto c_epoch = table.column("epoch"), c_split = table.column("split"), c_top1 = table.column("top1"),
             c_loss = table.column("loss");
  if (!c_epoch || !c_split || !c_top1 || !c_loss) {
    throw ArgumentError((dir / "metrics.csv").string() + ": missing epoch/split/top1/loss columns");
  }
  for (const auto& row : table.rows) {
    if (row[*c_split] != "eval") continue;
    run.epochs.push_back(std::stoul(row[*c_epoch]));
    run.top1.push_back(std::stod(row[*c_top1]));
    run.loss.push_back(std::stod(row[*c_loss]));
  }
  if (run.epochs.empty()) throw ArgumentError((dir / "metrics.csv").string() + ": no eval rows");
  return run;
}

double sample_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= double(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / double(xs.size() - 1));
}

std::vector<MethodSummary> summarize(const std::vector<RunCurve>& runs) {
  if (runs.size() < 2) throw ArgumentError("compare needs at least two runs");
  for (const auto& r : runs) {
    if (r.epochs != runs.front().epochs) {
      throw ArgumentError("epoch grid of " + r.dir.string() + " differs from " + runs.front().dir.string());
    }
  }

  std::vector<MethodSummary> out;
  std::vector<std::vector<const RunCurve*>> members;
  for (const auto& r : runs) {
    std::size_t g = 0;
    while (g < out.size() && out[g].name != r.name) ++g;
    if (g == out.size()) {
      out.push_back(MethodSummary{r.name, 0, r.epochs, {}, {}, {}, {}});
      members.emplace_back();
    }
    members[g].push_back(&r);
  }

  for (std::size_t g = 0; g < out.size(); ++g) {
    auto& s = out[g];
    s.runs = members[g].size();
    for (std::size_t e = 0; e < s.epochs.size(); ++e) {
      std::vector<double> top1, loss;
      for (const RunCurve* r : members[g]) {
        top1.push_back(r->top1[e]);
        loss.push_back(r->loss[e]);
      }
      auto mean = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m += x;
        return m / double(v.size());
      };
      s.top1_mean.push_back(mean(top1));
      s.top1_std.push_back(sample_std(top1));
      s.loss_mean.push_back(mean(loss));
      s.loss_std.push_back(sample_std(loss));
    }
  }
  return out;
}

std::string summary_text(const std::vector<MethodSummary>& summary) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %5s %6s %18s %18s\n", "method", "runs", "epoch", "top1 (%)", "loss");
  os << line;
  for (const auto& s : summary) {
    const std::size_t e = s.epochs.size() - 1;
    std::snprintf(line, sizeof line, "%-28s %5zu %6zu %9.2f +- %5.2f %9.4f +- %6.4f\n", s.name.c_str(), s.runs,
                  s.epochs[e], 100.0 * s.top1_mean[e], 100.0 * s.top1_std[e], s.loss_mean[e], s.loss_std[e]);
    os << line;
  }
  return os.str();
}

std::string summary_csv(const std::vector<MethodSummary>& summary) {
  std::string out = "method,runs,epoch,top1_mean,top1_std,loss_mean,loss_std\n";
  for (const auto& s : summary) {
    for (std::size_t e = 0; e < s.epochs.size(); ++e) {
      out += s.name + "," + std::to_string(s.runs) + "," + std::to_string(s.epochs[e]) + "," +
             format_double(s.top1_mean[e]) + "," + format_double(s.top1_std[e]) + "," + format_double(s.loss_mean[e]) +
             "," + format_double(s.loss_std[e]) + "\n";
    }
  }
  return out;
}

}  // namespace cbn
