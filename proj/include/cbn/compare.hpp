#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cbn/metrics.hpp"

namespace cbn {

/// Eval rows of one finished run.
struct RunCurve {
  std::string name;  // method label shared by seeds
  std::filesystem::path dir;
  std::vector<std::size_t> epochs;
  std::vector<double> top1;
  std::vector<double> loss;
};

/// Reads run.json (for the name) and the eval rows of metrics.csv.
RunCurve read_run(const std::filesystem::path& dir);

struct MethodSummary {
  std::string name;
  std::size_t runs = 0;
  std::vector<std::size_t> epochs;
  std::vector<double> top1_mean, top1_std;  // sample std; 0 for a single run
  std::vector<double> loss_mean, loss_std;
};

/// Groups runs by name, keeping first-seen order. Needs at least two runs,
/// all on the same epoch grid; otherwise ArgumentError.
std::vector<MethodSummary> summarize(const std::vector<RunCurve>& runs);

double sample_std(const std::vector<double>& xs);

/// Final-epoch mean +- std per method.
std::string summary_text(const std::vector<MethodSummary>& summary);
/// method,runs,epoch,top1_mean,top1_std,loss_mean,loss_std
std::string summary_csv(const std::vector<MethodSummary>& summary);

}  // namespace cbn
