#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "cbn/config.hpp"
#include "cbn/dataset.hpp"
#include "cbn/metrics.hpp"
#include "cbn/network.hpp"

namespace cbn {

struct TrainOptions {
  std::optional<std::filesystem::path> resume;  // checkpoint to continue from
  /// Save a checkpoint and return once this many optimizer steps have run in total.
  std::optional<std::uint64_t> stop_after_steps;
  bool write_outputs = true;
  bool verbose = false;
};

struct TrainResult {
  std::vector<MetricsRow> rows;
  bool completed = false;
  std::uint64_t steps = 0;
  double train_step_seconds = 0.0;  // mean over the steps run in this call
  double eval_seconds = 0.0;        // mean per eval pass
  std::filesystem::path output_dir;
};

/// Builds the configured network (parameters drawn from `config.seed`).
NetworkGraph build_model(const TrainConfig& config, const Shape& image_shape, std::size_t classes,
                         std::uint64_t iterations_per_epoch, Rng& rng);

/// Epoch loop: seeded shuffles, one optimizer step per mini-batch (the last
/// partial batch is dropped), an eval pass at every epoch end. Writes
/// metrics.csv, timing.csv, run.json and checkpoint.bin into the output dir.
TrainResult train(const TrainConfig& config, const TrainOptions& options = {});

/// Same as above with datasets already loaded.
TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& eval_set,
                  const TrainOptions& options = {});

struct EvalResult {
  double loss = 0.0;
  double top1 = 0.0;
};
EvalResult evaluate_dataset(const NetworkGraph& graph, const Dataset& data, std::size_t batch_size);

}  // namespace cbn
