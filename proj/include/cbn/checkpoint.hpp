#pragma once

// Single-file training checkpoint.
//
// Layout (all integers u64 and floats f64 in host little-endian order):
//   "CBNCKPT\0"  u32 version
//   config JSON (length-prefixed string)
//   progress, RNG state, parameters, SGD velocities, normalizer states
//   (running statistics, iteration counter, ring buffer), metrics rows so far.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cbn/metrics.hpp"
#include "cbn/network.hpp"
#include "cbn/rng.hpp"

namespace cbn {

inline constexpr char kCheckpointMagic[8] = {'C', 'B', 'N', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainProgress {
  std::uint64_t epoch = 0;          // epoch in progress
  std::uint64_t iter_in_epoch = 0;  // next iteration within it
  std::uint64_t global_step = 0;
  std::vector<std::uint64_t> permutation;  // this epoch's example order
  double loss_sum = 0.0;
  std::uint64_t correct = 0;
  std::uint64_t seen = 0;
  double elapsed = 0.0;
};

struct NormSnapshot {
  std::uint64_t layer = 0;
  std::uint64_t iteration = 0;
  bool has_running_stats = false;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  std::vector<IterationRecord> records;  // most recent first
};

struct Checkpoint {
  std::string config_json;
  TrainProgress progress;
  Rng::State rng;
  std::vector<Tensor> params;
  std::vector<Tensor> velocity;
  std::vector<NormSnapshot> norms;
  std::vector<MetricsRow> rows;
};

Checkpoint capture_checkpoint(const std::string& config_json, NetworkGraph& graph, const SgdState& sgd,
                              const Rng& rng, const TrainProgress& progress, const std::vector<MetricsRow>& rows);
/// Copies parameters, velocities and normalizer states into an identically built graph.
void restore_checkpoint(const Checkpoint& ckpt, NetworkGraph& graph, SgdState& sgd);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cbn
