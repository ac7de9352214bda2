#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cbn/normalizers.hpp"

namespace cbn {

struct DatasetSpec {
  std::string kind = "synthetic-gaussian";  // mnist-idx | cifar10-bin | synthetic-gaussian
  std::string path;
  std::size_t train_subset = 0;  // 0 keeps every example
  std::size_t eval_subset = 0;
  std::size_t downsample = 1;    // average-pool factor applied at load time
  double mean = 0.0;             // standardization after scaling to [0, 1]
  double stddev = 1.0;
  bool flip = false;             // random horizontal flip during training
  std::size_t crop_padding = 0;  // random crop after zero padding, during training

  // synthetic-gaussian only
  std::size_t classes = 2;
  std::size_t train_size = 64;
  std::size_t eval_size = 32;
  std::vector<std::size_t> image_shape{1, 8, 8};
  double noise = 1.0;
  std::uint64_t data_seed = 7;
};

struct NormalizerConfig {
  NormKind kind = NormKind::bn;
  std::size_t window = 0;  // 0 selects the suggested window for the batch size
  double burn_in_epochs = 1.0;
  double epsilon = 1e-5;
  double decay = 0.9;
  bool taylor_backprop = true;
};

struct DiagnosticsConfig {
  bool enabled = false;
  std::size_t batch_size = 16;
  std::size_t every_epochs = 1;
};

struct TrainConfig {
  std::string name = "run";
  DatasetSpec dataset;
  std::string model = "desk4";  // desk4 | tiny
  NormalizerConfig normalizer;
  std::size_t batch_size = 2;
  std::size_t epochs = 1;
  double base_lr = 0.1;
  std::string lr_schedule = "cosine";  // cosine | step
  std::vector<std::size_t> lr_milestones;  // epochs, step schedule only
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
  std::string output_dir = "runs/run";
  std::size_t eval_batch_size = 100;
  DiagnosticsConfig diagnostics;
};

/// Parses a JSON config. Unknown keys and malformed values raise ArgumentError.
TrainConfig parse_config(const std::string& json_text);
TrainConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const TrainConfig& config);

/// Throws ArgumentError unless batch size, epochs and learning rate are usable.
void validate(const TrainConfig& config);

}  // namespace cbn
