#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cbn/config.hpp"
#include "cbn/rng.hpp"
#include "cbn/tensor.hpp"

namespace cbn {

/// Labelled images stored contiguously, each of `image_shape` (C x H x W).
struct Dataset {
  Shape image_shape;
  std::vector<double> pixels;
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return shape_size(image_shape); }
  std::span<const double> image(std::size_t i) const {
    return std::span<const double>(pixels).subspan(i * image_size(), image_size());
  }
  Tensor image_tensor(std::size_t i) const;
};

struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> bytes;
};

/// IDX image file (magic 0x00000803).
IdxImages parse_idx_images(std::span<const std::uint8_t> data);
/// IDX label file (magic 0x00000801).
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> data);

struct CifarRecords {
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> pixels;  // 3072 bytes per record, CHW
};
/// Concatenated CIFAR-10 binary records: 1 label byte then 3 x 32 x 32 pixels.
CifarRecords parse_cifar_records(std::span<const std::uint8_t> data);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Train and eval splits, scaled to [0, 1], optionally downsampled, then standardized.
std::pair<Dataset, Dataset> load_dataset(const DatasetSpec& spec);

/// Stacks the listed examples into an N x C x H x W batch, applying the
/// spec's flip / crop augmentation with `rng` when `augment` is set.
Tensor make_batch(const Dataset& data, std::span<const std::size_t> indices, const DatasetSpec& spec, bool augment,
                  Rng& rng);
std::vector<int> batch_labels(const Dataset& data, std::span<const std::size_t> indices);

}  // namespace cbn
