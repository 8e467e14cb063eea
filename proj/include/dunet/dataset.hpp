#pragma once

#include "dunet/image.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dunet {

/// Reads root/images/*.png with matching root/masks/*.png (same basename).
/// Images are scaled to [0, 1]; masks are binarized at 127. Sorted by id.
std::vector<Sample> load_dataset(const std::filesystem::path& root);

/// Writes root/images/{id}.png and root/masks/{id}.png (mask pixels 0 or 255).
void write_dataset(const std::filesystem::path& root, std::span<const Sample> samples);

struct SplitSpec {
  std::uint64_t seed = 42;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
};

struct DataSplits {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

/// Seeded shuffle, then floor(0.8 n) / floor(0.1 n) / remainder. Requires n >= 10.
DataSplits split_dataset(std::span<const Sample> samples, const SplitSpec& spec);

}  // namespace dunet
