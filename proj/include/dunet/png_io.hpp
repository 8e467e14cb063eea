#pragma once

#include "dunet/image.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dunet {

/// 8-bit interleaved pixels.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;
};

/// Decodes any PNG libpng understands, converted to `channels` (1 or 3) 8-bit samples.
Image8 read_png(const std::filesystem::path& path, int channels);
void write_png(const std::filesystem::path& path, const Image8& image);

/// (1, 3, H, W) in [0, 1] from RGB, or (1, 1, H, W) from gray.
Tensor<float> to_tensor(const Image8& image);
/// Inverse of to_tensor; values are clamped to [0, 1] and rounded.
Image8 to_image8(const Tensor<float>& t);

}  // namespace dunet
