#pragma once

#include "dunet/tensor.hpp"

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dunet {

/// Dataset-level failures (missing files, undecodable images, bad layouts).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Image (1, 3, H, W) in [0, 1] and binary mask (1, 1, H, W).
struct Sample {
  std::string id;
  Tensor<float> image;
  Tensor<float> mask;

  Index height() const { return image.h(); }
  Index width() const { return image.w(); }
};

/// Throws DataError unless the pair shares H, W and the mask is strictly {0, 1}.
void validate_sample(const Sample& s);

/// Image resized bilinearly (half-pixel), mask nearest-neighbour then re-binarized.
Sample resize_sample(const Sample& s, Index out_h, Index out_w);

/// Nearest-neighbour resize of a single-channel map with half-pixel centers.
Tensor<float> resize_nearest(const Tensor<float>& mask, Index out_h, Index out_w);

struct Batch {
  Tensor<float> images;  // (N, 3, H, W)
  Tensor<float> masks;   // (N, 1, H, W)
};

/// Stacks samples[indices[i]] along N. All samples must share H, W.
Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices);

}  // namespace dunet
