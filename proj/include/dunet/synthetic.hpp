#pragma once

#include "dunet/image.hpp"

#include <cstdint>
#include <vector>

namespace dunet {

struct SyntheticOptions {
  std::size_t count = 8;
  Index height = 64;
  Index width = 64;
  std::uint64_t seed = 7;
  /// Upper bound on shapes per image (at least one is drawn).
  int max_shapes = 1;
  /// Ellipses with random axes instead of circles.
  bool ellipses = false;
  /// Standard deviation of the per-pixel background noise.
  double noise = 0.05;
};

/// Colored discs on a noisy background; the mask is the union of the discs.
/// Ids are "synth_000", "synth_001", ...
std::vector<Sample> make_synthetic_dataset(const SyntheticOptions& options);

}  // namespace dunet
