#include "dunet/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <random>

namespace dunet {

std::vector<Sample> make_synthetic_dataset(const SyntheticOptions& options) {
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, options.noise);
  const double h = static_cast<double>(options.height), w = static_cast<double>(options.width);
  const double side = std::min(h, w);
  std::vector<Sample> out;
  out.reserve(options.count);
  for (std::size_t i = 0; i < options.count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "synth_%03zu", i);
    Sample s{id, Tensor<float>({1, 3, options.height, options.width}),
             Tensor<float>({1, 1, options.height, options.width})};
    double bg[3];
    for (double& c : bg) c = 0.15 + 0.25 * unit(rng);
    for (Index y = 0; y < options.height; ++y) {
      for (Index x = 0; x < options.width; ++x) {
        for (Index c = 0; c < 3; ++c) s.image.at(0, c, y, x) = static_cast<float>(bg[c] + noise(rng));
      }
    }
    const int shapes = 1 + static_cast<int>(unit(rng) * options.max_shapes) % std::max(1, options.max_shapes);
    for (int k = 0; k < shapes; ++k) {
      const double ry = side * (0.12 + 0.18 * unit(rng));
      const double rx = options.ellipses ? side * (0.12 + 0.18 * unit(rng)) : ry;
      const double cy = ry + unit(rng) * (h - 2 * ry), cx = rx + unit(rng) * (w - 2 * rx);
      double fg[3];
      for (double& c : fg) c = 0.6 + 0.35 * unit(rng);
      for (Index y = 0; y < options.height; ++y) {
        for (Index x = 0; x < options.width; ++x) {
          const double dy = (static_cast<double>(y) - cy) / ry, dx = (static_cast<double>(x) - cx) / rx;
          if (dx * dx + dy * dy > 1.0) continue;
          s.mask.at(0, 0, y, x) = 1.0f;
          for (Index c = 0; c < 3; ++c) s.image.at(0, c, y, x) = static_cast<float>(fg[c] + noise(rng));
        }
      }
    }
    s.image.values() = s.image.values().cwiseMax(0.0f).cwiseMin(1.0f);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace dunet
