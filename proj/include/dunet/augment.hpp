#pragma once

#include "dunet/image.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace dunet {

enum class TransformKind {
  rotate90,
  rotate180,
  rotate270,
  rotate_random,  // param: max |angle| in degrees
  flip_horizontal,
  flip_vertical,
  transpose,
  center_crop,        // param: side scale in (0, 1]
  elastic,            // param: alpha / max(H, W), param2: sigma / max(H, W)
  brightness,         // param: additive shift
  contrast,           // param: factor around the image mean
  gamma,              // param: exponent
  gaussian_noise,     // param: standard deviation
  coarse_dropout,     // param: hole count, param2: hole side / side
  random_scale_crop,  // param, param2: scale range
};

std::string_view to_string(TransformKind kind);

/// Photometric transforms change only the image; the rest move pixels of
/// image and mask identically.
bool is_geometric(TransformKind kind);

struct TransformDescriptor {
  TransformKind kind;
  double param = 0.0;
  double param2 = 0.0;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kAugmentationsPerImage = 25;

struct AugmentationSpec {
  std::uint64_t seed = 0;
  std::vector<TransformDescriptor> transforms;
};

/// The fixed roster of 25 transforms: 4 rotations, 2 flips, transpose,
/// 3 center crops, 3 elastic warps, 3 brightness, 3 contrast, 2 gamma,
/// 2 noise, 1 coarse dropout and 1 random scale-crop.
AugmentationSpec default_augmentation_spec(std::uint64_t seed);

/// Seed for (transform seed, sample id); independent of processing order.
std::uint64_t derive_seed(std::uint64_t transform_seed, std::string_view sample_id);

Sample apply_transform(const Sample& s, const TransformDescriptor& t);

/// The original (id "{id}_0") followed by one sample per transform ("{id}_k").
/// Throws std::invalid_argument unless the spec holds exactly 25 transforms.
std::vector<Sample> augment_sample(const Sample& s, const AugmentationSpec& spec);

// Geometric primitives. Images are resampled bilinearly, masks nearest-neighbour.
Sample rotate90(const Sample& s, int quarter_turns);  // counter-clockwise
Sample flip_horizontal(const Sample& s);
Sample flip_vertical(const Sample& s);
Sample transpose(const Sample& s);
/// Counter-clockwise rotation about the image center; uncovered pixels become 0.
Sample rotate(const Sample& s, double degrees);
/// Crops the (top, left, h, w) window and resizes it back to the input size.
Sample crop_resize(const Sample& s, double top, double left, double h, double w);
Sample center_crop(const Sample& s, double scale);

/// (H, W) field; rows index y.
using Field = Eigen::ArrayXXd;

/// Normalized 1-D Gaussian taps over [-ceil(4 sigma), ceil(4 sigma)].
Eigen::ArrayXd gaussian_kernel(double sigma);

/// Separable Gaussian smoothing with symmetric (edge-repeating) reflection.
Field gaussian_smooth(const Field& field, double sigma);

/// H x W draws from U(-1, 1) in row-major order.
Field uniform_field(Eigen::Index h, Eigen::Index w, std::mt19937_64& rng);

struct Displacement {
  Field dx;
  Field dy;
};

/// alpha * smooth(U(-1, 1)) for x then y, both drawn from one generator seeded with `seed`.
Displacement elastic_displacement(Eigen::Index h, Eigen::Index w, double alpha, double sigma, std::uint64_t seed);

/// Samples image and mask at (x + dx, y + dy) with edge replication.
Sample elastic_transform(const Sample& s, double alpha, double sigma, std::uint64_t seed);

}  // namespace dunet
