#include "dunet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

namespace dunet {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

enum class Border { zero, replicate };

// Source pixel coordinate for an output pixel.
using CoordMap = std::function<std::pair<double, double>(Index x, Index y)>;

float fetch(const float* plane, Index h, Index w, Index x, Index y, Border border) {
  if (x < 0 || y < 0 || x >= w || y >= h) {
    if (border == Border::zero) return 0.0f;
    x = std::clamp<Index>(x, 0, w - 1);
    y = std::clamp<Index>(y, 0, h - 1);
  }
  return plane[y * w + x];
}

float sample_bilinear(const float* plane, Index h, Index w, double sx, double sy, Border border) {
  const double fx0 = std::floor(sx), fy0 = std::floor(sy);
  const auto x0 = static_cast<Index>(fx0), y0 = static_cast<Index>(fy0);
  const double fx = sx - fx0, fy = sy - fy0;
  const double a = fetch(plane, h, w, x0, y0, border), b = fetch(plane, h, w, x0 + 1, y0, border);
  const double c = fetch(plane, h, w, x0, y0 + 1, border), d = fetch(plane, h, w, x0 + 1, y0 + 1, border);
  const double top = (1.0 - fx) * a + fx * b;
  const double bot = (1.0 - fx) * c + fx * d;
  return static_cast<float>((1.0 - fy) * top + fy * bot);
}

float sample_nearest(const float* plane, Index h, Index w, double sx, double sy, Border border) {
  return fetch(plane, h, w, static_cast<Index>(std::floor(sx + 0.5)), static_cast<Index>(std::floor(sy + 0.5)),
               border);
}

Sample warp(const Sample& s, Index out_h, Index out_w, const CoordMap& map, Border border) {
  const Index h = s.height(), w = s.width();
  Sample r;
  r.id = s.id;
  r.image = Tensor<float>({1, 3, out_h, out_w});
  r.mask = Tensor<float>({1, 1, out_h, out_w});
  for (Index y = 0; y < out_h; ++y) {
    for (Index x = 0; x < out_w; ++x) {
      const auto [sx, sy] = map(x, y);
      for (Index c = 0; c < 3; ++c) {
        r.image.at(0, c, y, x) = std::clamp(sample_bilinear(s.image.data() + c * h * w, h, w, sx, sy, border), 0.0f, 1.0f);
      }
      r.mask.at(0, 0, y, x) = sample_nearest(s.mask.data(), h, w, sx, sy, border) > 0.5f ? 1.0f : 0.0f;
    }
  }
  return r;
}

// Exact pixel permutation; out(y, x) = in(src(x, y)).
Sample remap(const Sample& s, Index out_h, Index out_w, const std::function<std::pair<Index, Index>(Index, Index)>& src) {
  const Index h = s.height(), w = s.width();
  Sample r;
  r.id = s.id;
  r.image = Tensor<float>({1, 3, out_h, out_w});
  r.mask = Tensor<float>({1, 1, out_h, out_w});
  for (Index y = 0; y < out_h; ++y) {
    for (Index x = 0; x < out_w; ++x) {
      const auto [sx, sy] = src(x, y);
      for (Index c = 0; c < 3; ++c) r.image.at(0, c, y, x) = s.image.data()[(c * h + sy) * w + sx];
      r.mask.at(0, 0, y, x) = s.mask.data()[sy * w + sx];
    }
  }
  return r;
}

Sample photometric(const Sample& s, const std::function<float(float)>& f) {
  Sample r{s.id, s.image.clone(), s.mask.clone()};
  r.image.values() = r.image.values().unaryExpr([&](float v) { return std::clamp(f(v), 0.0f, 1.0f); });
  return r;
}

Index reflect(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace

std::string_view to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::rotate90: return "rotate90";
    case TransformKind::rotate180: return "rotate180";
    case TransformKind::rotate270: return "rotate270";
    case TransformKind::rotate_random: return "rotate_random";
    case TransformKind::flip_horizontal: return "flip_horizontal";
    case TransformKind::flip_vertical: return "flip_vertical";
    case TransformKind::transpose: return "transpose";
    case TransformKind::center_crop: return "center_crop";
    case TransformKind::elastic: return "elastic";
    case TransformKind::brightness: return "brightness";
    case TransformKind::contrast: return "contrast";
    case TransformKind::gamma: return "gamma";
    case TransformKind::gaussian_noise: return "gaussian_noise";
    case TransformKind::coarse_dropout: return "coarse_dropout";
    case TransformKind::random_scale_crop: return "random_scale_crop";
  }
  return "unknown";
}

bool is_geometric(TransformKind kind) {
  switch (kind) {
    case TransformKind::brightness:
    case TransformKind::contrast:
    case TransformKind::gamma:
    case TransformKind::gaussian_noise:
    case TransformKind::coarse_dropout:
      return false;
    default:
      return true;
  }
}

AugmentationSpec default_augmentation_spec(std::uint64_t seed) {
  using K = TransformKind;
  AugmentationSpec spec;
  spec.seed = seed;
  spec.transforms = {
      {K::rotate90},
      {K::rotate180},
      {K::rotate270},
      {K::rotate_random, 45.0},
      {K::flip_horizontal},
      {K::flip_vertical},
      {K::transpose},
      {K::center_crop, 0.9},
      {K::center_crop, 0.8},
      {K::center_crop, 0.7},
      {K::elastic, 1.0, 0.08},
      {K::elastic, 1.5, 0.08},
      {K::elastic, 2.0, 0.1},
      {K::brightness, -0.1},
      {K::brightness, 0.1},
      {K::brightness, 0.2},
      {K::contrast, 0.8},
      {K::contrast, 0.9},
      {K::contrast, 1.2},
      {K::gamma, 0.8},
      {K::gamma, 1.2},
      {K::gaussian_noise, 0.01},
      {K::gaussian_noise, 0.02},
      {K::coarse_dropout, 8.0, 0.125},
      {K::random_scale_crop, 0.6, 0.9},
  };
  for (std::size_t i = 0; i < spec.transforms.size(); ++i) {
    spec.transforms[i].seed = splitmix64(seed ^ splitmix64(i + 1));
  }
  return spec;
}

std::uint64_t derive_seed(std::uint64_t transform_seed, std::string_view sample_id) {
  return splitmix64(transform_seed ^ fnv1a(sample_id));
}

Sample rotate90(const Sample& s, int quarter_turns) {
  const Index h = s.height(), w = s.width();
  switch (((quarter_turns % 4) + 4) % 4) {
    case 0:
      return Sample{s.id, s.image.clone(), s.mask.clone()};
    case 1:
      return remap(s, w, h, [w](Index x, Index y) { return std::pair<Index, Index>{w - 1 - y, x}; });
    case 2:
      return remap(s, h, w, [h, w](Index x, Index y) { return std::pair<Index, Index>{w - 1 - x, h - 1 - y}; });
    default:
      return remap(s, w, h, [h](Index x, Index y) { return std::pair<Index, Index>{y, h - 1 - x}; });
  }
}

Sample flip_horizontal(const Sample& s) {
  const Index w = s.width();
  return remap(s, s.height(), w, [w](Index x, Index y) { return std::pair<Index, Index>{w - 1 - x, y}; });
}

Sample flip_vertical(const Sample& s) {
  const Index h = s.height();
  return remap(s, h, s.width(), [h](Index x, Index y) { return std::pair<Index, Index>{x, h - 1 - y}; });
}

Sample transpose(const Sample& s) {
  return remap(s, s.width(), s.height(), [](Index x, Index y) { return std::pair<Index, Index>{y, x}; });
}

Sample rotate(const Sample& s, double degrees) {
  const double theta = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta), sn = std::sin(theta);
  const double cx = (static_cast<double>(s.width()) - 1.0) / 2.0;
  const double cy = (static_cast<double>(s.height()) - 1.0) / 2.0;
  // Inverse map of a counter-clockwise turn in y-down image coordinates.
  return warp(
      s, s.height(), s.width(),
      [=](Index x, Index y) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        return std::pair<double, double>{cx + c * dx - sn * dy, cy + sn * dx + c * dy};
      },
      Border::zero);
}

Sample crop_resize(const Sample& s, double top, double left, double h, double w) {
  if (h <= 0 || w <= 0 || top < 0 || left < 0 || top + h > static_cast<double>(s.height()) + 1e-9 ||
      left + w > static_cast<double>(s.width()) + 1e-9) {
    throw std::invalid_argument("crop window exceeds the image");
  }
  const double sy = h / static_cast<double>(s.height()), sx = w / static_cast<double>(s.width());
  return warp(
      s, s.height(), s.width(),
      [=](Index x, Index y) {
        return std::pair<double, double>{left + (static_cast<double>(x) + 0.5) * sx - 0.5,
                                         top + (static_cast<double>(y) + 0.5) * sy - 0.5};
      },
      Border::replicate);
}

Sample center_crop(const Sample& s, double scale) {
  if (!(scale > 0.0) || scale > 1.0) {
    throw std::invalid_argument("center crop scale " + std::to_string(scale) + " is larger than the image");
  }
  const double h = std::round(scale * static_cast<double>(s.height()));
  const double w = std::round(scale * static_cast<double>(s.width()));
  return crop_resize(s, std::floor((static_cast<double>(s.height()) - h) / 2.0),
                     std::floor((static_cast<double>(s.width()) - w) / 2.0), std::max(h, 1.0), std::max(w, 1.0));
}

Eigen::ArrayXd gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
  const auto radius = static_cast<Eigen::Index>(std::ceil(4.0 * sigma));
  Eigen::ArrayXd k(2 * radius + 1);
  for (Eigen::Index i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
  }
  return k / k.sum();
}

Field gaussian_smooth(const Field& field, double sigma) {
  const Eigen::ArrayXd k = gaussian_kernel(sigma);
  const Eigen::Index radius = (k.size() - 1) / 2, h = field.rows(), w = field.cols();
  Field rows_done(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      double acc = 0.0;
      for (Eigen::Index t = -radius; t <= radius; ++t) acc += k[t + radius] * field(y, reflect(x + t, w));
      rows_done(y, x) = acc;
    }
  }
  Field out(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      double acc = 0.0;
      for (Eigen::Index t = -radius; t <= radius; ++t) acc += k[t + radius] * rows_done(reflect(y + t, h), x);
      out(y, x) = acc;
    }
  }
  return out;
}

Field uniform_field(Eigen::Index h, Eigen::Index w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Field f(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) f(y, x) = dist(rng);
  }
  return f;
}

Displacement elastic_displacement(Eigen::Index h, Eigen::Index w, double alpha, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Field ux = uniform_field(h, w, rng);
  Field uy = uniform_field(h, w, rng);
  return {alpha * gaussian_smooth(ux, sigma), alpha * gaussian_smooth(uy, sigma)};
}

Sample elastic_transform(const Sample& s, double alpha, double sigma, std::uint64_t seed) {
  if (!(sigma > 0.0)) throw std::invalid_argument("elastic_transform: sigma must be positive");
  const Displacement d = elastic_displacement(s.height(), s.width(), alpha, sigma, seed);
  return warp(
      s, s.height(), s.width(),
      [&d](Index x, Index y) {
        return std::pair<double, double>{static_cast<double>(x) + d.dx(y, x), static_cast<double>(y) + d.dy(y, x)};
      },
      Border::replicate);
}

Sample apply_transform(const Sample& s, const TransformDescriptor& t) {
  const std::uint64_t seed = derive_seed(t.seed, s.id);
  std::mt19937_64 rng(seed);
  const double side = static_cast<double>(std::max(s.height(), s.width()));
  switch (t.kind) {
    case TransformKind::rotate90: return rotate90(s, 1);
    case TransformKind::rotate180: return rotate90(s, 2);
    case TransformKind::rotate270: return rotate90(s, 3);
    case TransformKind::rotate_random:
      return rotate(s, std::uniform_real_distribution<double>(-t.param, t.param)(rng));
    case TransformKind::flip_horizontal: return flip_horizontal(s);
    case TransformKind::flip_vertical: return flip_vertical(s);
    case TransformKind::transpose: return transpose(s);
    case TransformKind::center_crop: return center_crop(s, t.param);
    case TransformKind::elastic:
      return elastic_transform(s, t.param * side, std::max(1.0, t.param2 * side), seed);
    case TransformKind::brightness: {
      const auto shift = static_cast<float>(t.param);
      return photometric(s, [shift](float v) { return v + shift; });
    }
    case TransformKind::contrast: {
      const float m = s.image.values().mean();
      const auto f = static_cast<float>(t.param);
      return photometric(s, [m, f](float v) { return (v - m) * f + m; });
    }
    case TransformKind::gamma: {
      const auto g = static_cast<float>(t.param);
      return photometric(s, [g](float v) { return std::pow(v, g); });
    }
    case TransformKind::gaussian_noise: {
      std::normal_distribution<float> noise(0.0f, static_cast<float>(t.param));
      return photometric(s, [&](float v) { return v + noise(rng); });
    }
    case TransformKind::coarse_dropout: {
      Sample r{s.id, s.image.clone(), s.mask.clone()};
      const Index hh = std::max<Index>(1, static_cast<Index>(t.param2 * static_cast<double>(s.height())));
      const Index hw = std::max<Index>(1, static_cast<Index>(t.param2 * static_cast<double>(s.width())));
      std::uniform_int_distribution<Index> ty(0, s.height() - hh), tx(0, s.width() - hw);
      for (int hole = 0; hole < static_cast<int>(t.param); ++hole) {
        const Index top = ty(rng), left = tx(rng);
        for (Index c = 0; c < 3; ++c) {
          for (Index y = top; y < top + hh; ++y) {
            for (Index x = left; x < left + hw; ++x) r.image.at(0, c, y, x) = 0.0f;
          }
        }
      }
      return r;
    }
    case TransformKind::random_scale_crop: {
      const double scale = std::uniform_real_distribution<double>(t.param, t.param2)(rng);
      const double h = std::max(1.0, std::round(scale * static_cast<double>(s.height())));
      const double w = std::max(1.0, std::round(scale * static_cast<double>(s.width())));
      const double top = std::floor(std::uniform_real_distribution<double>(0.0, 1.0)(rng) *
                                    (static_cast<double>(s.height()) - h + 1.0));
      const double left = std::floor(std::uniform_real_distribution<double>(0.0, 1.0)(rng) *
                                     (static_cast<double>(s.width()) - w + 1.0));
      return crop_resize(s, std::min(top, static_cast<double>(s.height()) - h),
                         std::min(left, static_cast<double>(s.width()) - w), h, w);
    }
  }
  throw std::invalid_argument("unknown transform kind");
}

std::vector<Sample> augment_sample(const Sample& s, const AugmentationSpec& spec) {
  if (spec.transforms.size() != kAugmentationsPerImage) {
    throw std::invalid_argument("augmentation spec must hold exactly " + std::to_string(kAugmentationsPerImage) +
                                " transforms, got " + std::to_string(spec.transforms.size()));
  }
  std::vector<Sample> out;
  out.reserve(kAugmentationsPerImage + 1);
  out.push_back(Sample{s.id + "_0", s.image.clone(), s.mask.clone()});
  for (std::size_t k = 0; k < spec.transforms.size(); ++k) {
    Sample t = apply_transform(s, spec.transforms[k]);
    t.id = s.id + "_" + std::to_string(k + 1);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace dunet
