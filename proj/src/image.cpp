#include "dunet/image.hpp"

#include "dunet/ops.hpp"

#include <algorithm>
#include <cmath>

namespace dunet {

void validate_sample(const Sample& s) {
  if (s.image.n() != 1 || s.image.c() != 3) {
    throw DataError("sample '" + s.id + "': image must be (1, 3, H, W), got " + to_string(s.image.shape()));
  }
  if (s.mask.shape() != Shape{1, 1, s.image.h(), s.image.w()}) {
    throw DataError("sample '" + s.id + "': mask " + to_string(s.mask.shape()) + " does not match image " +
                    to_string(s.image.shape()));
  }
  for (Index i = 0; i < s.mask.size(); ++i) {
    const float v = s.mask.data()[i];
    if (v != 0.0f && v != 1.0f) throw DataError("sample '" + s.id + "': mask is not binary");
  }
}

Tensor<float> resize_nearest(const Tensor<float>& mask, Index out_h, Index out_w) {
  const Index h = mask.h(), w = mask.w(), planes = mask.n() * mask.c();
  Tensor<float> out({mask.n(), mask.c(), out_h, out_w});
  auto src_index = [](Index dst, Index in, Index out) {
    const auto s = static_cast<Index>(std::floor((static_cast<double>(dst) + 0.5) * static_cast<double>(in) /
                                                 static_cast<double>(out)));
    return std::clamp<Index>(s, 0, in - 1);
  };
  for (Index p = 0; p < planes; ++p) {
    for (Index y = 0; y < out_h; ++y) {
      const Index sy = src_index(y, h, out_h);
      for (Index x = 0; x < out_w; ++x) {
        out.data()[(p * out_h + y) * out_w + x] = mask.data()[(p * h + sy) * w + src_index(x, w, out_w)];
      }
    }
  }
  return out;
}

Sample resize_sample(const Sample& s, Index out_h, Index out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize_sample: target size must be positive");
  Sample r;
  r.id = s.id;
  if (out_h == s.height() && out_w == s.width()) {
    r.image = s.image.clone();
    r.mask = s.mask.clone();
    return r;
  }
  NoGradGuard<float> no_grad;
  r.image = resize_bilinear(s.image, out_h, out_w);
  r.image.values() = r.image.values().cwiseMax(0.0f).cwiseMin(1.0f);
  r.mask = resize_nearest(s.mask, out_h, out_w);
  r.mask.values() = (r.mask.values().array() > 0.5f).cast<float>().matrix();
  return r;
}

Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: no samples selected");
  const Sample& first = samples[indices[0]];
  const Index h = first.height(), w = first.width(), n = static_cast<Index>(indices.size());
  Batch b{Tensor<float>({n, 3, h, w}), Tensor<float>({n, 1, h, w})};
  for (Index i = 0; i < n; ++i) {
    const Sample& s = samples[indices[static_cast<std::size_t>(i)]];
    if (s.height() != h || s.width() != w) {
      throw DataError("make_batch: sample '" + s.id + "' has a different size than '" + first.id + "'");
    }
    std::copy_n(s.image.data(), 3 * h * w, b.images.data() + i * 3 * h * w);
    std::copy_n(s.mask.data(), h * w, b.masks.data() + i * h * w);
  }
  return b;
}

}  // namespace dunet
