#include "dunet/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dunet {

Image8 read_png(const std::filesystem::path& path, int channels) {
  if (channels != 1 && channels != 3) throw std::invalid_argument("read_png: channels must be 1 or 3");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DataError("cannot decode " + path.string() + ": " + img.message);
  }
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image8 out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.channels = channels;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw DataError("cannot decode " + path.string() + ": " + msg);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw std::invalid_argument("write_png: channels must be 1 or 3");
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * image.channels) {
    throw std::invalid_argument("write_png: pixel buffer size does not match dimensions");
  }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write " + path.string() + ": " + img.message);
  }
}

Tensor<float> to_tensor(const Image8& image) {
  const Index c = image.channels, h = image.height, w = image.width;
  Tensor<float> t({1, c, h, w});
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (Index ch = 0; ch < c; ++ch) {
        t.at(0, ch, y, x) = static_cast<float>(image.pixels[static_cast<std::size_t>((y * w + x) * c + ch)]) / 255.0f;
      }
    }
  }
  return t;
}

Image8 to_image8(const Tensor<float>& t) {
  if (t.n() != 1 || (t.c() != 1 && t.c() != 3)) {
    throw std::invalid_argument("to_image8: expected (1, 1|3, H, W), got " + to_string(t.shape()));
  }
  Image8 image;
  image.width = static_cast<int>(t.w());
  image.height = static_cast<int>(t.h());
  image.channels = static_cast<int>(t.c());
  image.pixels.resize(static_cast<std::size_t>(t.size()));
  for (Index y = 0; y < t.h(); ++y) {
    for (Index x = 0; x < t.w(); ++x) {
      for (Index ch = 0; ch < t.c(); ++ch) {
        const float v = std::clamp(t.at(0, ch, y, x), 0.0f, 1.0f);
        image.pixels[static_cast<std::size_t>((y * t.w() + x) * t.c() + ch)] =
            static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  return image;
}

}  // namespace dunet
