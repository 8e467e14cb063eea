#include "dunet/dataset.hpp"

#include "dunet/png_io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace dunet {

namespace fs = std::filesystem;

namespace {

std::vector<fs::path> png_files(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) throw DataError("missing directory " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

std::vector<Sample> load_dataset(const fs::path& root) {
  const fs::path image_dir = root / "images";
  const fs::path mask_dir = root / "masks";
  std::vector<Sample> samples;
  for (const auto& image_path : png_files(image_dir)) {
    const std::string id = image_path.stem().string();
    const fs::path mask_path = mask_dir / (id + ".png");
    if (!fs::exists(mask_path)) throw DataError("image '" + id + "' has no mask at " + mask_path.string());
    Sample s;
    s.id = id;
    s.image = to_tensor(read_png(image_path, 3));
    const Image8 mask = read_png(mask_path, 1);
    if (mask.width != s.image.w() || mask.height != s.image.h()) {
      throw DataError("image '" + id + "' is " + std::to_string(s.image.w()) + "x" + std::to_string(s.image.h()) +
                      " but its mask is " + std::to_string(mask.width) + "x" + std::to_string(mask.height));
    }
    s.mask = Tensor<float>({1, 1, s.image.h(), s.image.w()});
    for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
      s.mask.data()[i] = mask.pixels[i] > 127 ? 1.0f : 0.0f;
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

void write_dataset(const fs::path& root, std::span<const Sample> samples) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  for (const auto& s : samples) {
    write_png(root / "images" / (s.id + ".png"), to_image8(s.image));
    write_png(root / "masks" / (s.id + ".png"), to_image8(s.mask));
  }
}

DataSplits split_dataset(std::span<const Sample> samples, const SplitSpec& spec) {
  const std::size_t n = samples.size();
  if (n < 10) throw DataError("split requires at least 10 samples, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::floor(spec.train_fraction * static_cast<double>(n) + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(spec.val_fraction * static_cast<double>(n) + 1e-9));
  DataSplits out;
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = samples[order[i]];
    if (i < n_train) {
      out.train.push_back(s);
    } else if (i < n_train + n_val) {
      out.val.push_back(s);
    } else {
      out.test.push_back(s);
    }
  }
  return out;
}

}  // namespace dunet
