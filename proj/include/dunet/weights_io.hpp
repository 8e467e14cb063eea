#pragma once

#include "dunet/blocks.hpp"
#include "dunet/tensor_io.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace dunet {

struct NamedTensor {
  std::string name;
  DType dtype = DType::f32;
  std::vector<Index> dims;
  Vector<double> values;
};

/// "DUOW" weights file: magic, version u16, count u32, then per entry
/// name length u16 + UTF-8 name, dtype u8, rank u8, dims u32[rank], payload.
template <typename Scalar>
void write_weights_file(const std::filesystem::path& path, std::span<const Parameter<Scalar>> entries);

std::vector<NamedTensor> read_weights_file(const std::filesystem::path& path);

/// Copies file entries into `entries` by name. Every entry must be present in
/// the file with an identical shape and the file may not contain unknown names.
template <typename Scalar>
void assign_named(std::span<const Parameter<Scalar>> entries, const std::vector<NamedTensor>& file,
                  const std::filesystem::path& origin);

template <typename Scalar>
void save_weights(const ParameterRegistry<Scalar>& reg, const std::filesystem::path& path) {
  auto state = reg.state();
  write_weights_file(path, std::span<const Parameter<Scalar>>(state));
}

template <typename Scalar>
void load_weights(ParameterRegistry<Scalar>& reg, const std::filesystem::path& path) {
  auto state = reg.state();
  assign_named(std::span<const Parameter<Scalar>>(state), read_weights_file(path), path);
}

}  // namespace dunet
