#pragma once

#include "dunet/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>

namespace dunet {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename Scalar>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

/// Little-endian primitives shared by the tensor and weights file formats.
namespace binary {
void write_u8(std::ostream& os, std::uint8_t v);
void write_u16(std::ostream& os, std::uint16_t v);
void write_u32(std::ostream& os, std::uint32_t v);
std::uint8_t read_u8(std::istream& is);
std::uint16_t read_u16(std::istream& is);
std::uint32_t read_u32(std::istream& is);

/// Writes `count` values as `dtype`, converting from Scalar when they differ.
template <typename Scalar>
void write_payload(std::ostream& os, const Scalar* data, std::size_t count, DType dtype);
template <typename Scalar>
void read_payload(std::istream& is, Scalar* data, std::size_t count, DType dtype);
}  // namespace binary

/// "DUOT" fixture format: magic, version u16, dtype u8, rank u8 = 4, four u32 dims, payload.
template <typename Scalar>
void write_tensor(std::ostream& os, const Tensor<Scalar>& t, DType dtype = dtype_of<Scalar>());
template <typename Scalar>
Tensor<Scalar> read_tensor(std::istream& is);

template <typename Scalar>
void save_tensor(const std::filesystem::path& path, const Tensor<Scalar>& t, DType dtype = dtype_of<Scalar>());
template <typename Scalar>
Tensor<Scalar> load_tensor(const std::filesystem::path& path);

}  // namespace dunet
