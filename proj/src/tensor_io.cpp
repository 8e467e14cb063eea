#include "dunet/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace dunet {

namespace {

constexpr std::array<char, 4> kTensorMagic{'D', 'U', 'O', 'T'};
constexpr std::uint16_t kTensorVersion = 1;

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

void check_stream(std::istream& is) {
  if (!is) throw FormatError("unexpected end of file");
}

}  // namespace

namespace binary {

void write_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }

void write_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  os.write(b, 2);
}

void write_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

std::uint8_t read_u8(std::istream& is) {
  char c = 0;
  is.get(c);
  check_stream(is);
  return static_cast<std::uint8_t>(c);
}

std::uint16_t read_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  check_stream(is);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  check_stream(is);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

template <typename Scalar>
void write_payload(std::ostream& os, const Scalar* data, std::size_t count, DType dtype) {
  if (dtype == dtype_of<Scalar>()) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(Scalar)));
    return;
  }
  for (std::size_t i = 0; i < count; ++i) {
    if (dtype == DType::f32) {
      const auto v = static_cast<float>(data[i]);
      os.write(reinterpret_cast<const char*>(&v), sizeof v);
    } else {
      const auto v = static_cast<double>(data[i]);
      os.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
}

template <typename Scalar>
void read_payload(std::istream& is, Scalar* data, std::size_t count, DType dtype) {
  if (dtype == dtype_of<Scalar>()) {
    is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(Scalar)));
    check_stream(is);
    return;
  }
  for (std::size_t i = 0; i < count; ++i) {
    if (dtype == DType::f32) {
      float v;
      is.read(reinterpret_cast<char*>(&v), sizeof v);
      data[i] = static_cast<Scalar>(v);
    } else {
      double v;
      is.read(reinterpret_cast<char*>(&v), sizeof v);
      data[i] = static_cast<Scalar>(v);
    }
  }
  check_stream(is);
}

template void write_payload(std::ostream&, const float*, std::size_t, DType);
template void write_payload(std::ostream&, const double*, std::size_t, DType);
template void read_payload(std::istream&, float*, std::size_t, DType);
template void read_payload(std::istream&, double*, std::size_t, DType);

}  // namespace binary

template <typename Scalar>
void write_tensor(std::ostream& os, const Tensor<Scalar>& t, DType dtype) {
  os.write(kTensorMagic.data(), 4);
  binary::write_u16(os, kTensorVersion);
  binary::write_u8(os, static_cast<std::uint8_t>(dtype));
  binary::write_u8(os, 4);
  for (Index d : t.shape()) binary::write_u32(os, static_cast<std::uint32_t>(d));
  binary::write_payload(os, t.data(), static_cast<std::size_t>(t.size()), dtype);
}

template <typename Scalar>
Tensor<Scalar> read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  check_stream(is);
  if (magic != kTensorMagic) throw FormatError("bad tensor magic (expected DUOT)");
  const auto version = binary::read_u16(is);
  if (version != kTensorVersion) throw FormatError("unsupported tensor version " + std::to_string(version));
  const auto dtype = binary::read_u8(is);
  if (dtype > 1) throw FormatError("unknown dtype code " + std::to_string(dtype));
  const auto rank = binary::read_u8(is);
  if (rank != 4) throw FormatError("tensor rank must be 4, got " + std::to_string(rank));
  Shape shape{};
  for (auto& d : shape) d = binary::read_u32(is);
  Tensor<Scalar> t(shape);
  binary::read_payload(is, t.data(), static_cast<std::size_t>(t.size()), static_cast<DType>(dtype));
  return t;
}

template <typename Scalar>
void save_tensor(const std::filesystem::path& path, const Tensor<Scalar>& t, DType dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensor(os, t, dtype);
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

template <typename Scalar>
Tensor<Scalar> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_tensor<Scalar>(is);
}

template void write_tensor(std::ostream&, const Tensor<float>&, DType);
template void write_tensor(std::ostream&, const Tensor<double>&, DType);
template Tensor<float> read_tensor(std::istream&);
template Tensor<double> read_tensor(std::istream&);
template void save_tensor(const std::filesystem::path&, const Tensor<float>&, DType);
template void save_tensor(const std::filesystem::path&, const Tensor<double>&, DType);
template Tensor<float> load_tensor(const std::filesystem::path&);
template Tensor<double> load_tensor(const std::filesystem::path&);

}  // namespace dunet
