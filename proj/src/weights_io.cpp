#include "dunet/weights_io.hpp"

#include <array>
#include <fstream>
#include <map>
#include <sstream>

namespace dunet {

namespace {

constexpr std::array<char, 4> kWeightsMagic{'D', 'U', 'O', 'W'};
constexpr std::uint16_t kWeightsVersion = 1;

std::string dims_string(const std::vector<Index>& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ']';
  return os.str();
}

}  // namespace

template <typename Scalar>
void write_weights_file(const std::filesystem::path& path, std::span<const Parameter<Scalar>> entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kWeightsMagic.data(), 4);
  binary::write_u16(os, kWeightsVersion);
  binary::write_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& p : entries) {
    if (p.name.size() > 0xffff) throw std::invalid_argument("parameter name too long: " + p.name);
    binary::write_u16(os, static_cast<std::uint16_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    binary::write_u8(os, static_cast<std::uint8_t>(dtype_of<Scalar>()));
    binary::write_u8(os, 4);
    for (Index d : p.tensor.shape()) binary::write_u32(os, static_cast<std::uint32_t>(d));
    binary::write_payload(os, p.tensor.data(), static_cast<std::size_t>(p.tensor.size()), dtype_of<Scalar>());
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::vector<NamedTensor> read_weights_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open weights file " + path.string());
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  if (!is || magic != kWeightsMagic) throw FormatError(path.string() + ": bad magic (expected DUOW)");
  const auto version = binary::read_u16(is);
  if (version != kWeightsVersion) {
    throw FormatError(path.string() + ": unsupported weights version " + std::to_string(version));
  }
  const auto count = binary::read_u32(is);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name.resize(binary::read_u16(is));
    is.read(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    const auto dtype = binary::read_u8(is);
    if (dtype > 1) throw FormatError(path.string() + ": entry '" + t.name + "' has unknown dtype");
    t.dtype = static_cast<DType>(dtype);
    const auto rank = binary::read_u8(is);
    Index total = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      t.dims.push_back(binary::read_u32(is));
      total *= t.dims.back();
    }
    t.values.resize(total);
    binary::read_payload(is, t.values.data(), static_cast<std::size_t>(total), t.dtype);
    out.push_back(std::move(t));
  }
  return out;
}

template <typename Scalar>
void assign_named(std::span<const Parameter<Scalar>> entries, const std::vector<NamedTensor>& file,
                  const std::filesystem::path& origin) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : file) {
    if (!by_name.emplace(t.name, &t).second) {
      throw FormatError(origin.string() + ": duplicate entry '" + t.name + "'");
    }
  }
  std::map<std::string, const Parameter<Scalar>*> known;
  for (const auto& p : entries) known.emplace(p.name, &p);
  for (const auto& t : file) {
    if (!known.contains(t.name)) throw FormatError(origin.string() + ": unknown parameter '" + t.name + "'");
  }
  for (const auto& p : entries) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw FormatError(origin.string() + ": missing parameter '" + p.name + "'");
    const NamedTensor& t = *it->second;
    const std::vector<Index> expected(p.tensor.shape().begin(), p.tensor.shape().end());
    if (t.dims != expected) {
      throw FormatError(origin.string() + ": shape mismatch for '" + p.name + "': expected " +
                        dims_string(expected) + ", found " + dims_string(t.dims));
    }
  }
  for (const auto& p : entries) {
    const NamedTensor& t = *by_name.at(p.name);
    Tensor<Scalar> dst = p.tensor;
    dst.values() = t.values.cast<Scalar>();
  }
}

template void write_weights_file(const std::filesystem::path&, std::span<const Parameter<float>>);
template void write_weights_file(const std::filesystem::path&, std::span<const Parameter<double>>);
template void assign_named(std::span<const Parameter<float>>, const std::vector<NamedTensor>&,
                           const std::filesystem::path&);
template void assign_named(std::span<const Parameter<double>>, const std::vector<NamedTensor>&,
                           const std::filesystem::path&);

}  // namespace dunet
