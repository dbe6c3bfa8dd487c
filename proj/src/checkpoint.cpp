#include "comvt/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "comvt/error.hpp"

namespace comvt {

namespace {

constexpr std::array<char, 4> kMagic{'C', 'M', 'V', 'T'};

template <typename T>
void put_le(std::ostream& out, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  auto bits = std::bit_cast<U>(value);
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <typename T>
bool get_le(std::istream& in, T& value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  std::array<unsigned char, sizeof(U)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) return false;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(bytes[i]) << (8 * i);
  value = std::bit_cast<T>(bits);
  return true;
}

bool has_prefix(const std::string& name, std::span<const std::string> prefixes) {
  for (const auto& p : prefixes)
    if (name.rfind(p, 0) == 0) return true;
  return false;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& e : params.entries()) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    const Shape& shape = e.tensor.shape();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t extent : shape) put_le<std::uint64_t>(out, extent);
    for (double v : e.tensor.data()) put_le<double>(out, v);
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw FormatError(path.string() + ": not a CMVT checkpoint");
  }
  std::uint32_t version = 0;
  if (!get_le(in, version)) throw FormatError(path.string() + ": truncated header");
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  std::vector<NamedArray> out;
  std::uint32_t name_len = 0;
  while (get_le(in, name_len)) {
    NamedArray arr;
    arr.name.resize(name_len);
    std::uint32_t rank = 0;
    if (!in.read(arr.name.data(), name_len) || !get_le(in, rank)) {
      throw FormatError(path.string() + ": truncated record");
    }
    std::size_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      std::uint64_t extent = 0;
      if (!get_le(in, extent)) throw FormatError(path.string() + ": truncated shape of '" + arr.name + "'");
      arr.shape.push_back(extent);
      count *= extent;
    }
    arr.values.resize(count);
    for (double& v : arr.values) {
      if (!get_le(in, v)) throw FormatError(path.string() + ": truncated values of '" + arr.name + "'");
    }
    out.push_back(std::move(arr));
  }
  return out;
}

void load_checkpoint(const std::filesystem::path& path, ParamStore& params,
                     std::span<const std::string> skip_prefixes) {
  std::map<std::string, NamedArray> stored;
  for (auto& arr : read_checkpoint(path)) stored.emplace(arr.name, std::move(arr));
  // Validate everything before touching any parameter.
  for (const auto& e : params.entries()) {
    if (has_prefix(e.name, skip_prefixes)) continue;
    auto it = stored.find(e.name);
    if (it == stored.end()) throw FormatError(path.string() + ": missing parameter '" + e.name + "'");
    if (it->second.shape != e.tensor.shape()) {
      throw FormatError(path.string() + ": shape mismatch for '" + e.name + "': file " +
                        shape_string(it->second.shape) + ", model " + shape_string(e.tensor.shape()));
    }
  }
  for (const auto& [name, arr] : stored) {
    if (!params.contains(name) && !has_prefix(name, skip_prefixes)) {
      throw FormatError(path.string() + ": unexpected parameter '" + name + "'");
    }
  }
  for (const auto& e : params.entries()) {
    if (has_prefix(e.name, skip_prefixes)) continue;
    Tensor t = e.tensor;
    const auto& values = stored.at(e.name).values;
    std::copy(values.begin(), values.end(), t.mutable_data().begin());
  }
}

}  // namespace comvt
