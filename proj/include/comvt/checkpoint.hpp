#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "comvt/params.hpp"

namespace comvt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian parameter file:
///   "CMVT" | u32 version | records...
///   record = u32 name_len | name (UTF-8) | u32 rank | u64 extents[rank] | f64 values[]
void save_checkpoint(const std::filesystem::path& path, const ParamStore& params);

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path);

/// Copies stored values into `params`. Every parameter must be present with a
/// matching shape, except names starting with one of `skip_prefixes`, which
/// are neither required nor loaded.
void load_checkpoint(const std::filesystem::path& path, ParamStore& params,
                     std::span<const std::string> skip_prefixes = {});

}  // namespace comvt
