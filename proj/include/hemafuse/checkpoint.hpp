#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hemafuse/params.hpp"

namespace hemafuse {

// AFCK checkpoint layout (all integers little-endian u32):
//   "AFCK" version n_tensors
//   per tensor: name_len name_bytes rank dims[rank] float32[prod(dims)]
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const ParameterSet<float>& params);
ParameterSet<float> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const ParameterSet<float>& params);
ParameterSet<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace hemafuse
