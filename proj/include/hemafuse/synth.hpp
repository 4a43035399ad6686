#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "hemafuse/image.hpp"

namespace hemafuse {

/// Two-class stand-in for blood-smear tiles. Label 0 draws textured Gaussian
/// blobs; label 1 draws ring-shaped cells with a dark nucleus-like center.
/// Each image is a pure function of (label, size, seed).
RawImage synth_image(int label, int size, std::uint64_t seed);

struct SynthOptions {
  int per_class = 500;
  int size = 64;
  std::uint64_t seed = 0;
};

/// Writes per_class AFIM images under root/class_dirs[k].
void write_synthetic_dataset(const std::filesystem::path& root, const std::array<std::string, 2>& class_dirs,
                             const SynthOptions& options);

}  // namespace hemafuse
