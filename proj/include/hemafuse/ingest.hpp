#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hemafuse/image.hpp"

namespace hemafuse {

/// 0 = not ALL, 1 = ALL.
class LabelId {
 public:
  LabelId() = default;
  explicit LabelId(int v) : value_(v) {
    if (v != 0 && v != 1) throw ArgumentError("label must be 0 or 1, got " + std::to_string(v));
  }
  int value() const { return value_; }
  operator int() const { return value_; }
  bool operator==(const LabelId&) const = default;

 private:
  int value_ = 0;
};

struct DatasetEntry {
  std::filesystem::path path;
  LabelId label;
  bool operator==(const DatasetEntry&) const = default;
};

struct DatasetIndex {
  std::vector<DatasetEntry> entries;
  std::array<std::string, 2> class_names;
};

enum class SplitRole { Train, Validation, Test };

std::string to_string(SplitRole r);
SplitRole split_role_from_string(const std::string& s);

/// Entry ids (positions in a DatasetIndex) per role, each list ascending.
struct SplitIndex {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
  bool operator==(const SplitIndex&) const = default;
};

// Image files -------------------------------------------------------------

/// PNG, JPEG or AFIM, detected from the file's leading bytes. Grayscale is
/// replicated to three channels and alpha is dropped.
RawImage load_image(const std::filesystem::path& path);
RawImage decode_image(const std::vector<std::uint8_t>& bytes, const std::string& name);

/// AFIM: "AFIM", u32 H, u32 W, u32 C (little-endian), then H*W*C bytes.
std::vector<std::uint8_t> encode_afim(const RawImage& img);
RawImage decode_afim(const std::vector<std::uint8_t>& bytes, const std::string& name);
void save_afim(const std::filesystem::path& path, const RawImage& img);

void save_png(const std::filesystem::path& path, const RawImage& img);

/// Quantizes [0,1] intensities back to bytes (round to nearest).
RawImage to_raw(const ImageTensor& img);

// Dataset -----------------------------------------------------------------

/// One entry per image under root/class_dirs[k] (label k), sorted by path.
DatasetIndex scan_dataset(const std::filesystem::path& root,
                          const std::array<std::string, 2>& class_dirs, bool verify_decode = true);

/// Stratified 80/20 train/test split, then 20% of the remaining training
/// entries carved out as validation. Pure function of (index, seed).
SplitIndex split_dataset(const DatasetIndex& index, std::uint64_t seed);

/// Number of test items for n entries: round(0.2 n).
std::size_t test_count(std::size_t n);

// Split manifest CSV: header "path,label,split", one row per entry.

struct ManifestRow {
  std::string path;
  LabelId label;
  SplitRole split = SplitRole::Train;
  bool operator==(const ManifestRow&) const = default;
};

std::vector<ManifestRow> manifest_rows(const DatasetIndex& index, const SplitIndex& split);
std::string format_manifest(const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> parse_manifest(const std::string& text);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

}  // namespace hemafuse
