#include "hemafuse/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "byte_io.hpp"
#include "hemafuse/rng.hpp"

#include <jpeglib.h>
#include <png.h>

namespace fs = std::filesystem;

namespace hemafuse {

std::string to_string(SplitRole r) {
  switch (r) {
    case SplitRole::Train: return "train";
    case SplitRole::Validation: return "val";
    case SplitRole::Test: return "test";
  }
  return "train";
}

SplitRole split_role_from_string(const std::string& s) {
  if (s == "train") return SplitRole::Train;
  if (s == "val") return SplitRole::Validation;
  if (s == "test") return SplitRole::Test;
  throw DataError("unknown split '" + s + "'");
}

// ---------------------------------------------------------------- decoding

namespace {

RawImage to_rgb(int h, int w, int c, const std::uint8_t* px) {
  RawImage out{h, w, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w * 3)};
  for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i)
    for (int k = 0; k < 3; ++k) out.pixels[i * 3 + k] = px[i * c + (c >= 3 ? k : 0)];
  return out;
}

RawImage decode_png(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw DecodeError("cannot decode PNG " + name + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  RawImage out{static_cast<int>(image.height), static_cast<int>(image.width), 3,
               std::vector<std::uint8_t>(PNG_IMAGE_SIZE(image))};
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DecodeError("cannot decode PNG " + name + ": " + msg);
  }
  return out;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

RawImage decode_jpeg(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  err.mgr.output_message = [](j_common_ptr) {};
  std::vector<std::uint8_t> pixels;
  int h = 0, w = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError("cannot decode JPEG " + name + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  h = static_cast<int>(cinfo.output_height);
  w = static_cast<int>(cinfo.output_width);
  pixels.resize(static_cast<std::size_t>(h) * w * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return RawImage{h, w, 3, std::move(pixels)};
}

bool has_prefix(const std::vector<std::uint8_t>& b, std::initializer_list<int> sig) {
  if (b.size() < sig.size()) return false;
  std::size_t i = 0;
  for (int s : sig)
    if (b[i++] != static_cast<std::uint8_t>(s)) return false;
  return true;
}

}  // namespace

std::vector<std::uint8_t> encode_afim(const RawImage& img) {
  detail::ByteWriter w;
  w.magic("AFIM");
  w.u32(static_cast<std::uint32_t>(img.height));
  w.u32(static_cast<std::uint32_t>(img.width));
  w.u32(static_cast<std::uint32_t>(img.channels));
  w.raw(img.pixels.data(), img.pixels.size());
  return std::move(w.bytes());
}

RawImage decode_afim(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  detail::ByteReader r(bytes, "AFIM image " + name);
  r.expect_magic("AFIM");
  const std::uint32_t h = r.u32(), w = r.u32(), c = r.u32();
  if (h == 0 || w == 0 || (c != 1 && c != 3 && c != 4))
    throw DecodeError("AFIM image " + name + ": invalid header " + std::to_string(h) + "x" +
                      std::to_string(w) + "x" + std::to_string(c));
  const std::size_t n = static_cast<std::size_t>(h) * w * c;
  if (r.remaining() < n) throw DecodeError("AFIM image " + name + ": truncated data");
  const std::uint8_t* px = r.take(n);
  if (r.remaining() != 0) throw DecodeError("AFIM image " + name + ": trailing bytes");
  if (c == 3) return RawImage{static_cast<int>(h), static_cast<int>(w), 3, std::vector<std::uint8_t>(px, px + n)};
  return to_rgb(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c), px);
}

RawImage decode_image(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  if (has_prefix(bytes, {0x89, 'P', 'N', 'G'})) return decode_png(bytes, name);
  if (has_prefix(bytes, {0xFF, 0xD8, 0xFF})) return decode_jpeg(bytes, name);
  if (has_prefix(bytes, {'A', 'F', 'I', 'M'})) return decode_afim(bytes, name);
  throw DecodeError("unsupported image format: " + name);
}

RawImage load_image(const fs::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = detail::read_file(path);
  } catch (const DataError&) {
    throw DecodeError("cannot read image " + path.string());
  }
  return decode_image(bytes, path.string());
}

void save_afim(const fs::path& path, const RawImage& img) { detail::write_file(path, encode_afim(img)); }

void save_png(const fs::path& path, const RawImage& img) {
  if (img.channels != 1 && img.channels != 3) throw ArgumentError("save_png expects 1 or 3 channels");
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    throw DataError("cannot write PNG " + path.string() + ": " + image.message);
}

RawImage to_raw(const ImageTensor& img) {
  RawImage out{img.height(), img.width(), img.channels(),
               std::vector<std::uint8_t>(static_cast<std::size_t>(img.data().size()))};
  for (Index i = 0; i < img.data().size(); ++i)
    out.pixels[static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>(std::lround(std::clamp(img.data()[i], 0.0, 1.0) * 255.0));
  return out;
}

// ----------------------------------------------------------------- dataset

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".raw" || ext == ".afim";
}

}  // namespace

DatasetIndex scan_dataset(const fs::path& root, const std::array<std::string, 2>& class_dirs,
                          bool verify_decode) {
  DatasetIndex index;
  index.class_names = class_dirs;
  for (int label = 0; label < 2; ++label) {
    const fs::path dir = root / class_dirs[static_cast<std::size_t>(label)];
    if (!fs::is_directory(dir)) throw ConfigError("dataset class directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    if (files.empty())
      throw DataError("class has zero samples: " + class_dirs[static_cast<std::size_t>(label)]);
    for (auto& f : files) {
      if (verify_decode) load_image(f);
      index.entries.push_back(DatasetEntry{f, LabelId(label)});
    }
  }
  std::sort(index.entries.begin(), index.entries.end(),
            [](const DatasetEntry& a, const DatasetEntry& b) {
              return a.path.generic_string() < b.path.generic_string();
            });
  return index;
}

std::size_t test_count(std::size_t n) { return (n + 2) / 5; }

namespace {

/// Distributes round(0.2 * total) items over classes by largest remainder.
std::array<std::size_t, 2> stratified_quota(const std::array<std::size_t, 2>& counts) {
  std::array<std::size_t, 2> quota = {counts[0] / 5, counts[1] / 5};
  std::size_t extra = test_count(counts[0] + counts[1]) - quota[0] - quota[1];
  std::array<std::size_t, 2> order = {0, 1};
  if (counts[1] % 5 > counts[0] % 5) std::swap(order[0], order[1]);
  for (std::size_t k = 0; extra > 0 && k < 2; ++k, --extra) ++quota[order[k]];
  return quota;
}

}  // namespace

SplitIndex split_dataset(const DatasetIndex& index, std::uint64_t seed) {
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < index.entries.size(); ++i)
    by_class[static_cast<std::size_t>(index.entries[i].label.value())].push_back(i);
  for (int c = 0; c < 2; ++c)
    if (by_class[static_cast<std::size_t>(c)].size() < 5)
      throw DataError("class '" + index.class_names[static_cast<std::size_t>(c)] + "' has " +
                      std::to_string(by_class[static_cast<std::size_t>(c)].size()) +
                      " entries; at least 5 are needed to stratify");

  for (std::size_t c = 0; c < 2; ++c) {
    Rng rng(derive_seed(seed, {c}));
    rng.shuffle(by_class[c].begin(), by_class[c].end());
  }

  const auto test_quota = stratified_quota({by_class[0].size(), by_class[1].size()});
  const auto val_quota = stratified_quota(
      {by_class[0].size() - test_quota[0], by_class[1].size() - test_quota[1]});

  SplitIndex split;
  split.seed = seed;
  for (std::size_t c = 0; c < 2; ++c) {
    const auto& ids = by_class[c];
    const std::size_t t = test_quota[c], v = val_quota[c];
    split.test.insert(split.test.end(), ids.begin(), ids.begin() + t);
    split.validation.insert(split.validation.end(), ids.begin() + t, ids.begin() + t + v);
    split.train.insert(split.train.end(), ids.begin() + t + v, ids.end());
  }
  for (auto* v : {&split.train, &split.validation, &split.test}) std::sort(v->begin(), v->end());
  return split;
}

// ---------------------------------------------------------------- manifest

std::vector<ManifestRow> manifest_rows(const DatasetIndex& index, const SplitIndex& split) {
  std::vector<SplitRole> role(index.entries.size(), SplitRole::Train);
  for (auto i : split.validation) role.at(i) = SplitRole::Validation;
  for (auto i : split.test) role.at(i) = SplitRole::Test;
  std::vector<ManifestRow> rows;
  for (std::size_t i = 0; i < index.entries.size(); ++i)
    rows.push_back({index.entries[i].path.generic_string(), index.entries[i].label, role[i]});
  return rows;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    any = true;
    if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw DataError("manifest: unterminated quoted field");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

std::string format_manifest(const std::vector<ManifestRow>& rows) {
  std::string out = "path,label,split\n";
  for (const auto& r : rows)
    out += csv_field(r.path) + "," + std::to_string(r.label.value()) + "," + to_string(r.split) + "\n";
  return out;
}

std::vector<ManifestRow> parse_manifest(const std::string& text) {
  const auto rows = parse_csv(text);
  if (rows.empty() || rows[0] != std::vector<std::string>{"path", "label", "split"})
    throw DataError("manifest: expected header 'path,label,split'");
  std::vector<ManifestRow> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 3 || (r[1] != "0" && r[1] != "1"))
      throw DataError("manifest: malformed row " + std::to_string(i + 1));
    out.push_back({r[0], LabelId(r[1] == "1"), split_role_from_string(r[2])});
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestRow>& rows) {
  detail::write_text(path, format_manifest(rows));
}

std::vector<ManifestRow> read_manifest(const fs::path& path) {
  return parse_manifest(detail::read_text(path));
}

}  // namespace hemafuse
