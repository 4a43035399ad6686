#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include "hemafuse/augment.hpp"
#include "hemafuse/ingest.hpp"
#include "hemafuse/rng.hpp"
#include "temp_dir.hpp"

// jpeglib.h relies on <cstdio> being included first.
#include <jpeglib.h>

using namespace hemafuse;
namespace fs = std::filesystem;
using hemafuse::testing::TempDir;

namespace {

RawImage solid(int h, int w, int c, std::uint8_t v) {
  return RawImage{h, w, c, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w * c, v)};
}

void make_class(const fs::path& dir, int count, std::uint8_t shade) {
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%03d.raw", i);
    save_afim(dir / name, solid(4, 4, 3, static_cast<std::uint8_t>(shade + i)));
  }
}

DatasetIndex synthetic_index(std::size_t n0, std::size_t n1) {
  DatasetIndex idx;
  idx.class_names = {"notall", "all"};
  for (std::size_t i = 0; i < n0 + n1; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "f%05zu.raw", i);
    idx.entries.push_back({fs::path(name), LabelId(i < n0 ? 0 : 1)});
  }
  return idx;
}

std::array<std::size_t, 2> class_counts(const DatasetIndex& idx, const std::vector<std::size_t>& ids) {
  std::array<std::size_t, 2> c{0, 0};
  for (auto i : ids) ++c[static_cast<std::size_t>(idx.entries[i].label.value())];
  return c;
}

void write_jpeg(const fs::path& path, int h, int w, std::uint8_t v) {
  jpeg_compress_struct cinfo;
  jpeg_error_mgr jerr;
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  FILE* f = std::fopen(path.c_str(), "wb");
  REQUIRE(f != nullptr);
  jpeg_stdio_dest(&cinfo, f);
  cinfo.image_width = static_cast<JDIMENSION>(w);
  cinfo.image_height = static_cast<JDIMENSION>(h);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, 100, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3, v);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW r = row.data();
    jpeg_write_scanlines(&cinfo, &r, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::fclose(f);
}

}  // namespace

TEST_CASE("scan_dataset") {
  TempDir tmp("scan");
  SUBCASE("59 healthy and 49 ALL images") {
    make_class(tmp.path() / "notall", 59, 10);
    make_class(tmp.path() / "all", 49, 100);
    auto idx = scan_dataset(tmp.path(), {"notall", "all"});
    CHECK(idx.entries.size() == 108);
    CHECK(std::count_if(idx.entries.begin(), idx.entries.end(),
                        [](const auto& e) { return e.label.value() == 0; }) == 59);
    CHECK(std::is_sorted(idx.entries.begin(), idx.entries.end(), [](const auto& a, const auto& b) {
      return a.path.generic_string() < b.path.generic_string();
    }));
  }
  SUBCASE("one file per class") {
    make_class(tmp.path() / "a", 1, 0);
    make_class(tmp.path() / "b", 1, 0);
    auto idx = scan_dataset(tmp.path(), {"a", "b"});
    REQUIRE(idx.entries.size() == 2);
    CHECK(std::set<int>{idx.entries[0].label, idx.entries[1].label} == std::set<int>{0, 1});
  }
  SUBCASE("empty class") {
    make_class(tmp.path() / "a", 3, 0);
    fs::create_directories(tmp.path() / "b");
    try {
      scan_dataset(tmp.path(), {"a", "b"});
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("class has zero samples") != std::string::npos);
    }
  }
  SUBCASE("missing directory") {
    make_class(tmp.path() / "a", 3, 0);
    CHECK_THROWS_AS(scan_dataset(tmp.path(), {"a", "nope"}), ConfigError);
  }
  SUBCASE("undecodable file is named") {
    make_class(tmp.path() / "a", 2, 0);
    make_class(tmp.path() / "b", 2, 0);
    std::ofstream(tmp.path() / "b" / "broken.png") << "not an image";
    try {
      scan_dataset(tmp.path(), {"a", "b"});
      FAIL("expected DecodeError");
    } catch (const DecodeError& e) {
      CHECK(std::string(e.what()).find("broken.png") != std::string::npos);
    }
  }
  SUBCASE("scan, serialize, scan again") {
    make_class(tmp.path() / "a", 7, 0);
    make_class(tmp.path() / "b", 6, 50);
    auto idx = scan_dataset(tmp.path(), {"a", "b"});
    auto rows = manifest_rows(idx, split_dataset(idx, 3));
    auto again = scan_dataset(tmp.path(), {"a", "b"});
    REQUIRE(rows.size() == again.entries.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(rows[i].path == again.entries[i].path.generic_string());
      CHECK(rows[i].label == again.entries[i].label);
    }
  }
}

TEST_CASE("split_dataset") {
  SUBCASE("108 entries, seed 7") {
    auto idx = synthetic_index(59, 49);
    auto s = split_dataset(idx, 7);
    CHECK(s.test.size() == 22);
    CHECK(class_counts(idx, s.test) == std::array<std::size_t, 2>{12, 10});
    CHECK(s.validation.size() == 17);
    CHECK(s.train.size() == 69);
  }
  SUBCASE("260 entries") {
    auto idx = synthetic_index(130, 130);
    for (std::uint64_t seed : {0ull, 1ull, 99ull}) CHECK(split_dataset(idx, seed).test.size() == 52);
  }
  SUBCASE("deterministic and seed-sensitive") {
    auto idx = synthetic_index(40, 33);
    CHECK(split_dataset(idx, 5) == split_dataset(idx, 5));
    CHECK_FALSE(split_dataset(idx, 5).test == split_dataset(idx, 6).test);
  }
  SUBCASE("partition, sizes and stratification over many shapes") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n0 = 5 + rng.below(80), n1 = 5 + rng.below(80), n = n0 + n1;
      auto idx = synthetic_index(n0, n1);
      auto s = split_dataset(idx, rng.next_u64());
      std::vector<std::size_t> all;
      for (auto* v : {&s.train, &s.validation, &s.test}) {
        CHECK(std::is_sorted(v->begin(), v->end()));
        all.insert(all.end(), v->begin(), v->end());
      }
      std::sort(all.begin(), all.end());
      std::vector<std::size_t> expect(n);
      std::iota(expect.begin(), expect.end(), 0);
      CHECK(all == expect);
      CHECK(s.test.size() == static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n))));
      CHECK(s.validation.size() == static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n - s.test.size()))));
      for (const auto* v : {&s.train, &s.validation, &s.test}) {
        const auto c = class_counts(idx, *v);
        const double expected0 = static_cast<double>(v->size()) * static_cast<double>(n0) / static_cast<double>(n);
        CHECK(std::abs(static_cast<double>(c[0]) - expected0) <= 1.0);
      }
    }
  }
  SUBCASE("too few per class") {
    CHECK_THROWS_AS(split_dataset(synthetic_index(4, 10), 1), DataError);
  }
}

TEST_CASE("test_count rounds to nearest") {
  CHECK(test_count(108) == 22);
  CHECK(test_count(260) == 52);
  CHECK(test_count(1000) == 200);
  CHECK(test_count(12) == 2);
  CHECK(test_count(13) == 3);
}

TEST_CASE("manifest round trip") {
  TempDir tmp("manifest");
  std::vector<ManifestRow> rows = {
      {"data/a/x.png", LabelId(0), SplitRole::Train},
      {"data/b/with,comma.png", LabelId(1), SplitRole::Validation},
      {"data/b/\"quoted\".raw", LabelId(1), SplitRole::Test},
  };
  const auto text = format_manifest(rows);
  CHECK(text.rfind("path,label,split\n", 0) == 0);
  CHECK(parse_manifest(text) == rows);
  write_manifest(tmp.path() / "m.csv", rows);
  CHECK(read_manifest(tmp.path() / "m.csv") == rows);
  std::ifstream in(tmp.path() / "m.csv", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(bytes == text);
  CHECK(format_manifest(parse_manifest(text)) == text);
  CHECK_THROWS_AS(parse_manifest("a,b\n"), DataError);
  CHECK_THROWS_AS(parse_manifest("path,label,split\nx,2,train\n"), DataError);
  CHECK_THROWS_AS(parse_manifest("path,label,split\nx,1,holdout\n"), DataError);
}

TEST_CASE("load_image") {
  TempDir tmp("load");
  SUBCASE("2x2 white PNG") {
    save_png(tmp.path() / "w.png", solid(2, 2, 3, 255));
    auto img = load_image(tmp.path() / "w.png");
    CHECK(img.height == 2);
    CHECK(img.width == 2);
    CHECK(img.channels == 3);
    CHECK(std::all_of(img.pixels.begin(), img.pixels.end(), [](auto p) { return p == 255; }));
  }
  SUBCASE("channel order survives PNG") {
    RawImage rgb{1, 2, 3, {10, 20, 30, 40, 50, 60}};
    save_png(tmp.path() / "c.png", rgb);
    CHECK(load_image(tmp.path() / "c.png") == rgb);
  }
  SUBCASE("grayscale is replicated") {
    RawImage gray{2, 3, 1, {0, 40, 80, 120, 160, 200}};
    save_png(tmp.path() / "g.png", gray);
    save_afim(tmp.path() / "g.raw", gray);
    for (const char* f : {"g.png", "g.raw"}) {
      auto img = load_image(tmp.path() / f);
      REQUIRE(img.channels == 3);
      for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 3; ++x)
          for (int c = 0; c < 3; ++c) CHECK(img.at(y, x, c) == gray.at(y, x, 0));
    }
  }
  SUBCASE("JPEG") {
    write_jpeg(tmp.path() / "j.jpg", 8, 8, 200);
    auto img = load_image(tmp.path() / "j.jpg");
    CHECK(img.height == 8);
    CHECK(img.channels == 3);
    for (auto p : img.pixels) CHECK(std::abs(int(p) - 200) <= 2);
  }
  SUBCASE("AFIM round trip") {
    RawImage img{3, 2, 3, {}};
    for (int i = 0; i < 18; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i * 13));
    CHECK(decode_afim(encode_afim(img), "x") == img);
  }
  SUBCASE("corrupt and truncated files") {
    std::ofstream(tmp.path() / "bad.png", std::ios::binary) << "\x89PNG\r\n\x1a\ngarbage";
    CHECK_THROWS_AS(load_image(tmp.path() / "bad.png"), DecodeError);
    std::ofstream(tmp.path() / "bad.jpg", std::ios::binary) << "\xFF\xD8\xFF\xE0garbage";
    CHECK_THROWS_AS(load_image(tmp.path() / "bad.jpg"), DecodeError);
    auto afim = encode_afim(solid(4, 4, 3, 1));
    afim.resize(afim.size() - 5);
    CHECK_THROWS_AS(decode_afim(afim, "t"), DecodeError);
    CHECK_THROWS_AS(load_image(tmp.path() / "missing.png"), DecodeError);
    try {
      load_image(tmp.path() / "bad.png");
    } catch (const DecodeError& e) {
      CHECK(std::string(e.what()).find("bad.png") != std::string::npos);
    }
  }
}

TEST_CASE("scale_features") {
  RawImage raw{1, 1, 3, {255, 0, 51}};
  auto img = scale_features(raw);
  CHECK(img.at(0, 0, 0) == 1.0);
  CHECK(img.at(0, 0, 1) == 0.0);
  CHECK(std::abs(img.at(0, 0, 2) - 0.2) < 1e-9);
  CHECK(to_raw(img) == raw);
}
