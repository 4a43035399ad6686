#include <doctest.h>

#include <cmath>

#include "hemafuse/augment.hpp"
#include "hemafuse/rng.hpp"

using namespace hemafuse;

namespace {

ImageTensor random_image(int h, int w, Rng& rng) {
  ImageTensor img(h, w, 3);
  for (Index i = 0; i < img.data().size(); ++i) img.data()[i] = rng.uniform();
  return img;
}

double max_abs_diff(const ImageTensor& a, const ImageTensor& b) {
  REQUIRE(a.same_shape(b));
  return (a.data() - b.data()).abs().maxCoeff();
}

ImageTensor crop(const ImageTensor& img, int y0, int x0, int h, int w) {
  ImageTensor out(h, w, img.channels());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
  return out;
}

bool in_unit_range(const ImageTensor& img) {
  return (img.data() >= 0.0).all() && (img.data() <= 1.0).all();
}

}  // namespace

TEST_CASE("resize") {
  Rng rng(1);
  SUBCASE("same size is bitwise identity") {
    auto img = random_image(224, 224, rng);
    CHECK(resize(img, 224, 224) == img);
  }
  SUBCASE("2x2 to 1x1 averages at the center") {
    ImageTensor img(2, 2, 3);
    for (int c = 0; c < 3; ++c) img.at(1, 0, c) = img.at(1, 1, c) = 1.0;
    auto out = resize(img, 1, 1);
    for (int c = 0; c < 3; ++c) CHECK(out.at(0, 0, c) == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("full-resolution slide to model input") {
    ImageTensor big(1944, 2592, 3, 0.25);
    auto out = resize(big, 224, 224);
    CHECK(out.height() == 224);
    CHECK(out.width() == 224);
    CHECK(out.channels() == 3);
    CHECK(max_abs_diff(out, ImageTensor(224, 224, 3, 0.25)) == 0.0);
  }
  SUBCASE("upsample stays in range") {
    auto out = resize(random_image(5, 7, rng), 13, 3);
    CHECK(out.height() == 13);
    CHECK(in_unit_range(out));
  }
  CHECK_THROWS_AS(resize(ImageTensor(2, 2, 3), 0, 4), ArgumentError);
}

TEST_CASE("rotate") {
  Rng rng(2);
  auto img = random_image(6, 6, rng);
  CHECK(rotate(img, 0.0) == img);
  SUBCASE("180 degrees reflects a marker through the center") {
    ImageTensor m(3, 3, 3);
    m.at(0, 1, 0) = 1.0;
    m.at(2, 2, 1) = 0.5;
    auto r = rotate(m, 180.0);
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x)
        for (int c = 0; c < 3; ++c) CHECK(std::abs(r.at(y, x, c) - m.at(2 - y, 2 - x, c)) < 1e-12);
  }
  SUBCASE("four quarter turns") {
    for (int n : {5, 6}) {
      auto x = random_image(n, n, rng);
      auto y = rotate(rotate(rotate(rotate(x, 90.0), 90.0), 90.0), 90.0);
      CHECK(max_abs_diff(x, y) < 1e-6);
    }
  }
  CHECK_THROWS_AS(rotate(img, 181.0), ArgumentError);
}

TEST_CASE("shift") {
  Rng rng(3);
  auto img = random_image(5, 4, rng);
  CHECK(shift(img, 0.0, 0.0) == img);
  SUBCASE("half-width shift moves a bright column two pixels") {
    ImageTensor m(3, 4, 3);
    for (int y = 0; y < 3; ++y)
      for (int c = 0; c < 3; ++c) m.at(y, 0, c) = 1.0;
    auto s = shift(m, 0.5, 0.0);
    for (int y = 0; y < 3; ++y) {
      CHECK(s.at(y, 2, 0) == 1.0);
      CHECK(s.at(y, 3, 0) == 0.0);
      // the vacated columns replicate the edge
      CHECK(s.at(y, 0, 0) == 1.0);
    }
  }
  SUBCASE("vertical shift is an integer row remap") {
    auto s = shift(img, 0.0, -0.2);  // round(-0.2 * 5) = -1
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 4; ++x) CHECK(s.at(y, x, 1) == img.at(std::min(y + 1, 4), x, 1));
  }
  SUBCASE("constants are shift invariant") {
    ImageTensor k(8, 8, 3, 0.3);
    CHECK(shift(shift(k, 0.2, 0.2), -0.2, -0.2) == k);
  }
}

TEST_CASE("zoom") {
  Rng rng(4);
  auto img = random_image(8, 8, rng);
  CHECK(zoom(img, 1.0) == img);
  ImageTensor k(9, 7, 3, 0.6);
  CHECK(max_abs_diff(zoom(k, 1.07), k) < 1e-15);
  SUBCASE("factor 2 on a bright 2x2 center fills the frame") {
    ImageTensor m(4, 4, 3);
    for (int y = 1; y <= 2; ++y)
      for (int x = 1; x <= 2; ++x)
        for (int c = 0; c < 3; ++c) m.at(y, x, c) = 1.0;
    CHECK(max_abs_diff(zoom(m, 2.0), ImageTensor(4, 4, 3, 1.0)) < 1e-12);
  }
  SUBCASE("matches crop followed by resize") {
    CHECK(max_abs_diff(zoom(img, 2.0), resize(crop(img, 2, 2, 4, 4), 8, 8)) < 1e-12);
    auto big = random_image(12, 12, rng);
    CHECK(max_abs_diff(zoom(big, 1.5), resize(crop(big, 2, 2, 8, 8), 12, 12)) < 1e-12);
  }
  CHECK_THROWS_AS(zoom(img, 0.0), ArgumentError);
  CHECK_THROWS_AS(zoom(img, -1.0), ArgumentError);
}

TEST_CASE("flips") {
  Rng rng(5);
  auto img = random_image(7, 5, rng);
  CHECK(flip_h(flip_h(img)) == img);
  CHECK(flip_v(flip_v(img)) == img);
  ImageTensor row(1, 3, 3);
  for (int x = 0; x < 3; ++x)
    for (int c = 0; c < 3; ++c) row.at(0, x, c) = 0.1 * (x + 1);
  auto f = flip_h(row);
  CHECK(f.at(0, 0, 0) == row.at(0, 2, 0));
  CHECK(f.at(0, 1, 0) == row.at(0, 1, 0));
  CHECK(f.at(0, 2, 0) == row.at(0, 0, 0));
}

TEST_CASE("shear") {
  Rng rng(6);
  auto img = random_image(6, 6, rng);
  CHECK(shear(img, 0.0) == img);
  ImageTensor k(6, 9, 3, 0.45);
  CHECK(max_abs_diff(shear(k, 17.0), k) < 1e-15);
  SUBCASE("shear then unshear a smooth gradient") {
    const int n = 32;
    ImageTensor g(n, n, 3);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        for (int c = 0; c < 3; ++c) g.at(y, x, c) = 0.3 + 0.4 * (x + y) / (2.0 * (n - 1));
    CHECK(max_abs_diff(shear(shear(g, 20.0), -20.0), g) < 5e-2);
  }
  SUBCASE("center row is fixed, other rows translate") {
    ImageTensor m(5, 9, 3);
    for (int y = 0; y < 5; ++y)
      for (int c = 0; c < 3; ++c) m.at(y, 4, c) = 1.0;
    auto s = shear(m, 45.0);  // tan = 1: row y moves by (y - 2)
    for (int y = 0; y < 5; ++y) CHECK(s.at(y, 4 + (y - 2), 0) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(shear(img, 90.0), ArgumentError);
}

TEST_CASE("every transform preserves shape and range") {
  Rng rng(7);
  AugmentPolicy policy;
  for (int trial = 0; trial < 100; ++trial) {
    auto img = random_image(static_cast<int>(4 + rng.below(20)), static_cast<int>(4 + rng.below(20)), rng);
    for (auto kind : kAllTransforms) {
      TransformDraw d{kind, 0.0};
      switch (kind) {
        case TransformKind::Rotate: d.param = rng.uniform(-policy.rotation_deg, policy.rotation_deg); break;
        case TransformKind::HeightShift: d.param = rng.uniform(-0.2, 0.2); break;
        case TransformKind::WidthShift: d.param = rng.uniform(-0.2, 0.2); break;
        case TransformKind::Zoom: d.param = rng.uniform(1.0, 1.1); break;
        case TransformKind::Shear: d.param = rng.uniform(-policy.shear_deg, policy.shear_deg); break;
        default: break;
      }
      auto out = apply_transform(img, d);
      CHECK(out.same_shape(img));
      CHECK(in_unit_range(out));
    }
  }
}

TEST_CASE("draw_transform respects policy ranges") {
  AugmentPolicy p;
  p.seed = 3;
  std::array<int, 7> seen{};
  for (std::size_t e = 0; e < 2000; ++e) {
    auto d = draw_transform(p, e, 0);
    ++seen[static_cast<std::size_t>(d.kind)];
    switch (d.kind) {
      case TransformKind::Rotate: CHECK(std::abs(d.param) <= 45.0); break;
      case TransformKind::HeightShift:
      case TransformKind::WidthShift: CHECK(std::abs(d.param) <= 0.2); break;
      case TransformKind::Zoom: CHECK((d.param >= 1.0 && d.param <= 1.1)); break;
      case TransformKind::Shear: CHECK(std::abs(d.param) <= 20.0); break;
      default: break;
    }
  }
  for (int count : seen) CHECK(count > 200);
  p.horizontal_flip = p.vertical_flip = false;
  for (std::size_t e = 0; e < 200; ++e) {
    auto k = draw_transform(p, e, 1).kind;
    CHECK(k != TransformKind::FlipH);
    CHECK(k != TransformKind::FlipV);
  }
}

TEST_CASE("augment_split") {
  Rng rng(8);
  std::vector<AugmentSource> sources;
  for (std::size_t i = 0; i < 6; ++i) sources.push_back({i * 3, LabelId(static_cast<int>(i % 2)), random_image(10, 10, rng)});
  AugmentPolicy p;
  p.seed = 21;
  SUBCASE("multiplier 1 doubles the split and keeps originals and labels") {
    auto out = augment_split(sources, p);
    REQUIRE(out.size() == 12);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK_FALSE(out[2 * i].copy.has_value());
      CHECK(out[2 * i].image == sources[i].image);
      CHECK(out[2 * i + 1].label == sources[i].label);
      CHECK(out[2 * i + 1].entry_id == sources[i].entry_id);
    }
  }
  SUBCASE("seeded output is byte-reproducible") {
    p.multiplier = 3;
    auto a = augment_split(sources, p), b = augment_split(sources, p);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(encode_afim(to_raw(a[i].image)) == encode_afim(to_raw(b[i].image)));
      CHECK(a[i].image == b[i].image);
    }
    p.seed = 22;
    auto c = augment_split(sources, p);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) differs |= !(a[i].image == c[i].image);
    CHECK(differs);
  }
  SUBCASE("per-class targets reproduce the 376/313 training counts") {
    std::vector<LabelId> labels;
    for (int i = 0; i < 47; ++i) labels.emplace_back(0);
    for (int i = 0; i < 39; ++i) labels.emplace_back(1);
    p.class_targets = std::array<std::size_t, 2>{376, 313};
    auto copies = copies_per_source(labels, p);
    std::array<std::size_t, 2> totals{0, 0};
    for (std::size_t i = 0; i < labels.size(); ++i) totals[static_cast<std::size_t>(labels[i].value())] += 1 + copies[i];
    CHECK(totals[0] == 376);
    CHECK(totals[1] == 313);
    CHECK(totals[0] + totals[1] == 689);
    p.class_targets = std::array<std::size_t, 2>{10, 313};
    CHECK_THROWS_AS(copies_per_source(labels, p), ConfigError);
  }
  SUBCASE("invalid multiplier") {
    p.multiplier = 0;
    CHECK_THROWS_AS(augment_split(sources, p), ConfigError);
  }
}
