#include "hemafuse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "hemafuse/ingest.hpp"
#include "hemafuse/rng.hpp"

namespace hemafuse {

namespace {

using Rgb = std::array<double, 3>;

struct Canvas {
  int size;
  std::vector<Rgb> px;

  Canvas(int n, const Rgb& bg) : size(n), px(static_cast<std::size_t>(n) * n, bg) {}

  /// Blends `color` in with per-pixel opacity alpha(y, x).
  template <typename Alpha>
  void paint(const Rgb& color, Alpha&& alpha) {
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double a = std::clamp(alpha(y, x), 0.0, 1.0);
        if (a <= 0.0) continue;
        auto& p = px[static_cast<std::size_t>(y) * size + x];
        for (int c = 0; c < 3; ++c) p[c] += a * (color[c] - p[c]);
      }
  }
};

Rgb jitter(const Rgb& base, Rng& rng, double amount) {
  Rgb out = base;
  const double shift = rng.uniform(-amount, amount);
  for (auto& v : out) v = std::clamp(v + shift + rng.uniform(-amount, amount) / 2, 0.0, 1.0);
  return out;
}

}  // namespace

RawImage synth_image(int label, int size, std::uint64_t seed) {
  if (label != 0 && label != 1) throw ArgumentError("synth_image: label must be 0 or 1");
  if (size < 16) throw ArgumentError("synth_image: size must be >= 16");
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(size)}));
  Canvas cv(size, jitter({0.90, 0.82, 0.86}, rng, 0.04));
  const double s = size / 64.0;

  // Platelet-like specks appear in both classes.
  const int specks = static_cast<int>(rng.below(4));
  for (int k = 0; k < specks; ++k) {
    const double cy = rng.uniform(0, size), cx = rng.uniform(0, size), r = rng.uniform(1.0, 2.0) * s;
    cv.paint(jitter({0.65, 0.45, 0.70}, rng, 0.05), [&](int y, int x) {
      return std::hypot(y - cy, x - cx) <= r ? 0.7 : 0.0;
    });
  }

  const int cells = 1 + static_cast<int>(rng.below(2));
  for (int k = 0; k < cells; ++k) {
    const double r = rng.uniform(8.0, 13.0) * s;
    const double cy = rng.uniform(r + 1, size - r - 1), cx = rng.uniform(r + 1, size - r - 1);
    if (label == 0) {
      const double sigma = r / 1.8;
      // Dark core so that intensity alone does not separate the classes.
      const auto color = jitter({0.32, 0.16, 0.46}, rng, 0.06);
      Rng tex(rng.next_u64());
      std::vector<double> grain(static_cast<std::size_t>(size) * size);
      for (auto& g : grain) g = 0.4 + 1.2 * tex.uniform();
      cv.paint(color, [&](int y, int x) {
        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        return 0.95 * std::exp(-d2 / (2 * sigma * sigma)) * grain[static_cast<std::size_t>(y) * size + x];
      });
    } else {
      const double width = rng.uniform(1.2, 2.0) * s;
      cv.paint(jitter({0.62, 0.42, 0.70}, rng, 0.06), [&](int y, int x) {
        const double d = std::hypot(y - cy, x - cx) - r;
        return 0.85 * std::exp(-d * d / (2 * width * width));
      });
      const double rn = r * rng.uniform(0.35, 0.5);
      cv.paint(jitter({0.28, 0.12, 0.42}, rng, 0.05), [&](int y, int x) {
        const double d = std::hypot(y - cy, x - cx);
        return 0.95 * std::clamp(rn + 0.5 - d, 0.0, 1.0);
      });
    }
  }

  RawImage out{size, size, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size * 3)};
  for (std::size_t i = 0; i < cv.px.size(); ++i)
    for (int c = 0; c < 3; ++c) {
      const double v = cv.px[i][c] + 0.02 * rng.normal();
      out.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
  return out;
}

void write_synthetic_dataset(const std::filesystem::path& root, const std::array<std::string, 2>& class_dirs,
                             const SynthOptions& o) {
  if (o.per_class < 1) throw ConfigError("synth: per_class must be >= 1");
  for (int label = 0; label < 2; ++label)
    for (int i = 0; i < o.per_class; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "img_%05d.raw", i);
      save_afim(root / class_dirs[static_cast<std::size_t>(label)] / name,
                synth_image(label, o.size, derive_seed(o.seed, {static_cast<std::uint64_t>(i)})));
    }
}

}  // namespace hemafuse
