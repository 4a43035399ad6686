#include "hemafuse/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hemafuse/rng.hpp"

namespace hemafuse {

ImageTensor scale_features(const RawImage& raw) {
  ImageTensor out(raw.height, raw.width, raw.channels);
  for (std::size_t i = 0; i < raw.pixels.size(); ++i)
    out.data()[static_cast<Index>(i)] = static_cast<double>(raw.pixels[i]) / 255.0;
  return out;
}

namespace {

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

/// Bilinear sampling with coordinates clamped into [lo, hi] per axis, which
/// gives nearest-edge fill for anything outside the support.
class Sampler {
 public:
  explicit Sampler(const ImageTensor& img) : img_(img) {}

  void sample(double sy, double sx, double* out, double ylo, double yhi, double xlo, double xhi) const {
    sy = std::clamp(sy, ylo, yhi);
    sx = std::clamp(sx, xlo, xhi);
    const int y0 = static_cast<int>(std::floor(sy));
    const int x0 = static_cast<int>(std::floor(sx));
    const int y1 = std::min(y0 + 1, img_.height() - 1);
    const int x1 = std::min(x0 + 1, img_.width() - 1);
    const double fy = sy - y0, fx = sx - x0;
    for (int c = 0; c < img_.channels(); ++c) {
      const double a = img_.at(y0, x0, c), b = img_.at(y0, x1, c);
      const double d = img_.at(y1, x0, c), e = img_.at(y1, x1, c);
      const double top = a + fx * (b - a);
      const double bottom = d + fx * (e - d);
      out[c] = std::clamp(top + fy * (bottom - top), 0.0, 1.0);
    }
  }

  void sample(double sy, double sx, double* out) const {
    sample(sy, sx, out, 0.0, img_.height() - 1.0, 0.0, img_.width() - 1.0);
  }

 private:
  const ImageTensor& img_;
};

double* pixel(ImageTensor& img, int y, int x) { return &img.at(y, x, 0); }

template <typename Map>
ImageTensor remap(const ImageTensor& img, Map&& map) {
  ImageTensor out(img.height(), img.width(), img.channels());
  const Sampler s(img);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const auto [sy, sx] = map(y, x);
      s.sample(sy, sx, pixel(out, y, x));
    }
  return out;
}

void require_nonempty(const ImageTensor& img, const char* op) {
  if (img.empty()) throw ArgumentError(std::string(op) + ": empty image");
}

}  // namespace

ImageTensor resize(const ImageTensor& img, int out_h, int out_w) {
  require_nonempty(img, "resize");
  if (out_h <= 0 || out_w <= 0)
    throw ArgumentError("resize: target must be positive, got " + std::to_string(out_h) + "x" +
                        std::to_string(out_w));
  if (out_h == img.height() && out_w == img.width()) return img;
  const double sy = static_cast<double>(img.height()) / out_h;
  const double sx = static_cast<double>(img.width()) / out_w;
  ImageTensor out(out_h, out_w, img.channels());
  const Sampler s(img);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) s.sample((y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5, pixel(out, y, x));
  return out;
}

ImageTensor rotate(const ImageTensor& img, double angle_deg) {
  require_nonempty(img, "rotate");
  if (std::abs(angle_deg) > 180.0) throw ArgumentError("rotate: |angle| must be <= 180");
  if (angle_deg == 0.0) return img;
  const double cy = (img.height() - 1) / 2.0, cx = (img.width() - 1) / 2.0;
  const double co = std::cos(deg2rad(angle_deg)), si = std::sin(deg2rad(angle_deg));
  return remap(img, [&](int y, int x) {
    const double dy = y - cy, dx = x - cx;
    return std::pair{cy - si * dx + co * dy, cx + co * dx + si * dy};
  });
}

ImageTensor shift(const ImageTensor& img, double dx_frac, double dy_frac) {
  require_nonempty(img, "shift");
  if (std::abs(dx_frac) > 1.0 || std::abs(dy_frac) > 1.0) throw ArgumentError("shift: |fraction| must be <= 1");
  const long dx = std::lround(dx_frac * img.width());
  const long dy = std::lround(dy_frac * img.height());
  ImageTensor out(img.height(), img.width(), img.channels());
  for (int y = 0; y < img.height(); ++y) {
    const int sy = static_cast<int>(std::clamp<long>(y - dy, 0, img.height() - 1));
    for (int x = 0; x < img.width(); ++x) {
      const int sx = static_cast<int>(std::clamp<long>(x - dx, 0, img.width() - 1));
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

ImageTensor zoom(const ImageTensor& img, double factor) {
  require_nonempty(img, "zoom");
  if (!(factor > 0.0)) throw ArgumentError("zoom: factor must be positive");
  if (factor == 1.0) return img;
  // Central crop of extent dim/factor, resampled back to dim with the same
  // half-pixel convention as resize().
  const double h = img.height(), w = img.width();
  const double ylo = (h - h / factor) / 2.0, xlo = (w - w / factor) / 2.0;
  const double yhi = std::min(ylo + h / factor - 1.0, h - 1.0);
  const double xhi = std::min(xlo + w / factor - 1.0, w - 1.0);
  ImageTensor out(img.height(), img.width(), img.channels());
  const Sampler s(img);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      s.sample(h / 2 - 0.5 + (y + 0.5 - h / 2) / factor, w / 2 - 0.5 + (x + 0.5 - w / 2) / factor,
               pixel(out, y, x), std::max(ylo, 0.0), std::max(yhi, 0.0), std::max(xlo, 0.0),
               std::max(xhi, 0.0));
  return out;
}

ImageTensor shear(const ImageTensor& img, double angle_deg) {
  require_nonempty(img, "shear");
  if (std::abs(angle_deg) >= 90.0) throw ArgumentError("shear: |angle| must be < 90");
  if (angle_deg == 0.0) return img;
  const double cy = (img.height() - 1) / 2.0;
  const double k = std::tan(deg2rad(angle_deg));
  return remap(img, [&](int y, int x) { return std::pair{static_cast<double>(y), x - k * (y - cy)}; });
}

ImageTensor flip_h(const ImageTensor& img) {
  ImageTensor out(img);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(y, img.width() - 1 - x, c);
  return out;
}

ImageTensor flip_v(const ImageTensor& img) {
  ImageTensor out(img);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(img.height() - 1 - y, x, c);
  return out;
}

std::string to_string(TransformKind k) {
  switch (k) {
    case TransformKind::Rotate: return "rotate";
    case TransformKind::HeightShift: return "height_shift";
    case TransformKind::WidthShift: return "width_shift";
    case TransformKind::Zoom: return "zoom";
    case TransformKind::FlipH: return "flip_h";
    case TransformKind::FlipV: return "flip_v";
    case TransformKind::Shear: return "shear";
  }
  return "?";
}

void AugmentPolicy::validate() const {
  if (multiplier < 1) throw ConfigError("augmentation multiplier must be >= 1");
  if (rotation_deg < 0 || rotation_deg > 180) throw ConfigError("rotation_deg must lie in [0, 180]");
  if (height_shift_frac < 0 || height_shift_frac > 1 || width_shift_frac < 0 || width_shift_frac > 1)
    throw ConfigError("shift fractions must lie in [0, 1]");
  if (zoom_frac < 0) throw ConfigError("zoom_frac must be >= 0");
  if (shear_deg < 0 || shear_deg >= 90) throw ConfigError("shear_deg must lie in [0, 90)");
}

std::vector<TransformKind> AugmentPolicy::enabled() const {
  std::vector<TransformKind> out;
  for (auto k : kAllTransforms)
    if ((k != TransformKind::FlipH || horizontal_flip) && (k != TransformKind::FlipV || vertical_flip))
      out.push_back(k);
  return out;
}

TransformDraw draw_transform(const AugmentPolicy& p, std::size_t entry_id, std::size_t copy) {
  Rng rng(derive_seed(p.seed, {entry_id, copy}));
  const auto kinds = p.enabled();
  TransformDraw d{kinds[rng.below(kinds.size())], 0.0};
  switch (d.kind) {
    case TransformKind::Rotate: d.param = rng.uniform(-p.rotation_deg, p.rotation_deg); break;
    case TransformKind::HeightShift: d.param = rng.uniform(-p.height_shift_frac, p.height_shift_frac); break;
    case TransformKind::WidthShift: d.param = rng.uniform(-p.width_shift_frac, p.width_shift_frac); break;
    case TransformKind::Zoom: d.param = rng.uniform(1.0, 1.0 + p.zoom_frac); break;
    case TransformKind::Shear: d.param = rng.uniform(-p.shear_deg, p.shear_deg); break;
    case TransformKind::FlipH:
    case TransformKind::FlipV: break;
  }
  return d;
}

ImageTensor apply_transform(const ImageTensor& img, const TransformDraw& t) {
  switch (t.kind) {
    case TransformKind::Rotate: return rotate(img, t.param);
    case TransformKind::HeightShift: return shift(img, 0.0, t.param);
    case TransformKind::WidthShift: return shift(img, t.param, 0.0);
    case TransformKind::Zoom: return zoom(img, t.param);
    case TransformKind::FlipH: return flip_h(img);
    case TransformKind::FlipV: return flip_v(img);
    case TransformKind::Shear: return shear(img, t.param);
  }
  return img;
}

std::vector<std::size_t> copies_per_source(const std::vector<LabelId>& labels, const AugmentPolicy& p) {
  p.validate();
  std::vector<std::size_t> copies(labels.size(), static_cast<std::size_t>(p.multiplier));
  if (!p.class_targets) return copies;
  for (int c = 0; c < 2; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i].value() == c) members.push_back(i);
    const std::size_t target = (*p.class_targets)[static_cast<std::size_t>(c)];
    if (target < members.size() || (members.empty() && target > 0))
      throw ConfigError("augmentation target " + std::to_string(target) + " for class " + std::to_string(c) +
                        " is below its " + std::to_string(members.size()) + " originals");
    if (members.empty()) continue;
    const std::size_t extra = target - members.size();
    for (std::size_t k = 0; k < members.size(); ++k)
      copies[members[k]] = extra / members.size() + (k < extra % members.size() ? 1 : 0);
  }
  return copies;
}

std::vector<AugmentedSample> augment_split(const std::vector<AugmentSource>& sources, const AugmentPolicy& p) {
  std::vector<LabelId> labels;
  for (const auto& s : sources) labels.push_back(s.label);
  const auto copies = copies_per_source(labels, p);
  std::vector<AugmentedSample> out;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const auto& s = sources[i];
    out.push_back({s.entry_id, std::nullopt, std::nullopt, s.label, s.image});
    for (std::size_t k = 0; k < copies[i]; ++k) {
      const auto t = draw_transform(p, s.entry_id, k);
      out.push_back({s.entry_id, k, t, s.label, apply_transform(s.image, t)});
    }
  }
  return out;
}

}  // namespace hemafuse
