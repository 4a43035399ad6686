#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hemafuse/image.hpp"
#include "hemafuse/ingest.hpp"

namespace hemafuse {

/// Bilinear resize with half-pixel sample centers. Same-size input is
/// returned bitwise unchanged.
ImageTensor resize(const ImageTensor& img, int out_h, int out_w);

/// Geometric transforms. Every output has the input's shape; pixels that map
/// outside the source take the value of the nearest edge pixel.
ImageTensor rotate(const ImageTensor& img, double angle_deg);
ImageTensor shift(const ImageTensor& img, double dx_frac, double dy_frac);
ImageTensor zoom(const ImageTensor& img, double factor);
ImageTensor shear(const ImageTensor& img, double angle_deg);
ImageTensor flip_h(const ImageTensor& img);
ImageTensor flip_v(const ImageTensor& img);

enum class TransformKind { Rotate, HeightShift, WidthShift, Zoom, FlipH, FlipV, Shear };
inline constexpr std::array<TransformKind, 7> kAllTransforms = {
    TransformKind::Rotate, TransformKind::HeightShift, TransformKind::WidthShift, TransformKind::Zoom,
    TransformKind::FlipH,  TransformKind::FlipV,       TransformKind::Shear};

std::string to_string(TransformKind k);

struct AugmentPolicy {
  double rotation_deg = 45.0;
  double height_shift_frac = 0.20;
  double width_shift_frac = 0.20;
  double zoom_frac = 0.10;
  bool horizontal_flip = true;
  bool vertical_flip = true;
  double shear_deg = 20.0;
  /// Augmented copies per source image.
  int multiplier = 1;
  /// When set, overrides `multiplier`: total output size (originals included)
  /// per class. Copies are spread as evenly as possible over that class's
  /// sources, earlier sources taking the remainder.
  std::optional<std::array<std::size_t, 2>> class_targets;
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<TransformKind> enabled() const;
};

/// A transform with its drawn parameter (angle, fraction or factor).
struct TransformDraw {
  TransformKind kind = TransformKind::Rotate;
  double param = 0.0;
};

/// Draws the transform for (entry_id, copy) from the policy's seeded stream.
TransformDraw draw_transform(const AugmentPolicy& policy, std::size_t entry_id, std::size_t copy);
ImageTensor apply_transform(const ImageTensor& img, const TransformDraw& t);

struct AugmentSource {
  std::size_t entry_id = 0;
  LabelId label;
  ImageTensor image;
};

struct AugmentedSample {
  std::size_t entry_id = 0;
  /// Empty for the retained original.
  std::optional<std::size_t> copy;
  std::optional<TransformDraw> transform;
  LabelId label;
  ImageTensor image;
};

/// Number of augmented copies for each source under the policy.
std::vector<std::size_t> copies_per_source(const std::vector<LabelId>& labels, const AugmentPolicy& policy);

/// Each original followed by its augmented copies, in source order.
std::vector<AugmentedSample> augment_split(const std::vector<AugmentSource>& sources,
                                           const AugmentPolicy& policy);

}  // namespace hemafuse
