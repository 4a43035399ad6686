#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "hemafuse/errors.hpp"
#include "hemafuse/tensor.hpp"

namespace hemafuse {

/// Decoded 8-bit raster, H x W x C row-major, C = 3 (RGB) after loading.
struct RawImage {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const RawImage&) const = default;
};

/// H x W x C image with real intensities in [0, 1].
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int height, int width, int channels, double fill = 0.0)
      : h_(height), w_(width), c_(channels) {
    if (height <= 0 || width <= 0 || channels <= 0)
      throw ArgumentError("image dimensions must be positive");
    data_ = Eigen::ArrayXd::Constant(static_cast<Index>(height) * width * channels, fill);
  }

  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return c_; }
  bool empty() const { return data_.size() == 0; }

  double& at(int y, int x, int c) { return data_[(static_cast<Index>(y) * w_ + x) * c_ + c]; }
  double at(int y, int x, int c) const { return data_[(static_cast<Index>(y) * w_ + x) * c_ + c]; }

  Eigen::ArrayXd& data() { return data_; }
  const Eigen::ArrayXd& data() const { return data_; }

  bool same_shape(const ImageTensor& o) const { return h_ == o.h_ && w_ == o.w_ && c_ == o.c_; }
  bool operator==(const ImageTensor& o) const {
    return same_shape(o) && (data_ == o.data_).all();
  }

 private:
  int h_ = 0, w_ = 0, c_ = 0;
  Eigen::ArrayXd data_;
};

/// Divides every intensity by 255.
ImageTensor scale_features(const RawImage& raw);

/// Stacks images of identical shape into an NHWC batch.
template <typename Scalar>
Tensor<Scalar> stack_images(const std::vector<const ImageTensor*>& images) {
  if (images.empty()) throw ArgumentError("stack_images: empty batch");
  const ImageTensor& first = *images.front();
  const Index per = first.data().size();
  Tensor<Scalar> out({static_cast<Index>(images.size()), first.height(), first.width(), first.channels()});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i]->same_shape(first))
      throw ShapeError("stack_images: image " + std::to_string(i) + " has a different shape");
    out.data().segment(static_cast<Index>(i) * per, per) = images[i]->data().template cast<Scalar>();
  }
  return out;
}

}  // namespace hemafuse
