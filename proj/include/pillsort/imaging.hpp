#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pillsort/error.hpp"

namespace pillsort {

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct BBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long long area() const { return empty() ? 0 : static_cast<long long>(width()) * height(); }
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

double iou(const BBox& a, const BBox& b);

// 8-bit raster, row-major, channel-interleaved. One or three channels.
class RasterImage {
 public:
  RasterImage() = default;
  RasterImage(int width, int height, int channels, std::uint8_t fill = 0);
  RasterImage(int width, int height, int channels, std::vector<std::uint8_t> data);

  static RasterImage filled(int width, int height, Rgb color);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }

  std::uint8_t& at(int x, int y, int c = 0) {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  Rgb rgb(int x, int y) const;
  void set_rgb(int x, int y, Rgb v);

  std::span<std::uint8_t> data() { return data_; }
  std::span<const std::uint8_t> data() const { return data_; }

  friend bool operator==(const RasterImage&, const RasterImage&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> data_;
};

// Plane-major float stack with samples in [0, 1].
class PlaneStack {
 public:
  PlaneStack() = default;
  PlaneStack(int width, int height, int planes, float fill = 0.0f);

  int width() const { return width_; }
  int height() const { return height_; }
  int planes() const { return planes_; }

  float& at(int plane, int x, int y) {
    return data_[(static_cast<std::size_t>(plane) * height_ + y) * width_ + x];
  }
  float at(int plane, int x, int y) const {
    return data_[(static_cast<std::size_t>(plane) * height_ + y) * width_ + x];
  }
  std::span<float> plane(int p);
  std::span<const float> plane(int p) const;
  std::span<const float> data() const { return data_; }

  friend bool operator==(const PlaneStack&, const PlaneStack&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int planes_ = 0;
  std::vector<float> data_;
};

class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height, bool fill = false);

  int width() const { return width_; }
  int height() const { return height_; }

  bool get(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool v = true) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
  // Out-of-range reads are background.
  bool get_or_false(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_ && get(x, y);
  }

  std::size_t count() const;
  bool any() const { return count() > 0; }
  std::span<const std::uint8_t> bits() const { return bits_; }

  BinaryMask complement() const;
  bool subset_of(const BinaryMask& other) const;
  BBox extent() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Fully set square element of odd side.
class StructuringElement {
 public:
  explicit StructuringElement(int side);
  int side() const { return side_; }
  int radius() const { return side_ / 2; }

 private:
  int side_;
};

struct Component {
  int label = 0;
  long long area = 0;
  BBox bbox;
  double cx = 0.0;
  double cy = 0.0;
};

struct Labeling {
  int width = 0;
  int height = 0;
  std::vector<int> labels;  // 0 = background, otherwise 1..components.size()
  std::vector<Component> components;

  int at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

RasterImage to_grayscale(const RasterImage& img);

// Sobel magnitude normalized by its theoretical maximum; one plane.
PlaneStack gradient_magnitude(const RasterImage& gray);

BinaryMask erode(const BinaryMask& mask, const StructuringElement& se);
BinaryMask dilate(const BinaryMask& mask, const StructuringElement& se);
BinaryMask open(const BinaryMask& mask, const StructuringElement& se);
BinaryMask close(const BinaryMask& mask, const StructuringElement& se);

BinaryMask remove_small(const BinaryMask& mask, long long min_area);

// 8-connected labeling; components sorted by (bbox.y0, bbox.x0), labels 1..n.
Labeling label_components(const BinaryMask& mask);
std::vector<Component> connected_components(const BinaryMask& mask);

BinaryMask component_mask(const Labeling& labeling, int label);

double dice(const BinaryMask& a, const BinaryMask& b);

BinaryMask threshold(const PlaneStack& scores, float t, int plane = 0);

}  // namespace pillsort
