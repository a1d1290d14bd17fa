#pragma once

#include <array>

#include "pillsort/imaging.hpp"

namespace pillsort {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// Row-major 3x3 projective transform.
struct Homography {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  Point2 apply(Point2 p) const;
  Homography inverse() const;

  // Maps src[i] onto dst[i]; throws DimensionMismatch on a degenerate quad.
  static Homography from_quads(const std::array<Point2, 4>& src, const std::array<Point2, 4>& dst);
};

RasterImage crop(const RasterImage& img, const BBox& box);
BinaryMask crop(const BinaryMask& mask, const BBox& box);

RasterImage resize_bilinear(const RasterImage& img, int width, int height);

RasterImage flip_horizontal(const RasterImage& img);
RasterImage flip_vertical(const RasterImage& img);
// Exact quarter turns, counter-clockwise.
RasterImage rotate_quarter(const RasterImage& img, int quarter_turns);
// Rotation about the image center on the same canvas; replicate border.
RasterImage rotate_same_canvas(const RasterImage& img, double degrees);

// Rotates and scales a masked raster about its center onto a canvas just
// large enough for the result. The mask is resampled bilinearly and kept
// where the interpolated coverage is >= 0.5.
struct MaskedRaster {
  RasterImage pixels;
  BinaryMask mask;
};
MaskedRaster rotate_scale(const RasterImage& pixels, const BinaryMask& mask, double degrees, double scale);

PlaneStack gaussian_blur(const PlaneStack& plane, double sigma);
RasterImage gaussian_blur(const RasterImage& img, double sigma);

// out(p) = in(H^-1 p) with bilinear sampling and replicate border.
RasterImage warp_perspective(const RasterImage& img, const Homography& h);
PlaneStack warp_perspective(const PlaneStack& plane, const Homography& h);

RasterImage unsharp(const RasterImage& img, double amount, double sigma = 1.0);
RasterImage adjust_contrast_brightness(const RasterImage& img, double contrast, double brightness);

std::uint8_t clamp_u8(double v);

}  // namespace pillsort
