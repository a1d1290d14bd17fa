#include "pillsort/transform.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace pillsort {

std::uint8_t clamp_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

Point2 Homography::apply(Point2 p) const {
  const double w = m[6] * p.x + m[7] * p.y + m[8];
  return {(m[0] * p.x + m[1] * p.y + m[2]) / w, (m[3] * p.x + m[4] * p.y + m[5]) / w};
}

Homography Homography::inverse() const {
  const auto& a = m;
  const double c00 = a[4] * a[8] - a[5] * a[7];
  const double c01 = a[5] * a[6] - a[3] * a[8];
  const double c02 = a[3] * a[7] - a[4] * a[6];
  const double det = a[0] * c00 + a[1] * c01 + a[2] * c02;
  if (std::abs(det) < 1e-15) throw Error(Errc::DimensionMismatch, "singular homography");
  Homography inv;
  inv.m = {c00 / det,
           (a[2] * a[7] - a[1] * a[8]) / det,
           (a[1] * a[5] - a[2] * a[4]) / det,
           c01 / det,
           (a[0] * a[8] - a[2] * a[6]) / det,
           (a[2] * a[3] - a[0] * a[5]) / det,
           c02 / det,
           (a[1] * a[6] - a[0] * a[7]) / det,
           (a[0] * a[4] - a[1] * a[3]) / det};
  return inv;
}

Homography Homography::from_quads(const std::array<Point2, 4>& src, const std::array<Point2, 4>& dst) {
  // Eight unknowns with h22 = 1; Gaussian elimination with partial pivoting.
  double a[8][9] = {};
  for (int i = 0; i < 4; ++i) {
    const double x = src[i].x, y = src[i].y, u = dst[i].x, v = dst[i].y;
    double* r0 = a[2 * i];
    double* r1 = a[2 * i + 1];
    r0[0] = x; r0[1] = y; r0[2] = 1; r0[6] = -u * x; r0[7] = -u * y; r0[8] = u;
    r1[3] = x; r1[4] = y; r1[5] = 1; r1[6] = -v * x; r1[7] = -v * y; r1[8] = v;
  }
  for (int col = 0; col < 8; ++col) {
    int piv = col;
    for (int r = col + 1; r < 8; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (std::abs(a[piv][col]) < 1e-12) throw Error(Errc::DimensionMismatch, "degenerate quad");
    if (piv != col)
      for (int k = 0; k < 9; ++k) std::swap(a[col][k], a[piv][k]);
    for (int r = 0; r < 8; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int k = col; k < 9; ++k) a[r][k] -= f * a[col][k];
    }
  }
  Homography h;
  for (int i = 0; i < 8; ++i) h.m[i] = a[i][8] / a[i][i];
  h.m[8] = 1.0;
  return h;
}

RasterImage crop(const RasterImage& img, const BBox& box) {
  if (box.empty() || box.x0 < 0 || box.y0 < 0 || box.x1 > img.width() || box.y1 > img.height())
    throw Error(Errc::InvalidBbox, "crop box outside image");
  RasterImage out(box.width(), box.height(), img.channels());
  for (int y = 0; y < box.height(); ++y)
    for (int x = 0; x < box.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(x, y, c) = img.at(box.x0 + x, box.y0 + y, c);
  return out;
}

BinaryMask crop(const BinaryMask& mask, const BBox& box) {
  if (box.empty() || box.x0 < 0 || box.y0 < 0 || box.x1 > mask.width() || box.y1 > mask.height())
    throw Error(Errc::InvalidBbox, "crop box outside mask");
  BinaryMask out(box.width(), box.height());
  for (int y = 0; y < box.height(); ++y)
    for (int x = 0; x < box.width(); ++x) out.set(x, y, mask.get(box.x0 + x, box.y0 + y));
  return out;
}

namespace {

// Bilinear sample at continuous pixel coordinates (pixel centers on integers),
// replicate border.
double sample(const RasterImage& img, double x, double y, int c) {
  const int w = img.width(), h = img.height();
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = img.at(x0, y0, c) * (1 - fx) + img.at(x1, y0, c) * fx;
  const double bot = img.at(x0, y1, c) * (1 - fx) + img.at(x1, y1, c) * fx;
  return top * (1 - fy) + bot * fy;
}

double sample(const PlaneStack& p, double x, double y, int plane) {
  const int w = p.width(), h = p.height();
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = p.at(plane, x0, y0) * (1 - fx) + p.at(plane, x1, y0) * fx;
  const double bot = p.at(plane, x0, y1) * (1 - fx) + p.at(plane, x1, y1) * fx;
  return top * (1 - fy) + bot * fy;
}

std::vector<double> gaussian_kernel(double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * r + 1);
  double s = 0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-(i * i) / (2 * sigma * sigma));
    s += k[i + r];
  }
  for (auto& v : k) v /= s;
  return k;
}

// Separable convolution on a float buffer of w*h samples, replicate border.
void blur_buffer(std::vector<double>& buf, int w, int h, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(buf.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * buf[static_cast<std::size_t>(y) * w + std::clamp(x + i, 0, w - 1)];
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
      buf[static_cast<std::size_t>(y) * w + x] = acc;
    }
}

}  // namespace

RasterImage resize_bilinear(const RasterImage& img, int width, int height) {
  RasterImage out(width, height, img.channels());
  const double sx = static_cast<double>(img.width()) / width;
  const double sy = static_cast<double>(img.height()) / height;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) * sx - 0.5, v = (y + 0.5) * sy - 0.5;
      for (int c = 0; c < img.channels(); ++c) out.at(x, y, c) = clamp_u8(sample(img, u, v, c));
    }
  return out;
}

RasterImage flip_horizontal(const RasterImage& img) {
  RasterImage out(img.width(), img.height(), img.channels());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(img.width() - 1 - x, y, c) = img.at(x, y, c);
  return out;
}

RasterImage flip_vertical(const RasterImage& img) {
  RasterImage out(img.width(), img.height(), img.channels());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(x, img.height() - 1 - y, c) = img.at(x, y, c);
  return out;
}

RasterImage rotate_quarter(const RasterImage& img, int quarter_turns) {
  const int q = ((quarter_turns % 4) + 4) % 4;
  if (q == 0) return img;
  const int w = img.width(), h = img.height();
  const bool swap = q % 2 == 1;
  RasterImage out(swap ? h : w, swap ? w : h, img.channels());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int nx = 0, ny = 0;
      switch (q) {
        case 1: nx = y; ny = w - 1 - x; break;
        case 2: nx = w - 1 - x; ny = h - 1 - y; break;
        default: nx = h - 1 - y; ny = x; break;
      }
      for (int c = 0; c < img.channels(); ++c) out.at(nx, ny, c) = img.at(x, y, c);
    }
  return out;
}

RasterImage rotate_same_canvas(const RasterImage& img, double degrees) {
  const double t = degrees * std::numbers::pi / 180.0;
  const double ct = std::cos(t), st = std::sin(t);
  const double cx = (img.width() - 1) / 2.0, cy = (img.height() - 1) / 2.0;
  RasterImage out(img.width(), img.height(), img.channels());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const double dx = x - cx, dy = y - cy;
      const double u = ct * dx + st * dy + cx, v = -st * dx + ct * dy + cy;
      for (int c = 0; c < img.channels(); ++c) out.at(x, y, c) = clamp_u8(sample(img, u, v, c));
    }
  return out;
}

MaskedRaster rotate_scale(const RasterImage& pixels, const BinaryMask& mask, double degrees, double scale) {
  if (pixels.channels() != 3) throw Error(Errc::ChannelMismatch, "rotate_scale expects 3 channels");
  if (pixels.width() != mask.width() || pixels.height() != mask.height())
    throw Error(Errc::DimensionMismatch, "pixels and mask differ in size");
  const double t = degrees * std::numbers::pi / 180.0;
  const double ct = std::cos(t), st = std::sin(t);
  const double sw = pixels.width() * scale, sh = pixels.height() * scale;
  const int ow = static_cast<int>(std::ceil(std::abs(sw * ct) + std::abs(sh * st))) + 2;
  const int oh = static_cast<int>(std::ceil(std::abs(sw * st) + std::abs(sh * ct))) + 2;
  const double icx = pixels.width() / 2.0, icy = pixels.height() / 2.0;
  const double ocx = ow / 2.0, ocy = oh / 2.0;

  RasterImage out(ow, oh, 3);
  BinaryMask om(ow, oh);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      const double dx = (x + 0.5 - ocx) / scale, dy = (y + 0.5 - ocy) / scale;
      const double u = ct * dx + st * dy + icx - 0.5, v = -st * dx + ct * dy + icy - 0.5;
      const int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
      const double fx = u - x0, fy = v - y0;
      double cov = 0, acc[3] = {0, 0, 0};
      for (int j = 0; j < 2; ++j)
        for (int i = 0; i < 2; ++i) {
          const int sx = x0 + i, sy = y0 + j;
          if (!mask.get_or_false(sx, sy)) continue;
          const double wgt = (i ? fx : 1 - fx) * (j ? fy : 1 - fy);
          cov += wgt;
          for (int c = 0; c < 3; ++c) acc[c] += wgt * pixels.at(sx, sy, c);
        }
      if (cov >= 0.5) {
        om.set(x, y);
        for (int c = 0; c < 3; ++c) out.at(x, y, c) = clamp_u8(acc[c] / cov);
      }
    }
  const BBox ext = om.extent();
  if (ext.empty()) return {out, om};
  return {crop(out, ext), crop(om, ext)};
}

PlaneStack gaussian_blur(const PlaneStack& plane, double sigma) {
  if (sigma <= 0) return plane;
  const auto k = gaussian_kernel(sigma);
  PlaneStack out(plane.width(), plane.height(), plane.planes());
  std::vector<double> buf(static_cast<std::size_t>(plane.width()) * plane.height());
  for (int p = 0; p < plane.planes(); ++p) {
    const auto src = plane.plane(p);
    std::copy(src.begin(), src.end(), buf.begin());
    blur_buffer(buf, plane.width(), plane.height(), k);
    auto dst = out.plane(p);
    for (std::size_t i = 0; i < buf.size(); ++i) dst[i] = static_cast<float>(buf[i]);
  }
  return out;
}

RasterImage gaussian_blur(const RasterImage& img, double sigma) {
  if (sigma <= 0) return img;
  const auto k = gaussian_kernel(sigma);
  const int w = img.width(), h = img.height(), ch = img.channels();
  RasterImage out(w, h, ch);
  std::vector<double> buf(static_cast<std::size_t>(w) * h);
  for (int c = 0; c < ch; ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) buf[static_cast<std::size_t>(y) * w + x] = img.at(x, y, c);
    blur_buffer(buf, w, h, k);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(x, y, c) = clamp_u8(buf[static_cast<std::size_t>(y) * w + x]);
  }
  return out;
}

RasterImage warp_perspective(const RasterImage& img, const Homography& h) {
  const Homography inv = h.inverse();
  RasterImage out(img.width(), img.height(), img.channels());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const Point2 s = inv.apply({x + 0.5, y + 0.5});
      for (int c = 0; c < img.channels(); ++c) out.at(x, y, c) = clamp_u8(sample(img, s.x - 0.5, s.y - 0.5, c));
    }
  return out;
}

PlaneStack warp_perspective(const PlaneStack& plane, const Homography& h) {
  const Homography inv = h.inverse();
  PlaneStack out(plane.width(), plane.height(), plane.planes());
  for (int y = 0; y < plane.height(); ++y)
    for (int x = 0; x < plane.width(); ++x) {
      const Point2 s = inv.apply({x + 0.5, y + 0.5});
      for (int p = 0; p < plane.planes(); ++p)
        out.at(p, x, y) = static_cast<float>(sample(plane, s.x - 0.5, s.y - 0.5, p));
    }
  return out;
}

RasterImage unsharp(const RasterImage& img, double amount, double sigma) {
  if (amount == 0) return img;
  const RasterImage soft = gaussian_blur(img, sigma);
  RasterImage out(img.width(), img.height(), img.channels());
  const auto src = img.data();
  const auto blr = soft.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = clamp_u8(src[i] + amount * (static_cast<double>(src[i]) - blr[i]));
  return out;
}

RasterImage adjust_contrast_brightness(const RasterImage& img, double contrast, double brightness) {
  if (contrast == 1.0 && brightness == 0.0) return img;
  RasterImage out(img.width(), img.height(), img.channels());
  const auto src = img.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = clamp_u8((src[i] - 128.0) * contrast + 128.0 + brightness);
  return out;
}

}  // namespace pillsort
