#include "pillsort/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <tuple>

namespace pillsort {

double iou(const BBox& a, const BBox& b) {
  BBox inter{std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
  const double i = static_cast<double>(inter.area());
  const double u = static_cast<double>(a.area() + b.area()) - i;
  return u > 0 ? i / u : 0.0;
}

RasterImage::RasterImage(int width, int height, int channels, std::uint8_t fill)
    : width_(width), height_(height), channels_(channels) {
  if (width < 1 || height < 1) throw Error(Errc::DimensionMismatch, "image dimensions must be >= 1");
  if (channels != 1 && channels != 3) throw Error(Errc::ChannelMismatch, "channels must be 1 or 3");
  data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

RasterImage::RasterImage(int width, int height, int channels, std::vector<std::uint8_t> data)
    : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
  if (width < 1 || height < 1) throw Error(Errc::DimensionMismatch, "image dimensions must be >= 1");
  if (channels != 1 && channels != 3) throw Error(Errc::ChannelMismatch, "channels must be 1 or 3");
  if (data_.size() != static_cast<std::size_t>(width) * height * channels)
    throw Error(Errc::DimensionMismatch, "data length does not match width*height*channels");
}

RasterImage RasterImage::filled(int width, int height, Rgb color) {
  RasterImage img(width, height, 3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) img.set_rgb(x, y, color);
  return img;
}

Rgb RasterImage::rgb(int x, int y) const {
  if (channels_ == 1) {
    const auto v = at(x, y);
    return {v, v, v};
  }
  return {at(x, y, 0), at(x, y, 1), at(x, y, 2)};
}

void RasterImage::set_rgb(int x, int y, Rgb v) {
  at(x, y, 0) = v.r;
  at(x, y, 1) = v.g;
  at(x, y, 2) = v.b;
}

PlaneStack::PlaneStack(int width, int height, int planes, float fill)
    : width_(width), height_(height), planes_(planes) {
  if (width < 1 || height < 1 || planes < 1)
    throw Error(Errc::DimensionMismatch, "plane stack dimensions must be >= 1");
  data_.assign(static_cast<std::size_t>(width) * height * planes, fill);
}

std::span<float> PlaneStack::plane(int p) {
  const auto n = static_cast<std::size_t>(width_) * height_;
  return std::span<float>(data_).subspan(static_cast<std::size_t>(p) * n, n);
}

std::span<const float> PlaneStack::plane(int p) const {
  const auto n = static_cast<std::size_t>(width_) * height_;
  return std::span<const float>(data_).subspan(static_cast<std::size_t>(p) * n, n);
}

BinaryMask::BinaryMask(int width, int height, bool fill) : width_(width), height_(height) {
  if (width < 1 || height < 1) throw Error(Errc::DimensionMismatch, "mask dimensions must be >= 1");
  bits_.assign(static_cast<std::size_t>(width) * height, fill ? 1 : 0);
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

BinaryMask BinaryMask::complement() const {
  BinaryMask out = *this;
  for (auto& b : out.bits_) b = b ? 0 : 1;
  return out;
}

bool BinaryMask::subset_of(const BinaryMask& other) const {
  if (width_ != other.width_ || height_ != other.height_)
    throw Error(Errc::DimensionMismatch, "mask sizes differ");
  for (std::size_t i = 0; i < bits_.size(); ++i)
    if (bits_[i] && !other.bits_[i]) return false;
  return true;
}

BBox BinaryMask::extent() const {
  BBox box{width_, height_, 0, 0};
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x)
      if (get(x, y)) {
        box.x0 = std::min(box.x0, x);
        box.y0 = std::min(box.y0, y);
        box.x1 = std::max(box.x1, x + 1);
        box.y1 = std::max(box.y1, y + 1);
      }
  if (box.empty()) return {};
  return box;
}

StructuringElement::StructuringElement(int side) : side_(side) {
  if (side < 1 || side % 2 == 0)
    throw Error(Errc::InvalidElement, "structuring element side must be odd and >= 1, got " + std::to_string(side));
}

RasterImage to_grayscale(const RasterImage& img) {
  if (img.channels() != 3) throw Error(Errc::ChannelMismatch, "to_grayscale expects 3 channels");
  RasterImage out(img.width(), img.height(), 1);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const double luma = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
      out.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(luma), 0L, 255L));
    }
  return out;
}

PlaneStack gradient_magnitude(const RasterImage& gray) {
  if (gray.channels() != 1) throw Error(Errc::ChannelMismatch, "gradient_magnitude expects 1 channel");
  const int w = gray.width();
  const int h = gray.height();
  PlaneStack out(w, h, 1);
  const double norm = 1020.0 * std::sqrt(2.0);
  auto px = [&](int x, int y) {
    return static_cast<int>(gray.at(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1)));
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int gx = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)) -
                     (px(x - 1, y - 1) + 2 * px(x - 1, y) + px(x - 1, y + 1));
      const int gy = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)) -
                     (px(x - 1, y - 1) + 2 * px(x, y - 1) + px(x + 1, y - 1));
      const double m = std::sqrt(static_cast<double>(gx) * gx + static_cast<double>(gy) * gy) / norm;
      out.at(0, x, y) = static_cast<float>(std::clamp(m, 0.0, 1.0));
    }
  return out;
}

namespace {

// Summed-area table with a zero row/column prepended.
class IntegralCount {
 public:
  explicit IntegralCount(const BinaryMask& m) : w_(m.width() + 1), sums_(static_cast<std::size_t>(w_) * (m.height() + 1), 0) {
    for (int y = 0; y < m.height(); ++y) {
      int row = 0;
      for (int x = 0; x < m.width(); ++x) {
        row += m.get(x, y) ? 1 : 0;
        sums_[idx(x + 1, y + 1)] = sums_[idx(x + 1, y)] + row;
      }
    }
  }

  // Count over the clipped window [x0, x1) x [y0, y1); caller clips.
  int count(int x0, int y0, int x1, int y1) const {
    return sums_[idx(x1, y1)] - sums_[idx(x0, y1)] - sums_[idx(x1, y0)] + sums_[idx(x0, y0)];
  }

 private:
  std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * w_ + x; }
  int w_;
  std::vector<int> sums_;
};

}  // namespace

BinaryMask erode(const BinaryMask& mask, const StructuringElement& se) {
  const int r = se.radius();
  const int w = mask.width();
  const int h = mask.height();
  BinaryMask out(w, h);
  const IntegralCount ic(mask);
  const int full = se.side() * se.side();
  for (int y = r; y < h - r; ++y)
    for (int x = r; x < w - r; ++x)
      if (ic.count(x - r, y - r, x + r + 1, y + r + 1) == full) out.set(x, y);
  return out;
}

BinaryMask dilate(const BinaryMask& mask, const StructuringElement& se) {
  const int r = se.radius();
  const int w = mask.width();
  const int h = mask.height();
  BinaryMask out(w, h);
  const IntegralCount ic(mask);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(0, x - r), x1 = std::min(w, x + r + 1);
      const int y0 = std::max(0, y - r), y1 = std::min(h, y + r + 1);
      if (ic.count(x0, y0, x1, y1) > 0) out.set(x, y);
    }
  return out;
}

BinaryMask open(const BinaryMask& mask, const StructuringElement& se) { return dilate(erode(mask, se), se); }

BinaryMask close(const BinaryMask& mask, const StructuringElement& se) { return erode(dilate(mask, se), se); }

BinaryMask remove_small(const BinaryMask& mask, long long min_area) {
  const Labeling lab = label_components(mask);
  std::vector<bool> keep(lab.components.size() + 1, false);
  for (const auto& c : lab.components) keep[c.label] = c.area >= min_area;
  BinaryMask out(mask.width(), mask.height());
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (const int l = lab.at(x, y); l != 0 && keep[l]) out.set(x, y);
  return out;
}

namespace {

int find_root(std::vector<int>& parent, int i) {
  while (parent[i] != i) {
    parent[i] = parent[parent[i]];
    i = parent[i];
  }
  return i;
}

void unite(std::vector<int>& parent, int a, int b) {
  a = find_root(parent, a);
  b = find_root(parent, b);
  if (a == b) return;
  if (a < b) parent[b] = a;
  else parent[a] = b;
}

}  // namespace

Labeling label_components(const BinaryMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  Labeling lab;
  lab.width = w;
  lab.height = h;
  lab.labels.assign(static_cast<std::size_t>(w) * h, 0);

  // First pass: provisional labels with union-find over the already-visited
  // half of the 8-neighborhood.
  std::vector<int> parent{0};
  auto provisional = [&](int x, int y) {
    return (x < 0 || y < 0 || x >= w) ? 0 : lab.labels[static_cast<std::size_t>(y) * w + x];
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!mask.get(x, y)) continue;
      const int nbrs[4] = {provisional(x - 1, y), provisional(x - 1, y - 1), provisional(x, y - 1),
                           provisional(x + 1, y - 1)};
      int l = 0;
      for (int n : nbrs)
        if (n != 0) l = (l == 0) ? n : std::min(l, n);
      if (l == 0) {
        l = static_cast<int>(parent.size());
        parent.push_back(l);
      } else {
        for (int n : nbrs)
          if (n != 0) unite(parent, l, n);
      }
      lab.labels[static_cast<std::size_t>(y) * w + x] = l;
    }

  // Second pass: resolve roots and accumulate statistics.
  struct Acc {
    long long area = 0;
    BBox box{0, 0, 0, 0};
    double sx = 0, sy = 0;
    std::size_t first = 0;
  };
  std::vector<int> root_slot(parent.size(), -1);
  std::vector<Acc> accs;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto& l = lab.labels[static_cast<std::size_t>(y) * w + x];
      if (l == 0) continue;
      const int root = find_root(parent, l);
      if (root_slot[root] < 0) {
        root_slot[root] = static_cast<int>(accs.size());
        Acc a;
        a.box = {x, y, x + 1, y + 1};
        a.first = static_cast<std::size_t>(y) * w + x;
        accs.push_back(a);
      }
      const int slot = root_slot[root];
      l = slot + 1;
      auto& a = accs[slot];
      ++a.area;
      a.box.x0 = std::min(a.box.x0, x);
      a.box.y0 = std::min(a.box.y0, y);
      a.box.x1 = std::max(a.box.x1, x + 1);
      a.box.y1 = std::max(a.box.y1, y + 1);
      a.sx += x;
      a.sy += y;
    }

  std::vector<int> order(accs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return std::tie(accs[a].box.y0, accs[a].box.x0, accs[a].first) <
           std::tie(accs[b].box.y0, accs[b].box.x0, accs[b].first);
  });
  std::vector<int> relabel(accs.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& a = accs[order[i]];
    relabel[order[i]] = static_cast<int>(i) + 1;
    lab.components.push_back({static_cast<int>(i) + 1, a.area, a.box, a.sx / a.area, a.sy / a.area});
  }
  for (auto& l : lab.labels)
    if (l != 0) l = relabel[l - 1];
  return lab;
}

std::vector<Component> connected_components(const BinaryMask& mask) { return label_components(mask).components; }

BinaryMask component_mask(const Labeling& labeling, int label) {
  BinaryMask out(labeling.width, labeling.height);
  for (int y = 0; y < labeling.height; ++y)
    for (int x = 0; x < labeling.width; ++x)
      if (labeling.at(x, y) == label) out.set(x, y);
  return out;
}

double dice(const BinaryMask& a, const BinaryMask& b) {
  if (a.width() != b.width() || a.height() != b.height())
    throw Error(Errc::DimensionMismatch, "dice requires equal mask dimensions");
  std::size_t na = 0, nb = 0, both = 0;
  const auto ba = a.bits();
  const auto bb = b.bits();
  for (std::size_t i = 0; i < ba.size(); ++i) {
    na += ba[i];
    nb += bb[i];
    both += ba[i] & bb[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

BinaryMask threshold(const PlaneStack& scores, float t, int plane) {
  BinaryMask out(scores.width(), scores.height());
  for (int y = 0; y < scores.height(); ++y)
    for (int x = 0; x < scores.width(); ++x)
      if (scores.at(plane, x, y) >= t) out.set(x, y);
  return out;
}

}  // namespace pillsort
