#include "pillsort/detect.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "pillsort/error.hpp"
#include "pillsort/image_io.hpp"
#include "pillsort/transform.hpp"

namespace pillsort {

std::optional<BinaryMask> InMemoryMaskStore::find(std::string_view image_id) const {
  auto it = masks_.find(image_id);
  if (it == masks_.end()) return std::nullopt;
  return it->second;
}

FileMaskStore FileMaskStore::from_directory(const std::filesystem::path& dir, const std::vector<std::string>& image_ids) {
  std::map<std::string, std::filesystem::path, std::less<>> paths;
  for (const auto& id : image_ids) {
    auto p = dir / (id + ".png");
    if (std::filesystem::exists(p)) paths.emplace(id, std::move(p));
  }
  return FileMaskStore(std::move(paths));
}

std::optional<BinaryMask> FileMaskStore::find(std::string_view image_id) const {
  auto it = paths_.find(image_id);
  if (it == paths_.end() || !std::filesystem::exists(it->second)) return std::nullopt;
  return read_mask_png(it->second);
}

ScoreMap segment_oracle(std::string_view image_id, const MaskStore& store) {
  const auto mask = store.find(image_id);
  if (!mask) throw Error(Errc::MissingGroundTruth, "no mask for image '" + std::string(image_id) + "'");
  ScoreMap out{PlaneStack(mask->width(), mask->height(), 1), 0.5f};
  for (int y = 0; y < mask->height(); ++y)
    for (int x = 0; x < mask->width(); ++x) out.scores.at(0, x, y) = mask->get(x, y) ? 1.0f : 0.0f;
  return out;
}

namespace {

std::uint8_t median_of(std::vector<std::uint8_t>& v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

// Otsu over a 256-bin histogram of [0, 1] scores; returns the lower edge of
// the first foreground bin.
float otsu_threshold(std::span<const float> scores) {
  std::array<double, 256> hist{};
  for (float s : scores) hist[static_cast<std::size_t>(std::clamp(static_cast<int>(s * 255.0f + 0.5f), 0, 255))] += 1;
  const double total = static_cast<double>(scores.size());
  double sum_all = 0;
  for (int i = 0; i < 256; ++i) sum_all += i * hist[i];
  double w0 = 0, sum0 = 0, best = -1;
  int best_t = 127;
  for (int t = 0; t < 255; ++t) {
    w0 += hist[t];
    sum0 += t * hist[t];
    const double w1 = total - w0;
    if (w0 == 0 || w1 == 0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return (static_cast<float>(best_t) + 0.5f) / 255.0f;
}

}  // namespace

ScoreMap segment_colordist(const RasterImage& image) {
  if (image.channels() != 3) throw Error(Errc::ChannelMismatch, "colordist expects 3 channels");
  const int w = image.width(), h = image.height();
  const int ring = 10;
  std::array<std::vector<std::uint8_t>, 3> samples;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (x >= ring && y >= ring && x < w - ring && y < h - ring) continue;
      for (int c = 0; c < 3; ++c) samples[c].push_back(image.at(x, y, c));
    }
  const double bg[3] = {static_cast<double>(median_of(samples[0])), static_cast<double>(median_of(samples[1])),
                        static_cast<double>(median_of(samples[2]))};
  ScoreMap out{PlaneStack(w, h, 1), 0.5f};
  double max_d = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double d2 = 0;
      for (int c = 0; c < 3; ++c) d2 += (image.at(x, y, c) - bg[c]) * (image.at(x, y, c) - bg[c]);
      const double d = std::sqrt(d2);
      out.scores.at(0, x, y) = static_cast<float>(d);
      max_d = std::max(max_d, d);
    }
  if (max_d <= 0) return out;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.scores.at(0, x, y) = static_cast<float>(out.scores.at(0, x, y) / max_d);
  out.threshold = otsu_threshold(out.scores.plane(0));
  return out;
}

std::unique_ptr<SegmentationBackend> make_segmentation_backend(std::string_view name,
                                                               std::shared_ptr<const MaskStore> store) {
  if (name == "colordist") return std::make_unique<ColorDistBackend>();
  if (name == "oracle" || name == "external") {
    if (!store) throw Error(Errc::MissingGroundTruth, "backend '" + std::string(name) + "' needs a mask store");
    if (name == "oracle") return std::make_unique<OracleBackend>(std::move(store));
    return std::make_unique<ExternalBackend>(std::move(store));
  }
  throw Error(Errc::ParseError, "unknown segmentation backend '" + std::string(name) + "'");
}

BinaryMask postprocess(const PlaneStack& scores, const LocalizeParams& p) {
  BinaryMask m = threshold(scores, p.threshold);
  m = remove_small(m, p.min_area);
  const StructuringElement noise(p.noise_side);
  m = open(m, noise);
  m = close(m, noise);
  return dilate(m, StructuringElement(p.dilate_side));
}

std::vector<Component> localize(const PlaneStack& scores, const LocalizeParams& p) {
  return connected_components(postprocess(scores, p));
}

RasterImage crop_center(const RasterImage& image, const BBox& bbox, int out_side, int margin) {
  if (bbox.empty()) throw Error(Errc::InvalidBbox, "empty bbox");
  if (bbox.x0 < 0 || bbox.y0 < 0 || bbox.x1 > image.width() || bbox.y1 > image.height())
    throw Error(Errc::InvalidBbox, "bbox outside image");
  if (out_side - 2 * margin < 1) throw Error(Errc::InvalidBbox, "margin leaves no room on the canvas");
  const RasterImage rgb = image.channels() == 3 ? image : [&] {
    RasterImage c(image.width(), image.height(), 3);
    for (int y = 0; y < image.height(); ++y)
      for (int x = 0; x < image.width(); ++x) c.set_rgb(x, y, image.rgb(x, y));
    return c;
  }();

  // Fill color: median of the ring [bbox - 5, bbox + 5) minus the bbox itself,
  // clipped to the image. A bbox spanning the whole image falls back to its
  // own outermost pixels.
  std::array<std::vector<std::uint8_t>, 3> ring;
  const int rx0 = std::max(0, bbox.x0 - 5), ry0 = std::max(0, bbox.y0 - 5);
  const int rx1 = std::min(rgb.width(), bbox.x1 + 5), ry1 = std::min(rgb.height(), bbox.y1 + 5);
  for (int y = ry0; y < ry1; ++y)
    for (int x = rx0; x < rx1; ++x) {
      if (bbox.contains(x, y)) continue;
      for (int c = 0; c < 3; ++c) ring[c].push_back(rgb.at(x, y, c));
    }
  if (ring[0].empty())
    for (int y = bbox.y0; y < bbox.y1; ++y)
      for (int x = bbox.x0; x < bbox.x1; ++x) {
        if (x != bbox.x0 && y != bbox.y0 && x != bbox.x1 - 1 && y != bbox.y1 - 1) continue;
        for (int c = 0; c < 3; ++c) ring[c].push_back(rgb.at(x, y, c));
      }
  const Rgb fill{median_of(ring[0]), median_of(ring[1]), median_of(ring[2])};

  RasterImage patch = crop(rgb, bbox);
  const int budget = out_side - 2 * margin;
  const int longest = std::max(patch.width(), patch.height());
  if (longest > budget) {
    const double s = static_cast<double>(budget) / longest;
    const int nw = std::max(1, static_cast<int>(std::lround(patch.width() * s)));
    const int nh = std::max(1, static_cast<int>(std::lround(patch.height() * s)));
    patch = resize_bilinear(patch, std::min(nw, budget), std::min(nh, budget));
  }
  RasterImage out = RasterImage::filled(out_side, out_side, fill);
  const int ox = (out_side - patch.width()) / 2, oy = (out_side - patch.height()) / 2;
  for (int y = 0; y < patch.height(); ++y)
    for (int x = 0; x < patch.width(); ++x) out.set_rgb(ox + x, oy + y, patch.rgb(x, y));
  return out;
}

PlaneStack to_classifier_input(const RasterImage& crop, int expected_side) {
  if (crop.channels() != 3 || crop.width() != expected_side || crop.height() != expected_side)
    throw Error(Errc::ShapeMismatch, "classifier input must be a 3-channel " + std::to_string(expected_side) + " square");
  const RasterImage gray = to_grayscale(crop);
  const PlaneStack grad = gradient_magnitude(gray);
  PlaneStack out(crop.width(), crop.height(), 5);
  for (int y = 0; y < crop.height(); ++y)
    for (int x = 0; x < crop.width(); ++x) {
      for (int c = 0; c < 3; ++c) out.at(c, x, y) = crop.at(x, y, c) / 255.0f;
      out.at(3, x, y) = gray.at(x, y) / 255.0f;
      out.at(4, x, y) = grad.at(0, x, y);
    }
  return out;
}

std::vector<Detection> detect(const RasterImage& image, const ScoreMap& scores, LocalizeParams p) {
  if (scores.scores.width() != image.width() || scores.scores.height() != image.height())
    throw Error(Errc::DimensionMismatch, "score plane and image differ in size");
  p.threshold = scores.threshold;
  std::vector<Detection> out;
  for (const auto& c : localize(scores.scores, p)) {
    Detection d;
    d.component = c;
    d.crop = crop_center(image, c.bbox);
    d.input = to_classifier_input(d.crop);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace pillsort
