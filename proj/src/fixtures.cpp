#include "pillsort/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "pillsort/image_io.hpp"
#include "pillsort/synthgen.hpp"
#include "pillsort/transform.hpp"

namespace pillsort {

namespace {

Rgb hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h, 360.0) / 60.0;
  const double x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  double r = 0, g = 0, b = 0;
  if (hp < 1) r = c, g = x;
  else if (hp < 2) r = x, g = c;
  else if (hp < 3) g = c, b = x;
  else if (hp < 4) g = x, b = c;
  else if (hp < 5) r = x, b = c;
  else r = c, b = x;
  const double m = v - c;
  return {clamp_u8((r + m) * 255), clamp_u8((g + m) * 255), clamp_u8((b + m) * 255)};
}

// Signed inside test in a frame centered on the pill, half-extents a, b.
bool inside(PillShape shape, double x, double y, double a, double b) {
  switch (shape) {
    case PillShape::Disk:
    case PillShape::Oval:
      return (x * x) / (a * a) + (y * y) / (b * b) <= 1.0;
    case PillShape::RoundedSquare: {
      const double r = 0.3 * std::min(a, b);
      const double qx = std::abs(x) - (a - r), qy = std::abs(y) - (b - r);
      if (qx <= 0 || qy <= 0) return std::abs(x) <= a && std::abs(y) <= b;
      return qx * qx + qy * qy <= r * r;
    }
    case PillShape::Stadium: {
      const double r = b;
      const double qx = std::max(0.0, std::abs(x) - (a - r));
      return qx * qx + y * y <= r * r;
    }
    case PillShape::Octagon:
      // Regular when a == b: the cut corners sit at (2 - tan 22.5deg) / 2.
      return std::abs(x) <= a && std::abs(y) <= b && std::abs(x) + std::abs(y) <= (a + b) * 0.793;
  }
  return false;
}

}  // namespace

std::vector<FixturePill> fixture_catalog(int n) {
  static const PillShape kShapes[] = {PillShape::Disk, PillShape::Oval, PillShape::RoundedSquare, PillShape::Stadium,
                                      PillShape::Octagon};
  // Tone levels: vivid, pastel, deep, muted.
  static const double kSat[] = {0.85, 0.4, 0.8, 0.6};
  static const double kVal[] = {0.9, 0.97, 0.5, 0.7};
  std::vector<FixturePill> out;
  for (int i = 0; i < n; ++i) {
    const int hue_step = i % 8, tone = (i / 8) % 4, cycle = i / 32;
    FixturePill p;
    p.shape = kShapes[(hue_step + 2 * tone) % 5];
    p.color = hsv_to_rgb(22.5 + hue_step * 45.0 + 7.0 * cycle, kSat[tone], kVal[tone]);
    const int jitter = (i * 7) % 9 - 4;
    switch (p.shape) {
      case PillShape::Disk: p.width = p.height = 100 + jitter; break;
      case PillShape::Oval: p.width = 128 + jitter; p.height = 98; break;
      case PillShape::RoundedSquare: p.width = 100 + jitter; p.height = 100 + jitter; break;
      case PillShape::Stadium: p.width = 140 + jitter; p.height = 96; break;
      case PillShape::Octagon: p.width = p.height = 104 + jitter; break;
    }
    char ndc[48];
    std::snprintf(ndc, sizeof ndc, "%05d-%04d-%02d", 60000 + i, 1000 + (i * 37) % 9000, i % 100);
    p.ndc = ndc;
    p.name = "fixture-" + std::to_string(i);
    out.push_back(p);
  }
  return out;
}

RasterImage render_reference(const FixturePill& pill, Side side) {
  const int pad = 30;
  const int w = pill.width + 2 * pad, h = pill.height + 2 * pad;
  RasterImage img = RasterImage::filled(w, h, kReferenceBackground);
  const double cx = w / 2.0, cy = h / 2.0, a = pill.width / 2.0, b = pill.height / 2.0;
  const Rgb imprint{static_cast<std::uint8_t>(pill.color.r * 0.55), static_cast<std::uint8_t>(pill.color.g * 0.55),
                    static_cast<std::uint8_t>(pill.color.b * 0.55)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (!inside(pill.shape, dx, dy, a, b)) continue;
      Rgb c = pill.color;
      // A light vertical shading gradient keeps the silhouette from being flat.
      const double shade = 1.0 - 0.12 * (dy / b);
      c = {clamp_u8(c.r * shade), clamp_u8(c.g * shade), clamp_u8(c.b * shade)};
      // Front carries an imprint bar, back a thin score line.
      if (side == Side::Front && std::abs(dy) <= 3 && std::abs(dx) <= 0.5 * a) c = imprint;
      if (side == Side::Back && std::abs(dx) <= 0.75 && std::abs(dy) <= 0.6 * b) c = imprint;
      img.set_rgb(x, y, c);
    }
  return img;
}

std::vector<FixtureReference> render_fixture_references(const std::vector<FixturePill>& catalog) {
  std::vector<FixtureReference> out;
  for (std::size_t i = 0; i < catalog.size(); ++i)
    for (Side s : {Side::Front, Side::Back}) out.push_back({static_cast<int>(i), s, render_reference(catalog[i], s)});
  return out;
}

Manifest write_fixture_references(const std::vector<FixturePill>& catalog, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<RawLabel> labels;
  for (const auto& ref : render_fixture_references(catalog)) {
    char id[64];
    std::snprintf(id, sizeof id, "ref_%04d_%s", ref.class_id, ref.side == Side::Front ? "front" : "back");
    write_png(dir / (std::string(id) + ".png"), ref.image);
    const auto& pill = catalog[static_cast<std::size_t>(ref.class_id)];
    labels.push_back({id, pill.ndc, std::string(id) + ".png", ImageKind::Reference, ref.side, pill.name});
  }
  Manifest m = build_manifest(labels);
  for (auto& r : m.records) r.split = Split::Train;
  for (std::size_t i = 0; i < m.classes.size(); ++i) m.classes[i].display_name = catalog[i].name;
  return m;
}

}  // namespace pillsort
