#include "pillsort/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <tuple>

#include "pillsort/error.hpp"
#include "pillsort/image_io.hpp"
#include "pillsort/parallel.hpp"
#include "pillsort/transform.hpp"

namespace pillsort {

PillCutout extract_cutout(const RasterImage& reference, Rgb bg_color, int tolerance, std::string source_image_id,
                          int class_id) {
  if (reference.channels() != 3) throw Error(Errc::ChannelMismatch, "extract_cutout expects a 3-channel reference");
  BinaryMask fg(reference.width(), reference.height());
  for (int y = 0; y < reference.height(); ++y)
    for (int x = 0; x < reference.width(); ++x) {
      const Rgb p = reference.rgb(x, y);
      const int d = std::max({std::abs(p.r - bg_color.r), std::abs(p.g - bg_color.g), std::abs(p.b - bg_color.b)});
      fg.set(x, y, d > tolerance);
    }
  const StructuringElement se(3);
  fg = close(open(fg, se), se);
  const Labeling lab = label_components(fg);
  if (lab.components.empty()) throw Error(Errc::NoForeground, "no foreground in reference " + source_image_id);
  const Component* best = &lab.components.front();
  for (const auto& c : lab.components)
    if (c.area > best->area) best = &c;
  const BinaryMask only = component_mask(lab, best->label);
  return {crop(reference, best->bbox), crop(only, best->bbox), std::move(source_image_id), class_id};
}

void SceneSpec::validate() const {
  auto fail = [](const std::string& m) { throw Error(Errc::InvalidAugment, "scene spec: " + m); };
  if (canvas_width < 1 || canvas_height < 1) fail("canvas must be non-empty");
  if (min_pills < 0 || max_pills < min_pills) fail("pill count range is degenerate");
  if (shadow_offset_min < 0 || shadow_offset_max > 25 || shadow_offset_max < shadow_offset_min)
    fail("shadow offset must lie within [0, 25]");
  if (shadow_sigma < 0 || shadow_opacity < 0 || shadow_opacity > 1) fail("shadow parameters out of range");
  if (blur_sigma_min < 0 || blur_sigma_max < blur_sigma_min) fail("blur range is degenerate");
  if (perspective_jitter < 0 || perspective_jitter >= 0.5) fail("perspective jitter must be in [0, 0.5)");
  if (scale_min <= 0 || scale_max < scale_min) fail("scale range is degenerate");
  if (min_separation < 0 || max_attempts < 1) fail("placement parameters out of range");
}

int SceneSpec::effective_margin() const {
  if (edge_margin >= 0) return edge_margin;
  return static_cast<int>(std::ceil(perspective_jitter * std::max(canvas_width, canvas_height))) + 2;
}

namespace {

RasterImage as_rgb(const RasterImage& img) {
  if (img.channels() == 3) return img;
  RasterImage out(img.width(), img.height(), 3);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out.set_rgb(x, y, img.rgb(x, y));
  return out;
}

bool overlaps(const BinaryMask& occupied, const BinaryMask& m, int ox, int oy) {
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m.get(x, y) && occupied.get(ox + x, oy + y)) return true;
  return false;
}

Homography random_perspective(Rng& rng, int w, int h, double jitter) {
  const std::array<Point2, 4> src{{{0, 0}, {double(w), 0}, {double(w), double(h)}, {0, double(h)}}};
  std::array<Point2, 4> dst = src;
  for (auto& p : dst) {
    p.x += rng.uniform(-jitter, jitter) * w;
    p.y += rng.uniform(-jitter, jitter) * h;
  }
  return Homography::from_quads(src, dst);
}

BinaryMask warp_mask(const BinaryMask& m, const Homography& h) {
  PlaneStack p(m.width(), m.height(), 1);
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) p.at(0, x, y) = m.get(x, y) ? 1.0f : 0.0f;
  return threshold(warp_perspective(p, h), 0.5f);
}

}  // namespace

SceneOutput compose_scene(const SceneSpec& spec, const std::vector<PillCutout>& pool, const RasterImage& background) {
  spec.validate();
  if (pool.empty()) throw Error(Errc::EmptyResult, "cutout pool is empty");
  const int W = spec.canvas_width, H = spec.canvas_height;
  if (background.width() < W || background.height() < H)
    throw Error(Errc::DimensionMismatch, "background smaller than the canvas");

  Rng rng(spec.seed);
  const int bx = rng.uniform_int(0, background.width() - W);
  const int by = rng.uniform_int(0, background.height() - H);
  RasterImage canvas = as_rgb(crop(background, {bx, by, bx + W, by + H}));

  struct Placed {
    MaskedRaster raster;
    int x = 0, y = 0;
    int class_id = 0;
    double rotation = 0, scale = 1;
  };
  std::vector<Placed> placed;
  const int n = rng.uniform_int(spec.min_pills, spec.max_pills);
  const int margin = spec.effective_margin();
  BinaryMask union_mask(W, H);
  BinaryMask occupied(W, H);
  const StructuringElement gap(2 * spec.min_separation + 1);

  for (int i = 0; i < n; ++i) {
    const auto& cut = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
    Placed p;
    p.class_id = cut.class_id;
    p.rotation = rng.uniform(0.0, 360.0);
    p.scale = rng.uniform(spec.scale_min, spec.scale_max);
    p.raster = rotate_scale(cut.pixels, cut.mask, p.rotation, p.scale);
    const int xmax = W - margin - p.raster.mask.width();
    const int ymax = H - margin - p.raster.mask.height();
    bool ok = false;
    for (int a = 0; a < spec.max_attempts && xmax >= margin && ymax >= margin; ++a) {
      p.x = rng.uniform_int(margin, xmax);
      p.y = rng.uniform_int(margin, ymax);
      if (spec.allow_overlap || !overlaps(occupied, p.raster.mask, p.x, p.y)) {
        ok = true;
        break;
      }
    }
    if (!ok) throw Error(Errc::PlacementFailed, "could not place pill " + std::to_string(i + 1) + " of " + std::to_string(n));
    for (int y = 0; y < p.raster.mask.height(); ++y)
      for (int x = 0; x < p.raster.mask.width(); ++x)
        if (p.raster.mask.get(x, y)) union_mask.set(p.x + x, p.y + y);
    if (!spec.allow_overlap) occupied = dilate(union_mask, gap);
    placed.push_back(std::move(p));
  }

  // Drop shadows go under every pill, so they only ever darken background.
  PlaneStack shadow(W, H, 1);
  for (const auto& p : placed) {
    const int d = rng.uniform_int(spec.shadow_offset_min, spec.shadow_offset_max);
    const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const int dx = static_cast<int>(std::lround(d * std::cos(ang)));
    const int dy = static_cast<int>(std::lround(d * std::sin(ang)));
    for (int y = 0; y < p.raster.mask.height(); ++y)
      for (int x = 0; x < p.raster.mask.width(); ++x) {
        const int sx = p.x + x + dx, sy = p.y + y + dy;
        if (p.raster.mask.get(x, y) && sx >= 0 && sy >= 0 && sx < W && sy < H) shadow.at(0, sx, sy) = 1.0f;
      }
  }
  if (spec.shadow_opacity > 0 && !placed.empty()) {
    shadow = gaussian_blur(shadow, spec.shadow_sigma);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double f = 1.0 - spec.shadow_opacity * shadow.at(0, x, y);
        if (f >= 1.0) continue;
        for (int c = 0; c < 3; ++c) canvas.at(x, y, c) = clamp_u8(canvas.at(x, y, c) * f);
      }
  }

  std::vector<BinaryMask> masks;
  for (const auto& p : placed) {
    BinaryMask m(W, H);
    for (int y = 0; y < p.raster.mask.height(); ++y)
      for (int x = 0; x < p.raster.mask.width(); ++x)
        if (p.raster.mask.get(x, y)) {
          canvas.set_rgb(p.x + x, p.y + y, p.raster.pixels.rgb(x, y));
          m.set(p.x + x, p.y + y);
        }
    masks.push_back(std::move(m));
  }

  const Homography warp = random_perspective(rng, W, H, spec.perspective_jitter);
  if (spec.perspective_jitter > 0) {
    canvas = warp_perspective(canvas, warp);
    for (auto& m : masks) m = warp_mask(m, warp);
  }
  const double sigma = rng.uniform(spec.blur_sigma_min, spec.blur_sigma_max);
  if (sigma > 0) canvas = gaussian_blur(canvas, sigma);

  SceneOutput out;
  out.image = std::move(canvas);
  out.gt_mask = BinaryMask(W, H);
  for (std::size_t i = 0; i < placed.size(); ++i) {
    const auto bits = masks[i].bits();
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        if (bits[static_cast<std::size_t>(y) * W + x]) out.gt_mask.set(x, y);
    out.placements.push_back({placed[i].class_id, masks[i].extent(), placed[i].rotation, placed[i].scale});
  }
  return out;
}

void AugmentSpec::validate() const {
  if (jpeg_quality && (*jpeg_quality < 1 || *jpeg_quality > 100))
    throw Error(Errc::InvalidAugment, "jpeg quality must be in 1..100");
  if (smooth_sigma < 0 || sharpen_amount < 0 || contrast < 0)
    throw Error(Errc::InvalidAugment, "negative smoothing, sharpening or contrast");
}

RasterImage augment(const RasterImage& img, const AugmentSpec& a) {
  a.validate();
  RasterImage out = img;
  if (a.flip == Flip::Horizontal) out = flip_horizontal(out);
  else if (a.flip == Flip::Vertical) out = flip_vertical(out);
  if (a.rotation != 0.0) {
    const double q = a.rotation / 90.0;
    if (q == std::round(q)) out = rotate_quarter(out, static_cast<int>(std::lround(q)));
    else out = rotate_same_canvas(out, a.rotation);
  }
  if (a.smooth_sigma > 0) out = gaussian_blur(out, a.smooth_sigma);
  if (a.sharpen_amount > 0) out = unsharp(out, a.sharpen_amount);
  out = adjust_contrast_brightness(out, a.contrast, a.brightness);
  if (a.jpeg_quality) out = decode_jpeg(encode_jpeg(out, *a.jpeg_quality));
  return out;
}

AugmentSpec sample_augment(std::uint64_t seed) {
  Rng rng(seed);
  AugmentSpec a;
  const int f = rng.uniform_int(0, 2);
  a.flip = f == 0 ? Flip::None : (f == 1 ? Flip::Horizontal : Flip::Vertical);
  a.rotation = rng.uniform(0.0, 360.0);
  a.smooth_sigma = rng.uniform() < 0.5 ? rng.uniform(0.3, 1.2) : 0.0;
  a.sharpen_amount = rng.uniform() < 0.3 ? rng.uniform(0.2, 1.0) : 0.0;
  a.contrast = rng.uniform(0.8, 1.2);
  a.brightness = rng.uniform(-20.0, 20.0);
  if (rng.uniform() < 0.5) a.jpeg_quality = rng.uniform_int(60, 95);
  return a;
}

BBox largest_empty_rectangle(const BinaryMask& mask) {
  const int w = mask.width(), h = mask.height();
  std::vector<int> heights(w, 0);
  std::vector<int> stack;
  stack.reserve(w + 1);
  BBox best{};
  long long best_area = 0;
  auto consider = [&](const BBox& c) {
    const long long a = c.area();
    if (a > best_area || (a == best_area && std::tie(c.y0, c.x0, c.y1, c.x1) < std::tie(best.y0, best.x0, best.y1, best.x1))) {
      best = c;
      best_area = a;
    }
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) heights[x] = mask.get(x, y) ? 0 : heights[x] + 1;
    stack.clear();
    for (int x = 0; x <= w; ++x) {
      const int cur = x < w ? heights[x] : 0;
      while (!stack.empty() && heights[stack.back()] >= cur) {
        const int hgt = heights[stack.back()];
        stack.pop_back();
        const int left = stack.empty() ? 0 : stack.back() + 1;
        if (hgt > 0) consider({left, y - hgt + 1, x, y + 1});
      }
      stack.push_back(x);
    }
  }
  if (best_area == 0) throw Error(Errc::EmptyResult, "mask has no background pixel");
  return best;
}

RasterImage texture_background(int width, int height, std::uint64_t seed) {
  Rng rng(seed);
  const double base = rng.uniform(70.0, 190.0);
  const double tint[3] = {rng.uniform(-25.0, 25.0), rng.uniform(-25.0, 25.0), rng.uniform(-25.0, 25.0)};
  struct Octave {
    int cell;
    double amplitude;
    int gw, gh;
    std::vector<double> grid;
  };
  std::vector<Octave> octaves = {{64, 28.0, 0, 0, {}}, {16, 12.0, 0, 0, {}}, {4, 5.0, 0, 0, {}}};
  for (auto& o : octaves) {
    o.gw = width / o.cell + 2;
    o.gh = height / o.cell + 2;
    o.grid.resize(static_cast<std::size_t>(o.gw) * o.gh);
    for (auto& v : o.grid) v = rng.uniform(-1.0, 1.0);
  }
  auto smooth = [](double t) { return t * t * (3 - 2 * t); };
  RasterImage out(width, height, 3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double v = base;
      for (const auto& o : octaves) {
        const double gx = static_cast<double>(x) / o.cell, gy = static_cast<double>(y) / o.cell;
        const int ix = static_cast<int>(gx), iy = static_cast<int>(gy);
        const double fx = smooth(gx - ix), fy = smooth(gy - iy);
        auto g = [&](int i, int j) { return o.grid[static_cast<std::size_t>(j) * o.gw + i]; };
        const double top = g(ix, iy) * (1 - fx) + g(ix + 1, iy) * fx;
        const double bot = g(ix, iy + 1) * (1 - fx) + g(ix + 1, iy + 1) * fx;
        v += o.amplitude * (top * (1 - fy) + bot * fy);
      }
      const double grain = rng.uniform(-3.0, 3.0);
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = clamp_u8(v + tint[c] + grain);
    }
  return out;
}

std::filesystem::path mask_path_for(const std::filesystem::path& image_path) {
  auto p = image_path;
  p.replace_filename(image_path.stem().string() + "_mask" + image_path.extension().string());
  return p;
}

std::vector<PillCutout> load_cutouts(const Manifest& manifest, const std::filesystem::path& manifest_dir) {
  std::vector<const ImageRecord*> refs;
  for (const auto& r : manifest.records)
    if (r.kind == ImageKind::Reference) refs.push_back(&r);
  std::sort(refs.begin(), refs.end(), [](auto* a, auto* b) { return a->image_id < b->image_id; });
  std::vector<PillCutout> out;
  for (const auto* r : refs)
    out.push_back(extract_cutout(read_png(resolve(manifest_dir, r->path)), kReferenceBackground, 8, r->image_id, r->class_id));
  return out;
}

namespace {

SceneOutput compose_with_retries(const std::vector<PillCutout>& pool, const SceneSpec& spec, std::size_t index,
                                 const GenerationOptions& options) {
  const std::uint64_t scene_seed = mix_seed(spec.seed, index);
  RasterImage bg;
  if (options.backgrounds.empty()) {
    bg = texture_background(spec.canvas_width, spec.canvas_height, mix_seed(scene_seed, 0xb6));
  } else {
    Rng pick(mix_seed(scene_seed, 0xb7));
    bg = options.backgrounds[static_cast<std::size_t>(pick.uniform_int(0, static_cast<int>(options.backgrounds.size()) - 1))];
  }
  for (int r = 0;; ++r) {
    SceneSpec s = spec;
    s.seed = r == 0 ? scene_seed : mix_seed(scene_seed, static_cast<std::uint64_t>(r));
    try {
      return compose_scene(s, pool, bg);
    } catch (const Error& e) {
      if (e.code() != Errc::PlacementFailed || r >= options.placement_retries) throw;
    }
  }
}

std::string numbered(const char* fmt, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, static_cast<unsigned>(i));
  return buf;
}

}  // namespace

std::vector<SceneOutput> generate_scenes(const std::vector<PillCutout>& pool, const SceneSpec& spec, int n_scenes,
                                         const GenerationOptions& options) {
  std::vector<SceneOutput> out(static_cast<std::size_t>(std::max(0, n_scenes)));
  parallel_for(out.size(), options.workers, [&](std::size_t i) { out[i] = compose_with_retries(pool, spec, i, options); });
  return out;
}

Manifest generate_detection_set(const Manifest& manifest, const std::filesystem::path& manifest_dir,
                                const SceneSpec& spec, int n_scenes, const std::filesystem::path& out_dir,
                                const GenerationOptions& options) {
  Manifest out;
  out.classes = manifest.classes;
  out.seed = spec.seed;
  if (n_scenes <= 0) return out;
  const auto pool = load_cutouts(manifest, manifest_dir);
  if (pool.empty()) throw Error(Errc::MissingClass, "manifest has no reference records to cut pills from");
  std::filesystem::create_directories(out_dir);

  std::vector<ImageRecord> records(static_cast<std::size_t>(n_scenes));
  parallel_for(records.size(), options.workers, [&](std::size_t i) {
    const SceneOutput scene = compose_with_retries(pool, spec, i, options);
    const std::string id = numbered("scene_%06u", i);
    write_png(out_dir / (id + ".png"), scene.image);
    write_mask_png(out_dir / (id + "_mask.png"), scene.gt_mask);
    ImageRecord r;
    r.image_id = id;
    r.path = id + ".png";
    r.class_id = scene.placements.empty() ? 0 : scene.placements.front().class_id;
    r.kind = ImageKind::Synthetic;
    r.placements = scene.placements;
    records[i] = std::move(r);
  });
  out.records = std::move(records);
  out.validate();
  return out;
}

Manifest generate_frontback_set(const Manifest& manifest, const std::filesystem::path& manifest_dir, int n_pairs,
                                const std::filesystem::path& out_dir, const FrontBackOptions& options) {
  // First front and back reference per class, by image_id.
  std::map<int, std::pair<const ImageRecord*, const ImageRecord*>> sides;
  for (const auto& r : manifest.records) {
    if (r.kind != ImageKind::Reference) continue;
    auto& s = sides[r.class_id];
    if (r.side == Side::Front && (!s.first || r.image_id < s.first->image_id)) s.first = &r;
    if (r.side == Side::Back && (!s.second || r.image_id < s.second->image_id)) s.second = &r;
  }
  std::vector<int> classes;
  for (const auto& [cls, s] : sides) {
    if (!s.first || !s.second)
      throw Error(Errc::MissingSide, "class " + std::to_string(cls) + " lacks a " + (s.first ? "back" : "front") + " reference");
    classes.push_back(cls);
  }

  Manifest out;
  out.classes = manifest.classes;
  out.seed = options.seed;
  if (n_pairs <= 0) return out;
  if (classes.empty()) throw Error(Errc::MissingSide, "manifest has no reference records");

  std::vector<const ImageRecord*> bg_sources;
  for (const auto& r : manifest.records)
    if (r.split == Split::Test && std::filesystem::exists(mask_path_for(resolve(manifest_dir, r.path))))
      bg_sources.push_back(&r);
  std::sort(bg_sources.begin(), bg_sources.end(), [](auto* a, auto* b) { return a->image_id < b->image_id; });

  std::filesystem::create_directories(out_dir);
  const int side = options.side;
  auto background = [&](std::size_t slot, std::uint64_t seed) {
    if (bg_sources.empty()) return texture_background(side, side, seed);
    const auto* src = bg_sources[slot % bg_sources.size()];
    const auto path = resolve(manifest_dir, src->path);
    const RasterImage img = as_rgb(read_png(path));
    const BBox rect = largest_empty_rectangle(read_mask_png(mask_path_for(path)));
    return resize_bilinear(crop(img, rect), side, side);
  };

  auto render = [&](const PillCutout& cut, RasterImage canvas, std::uint64_t seed, Placement& placement, BinaryMask& mask) {
    Rng rng(seed);
    const double rot = rng.uniform(0.0, 360.0);
    MaskedRaster mr = rotate_scale(cut.pixels, cut.mask, rot, 1.0);
    const double budget = side - 2.0 * 10;
    const double fit = std::min(1.0, budget / std::max(mr.mask.width(), mr.mask.height()));
    const double scale = fit * rng.uniform(0.9, 1.0);
    mr = rotate_scale(cut.pixels, cut.mask, rot, scale);
    const int ox = (side - mr.mask.width()) / 2, oy = (side - mr.mask.height()) / 2;
    mask = BinaryMask(side, side);
    for (int y = 0; y < mr.mask.height(); ++y)
      for (int x = 0; x < mr.mask.width(); ++x)
        if (mr.mask.get(x, y)) {
          canvas.set_rgb(ox + x, oy + y, mr.pixels.rgb(x, y));
          mask.set(ox + x, oy + y);
        }
    const Homography h = random_perspective(rng, side, side, options.perspective_jitter);
    if (options.perspective_jitter > 0) {
      canvas = warp_perspective(canvas, h);
      mask = warp_mask(mask, h);
    }
    const double sigma = rng.uniform(0.0, options.blur_sigma_max);
    if (sigma > 0) canvas = gaussian_blur(canvas, sigma);
    canvas = adjust_contrast_brightness(canvas, rng.uniform(options.contrast_min, options.contrast_max), 0.0);
    placement = {cut.class_id, mask.extent(), rot, scale};
    return canvas;
  };

  std::vector<ImageRecord> records(static_cast<std::size_t>(n_pairs) * 2);
  parallel_for(static_cast<std::size_t>(n_pairs), options.workers, [&](std::size_t i) {
    const int cls = classes[i % classes.size()];
    const auto pair_seed = mix_seed(options.seed, i);
    const std::string pair_id = numbered("pair_%06u", i);
    const auto& [front, back] = sides.at(cls);
    int k = 0;
    for (const auto* ref : {front, back}) {
      const auto cut = extract_cutout(read_png(resolve(manifest_dir, ref->path)), kReferenceBackground, 8, ref->image_id, cls);
      const auto seed = mix_seed(pair_seed, static_cast<std::uint64_t>(k));
      Placement placement;
      BinaryMask mask;
      const RasterImage img = render(cut, background(2 * i + k, mix_seed(seed, 0xb6)), seed, placement, mask);
      const std::string id = pair_id + (k == 0 ? "_front" : "_back");
      write_png(out_dir / (id + ".png"), img);
      write_mask_png(out_dir / (id + "_mask.png"), mask);
      ImageRecord r;
      r.image_id = id;
      r.path = id + ".png";
      r.class_id = cls;
      r.kind = ImageKind::Synthetic;
      r.side = k == 0 ? Side::Front : Side::Back;
      r.split = Split::Test;
      r.pair_id = pair_id;
      r.placements.push_back(placement);
      records[2 * i + k] = std::move(r);
      ++k;
    }
  });
  out.records = std::move(records);
  out.validate();
  return out;
}

}  // namespace pillsort
