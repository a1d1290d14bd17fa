#include <gtest/gtest.h>

#include <chrono>
#include <functional>

#include "oracles.hpp"
#include "pillsort/detect.hpp"
#include "pillsort/fixtures.hpp"
#include "pillsort/synthgen.hpp"

using namespace pillsort;

namespace {

BinaryMask block(int w, int h, const BBox& b, BinaryMask m = {}) {
  if (m.width() == 0) m = BinaryMask(w, h);
  for (int y = b.y0; y < b.y1; ++y)
    for (int x = b.x0; x < b.x1; ++x) m.set(x, y);
  return m;
}

PlaneStack as_scores(const BinaryMask& m) {
  PlaneStack s(m.width(), m.height(), 1);
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) s.at(0, x, y) = m.get(x, y) ? 1.0f : 0.0f;
  return s;
}

RasterImage paint(int w, int h, Rgb bg, const BBox& b, Rgb fg) {
  RasterImage img = RasterImage::filled(w, h, bg);
  for (int y = b.y0; y < b.y1; ++y)
    for (int x = b.x0; x < b.x1; ++x) img.set_rgb(x, y, fg);
  return img;
}

BBox extent_of(const RasterImage& img, Rgb color) {
  BinaryMask m(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) m.set(x, y, img.rgb(x, y) == color);
  return m.extent();
}

Errc error_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no exception";
  return Errc::Io;
}

}  // namespace

TEST(OracleBackend, ReturnsStoredMask) {
  auto store = std::make_shared<InMemoryMaskStore>();
  const BinaryMask gt = block(64, 48, {10, 5, 30, 40});
  store->put("scene", gt);
  const ScoreMap s = segment_oracle("scene", *store);
  EXPECT_EQ(s.scores, as_scores(gt));
  EXPECT_EQ(threshold(s.scores, 0.5f), gt);
  EXPECT_DOUBLE_EQ(dice(threshold(s.scores, s.threshold), gt), 1.0);
  const auto backend = make_segmentation_backend("oracle", store);
  EXPECT_EQ(backend->segment("scene", RasterImage(64, 48, 3)).scores, s.scores);
}

TEST(OracleBackend, MissingMask) {
  InMemoryMaskStore store;
  EXPECT_EQ(error_code([&] { segment_oracle("nope", store); }), Errc::MissingGroundTruth);
  EXPECT_EQ(error_code([] { make_segmentation_backend("oracle"); }), Errc::MissingGroundTruth);
  EXPECT_EQ(error_code([] { make_segmentation_backend("unet"); }), Errc::ParseError);
  EXPECT_EQ(make_segmentation_backend("colordist")->name(), "colordist");
}

TEST(ColorDist, DarkPillOnUniformBackground) {
  const auto pool = [] {
    std::vector<PillCutout> out;
    for (const auto& ref : render_fixture_references(fixture_catalog(8)))
      if (ref.side == Side::Front) out.push_back(extract_cutout(ref.image, kReferenceBackground, 8, "", ref.class_id));
    return out;
  }();
  SceneSpec spec;
  spec.perspective_jitter = 0.0;
  spec.blur_sigma_min = spec.blur_sigma_max = 0.0;
  spec.shadow_offset_min = spec.shadow_offset_max = 0;
  spec.shadow_opacity = 0.0;
  const RasterImage bg = RasterImage::filled(400, 400, {235, 235, 230});
  for (int i = 0; i < 8; ++i) {
    spec.seed = static_cast<std::uint64_t>(i);
    spec.min_pills = spec.max_pills = 1;
    const std::vector<PillCutout> one{pool[static_cast<std::size_t>(i)]};
    const auto scene = compose_scene(spec, one, bg);
    const ScoreMap s = segment_colordist(scene.image);
    EXPECT_GE(dice(threshold(s.scores, s.threshold), scene.gt_mask), 0.95) << i;
  }
}

TEST(ColorDist, ConstantImageScoresZero) {
  const ScoreMap s = segment_colordist(RasterImage::filled(50, 40, {90, 30, 200}));
  for (float v : s.scores.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_TRUE(localize(s.scores, {s.threshold}).empty());
}

TEST(ColorDist, PillMatchingBackgroundIsInvisible) {
  const RasterImage img = paint(80, 80, {50, 60, 70}, {20, 20, 60, 60}, {50, 60, 70});
  const ScoreMap s = segment_colordist(img);
  EXPECT_TRUE(localize(s.scores, {s.threshold}).empty());
}

TEST(Localize, TwoBlobsAndScatteredNoise) {
  BinaryMask m = block(200, 200, {20, 20, 45, 40});
  m = block(200, 200, {120, 130, 145, 150}, m);
  Rng rng(5);
  int placed = 0;
  while (placed < 20) {
    const int x = rng.uniform_int(0, 199), y = rng.uniform_int(0, 199);
    bool near = false;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) near = near || m.get_or_false(x + dx, y + dy);
    if (near) continue;
    m.set(x, y);
    ++placed;
  }
  ASSERT_EQ(oracle::flood_fill(m).size(), 22u);
  const auto comps = localize(as_scores(m));
  ASSERT_EQ(comps.size(), 2u);
  EXPECT_TRUE(comps[0].bbox.contains(30, 30) || comps[1].bbox.contains(30, 30));
}

TEST(Localize, GapBelowDilationMerges) {
  BinaryMask m = block(120, 80, {20, 30, 50, 50});
  m = block(120, 80, {54, 30, 84, 50}, m);
  ASSERT_EQ(oracle::flood_fill(m).size(), 2u);
  EXPECT_EQ(localize(as_scores(m)).size(), 1u);
  LocalizeParams no_dilate;
  no_dilate.dilate_side = 1;
  EXPECT_EQ(localize(as_scores(m), no_dilate).size(), 2u);
}

TEST(Localize, MatchesMorphologyOracle) {
  Rng rng(17);
  for (int t = 0; t < 20; ++t) {
    BinaryMask m(60, 50);
    for (int b = 0; b < 4; ++b) {
      const int x0 = rng.uniform_int(0, 45), y0 = rng.uniform_int(0, 35);
      m = block(60, 50, {x0, y0, x0 + rng.uniform_int(3, 14), y0 + rng.uniform_int(3, 14)}, m);
    }
    LocalizeParams p;
    p.min_area = 30;
    p.dilate_side = 5;
    BinaryMask want(60, 50);
    for (const auto& c : oracle::flood_fill(m))
      if (c.area >= p.min_area)
        for (const auto& [x, y] : c.pixels) want.set(x, y);
    want = oracle::dilate(oracle::close(oracle::open(want, 3), 3), 5);
    EXPECT_EQ(postprocess(as_scores(m), p), want) << t;
  }
}

TEST(Localize, ZeroScoresGiveNothing) { EXPECT_TRUE(localize(PlaneStack(30, 30, 1)).empty()); }

TEST(Localize, MonotoneInMinArea) {
  Rng rng(3);
  const BinaryMask m = oracle::random_mask(rng, 120, 120, 0.08);
  BinaryMask blobs = m;
  for (int i = 0; i < 12; ++i) {
    const int x0 = rng.uniform_int(0, 100), y0 = rng.uniform_int(0, 100);
    blobs = block(120, 120, {x0, y0, x0 + rng.uniform_int(2, 18), y0 + rng.uniform_int(2, 18)}, blobs);
  }
  std::size_t last = SIZE_MAX;
  for (long long a : {0LL, 10LL, 50LL, 100LL, 200LL, 400LL, 1000LL}) {
    LocalizeParams p;
    p.min_area = a;
    p.dilate_side = 1;
    const std::size_t n = localize(as_scores(blobs), p).size();
    EXPECT_LE(n, last) << a;
    last = n;
  }
}

TEST(CropCenter, SmallBboxIsCenteredUnscaled) {
  const Rgb fg{200, 30, 30};
  const RasterImage img = paint(400, 300, {100, 110, 120}, {50, 70, 150, 130}, fg);
  const RasterImage c = crop_center(img, {50, 70, 150, 130});
  ASSERT_EQ(c.width(), 299);
  ASSERT_EQ(c.height(), 299);
  const BBox e = extent_of(c, fg);
  EXPECT_EQ(e.width(), 100);
  EXPECT_EQ(e.height(), 60);
  EXPECT_NEAR((e.x0 + e.x1) / 2.0, 149.5, 1.0);
  EXPECT_NEAR((e.y0 + e.y1) / 2.0, 149.5, 1.0);
  EXPECT_EQ(c.rgb(0, 0), (Rgb{100, 110, 120}));
  EXPECT_EQ(c.rgb(298, 298), (Rgb{100, 110, 120}));
}

TEST(CropCenter, LargeBboxScalesLongestSideTo279) {
  const Rgb fg{10, 200, 40};
  const RasterImage img = paint(800, 600, {90, 90, 90}, {100, 100, 700, 500}, fg);
  const RasterImage c = crop_center(img, {100, 100, 700, 500});
  BinaryMask m(299, 299);
  for (int y = 0; y < 299; ++y)
    for (int x = 0; x < 299; ++x) m.set(x, y, c.rgb(x, y) != Rgb{90, 90, 90});
  const BBox e = m.extent();
  EXPECT_EQ(e.width(), 279);
  EXPECT_NEAR(e.height(), 400.0 * 279.0 / 600.0, 1.0);
  EXPECT_NEAR((e.x0 + e.x1) / 2.0, 149.5, 1.0);
}

TEST(CropCenter, AspectPreserved) {
  for (const auto& [w, h] : std::vector<std::pair<int, int>>{{500, 120}, {90, 450}, {300, 300}, {40, 280}}) {
    const RasterImage img = paint(w + 40, h + 40, {0, 0, 0}, {20, 20, 20 + w, 20 + h}, {255, 255, 255});
    const RasterImage c = crop_center(img, {20, 20, 20 + w, 20 + h});
    BinaryMask m(299, 299);
    for (int y = 0; y < 299; ++y)
      for (int x = 0; x < 299; ++x) m.set(x, y, c.at(x, y, 0) > 0);
    const BBox e = m.extent();
    const double s = std::min(1.0, 279.0 / std::max(w, h));
    EXPECT_NEAR(e.width(), w * s, 1.0) << w << "x" << h;
    EXPECT_NEAR(e.height(), h * s, 1.0) << w << "x" << h;
  }
}

TEST(CropCenter, CornerBboxUsesClippedRing) {
  const RasterImage img = paint(100, 100, {40, 50, 60}, {0, 0, 30, 30}, {250, 0, 0});
  const RasterImage c = crop_center(img, {0, 0, 30, 30});
  EXPECT_EQ(c.rgb(0, 0), (Rgb{40, 50, 60}));
  const RasterImage whole = crop_center(img, {0, 0, 100, 100});
  EXPECT_EQ(whole.width(), 299);
}

TEST(CropCenter, InvalidBboxes) {
  const RasterImage img(50, 50, 3);
  EXPECT_EQ(error_code([&] { crop_center(img, {10, 10, 10, 20}); }), Errc::InvalidBbox);
  EXPECT_EQ(error_code([&] { crop_center(img, {-1, 0, 10, 10}); }), Errc::InvalidBbox);
  EXPECT_EQ(error_code([&] { crop_center(img, {0, 0, 51, 10}); }), Errc::InvalidBbox);
}

TEST(ClassifierInput, FivePlanesInUnitRange) {
  const RasterImage crop = texture_background(299, 299, 11);
  const PlaneStack in = to_classifier_input(crop);
  EXPECT_EQ(in.planes(), 5);
  EXPECT_EQ(in.width(), 299);
  EXPECT_EQ(in.height(), 299);
  for (float v : in.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(ClassifierInput, GrayPlaneMatchesRecombinedRgb) {
  const PlaneStack in = to_classifier_input(texture_background(299, 299, 12));
  for (int y = 0; y < 299; y += 7)
    for (int x = 0; x < 299; x += 5) {
      const double g = 0.299 * in.at(0, x, y) + 0.587 * in.at(1, x, y) + 0.114 * in.at(2, x, y);
      EXPECT_NEAR(in.at(3, x, y), g, 1.0 / 255.0);
    }
}

TEST(ClassifierInput, ConstantCropHasZeroGradient) {
  const PlaneStack in = to_classifier_input(RasterImage::filled(299, 299, {128, 128, 128}));
  for (float v : in.plane(4)) EXPECT_EQ(v, 0.0f);
}

TEST(ClassifierInput, WrongShape) {
  EXPECT_EQ(error_code([] { to_classifier_input(RasterImage(298, 299, 3)); }), Errc::ShapeMismatch);
  EXPECT_EQ(error_code([] { to_classifier_input(RasterImage(299, 299, 1)); }), Errc::ShapeMismatch);
}

TEST(Detect, EndToEndOnOracleScene) {
  BinaryMask gt = block(400, 400, {40, 50, 120, 110});
  gt = block(400, 400, {250, 260, 330, 350}, gt);
  RasterImage img = RasterImage::filled(400, 400, {200, 200, 200});
  for (int y = 0; y < 400; ++y)
    for (int x = 0; x < 400; ++x)
      if (gt.get(x, y)) img.set_rgb(x, y, {20, 40, 160});
  const auto dets = detect(img, ScoreMap{as_scores(gt), 0.5f});
  ASSERT_EQ(dets.size(), 2u);
  for (const auto& d : dets) {
    EXPECT_EQ(d.input.planes(), 5);
    EXPECT_EQ(d.crop.width(), 299);
  }
  EXPECT_EQ(error_code([&] { detect(RasterImage(10, 10, 3), ScoreMap{PlaneStack(11, 10, 1), 0.5f}); }),
            Errc::DimensionMismatch);
}
