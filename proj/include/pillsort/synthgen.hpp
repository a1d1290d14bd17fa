#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pillsort/dataset.hpp"
#include "pillsort/imaging.hpp"
#include "pillsort/random.hpp"

namespace pillsort {

struct PillCutout {
  RasterImage pixels;
  BinaryMask mask;
  std::string source_image_id;
  int class_id = 0;
};

inline constexpr Rgb kReferenceBackground{118, 118, 118};

// Background is every pixel within `tolerance` (max per-channel distance) of
// bg_color; the rest is cleaned with a 3x3 open then close and the largest
// component is kept, cropped to its bounding box.
PillCutout extract_cutout(const RasterImage& reference, Rgb bg_color = kReferenceBackground, int tolerance = 8,
                          std::string source_image_id = {}, int class_id = 0);

struct SceneSpec {
  int canvas_width = 400;
  int canvas_height = 400;
  int min_pills = 1;
  int max_pills = 3;
  int shadow_offset_min = 0;
  int shadow_offset_max = 25;
  double shadow_sigma = 3.0;
  double shadow_opacity = 0.4;
  double blur_sigma_min = 0.0;
  double blur_sigma_max = 1.5;
  double perspective_jitter = 0.08;
  double scale_min = 0.7;
  double scale_max = 1.3;
  bool allow_overlap = false;
  // Minimum pixel gap between pill masks when overlap is disallowed.
  int min_separation = 20;
  // Distance from the canvas edge kept free of pills; negative selects
  // ceil(perspective_jitter * max(canvas)) + 2 so warping never clips a pill.
  int edge_margin = -1;
  int max_attempts = 100;
  std::uint64_t seed = 0;

  void validate() const;
  int effective_margin() const;
};

struct SceneOutput {
  RasterImage image;
  BinaryMask gt_mask;
  std::vector<Placement> placements;  // bbox = final (warped) extent of each pill
};

SceneOutput compose_scene(const SceneSpec& spec, const std::vector<PillCutout>& pool, const RasterImage& background);

enum class Flip { None, Horizontal, Vertical };

struct AugmentSpec {
  double rotation = 0.0;  // degrees, counter-clockwise
  Flip flip = Flip::None;
  double smooth_sigma = 0.0;
  double sharpen_amount = 0.0;
  std::optional<int> jpeg_quality;
  double contrast = 1.0;
  double brightness = 0.0;

  void validate() const;
};

// flip -> rotation -> smooth -> sharpen -> contrast/brightness -> jpeg.
RasterImage augment(const RasterImage& img, const AugmentSpec& a);
// A random augmentation drawn from moderate ranges.
AugmentSpec sample_augment(std::uint64_t seed);

// Maximum-area rectangle free of set pixels. Ties go to the smallest
// (y0, x0, y1, x1). Throws EmptyResult when every pixel is set.
BBox largest_empty_rectangle(const BinaryMask& mask);

// Smooth multi-octave value-noise texture used when no photographic
// backgrounds are supplied.
RasterImage texture_background(int width, int height, std::uint64_t seed);

struct GenerationOptions {
  int workers = 1;
  // Photographic backgrounds; when empty each scene gets a procedural texture.
  std::vector<RasterImage> backgrounds;
  // Reseeds tried when a scene cannot place its pills.
  int placement_retries = 8;
};

// Cutouts from every reference record, ordered by image_id.
std::vector<PillCutout> load_cutouts(const Manifest& manifest, const std::filesystem::path& manifest_dir);

// Writes scene_%06d.png / scene_%06d_mask.png under out_dir. Scene i is
// seeded with mix_seed(spec.seed, i).
Manifest generate_detection_set(const Manifest& manifest, const std::filesystem::path& manifest_dir,
                                const SceneSpec& spec, int n_scenes, const std::filesystem::path& out_dir,
                                const GenerationOptions& options = {});

// Same scenes in memory, no files.
std::vector<SceneOutput> generate_scenes(const std::vector<PillCutout>& pool, const SceneSpec& spec, int n_scenes,
                                         const GenerationOptions& options = {});

struct FrontBackOptions {
  int side = 299;
  std::uint64_t seed = 0;
  int workers = 1;
  double perspective_jitter = 0.05;
  double blur_sigma_max = 1.0;
  double contrast_min = 0.8;
  double contrast_max = 1.2;
};

// Pairs of front/back 299x299 images of the same class. Backgrounds are the
// largest empty rectangles of test-split records that have a mask next to
// them; with none available a procedural texture is used.
Manifest generate_frontback_set(const Manifest& manifest, const std::filesystem::path& manifest_dir, int n_pairs,
                                const std::filesystem::path& out_dir, const FrontBackOptions& options = {});

// Mask path convention for generated images: foo.png -> foo_mask.png.
std::filesystem::path mask_path_for(const std::filesystem::path& image_path);

}  // namespace pillsort
