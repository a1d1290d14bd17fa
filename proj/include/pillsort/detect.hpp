#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pillsort/imaging.hpp"

namespace pillsort {

// Per-pixel foreground scores in [0, 1] plus the binarization threshold the
// producing backend recommends to localize().
struct ScoreMap {
  PlaneStack scores;
  float threshold = 0.5f;
};

class MaskStore {
 public:
  virtual ~MaskStore() = default;
  virtual std::optional<BinaryMask> find(std::string_view image_id) const = 0;
};

class InMemoryMaskStore final : public MaskStore {
 public:
  void put(std::string image_id, BinaryMask mask) { masks_[std::move(image_id)] = std::move(mask); }
  std::optional<BinaryMask> find(std::string_view image_id) const override;

 private:
  std::map<std::string, BinaryMask, std::less<>> masks_;
};

// Masks on disk; `paths` maps image_id to the PNG holding its mask.
class FileMaskStore final : public MaskStore {
 public:
  explicit FileMaskStore(std::map<std::string, std::filesystem::path, std::less<>> paths) : paths_(std::move(paths)) {}
  // <dir>/<image_id>.png for every id that has a file there.
  static FileMaskStore from_directory(const std::filesystem::path& dir, const std::vector<std::string>& image_ids);
  std::optional<BinaryMask> find(std::string_view image_id) const override;

 private:
  std::map<std::string, std::filesystem::path, std::less<>> paths_;
};

// Implementations are stateless after construction and safe to call from
// several threads at once.
class SegmentationBackend {
 public:
  virtual ~SegmentationBackend() = default;
  virtual std::string name() const = 0;
  virtual ScoreMap segment(std::string_view image_id, const RasterImage& image) const = 0;
};

// Ground-truth passthrough: the stored mask as 0/1 scores.
ScoreMap segment_oracle(std::string_view image_id, const MaskStore& store);

// Distance to the border-ring median color, normalized by its maximum, with
// an Otsu threshold over the score histogram.
ScoreMap segment_colordist(const RasterImage& image);

class OracleBackend final : public SegmentationBackend {
 public:
  explicit OracleBackend(std::shared_ptr<const MaskStore> store) : store_(std::move(store)) {}
  std::string name() const override { return "oracle"; }
  ScoreMap segment(std::string_view image_id, const RasterImage&) const override {
    return segment_oracle(image_id, *store_);
  }

 private:
  std::shared_ptr<const MaskStore> store_;
};

class ColorDistBackend final : public SegmentationBackend {
 public:
  std::string name() const override { return "colordist"; }
  ScoreMap segment(std::string_view, const RasterImage& image) const override { return segment_colordist(image); }
};

// Precomputed masks from another segmenter, read like the oracle.
class ExternalBackend final : public SegmentationBackend {
 public:
  explicit ExternalBackend(std::shared_ptr<const MaskStore> store) : store_(std::move(store)) {}
  std::string name() const override { return "external"; }
  ScoreMap segment(std::string_view image_id, const RasterImage&) const override {
    return segment_oracle(image_id, *store_);
  }

 private:
  std::shared_ptr<const MaskStore> store_;
};

// Builds "oracle", "colordist" or "external"; mask-backed kinds need a store.
std::unique_ptr<SegmentationBackend> make_segmentation_backend(std::string_view name,
                                                               std::shared_ptr<const MaskStore> store = nullptr);

struct LocalizeParams {
  float threshold = 0.5f;
  long long min_area = 100;
  int noise_side = 3;
  int dilate_side = 15;
};

// threshold -> remove_small -> open -> close -> dilate, in that order.
BinaryMask postprocess(const PlaneStack& scores, const LocalizeParams& p = {});
std::vector<Component> localize(const PlaneStack& scores, const LocalizeParams& p = {});

inline constexpr int kCropSide = 299;

// Pastes the bbox contents centered on an out_side square, downscaling
// uniformly when the longer side exceeds out_side - 2 * margin. The canvas is
// filled with the per-channel median of a 5-px ring just outside the bbox.
RasterImage crop_center(const RasterImage& image, const BBox& bbox, int out_side = kCropSide, int margin = 10);

// Planes R, G, B, gray, gradient, all in [0, 1].
PlaneStack to_classifier_input(const RasterImage& crop, int expected_side = kCropSide);

struct Detection {
  Component component;
  RasterImage crop;
  PlaneStack input;
};

std::vector<Detection> detect(const RasterImage& image, const ScoreMap& scores, LocalizeParams p = {});

}  // namespace pillsort
