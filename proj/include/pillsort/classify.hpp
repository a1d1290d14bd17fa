#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pillsort/dataset.hpp"
#include "pillsort/imaging.hpp"

namespace pillsort {

// A probability distribution over catalog classes. Construction rejects
// negative entries and sums further than 1e-6 from one.
class ProbVector {
 public:
  ProbVector() = default;
  explicit ProbVector(std::vector<double> values);
  // Divides by the sum; throws NotADistribution on negatives or a zero sum.
  static ProbVector normalized(std::vector<double> values);

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const { return values_; }
  int argmax() const;

  friend bool operator==(const ProbVector&, const ProbVector&) = default;

 private:
  std::vector<double> values_;
};

struct PredictionSet {
  int class_count = 0;
  std::map<std::string, ProbVector> rows;

  void put(std::string image_id, ProbVector p);
  const ProbVector& at(const std::string& image_id) const;  // MissingPrediction
  friend bool operator==(const PredictionSet&, const PredictionSet&) = default;
};

// CSV with header image_id,p_0,...,p_{N-1}. Rows within 1e-3 of unit sum are
// renormalized.
PredictionSet parse_predictions(std::string_view text, int class_count);
PredictionSet load_predictions(const std::filesystem::path& path, int class_count);
std::string predictions_to_csv(const PredictionSet& set);
void write_predictions(const std::filesystem::path& path, const PredictionSet& set);

ProbVector ensemble(const std::vector<ProbVector>& vs);
// Row-wise ensemble; every set must cover the same images.
PredictionSet ensemble(const std::vector<PredictionSet>& sets);
ProbVector combine_sides(const ProbVector& front, const ProbVector& back);
std::vector<int> top_k(const ProbVector& p, int k);

// 8x8x4 HSV histogram, area fraction, principal-axis aspect ratio, 7 Hu
// moments, mean RGB.
inline constexpr int kFeatureDims = 256 + 1 + 1 + 7 + 3;

// Foreground estimate of a classifier crop: color distance to the border
// median, Otsu split, 3x3 open/close, largest component.
BinaryMask estimate_crop_mask(const PlaneStack& input);
std::vector<double> extract_features(const PlaneStack& input);

struct ReferenceCrop {
  int class_id = 0;
  PlaneStack input;
};

class ReferenceFeatureIndex {
 public:
  struct Entry {
    int class_id;
    std::vector<double> features;  // already normalized
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  ReferenceFeatureIndex() = default;
  ReferenceFeatureIndex(int class_count, std::vector<double> mean, std::vector<double> scale, std::vector<Entry> entries);

  int class_count() const { return class_count_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<double> normalize(const std::vector<double>& raw) const;

  // Text format: "pillsort-index 1" then mean, scale and one line per entry.
  std::string serialize() const;
  static ReferenceFeatureIndex deserialize(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static ReferenceFeatureIndex load(const std::filesystem::path& path);

  friend bool operator==(const ReferenceFeatureIndex&, const ReferenceFeatureIndex&) = default;

 private:
  int class_count_ = 0;
  std::vector<double> mean_;
  std::vector<double> scale_;
  std::vector<Entry> entries_;
};

ReferenceFeatureIndex build_index(int class_count, const std::vector<ReferenceCrop>& crops, int workers = 1);
ReferenceFeatureIndex build_index(const Manifest& manifest, const std::vector<ReferenceCrop>& crops, int workers = 1);

// Locates the pill on a studio reference photo and returns its classifier
// input, cropped the same way detections are.
PlaneStack reference_input(const RasterImage& reference);
// Crops for every reference record of the manifest, ordered by image_id and
// then by scale. Each scale resizes the reference photo before cropping.
std::vector<ReferenceCrop> reference_crops(const Manifest& manifest, const std::filesystem::path& manifest_dir,
                                           int workers = 1, const std::vector<double>& scales = {1.0});

ProbVector predict_baseline(const ReferenceFeatureIndex& index, const PlaneStack& input, double temperature = 1.0);

class ClassifierBackend {
 public:
  virtual ~ClassifierBackend() = default;
  virtual std::string name() const = 0;
  virtual int class_count() const = 0;
  virtual ProbVector predict(const PlaneStack& input) const = 0;
};

class BaselineClassifier final : public ClassifierBackend {
 public:
  explicit BaselineClassifier(ReferenceFeatureIndex index, double temperature = 1.0)
      : index_(std::move(index)), temperature_(temperature) {}
  std::string name() const override { return "baseline"; }
  int class_count() const override { return index_.class_count(); }
  ProbVector predict(const PlaneStack& input) const override {
    return predict_baseline(index_, input, temperature_);
  }

 private:
  ReferenceFeatureIndex index_;
  double temperature_;
};

}  // namespace pillsort
