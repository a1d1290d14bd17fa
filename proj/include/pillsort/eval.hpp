#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pillsort/classify.hpp"
#include "pillsort/dataset.hpp"
#include "pillsort/imaging.hpp"

namespace pillsort {

// image_id -> true class_id.
using LabelMap = std::map<std::string, int>;

double topk_accuracy(const PredictionSet& preds, const LabelMap& labels, int k);

struct PRPoint {
  double recall = 0.0;
  double precision = 0.0;
  friend bool operator==(const PRPoint&, const PRPoint&) = default;
};

struct PRCurve {
  std::vector<PRPoint> points;  // one per positive, in ranking order
  double average_precision = 0.0;
  friend bool operator==(const PRCurve&, const PRCurve&) = default;
};

// Pooled one-vs-rest ranking of every (image, class) score. Ties rank by
// image_id then class_id; AP is the uninterpolated step sum.
PRCurve micro_ap(const PredictionSet& preds, const LabelMap& labels);

struct BinaryConfusion {
  long long tp = 0;
  long long tn = 0;
  long long fp = 0;
  long long fn = 0;
  long long total() const { return tp + tn + fp + fn; }
  friend bool operator==(const BinaryConfusion&, const BinaryConfusion&) = default;
};

BinaryConfusion confusion_from(const std::vector<bool>& predicted, const std::vector<bool>& truth);

// Ratios with a zero denominator are nullopt.
struct BinaryMetrics {
  std::optional<double> accuracy;
  std::optional<double> recall;
  std::optional<double> precision;
  std::optional<double> f1;
};

BinaryMetrics binary_metrics(const BinaryConfusion& c);

// Mann-Whitney estimate; tied (positive, negative) pairs count one half.
double roc_auc(const std::vector<double>& scores, const std::vector<bool>& labels);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

// Starts at (0, 0) and adds one point per distinct score, descending.
std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<bool>& labels);

struct AgreementCounts {
  long long both_correct = 0;
  long long both_wrong = 0;
  long long only_a = 0;
  long long only_b = 0;
  long long total() const { return both_correct + both_wrong + only_a + only_b; }
  friend bool operator==(const AgreementCounts&, const AgreementCounts&) = default;
};

// Top-1 correctness of two prediction sets over the labeled images.
AgreementCounts agreement(const PredictionSet& a, const PredictionSet& b, const LabelMap& labels);

struct DiceSummary {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::vector<std::pair<std::string, double>> per_image;
};

DiceSummary dice_summary(const std::map<std::string, BinaryMask>& predicted,
                         const std::map<std::string, BinaryMask>& ground_truth);

// Side=both is grouped with front.
struct SidePartitions {
  std::vector<std::string> front;
  std::vector<std::string> back;
  std::vector<std::string> all;
};

SidePartitions partition_by_side(const std::map<std::string, Side>& sides);

struct ClassificationMetrics {
  std::size_t size = 0;
  std::optional<double> top1;
  std::optional<double> top5;
  std::optional<double> micro_ap;
};

// Metrics restricted to `ids`; empty partitions give nullopt metrics.
ClassificationMetrics classification_metrics(const PredictionSet& preds, const LabelMap& labels,
                                             const std::vector<std::string>& ids);

struct Stratified {
  ClassificationMetrics front;
  ClassificationMetrics back;
  ClassificationMetrics all;
};

Stratified side_stratified(const PredictionSet& preds, const LabelMap& labels, const std::map<std::string, Side>& sides);

}  // namespace pillsort
