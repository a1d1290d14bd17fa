#include "pillsort/eval.hpp"

#include <algorithm>
#include <numeric>

#include "pillsort/error.hpp"

namespace pillsort {

namespace {

class Neumaier {
 public:
  void add(double x) {
    const double t = sum_ + x;
    comp_ += std::abs(sum_) >= std::abs(x) ? (sum_ - t) + x : (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0, comp_ = 0;
};

int checked_label(const PredictionSet& preds, const std::string& id, int label) {
  if (label < 0 || label >= preds.class_count)
    throw Error(Errc::UnknownClass, "label " + std::to_string(label) + " of '" + id + "' outside the catalog");
  return label;
}

LabelMap restrict_labels(const LabelMap& labels, const std::vector<std::string>& ids) {
  LabelMap out;
  for (const auto& id : ids) {
    auto it = labels.find(id);
    if (it == labels.end()) throw Error(Errc::MissingGroundTruth, "no label for '" + id + "'");
    out.insert(*it);
  }
  return out;
}

}  // namespace

double topk_accuracy(const PredictionSet& preds, const LabelMap& labels, int k) {
  if (labels.empty()) throw Error(Errc::Undefined, "top-k accuracy over zero images");
  long long hits = 0;
  for (const auto& [id, label] : labels) {
    const auto ranked = top_k(preds.at(id), k);
    if (std::find(ranked.begin(), ranked.end(), checked_label(preds, id, label)) != ranked.end()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

PRCurve micro_ap(const PredictionSet& preds, const LabelMap& labels) {
  struct Item {
    double score;
    int image;
    int class_id;
    bool positive;
  };
  std::vector<Item> items;
  items.reserve(labels.size() * static_cast<std::size_t>(preds.class_count));
  int image = 0;
  // LabelMap iterates in image_id order, so the image index is the tie key.
  for (const auto& [id, label] : labels) {
    const auto& p = preds.at(id);
    checked_label(preds, id, label);
    for (int c = 0; c < preds.class_count; ++c) items.push_back({p[static_cast<std::size_t>(c)], image, c, c == label});
    ++image;
  }
  const long long positives = static_cast<long long>(labels.size());
  if (positives == 0) throw Error(Errc::Undefined, "average precision with zero positives");
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.class_id < b.class_id;
  });
  PRCurve curve;
  curve.points.reserve(static_cast<std::size_t>(positives));
  Neumaier ap;
  long long tp = 0;
  for (std::size_t n = 0; n < items.size(); ++n) {
    if (!items[n].positive) continue;
    ++tp;
    const double precision = static_cast<double>(tp) / static_cast<double>(n + 1);
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    ap.add(precision / static_cast<double>(positives));
    curve.points.push_back({recall, precision});
  }
  curve.average_precision = ap.value();
  return curve;
}

BinaryConfusion confusion_from(const std::vector<bool>& predicted, const std::vector<bool>& truth) {
  if (predicted.size() != truth.size()) throw Error(Errc::ShapeMismatch, "prediction and truth lengths differ");
  BinaryConfusion c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i]) (predicted[i] ? c.tp : c.fn)++;
    else (predicted[i] ? c.fp : c.tn)++;
  }
  return c;
}

BinaryMetrics binary_metrics(const BinaryConfusion& c) {
  if (c.tp < 0 || c.tn < 0 || c.fp < 0 || c.fn < 0) throw Error(Errc::EmptyConfusion, "negative confusion count");
  if (c.total() == 0) throw Error(Errc::EmptyConfusion, "confusion matrix is empty");
  auto ratio = [](long long num, long long den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  BinaryMetrics m;
  m.accuracy = ratio(c.tp + c.tn, c.total());
  m.recall = ratio(c.tp, c.tp + c.fn);
  m.precision = ratio(c.tp, c.tp + c.fp);
  // Harmonic mean of precision and recall, equal to 2tp / (2tp + fp + fn).
  if (m.recall && m.precision) m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  if (m.f1 && c.tp == 0) m.f1.reset();
  return m;
}

double roc_auc(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw Error(Errc::ShapeMismatch, "score and label lengths differ");
  const std::size_t n = scores.size();
  long long pos = 0;
  for (bool l : labels) pos += l ? 1 : 0;
  const long long neg = static_cast<long long>(n) - pos;
  if (pos == 0 || neg == 0) throw Error(Errc::Undefined, "AUC needs both classes");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the positive rank sum, with midranks for ties; integral throughout.
  long long twice_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const long long twice_midrank = static_cast<long long>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]]) twice_rank_sum += twice_midrank;
    i = j;
  }
  const double u = static_cast<double>(twice_rank_sum - pos * (pos + 1)) / 2.0;
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw Error(Errc::ShapeMismatch, "score and label lengths differ");
  long long pos = 0;
  for (bool l : labels) pos += l ? 1 : 0;
  const long long neg = static_cast<long long>(labels.size()) - pos;
  if (pos == 0 || neg == 0) throw Error(Errc::Undefined, "ROC needs both classes");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> out{{0.0, 0.0}};
  long long tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? tp : fp)++;
      ++j;
    }
    out.push_back({static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(tp) / static_cast<double>(pos)});
    i = j;
  }
  return out;
}

AgreementCounts agreement(const PredictionSet& a, const PredictionSet& b, const LabelMap& labels) {
  if (a.rows.size() != b.rows.size() || !std::equal(a.rows.begin(), a.rows.end(), b.rows.begin(),
                                                     [](const auto& x, const auto& y) { return x.first == y.first; }))
    throw Error(Errc::SetMismatch, "prediction sets cover different images");
  AgreementCounts out;
  for (const auto& [id, label] : labels) {
    const bool ca = a.at(id).argmax() == label;
    const bool cb = b.at(id).argmax() == label;
    if (ca && cb) ++out.both_correct;
    else if (!ca && !cb) ++out.both_wrong;
    else if (ca) ++out.only_a;
    else ++out.only_b;
  }
  return out;
}

DiceSummary dice_summary(const std::map<std::string, BinaryMask>& predicted,
                         const std::map<std::string, BinaryMask>& ground_truth) {
  if (predicted.empty() || ground_truth.empty()) throw Error(Errc::SetMismatch, "no mask pairs to compare");
  if (predicted.size() != ground_truth.size())
    throw Error(Errc::SetMismatch, "predicted and ground-truth masks cover different images");
  DiceSummary s;
  s.min = 1.0;
  s.max = 0.0;
  Neumaier total;
  for (const auto& [id, pm] : predicted) {
    auto it = ground_truth.find(id);
    if (it == ground_truth.end()) throw Error(Errc::SetMismatch, "no ground-truth mask for '" + id + "'");
    const double d = dice(pm, it->second);
    s.per_image.emplace_back(id, d);
    total.add(d);
    s.min = std::min(s.min, d);
    s.max = std::max(s.max, d);
  }
  s.mean = total.value() / static_cast<double>(s.per_image.size());
  return s;
}

SidePartitions partition_by_side(const std::map<std::string, Side>& sides) {
  SidePartitions p;
  for (const auto& [id, side] : sides) {
    switch (side) {
      case Side::Front:
      case Side::Both: p.front.push_back(id); break;
      case Side::Back: p.back.push_back(id); break;
      case Side::Unknown: throw Error(Errc::MissingSide, "image '" + id + "' has no side annotation");
    }
    p.all.push_back(id);
  }
  return p;
}

ClassificationMetrics classification_metrics(const PredictionSet& preds, const LabelMap& labels,
                                             const std::vector<std::string>& ids) {
  ClassificationMetrics m;
  m.size = ids.size();
  if (ids.empty()) return m;
  const LabelMap sub = restrict_labels(labels, ids);
  m.top1 = topk_accuracy(preds, sub, 1);
  m.top5 = topk_accuracy(preds, sub, std::min(5, preds.class_count));
  m.micro_ap = micro_ap(preds, sub).average_precision;
  return m;
}

Stratified side_stratified(const PredictionSet& preds, const LabelMap& labels, const std::map<std::string, Side>& sides) {
  const SidePartitions p = partition_by_side(sides);
  return {classification_metrics(preds, labels, p.front), classification_metrics(preds, labels, p.back),
          classification_metrics(preds, labels, p.all)};
}

}  // namespace pillsort
