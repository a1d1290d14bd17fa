#include "pillsort/classify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "pillsort/csv.hpp"
#include "pillsort/detect.hpp"
#include "pillsort/error.hpp"
#include "pillsort/image_io.hpp"
#include "pillsort/parallel.hpp"
#include "pillsort/transform.hpp"

namespace pillsort {

namespace {

double neumaier_sum(const std::vector<double>& v) {
  double sum = 0, comp = 0;
  for (double x : v) {
    const double t = sum + x;
    comp += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  return sum + comp;
}

void check_entries(const std::vector<double>& v) {
  for (double x : v)
    if (!(x >= 0) || !std::isfinite(x)) throw Error(Errc::NotADistribution, "negative or non-finite probability");
}

}  // namespace

ProbVector::ProbVector(std::vector<double> values) : values_(std::move(values)) {
  check_entries(values_);
  const double s = neumaier_sum(values_);
  if (std::abs(s - 1.0) > 1e-6)
    throw Error(Errc::NotADistribution, "probabilities sum to " + csv::format_double(s));
}

ProbVector ProbVector::normalized(std::vector<double> values) {
  check_entries(values);
  const double s = neumaier_sum(values);
  if (!(s > 0)) throw Error(Errc::NotADistribution, "probabilities sum to zero");
  for (double& x : values) x /= s;
  return ProbVector(std::move(values));
}

int ProbVector::argmax() const {
  if (values_.empty()) throw Error(Errc::ShapeMismatch, "empty probability vector");
  return static_cast<int>(std::max_element(values_.begin(), values_.end()) - values_.begin());
}

void PredictionSet::put(std::string image_id, ProbVector p) {
  if (static_cast<int>(p.size()) != class_count)
    throw Error(Errc::ShapeMismatch, "row '" + image_id + "' has " + std::to_string(p.size()) + " entries, expected " +
                                         std::to_string(class_count));
  rows.insert_or_assign(std::move(image_id), std::move(p));
}

const ProbVector& PredictionSet::at(const std::string& image_id) const {
  auto it = rows.find(image_id);
  if (it == rows.end()) throw Error(Errc::MissingPrediction, "no prediction for '" + image_id + "'");
  return it->second;
}

PredictionSet parse_predictions(std::string_view text, int class_count) {
  const auto rows = csv::parse(text);
  if (rows.empty()) throw Error(Errc::ParseError, "prediction file has no header");
  const auto& header = rows.front().fields;
  if (header.empty() || header[0] != "image_id") throw Error(Errc::ParseError, "prediction header must start with image_id");
  if (static_cast<int>(header.size()) - 1 != class_count)
    throw Error(Errc::ShapeMismatch, "prediction header has " + std::to_string(header.size() - 1) + " classes, catalog has " +
                                         std::to_string(class_count));
  PredictionSet out{class_count, {}};
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string where = " at line " + std::to_string(row.line);
    if (static_cast<int>(row.fields.size()) - 1 != class_count)
      throw Error(Errc::ShapeMismatch, "row has " + std::to_string(row.fields.size() - 1) + " values" + where);
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(class_count));
    for (std::size_t i = 1; i < row.fields.size(); ++i) {
      const auto d = csv::parse_double(row.fields[i]);
      if (!d) throw Error(Errc::ParseError, "bad probability '" + row.fields[i] + "'" + where);
      if (*d < 0 || !std::isfinite(*d)) throw Error(Errc::NotADistribution, "negative probability" + where);
      v.push_back(*d);
    }
    const double s = neumaier_sum(v);
    if (std::abs(s - 1.0) > 1e-3 + 1e-12) throw Error(Errc::NotADistribution, "row sums to " + csv::format_double(s) + where);
    if (out.rows.count(row.fields[0])) throw Error(Errc::ParseError, "duplicate image_id '" + row.fields[0] + "'" + where);
    // Rows already on the simplex are kept bit-exact.
    out.put(row.fields[0], std::abs(s - 1.0) <= 1e-6 ? ProbVector(std::move(v)) : ProbVector::normalized(std::move(v)));
  }
  return out;
}

PredictionSet load_predictions(const std::filesystem::path& path, int class_count) {
  try {
    return parse_predictions(csv::read_text(path), class_count);
  } catch (const Error& e) {
    if (e.code() == Errc::Io) throw;
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::string predictions_to_csv(const PredictionSet& set) {
  std::string out = "image_id";
  for (int c = 0; c < set.class_count; ++c) out += ",p_" + std::to_string(c);
  out += '\n';
  for (const auto& [id, p] : set.rows) {
    out += csv::quote(id);
    for (double v : p.values()) out += ',' + csv::format_double(v);
    out += '\n';
  }
  return out;
}

void write_predictions(const std::filesystem::path& path, const PredictionSet& set) {
  csv::write_text(path, predictions_to_csv(set));
}

ProbVector ensemble(const std::vector<ProbVector>& vs) {
  if (vs.empty()) throw Error(Errc::EmptyEnsemble, "ensemble of nothing");
  const std::size_t n = vs.front().size();
  for (const auto& v : vs)
    if (v.size() != n) throw Error(Errc::ShapeMismatch, "ensemble members differ in length");
  std::vector<double> mean(n);
  std::vector<double> column(vs.size());
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t i = 0; i < vs.size(); ++i) column[i] = vs[i][c];
    // Sorting the column makes the mean independent of member order.
    std::sort(column.begin(), column.end());
    mean[c] = neumaier_sum(column) / static_cast<double>(vs.size());
  }
  return ProbVector(std::move(mean));
}

PredictionSet ensemble(const std::vector<PredictionSet>& sets) {
  if (sets.empty()) throw Error(Errc::EmptyEnsemble, "ensemble of no prediction sets");
  PredictionSet out{sets.front().class_count, {}};
  for (const auto& s : sets) {
    if (s.class_count != out.class_count) throw Error(Errc::ShapeMismatch, "prediction sets differ in class count");
    if (s.rows.size() != sets.front().rows.size()) throw Error(Errc::SetMismatch, "prediction sets cover different images");
  }
  for (const auto& [id, _] : sets.front().rows) {
    std::vector<ProbVector> members;
    for (const auto& s : sets) {
      auto it = s.rows.find(id);
      if (it == s.rows.end()) throw Error(Errc::SetMismatch, "image '" + id + "' missing from a prediction set");
      members.push_back(it->second);
    }
    out.put(id, ensemble(members));
  }
  return out;
}

ProbVector combine_sides(const ProbVector& front, const ProbVector& back) {
  if (front.size() != back.size()) throw Error(Errc::ShapeMismatch, "front and back vectors differ in length");
  std::vector<double> v(front.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (front[i] + back[i]) / 2.0;
  return ProbVector(std::move(v));
}

std::vector<int> top_k(const ProbVector& p, int k) {
  const int n = static_cast<int>(p.size());
  if (k < 1 || k > n) throw Error(Errc::InvalidK, "k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  auto before = [&](int a, int b) { return p[a] != p[b] ? p[a] > p[b] : a < b; };
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), before);
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

namespace {

RasterImage planes_to_rgb(const PlaneStack& input) {
  if (input.planes() < 3) throw Error(Errc::ShapeMismatch, "classifier input needs RGB planes");
  RasterImage img(input.width(), input.height(), 3);
  for (int y = 0; y < input.height(); ++y)
    for (int x = 0; x < input.width(); ++x)
      for (int c = 0; c < 3; ++c)
        img.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(input.at(c, x, y) * 255.0f), 0L, 255L));
  return img;
}

RasterImage as_rgb(const RasterImage& img) {
  if (img.channels() == 3) return img;
  RasterImage out(img.width(), img.height(), 3);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out.set_rgb(x, y, img.rgb(x, y));
  return out;
}

BinaryMask largest_component(const BinaryMask& m) {
  const Labeling lab = label_components(m);
  if (lab.components.empty()) return m;
  int best = 0;
  for (std::size_t i = 1; i < lab.components.size(); ++i)
    if (lab.components[i].area > lab.components[static_cast<std::size_t>(best)].area) best = static_cast<int>(i);
  return component_mask(lab, lab.components[static_cast<std::size_t>(best)].label);
}

}  // namespace

BinaryMask estimate_crop_mask(const PlaneStack& input) {
  const ScoreMap s = segment_colordist(planes_to_rgb(input));
  const StructuringElement se(3);
  BinaryMask m = close(open(threshold(s.scores, s.threshold), se), se);
  m = largest_component(m);
  if (!m.any()) return BinaryMask(input.width(), input.height(), true);
  return m;
}

std::vector<double> extract_features(const PlaneStack& input) {
  const BinaryMask mask = estimate_crop_mask(input);
  std::vector<double> f(kFeatureDims, 0.0);
  double n = 0, sx = 0, sy = 0, sr = 0, sg = 0, sb = 0;
  for (int y = 0; y < input.height(); ++y)
    for (int x = 0; x < input.width(); ++x) {
      if (!mask.get(x, y)) continue;
      const double r = input.at(0, x, y), g = input.at(1, x, y), b = input.at(2, x, y);
      const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), delta = mx - mn;
      double h = 0;
      if (delta > 0) {
        if (mx == r) h = 60.0 * std::fmod((g - b) / delta, 6.0);
        else if (mx == g) h = 60.0 * ((b - r) / delta + 2.0);
        else h = 60.0 * ((r - g) / delta + 4.0);
        if (h < 0) h += 360.0;
      }
      const double s = mx > 0 ? delta / mx : 0.0;
      const int hb = std::min(7, static_cast<int>(h / 45.0));
      const int sbin = std::min(7, static_cast<int>(s * 8.0));
      const int vb = std::min(3, static_cast<int>(mx * 4.0));
      f[static_cast<std::size_t>((hb * 8 + sbin) * 4 + vb)] += 1;
      n += 1;
      sx += x;
      sy += y;
      sr += r;
      sg += g;
      sb += b;
    }
  for (int i = 0; i < 256; ++i) f[static_cast<std::size_t>(i)] /= n;
  f[256] = n / (static_cast<double>(input.width()) * input.height());

  const double cx = sx / n, cy = sy / n;
  double mu[4][4] = {};
  for (int y = 0; y < input.height(); ++y)
    for (int x = 0; x < input.width(); ++x) {
      if (!mask.get(x, y)) continue;
      const double dx = x - cx, dy = y - cy;
      double px = 1;
      for (int p = 0; p < 4; ++p) {
        double py = 1;
        for (int q = 0; p + q < 4; ++q) {
          mu[p][q] += px * py;
          py *= dy;
        }
        px *= dx;
      }
    }
  const double cxx = mu[2][0] / n, cyy = mu[0][2] / n, cxy = mu[1][1] / n;
  const double tr = cxx + cyy, disc = std::sqrt(std::max(0.0, (cxx - cyy) * (cxx - cyy) + 4 * cxy * cxy));
  const double l1 = (tr + disc) / 2, l2 = (tr - disc) / 2;
  f[257] = l1 > 0 ? std::sqrt(std::max(0.0, l2) / l1) : 1.0;

  auto eta = [&](int p, int q) { return mu[p][q] / std::pow(n, 1.0 + (p + q) / 2.0); };
  const double n20 = eta(2, 0), n02 = eta(0, 2), n11 = eta(1, 1);
  const double n30 = eta(3, 0), n03 = eta(0, 3), n21 = eta(2, 1), n12 = eta(1, 2);
  const double a = n30 + n12, b = n21 + n03;
  f[258] = n20 + n02;
  f[259] = (n20 - n02) * (n20 - n02) + 4 * n11 * n11;
  f[260] = (n30 - 3 * n12) * (n30 - 3 * n12) + (3 * n21 - n03) * (3 * n21 - n03);
  f[261] = a * a + b * b;
  f[262] = (n30 - 3 * n12) * a * (a * a - 3 * b * b) + (3 * n21 - n03) * b * (3 * a * a - b * b);
  f[263] = (n20 - n02) * (a * a - b * b) + 4 * n11 * a * b;
  f[264] = (3 * n21 - n03) * a * (a * a - 3 * b * b) - (n30 - 3 * n12) * b * (3 * a * a - b * b);

  f[265] = sr / n;
  f[266] = sg / n;
  f[267] = sb / n;
  return f;
}

ReferenceFeatureIndex::ReferenceFeatureIndex(int class_count, std::vector<double> mean, std::vector<double> scale,
                                             std::vector<Entry> entries)
    : class_count_(class_count), mean_(std::move(mean)), scale_(std::move(scale)), entries_(std::move(entries)) {
  if (mean_.size() != scale_.size()) throw Error(Errc::ShapeMismatch, "index statistics differ in length");
  std::vector<bool> seen(static_cast<std::size_t>(std::max(class_count_, 0)), false);
  for (const auto& e : entries_) {
    if (e.features.size() != mean_.size()) throw Error(Errc::ShapeMismatch, "index entry has wrong dimension");
    if (e.class_id < 0 || e.class_id >= class_count_)
      throw Error(Errc::UnknownClass, "index entry for class " + std::to_string(e.class_id));
    seen[static_cast<std::size_t>(e.class_id)] = true;
  }
  for (int c = 0; c < class_count_; ++c)
    if (!seen[static_cast<std::size_t>(c)]) throw Error(Errc::MissingClass, "class " + std::to_string(c) + " has no reference");
}

std::vector<double> ReferenceFeatureIndex::normalize(const std::vector<double>& raw) const {
  if (raw.size() != mean_.size()) throw Error(Errc::ShapeMismatch, "feature vector has wrong dimension");
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - mean_[i]) / scale_[i];
  return out;
}

std::string ReferenceFeatureIndex::serialize() const {
  std::string out = "pillsort-index 1\n";
  out += "classes " + std::to_string(class_count_) + " dims " + std::to_string(mean_.size()) + " entries " +
         std::to_string(entries_.size()) + '\n';
  auto line = [&](std::string_view tag, const std::vector<double>& v) {
    out += tag;
    for (double x : v) out += ' ' + csv::format_double(x);
    out += '\n';
  };
  line("mean", mean_);
  line("scale", scale_);
  for (const auto& e : entries_) line("entry " + std::to_string(e.class_id), e.features);
  return out;
}

ReferenceFeatureIndex ReferenceFeatureIndex::deserialize(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string magic, tag;
  int version = 0, classes = 0;
  std::size_t dims = 0, n_entries = 0;
  auto fail = [](const std::string& what) { return Error(Errc::ParseError, "index: " + what); };
  if (!(in >> magic >> version) || magic != "pillsort-index") throw fail("missing header");
  if (version != 1) throw fail("unsupported version " + std::to_string(version));
  std::string t1, t2, t3;
  if (!(in >> t1 >> classes >> t2 >> dims >> t3 >> n_entries) || t1 != "classes" || t2 != "dims" || t3 != "entries")
    throw fail("bad size line");
  auto read_vec = [&](std::vector<double>& v) {
    v.resize(dims);
    for (auto& x : v) {
      std::string tok;
      if (!(in >> tok)) throw fail("truncated vector");
      const auto d = csv::parse_double(tok);
      if (!d) throw fail("bad number '" + tok + "'");
      x = *d;
    }
  };
  std::vector<double> mean, scale;
  if (!(in >> tag) || tag != "mean") throw fail("expected mean");
  read_vec(mean);
  if (!(in >> tag) || tag != "scale") throw fail("expected scale");
  read_vec(scale);
  std::vector<Entry> entries(n_entries);
  for (auto& e : entries) {
    if (!(in >> tag >> e.class_id) || tag != "entry") throw fail("expected entry");
    read_vec(e.features);
  }
  return ReferenceFeatureIndex(classes, std::move(mean), std::move(scale), std::move(entries));
}

void ReferenceFeatureIndex::save(const std::filesystem::path& path) const { csv::write_text(path, serialize()); }

ReferenceFeatureIndex ReferenceFeatureIndex::load(const std::filesystem::path& path) {
  return deserialize(csv::read_text(path));
}

ReferenceFeatureIndex build_index(int class_count, const std::vector<ReferenceCrop>& crops, int workers) {
  std::vector<int> per_class(static_cast<std::size_t>(std::max(class_count, 0)), 0);
  for (const auto& c : crops) {
    if (c.class_id < 0 || c.class_id >= class_count)
      throw Error(Errc::UnknownClass, "crop for class " + std::to_string(c.class_id));
    ++per_class[static_cast<std::size_t>(c.class_id)];
  }
  for (int c = 0; c < class_count; ++c)
    if (per_class[static_cast<std::size_t>(c)] == 0)
      throw Error(Errc::MissingClass, "class " + std::to_string(c) + " has no reference crop");

  std::vector<std::vector<double>> raw(crops.size());
  parallel_for(crops.size(), workers, [&](std::size_t i) { raw[i] = extract_features(crops[i].input); });

  std::vector<double> mean(kFeatureDims, 0.0), scale(kFeatureDims, 0.0);
  const double n = static_cast<double>(raw.size());
  for (const auto& f : raw)
    for (int d = 0; d < kFeatureDims; ++d) mean[static_cast<std::size_t>(d)] += f[static_cast<std::size_t>(d)] / n;
  for (const auto& f : raw)
    for (int d = 0; d < kFeatureDims; ++d) {
      const double dv = f[static_cast<std::size_t>(d)] - mean[static_cast<std::size_t>(d)];
      scale[static_cast<std::size_t>(d)] += dv * dv / n;
    }
  for (double& s : scale) s = std::max(std::sqrt(s), 0.01);

  std::vector<ReferenceFeatureIndex::Entry> entries;
  entries.reserve(crops.size());
  for (std::size_t i = 0; i < crops.size(); ++i) {
    std::vector<double> z(kFeatureDims);
    for (std::size_t d = 0; d < z.size(); ++d) z[d] = (raw[i][d] - mean[d]) / scale[d];
    entries.push_back({crops[i].class_id, std::move(z)});
  }
  return ReferenceFeatureIndex(class_count, std::move(mean), std::move(scale), std::move(entries));
}

ReferenceFeatureIndex build_index(const Manifest& manifest, const std::vector<ReferenceCrop>& crops, int workers) {
  return build_index(manifest.class_count(), crops, workers);
}

PlaneStack reference_input(const RasterImage& reference) {
  const RasterImage rgb = as_rgb(reference);
  const ScoreMap s = segment_colordist(rgb);
  LocalizeParams p;
  p.threshold = s.threshold;
  const auto comps = localize(s.scores, p);
  if (comps.empty()) throw Error(Errc::NoForeground, "no pill found on reference image");
  const auto best = std::max_element(comps.begin(), comps.end(),
                                     [](const Component& a, const Component& b) { return a.area < b.area; });
  return to_classifier_input(crop_center(rgb, best->bbox));
}

std::vector<ReferenceCrop> reference_crops(const Manifest& manifest, const std::filesystem::path& manifest_dir,
                                           int workers, const std::vector<double>& scales) {
  if (scales.empty()) throw Error(Errc::InvalidAugment, "no crop scales given");
  for (double s : scales)
    if (!(s > 0)) throw Error(Errc::InvalidAugment, "crop scale must be positive");
  std::vector<const ImageRecord*> refs;
  for (const auto& r : manifest.records)
    if (r.kind == ImageKind::Reference) refs.push_back(&r);
  std::sort(refs.begin(), refs.end(), [](auto* a, auto* b) { return a->image_id < b->image_id; });
  std::vector<ReferenceCrop> out(refs.size() * scales.size());
  parallel_for(refs.size(), workers, [&](std::size_t i) {
    try {
      const RasterImage img = as_rgb(read_png(resolve(manifest_dir, refs[i]->path)));
      for (std::size_t k = 0; k < scales.size(); ++k) {
        const double s = scales[k];
        const RasterImage scaled =
            s == 1.0 ? img
                     : resize_bilinear(img, std::max(1, static_cast<int>(std::lround(img.width() * s))),
                                       std::max(1, static_cast<int>(std::lround(img.height() * s))));
        out[i * scales.size() + k] = {refs[i]->class_id, reference_input(scaled)};
      }
    } catch (const Error& e) {
      if (e.code() == Errc::Io) throw;
      throw Error(e.code(), refs[i]->image_id + ": " + e.what());
    }
  });
  return out;
}

ProbVector predict_baseline(const ReferenceFeatureIndex& index, const PlaneStack& input, double temperature) {
  if (index.entries().empty()) throw Error(Errc::MissingClass, "empty reference index");
  if (!(temperature > 0)) throw Error(Errc::InvalidThreshold, "temperature must be positive");
  const auto q = index.normalize(extract_features(input));
  std::vector<double> d(static_cast<std::size_t>(index.class_count()), std::numeric_limits<double>::infinity());
  for (const auto& e : index.entries()) {
    double s = 0;
    for (std::size_t i = 0; i < q.size(); ++i) s += (q[i] - e.features[i]) * (q[i] - e.features[i]);
    auto& slot = d[static_cast<std::size_t>(e.class_id)];
    slot = std::min(slot, std::sqrt(s));
  }
  const double dmin = *std::min_element(d.begin(), d.end());
  std::vector<double> w(d.size());
  for (std::size_t c = 0; c < d.size(); ++c) w[c] = std::exp(-(d[c] - dmin) / temperature);
  return ProbVector::normalized(std::move(w));
}

}  // namespace pillsort
