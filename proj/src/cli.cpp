#include "pillsort/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <optional>
#include <random>
#include <regex>
#include <set>

#include <CLI11.hpp>

#include "pillsort/classify.hpp"
#include "pillsort/csv.hpp"
#include "pillsort/dataset.hpp"
#include "pillsort/detect.hpp"
#include "pillsort/error.hpp"
#include "pillsort/eval.hpp"
#include "pillsort/fixtures.hpp"
#include "pillsort/hazard.hpp"
#include "pillsort/image_io.hpp"
#include "pillsort/parallel.hpp"
#include "pillsort/report.hpp"
#include "pillsort/synthgen.hpp"
#include "pillsort/transform.hpp"

namespace pillsort::cli {

namespace fs = std::filesystem;

namespace {

struct StageFailure : std::runtime_error {
  StageFailure(std::string stage, const std::string& what, bool io)
      : std::runtime_error(what), stage(std::move(stage)), io(io) {}
  std::string stage;
  bool io;
};

template <typename Fn>
auto stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw StageFailure(name, e.what(), e.code() == Errc::Io);
  } catch (const StageFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw StageFailure(name, e.what(), false);
  }
}

struct Globals {
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::string out;
  std::uint64_t resolved_seed = 0;
  std::string config_hash;
};

// Hash of the invocation minus flags that must not change outputs.
std::string config_hash(const std::vector<std::string>& args) {
  static const std::set<std::string> kIgnored = {"--workers", "--out"};
  std::string canon;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const auto& a = args[i];
    const auto eq = a.find('=');
    if (kIgnored.count(a.substr(0, eq))) {
      if (eq == std::string::npos) ++i;
      continue;
    }
    canon += a;
    canon += '\x1f';
  }
  return hex64(fnv1a(canon));
}

RasterImage as_rgb(const RasterImage& img) {
  if (img.channels() == 3) return img;
  RasterImage out(img.width(), img.height(), 3);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out.set_rgb(x, y, img.rgb(x, y));
  return out;
}

fs::path out_dir(const Globals& g) {
  if (g.out.empty()) throw Error(Errc::ParseError, "--out is required");
  std::error_code ec;
  fs::create_directories(g.out, ec);
  if (ec) throw Error(Errc::Io, g.out + ": " + ec.message());
  return g.out;
}

// Path of `p` (relative to from_dir) re-expressed relative to to_dir.
std::string rebase(const fs::path& from_dir, const std::string& p, const fs::path& to_dir) {
  const fs::path abs = fs::weakly_canonical(fs::absolute(resolve(from_dir, p)));
  return fs::relative(abs, fs::weakly_canonical(fs::absolute(to_dir))).generic_string();
}

struct LoadedManifest {
  Manifest manifest;
  fs::path dir;
  std::string hash;
};

LoadedManifest load_manifest(const std::string& path) {
  const std::string text = csv::read_text(path);
  LoadedManifest lm{manifest_from_csv(text), fs::path(path).parent_path(), hex64(fnv1a(text))};
  lm.manifest.validate();
  return lm;
}

std::vector<const ImageRecord*> eval_records(const Manifest& m) {
  std::vector<const ImageRecord*> out;
  for (const auto& r : m.records)
    if (r.kind != ImageKind::Reference && r.split != Split::Train) out.push_back(&r);
  std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->image_id < b->image_id; });
  return out;
}

std::shared_ptr<const MaskStore> gt_store(const LoadedManifest& lm, const std::vector<const ImageRecord*>& recs) {
  std::map<std::string, fs::path, std::less<>> paths;
  for (const auto* r : recs) {
    auto p = mask_path_for(resolve(lm.dir, r->path));
    if (fs::exists(p)) paths.emplace(r->image_id, std::move(p));
  }
  return std::make_shared<FileMaskStore>(std::move(paths));
}

struct DetectorChoice {
  std::string name = "oracle";
  std::string masks_dir;
  long long min_area = 100;
  int dilate_side = 15;
};

std::unique_ptr<SegmentationBackend> make_detector(const DetectorChoice& d, const LoadedManifest& lm,
                                                   const std::vector<const ImageRecord*>& recs) {
  if (d.name == "external") {
    if (d.masks_dir.empty()) throw Error(Errc::ParseError, "--detector external needs --masks");
    std::vector<std::string> ids;
    for (const auto* r : recs) ids.push_back(r->image_id);
    return make_segmentation_backend("external", std::make_shared<FileMaskStore>(FileMaskStore::from_directory(d.masks_dir, ids)));
  }
  if (d.name == "oracle") return make_segmentation_backend("oracle", gt_store(lm, recs));
  return make_segmentation_backend(d.name);
}

struct ImageDetection {
  std::vector<Component> components;
  BBox chosen;
  bool fallback = false;
  PlaneStack input;
  BinaryMask raw_mask;
  BinaryMask post_mask;
};

// The largest component feeds the classifier; with none detected the whole
// frame is used.
ImageDetection detect_image(const SegmentationBackend& backend, const ImageRecord& rec, const fs::path& dir,
                            const DetectorChoice& d) {
  const RasterImage img = as_rgb(read_png(resolve(dir, rec.path)));
  const ScoreMap s = backend.segment(rec.image_id, img);
  if (s.scores.width() != img.width() || s.scores.height() != img.height())
    throw Error(Errc::DimensionMismatch, rec.image_id + ": mask size differs from image");
  LocalizeParams p;
  p.threshold = s.threshold;
  p.min_area = d.min_area;
  p.dilate_side = d.dilate_side;
  ImageDetection out;
  out.raw_mask = threshold(s.scores, s.threshold);
  out.post_mask = postprocess(s.scores, p);
  out.components = connected_components(out.post_mask);
  if (out.components.empty()) {
    out.chosen = {0, 0, img.width(), img.height()};
    out.fallback = true;
  } else {
    const auto best = std::max_element(out.components.begin(), out.components.end(),
                                       [](const Component& a, const Component& b) { return a.area < b.area; });
    out.chosen = best->bbox;
  }
  out.input = to_classifier_input(crop_center(img, out.chosen));
  return out;
}

std::string bbox_text(const BBox& b) {
  return std::to_string(b.x0) + ' ' + std::to_string(b.y0) + ' ' + std::to_string(b.x1) + ' ' + std::to_string(b.y1);
}

std::map<std::string, std::string> base_metadata(const Globals& g, const std::string& command) {
  return {{"command", command}, {"seed", std::to_string(g.resolved_seed)}, {"config_hash", g.config_hash}};
}

// ---------------------------------------------------------------- ingest

struct IngestArgs {
  std::string labels;
  std::string test_list;
  double test_fraction = 0.2;
  int folds = 0;
};

int cmd_ingest(const IngestArgs& a, const Globals& g, std::ostream& out) {
  const fs::path dir = out_dir(g);
  const auto raw = read_raw_labels(a.labels);
  Manifest m = build_manifest(raw);
  m = a.test_list.empty() ? split_holdout(m, a.test_fraction, g.resolved_seed) : split_by_list(m, read_test_list(a.test_list));
  if (a.folds > 0) m = apply_folds(m, make_folds(m, a.folds, g.resolved_seed));
  const fs::path labels_dir = fs::path(a.labels).parent_path();
  for (auto& r : m.records) r.path = rebase(labels_dir, r.path, dir);
  m.seed = g.resolved_seed;
  m.validate();
  write_manifest(dir / "manifest.csv", m);
  std::size_t test = 0;
  for (const auto& r : m.records) test += r.split == Split::Test;
  out << "classes " << m.classes.size() << ", records " << m.records.size() << ", test " << test << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string manifest;
  int fixture_classes = 0;
  int scenes = -1;
  int pairs = -1;
  bool frontback = false;
  SceneSpec spec;
};

int cmd_synth(const SynthArgs& a, const Globals& g, std::ostream& out) {
  if (a.manifest.empty() == (a.fixture_classes <= 0))
    throw Error(Errc::ParseError, "give exactly one of --manifest or --fixture-classes");
  if ((a.scenes >= 0) == (a.pairs >= 0)) throw Error(Errc::ParseError, "give exactly one of --scenes or --pairs");
  if (a.pairs >= 0 && !a.frontback) throw Error(Errc::ParseError, "--pairs requires --frontback");
  SceneSpec spec = a.spec;
  spec.seed = g.resolved_seed;
  spec.validate();
  const fs::path dir = out_dir(g);

  Manifest source;
  fs::path source_dir;
  if (a.fixture_classes > 0) {
    source = stage("synth", [&] { return write_fixture_references(fixture_catalog(a.fixture_classes), dir / "references"); });
    source_dir = dir / "references";
    source.seed = g.resolved_seed;
    write_manifest(source_dir / "manifest.csv", source);
  } else {
    const auto lm = load_manifest(a.manifest);
    source = lm.manifest;
    source_dir = lm.dir;
  }

  const fs::path gen_dir = dir / "images";
  Manifest gen = stage("synth", [&] {
    if (a.scenes >= 0) {
      GenerationOptions opt;
      opt.workers = g.workers;
      return generate_detection_set(source, source_dir, spec, a.scenes, gen_dir, opt);
    }
    FrontBackOptions opt;
    opt.seed = g.resolved_seed;
    opt.workers = g.workers;
    return generate_frontback_set(source, source_dir, a.pairs, gen_dir, opt);
  });

  Manifest m;
  m.classes = source.classes;
  m.seed = g.resolved_seed;
  for (const auto& r : source.records) {
    if (r.kind != ImageKind::Reference) continue;
    ImageRecord c = r;
    c.path = rebase(source_dir, r.path, dir);
    c.split = Split::Train;
    c.fold.reset();
    m.records.push_back(std::move(c));
  }
  for (auto& r : gen.records) {
    r.path = "images/" + r.path;
    m.records.push_back(std::move(r));
  }
  m.validate();
  write_manifest(dir / "manifest.csv", m);
  out << "generated " << gen.records.size() << " images\n";
  return kExitOk;
}

// ---------------------------------------------------------------- detect

struct DetectArgs {
  std::string manifest;
  DetectorChoice detector;
  bool write_crops = false;
};

int cmd_detect(const DetectArgs& a, const Globals& g, std::ostream& out) {
  const auto lm = load_manifest(a.manifest);
  const fs::path dir = out_dir(g);
  const auto recs = eval_records(lm.manifest);
  const auto backend = make_detector(a.detector, lm, recs);
  const auto gt = gt_store(lm, recs);
  std::vector<ImageDetection> dets(recs.size());
  fs::create_directories(dir / "masks");
  if (a.write_crops) fs::create_directories(dir / "crops");
  stage("detect", [&] {
    parallel_for(recs.size(), g.workers, [&](std::size_t i) {
      dets[i] = detect_image(*backend, *recs[i], lm.dir, a.detector);
      write_mask_png(dir / "masks" / (recs[i]->image_id + ".png"), dets[i].raw_mask);
      if (a.write_crops) {
        RasterImage crop(kCropSide, kCropSide, 3);
        for (int y = 0; y < kCropSide; ++y)
          for (int x = 0; x < kCropSide; ++x)
            for (int c = 0; c < 3; ++c)
              crop.at(x, y, c) = clamp_u8(dets[i].input.at(c, x, y) * 255.0);
        write_png(dir / "crops" / (recs[i]->image_id + ".png"), crop);
      }
      dets[i].input = PlaneStack();
    });
  });
  std::string table = "image_id,component,area,bbox\n";
  EvalReport report;
  report.metadata = base_metadata(g, "detect");
  report.metadata["detector"] = backend->name();
  report.metadata["dataset_hash"] = lm.hash;
  std::map<std::string, BinaryMask> pred, truth;
  long long placed = 0, detected = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    for (const auto& c : dets[i].components)
      table += csv::quote(recs[i]->image_id) + ',' + std::to_string(c.label) + ',' + std::to_string(c.area) + ',' +
               bbox_text(c.bbox) + '\n';
    detected += static_cast<long long>(dets[i].components.size());
    placed += static_cast<long long>(recs[i]->placements.size());
    if (auto m = gt->find(recs[i]->image_id)) {
      truth.emplace(recs[i]->image_id, std::move(*m));
      pred.emplace(recs[i]->image_id, dets[i].raw_mask);
    }
  }
  csv::write_text(dir / "detections.csv", table);
  report.counts["images"] = static_cast<long long>(recs.size());
  report.counts["detected"] = detected;
  report.counts["placed"] = placed;
  if (!truth.empty()) {
    const auto d = dice_summary(pred, truth);
    report.metrics["dice_mean"] = d.mean;
    report.metrics["dice_min"] = d.min;
    report.metrics["dice_max"] = d.max;
  }
  emit_report(report, dir);
  out << "images " << recs.size() << ", detections " << detected << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- classify

struct ClassifyArgs {
  std::string manifest;
  std::string references;
  std::string index;
  DetectorChoice detector;
  double temperature = 1.0;
  std::vector<double> crop_scales{1.0};
};

ReferenceFeatureIndex obtain_index(const ClassifyArgs& a, const LoadedManifest& lm, const Globals& g) {
  if (!a.index.empty()) return ReferenceFeatureIndex::load(a.index);
  const LoadedManifest refs = a.references.empty() ? lm : load_manifest(a.references);
  return stage("index", [&] {
    return build_index(refs.manifest, reference_crops(refs.manifest, refs.dir, g.workers, a.crop_scales), g.workers);
  });
}

PredictionSet baseline_predictions(const ReferenceFeatureIndex& index, const SegmentationBackend& backend,
                                   const LoadedManifest& lm, const std::vector<const ImageRecord*>& recs,
                                   const DetectorChoice& d, double temperature, const Globals& g,
                                   std::vector<ImageDetection>* keep) {
  std::vector<ProbVector> probs(recs.size());
  if (keep) keep->assign(recs.size(), {});
  stage("classify", [&] {
    parallel_for(recs.size(), g.workers, [&](std::size_t i) {
      ImageDetection det = stage("detect", [&] { return detect_image(backend, *recs[i], lm.dir, d); });
      probs[i] = predict_baseline(index, det.input, temperature);
      if (keep) {
        det.input = PlaneStack();
        (*keep)[i] = std::move(det);
      }
    });
  });
  PredictionSet set{index.class_count(), {}};
  for (std::size_t i = 0; i < recs.size(); ++i) set.put(recs[i]->image_id, std::move(probs[i]));
  return set;
}

int cmd_classify(const ClassifyArgs& a, const Globals& g, std::ostream& out) {
  const auto lm = load_manifest(a.manifest);
  const fs::path dir = out_dir(g);
  const auto index = obtain_index(a, lm, g);
  if (index.class_count() != static_cast<int>(lm.manifest.class_count()))
    throw Error(Errc::ShapeMismatch, "index and manifest differ in class count");
  index.save(dir / "index.txt");
  const auto recs = eval_records(lm.manifest);
  const auto backend = make_detector(a.detector, lm, recs);
  const auto preds = baseline_predictions(index, *backend, lm, recs, a.detector, a.temperature, g, nullptr);
  write_predictions(dir / "predictions.csv", preds);
  out << "predicted " << preds.rows.size() << " images\n";
  return kExitOk;
}

// ---------------------------------------------------------------- metric blocks

LabelMap labels_of(const std::vector<const ImageRecord*>& recs) {
  LabelMap l;
  for (const auto* r : recs) l[r->image_id] = r->class_id;
  return l;
}

struct Partitions {
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> ids;
};

// front/back/all when every record carries a side, else only all.
Partitions partitions_of(const std::vector<const ImageRecord*>& recs) {
  std::map<std::string, Side> sides;
  bool annotated = !recs.empty();
  for (const auto* r : recs) {
    sides[r->image_id] = r->side;
    annotated = annotated && r->side != Side::Unknown;
  }
  Partitions p;
  if (annotated) {
    const auto sp = partition_by_side(sides);
    p.names = {"front", "back", "all"};
    p.ids = {sp.front, sp.back, sp.all};
  } else {
    p.names = {"all"};
    p.ids.emplace_back();
    for (const auto& [id, _] : sides) p.ids.back().push_back(id);
  }
  return p;
}

std::vector<std::optional<double>> classification_row(const PredictionSet& preds, const LabelMap& labels,
                                                      const Partitions& parts) {
  std::vector<ClassificationMetrics> ms;
  for (const auto& ids : parts.ids) ms.push_back(classification_metrics(preds, labels, ids));
  std::vector<std::optional<double>> row;
  for (const auto& m : ms) row.push_back(m.top1);
  for (const auto& m : ms) row.push_back(m.top5);
  for (const auto& m : ms) row.push_back(m.micro_ap);
  return row;
}

std::vector<std::string> classification_header(const Partitions& parts) {
  std::vector<std::string> h{"model"};
  for (const char* metric : {"top1", "top5", "micro_ap"})
    for (const auto& n : parts.names) h.push_back(n + "_" + metric);
  return h;
}

void add_classification(EvalReport& r, const std::string& key, const PredictionSet& preds, const LabelMap& labels,
                        const Partitions& parts) {
  for (std::size_t i = 0; i < parts.names.size(); ++i) {
    const auto m = classification_metrics(preds, labels, parts.ids[i]);
    const std::string p = key + "." + parts.names[i] + ".";
    r.metrics[p + "top1"] = m.top1;
    r.metrics[p + "top5"] = m.top5;
    r.metrics[p + "micro_ap"] = m.micro_ap;
    r.counts[p + "images"] = static_cast<long long>(m.size);
  }
  if (!labels.empty()) r.pr_curves[key] = micro_ap(preds, labels);
}

// Table-1 layout: one row per fold, their min/mean/max, and the ensemble.
Table fold_table(const std::vector<std::pair<std::string, PredictionSet>>& folds, const PredictionSet& final_set,
                 const std::string& final_name, const LabelMap& labels, const Partitions& parts) {
  Table t;
  t.header = classification_header(parts);
  std::vector<std::vector<std::optional<double>>> rows;
  for (const auto& [name, set] : folds) {
    rows.push_back(classification_row(set, labels, parts));
    std::vector<std::string> cells{name};
    for (const auto& v : rows.back()) cells.push_back(format_cell(v));
    t.rows.push_back(std::move(cells));
  }
  if (folds.size() > 1) {
    const std::size_t width = rows.front().size();
    for (const char* agg : {"min", "mean", "max"}) {
      std::vector<std::string> cells{agg};
      for (std::size_t c = 0; c < width; ++c) {
        std::vector<double> vals;
        for (const auto& row : rows)
          if (row[c]) vals.push_back(*row[c]);
        std::optional<double> v;
        if (!vals.empty()) {
          if (agg[1] == 'i') v = *std::min_element(vals.begin(), vals.end());
          else if (agg[1] == 'a') v = *std::max_element(vals.begin(), vals.end());
          else {
            double s = 0;
            for (double x : vals) s += x;
            v = s / static_cast<double>(vals.size());
          }
        }
        cells.push_back(format_cell(v));
      }
      t.rows.push_back(std::move(cells));
    }
  }
  if (folds.size() != 1) {
    std::vector<std::string> cells{final_name};
    for (const auto& v : classification_row(final_set, labels, parts)) cells.push_back(format_cell(v));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

struct HazardArgs {
  std::string catalog;
  std::string mode = "top1";
  double threshold = 0.5;
};

// Decisions CSV plus, when labels exist, Table-4/5-style blocks.
std::string add_hazard(EvalReport& r, const PredictionSet& preds, const LabelMap& labels, const Partitions& parts,
                       const HazardCatalog& cat, HazardMode mode, double threshold) {
  std::map<std::string, HazardResult> results;
  std::string decisions = "image_id,score,label,mode,threshold\n";
  for (const auto& [id, p] : preds.rows) {
    const auto res = decide(p, cat, mode, threshold);
    results.emplace(id, res);
    decisions += csv::quote(id) + ',' + csv::format_double(res.score) + ',' +
                 (res.hazardous ? "hazardous" : "non-hazardous") + ',' + std::string(to_string(mode)) + ',' +
                 csv::format_double(threshold) + '\n';
  }
  r.counts["hazard.catalog_hazardous"] = cat.hazardous_count();
  r.counts["hazard.catalog_unlisted"] = cat.unlisted;
  r.metadata["hazard_mode"] = std::string(to_string(mode));
  r.metadata["hazard_threshold"] = csv::format_double(threshold);
  if (labels.empty()) return decisions;

  Table metrics_table{{"metric"}, {{"accuracy"}, {"recall"}, {"precision"}, {"f1"}, {"auc"}}};
  Table confusion_table{{"count"}, {{"tn"}, {"fp"}, {"fn"}, {"tp"}}};
  for (std::size_t i = 0; i < parts.names.size(); ++i) {
    const auto& name = parts.names[i];
    std::vector<bool> predicted, truth;
    std::vector<double> scores;
    for (const auto& id : parts.ids[i]) {
      const auto& res = results.at(id);
      predicted.push_back(res.hazardous);
      scores.push_back(res.score);
      truth.push_back(cat.is_hazardous(labels.at(id)));
    }
    metrics_table.header.push_back(name);
    confusion_table.header.push_back(name);
    std::optional<double> auc;
    BinaryMetrics bm;
    BinaryConfusion c;
    if (!truth.empty()) {
      c = confusion_from(predicted, truth);
      bm = binary_metrics(c);
      try {
        auc = roc_auc(scores, truth);
        r.roc_curves["hazard." + name] = {roc_curve(scores, truth), *auc};
      } catch (const Error& e) {
        if (e.code() != Errc::Undefined) throw;
      }
    }
    const std::string p = "hazard." + name + ".";
    r.metrics[p + "accuracy"] = bm.accuracy;
    r.metrics[p + "recall"] = bm.recall;
    r.metrics[p + "precision"] = bm.precision;
    r.metrics[p + "f1"] = bm.f1;
    r.metrics[p + "auc"] = auc;
    r.confusions["hazard." + name] = c;
    const std::optional<double> vals[] = {bm.accuracy, bm.recall, bm.precision, bm.f1, auc};
    for (std::size_t k = 0; k < 5; ++k) metrics_table.rows[k].push_back(format_cell(vals[k]));
    const long long counts[] = {c.tn, c.fp, c.fn, c.tp};
    for (std::size_t k = 0; k < 4; ++k) confusion_table.rows[k].push_back(std::to_string(counts[k]));
  }
  r.tables["hazard_metrics"] = std::move(metrics_table);
  r.tables["hazard_confusion"] = std::move(confusion_table);
  return decisions;
}

std::vector<std::pair<std::string, PredictionSet>> load_prediction_files(const std::vector<std::string>& files,
                                                                         const std::string& fold_dir, int class_count) {
  std::vector<std::pair<std::string, PredictionSet>> out;
  for (const auto& f : files) out.emplace_back(fs::path(f).stem().string(), load_predictions(f, class_count));
  if (!fold_dir.empty()) {
    static const std::regex kFold(R"(fold_(\d+)\.csv)");
    std::vector<std::pair<int, fs::path>> found;
    for (const auto& e : fs::directory_iterator(fold_dir)) {
      std::smatch m;
      const std::string name = e.path().filename().string();
      if (std::regex_match(name, m, kFold)) found.emplace_back(std::stoi(m[1].str()), e.path());
    }
    std::sort(found.begin(), found.end());
    if (found.empty()) throw Error(Errc::Io, fold_dir + ": no fold_<n>.csv files");
    for (const auto& [k, p] : found) out.emplace_back("fold_" + std::to_string(k), load_predictions(p, class_count));
  }
  return out;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string manifest;
  std::vector<std::string> predictions;
  std::string agree;
  bool dice = false;
  std::string masks;
  std::string gt;
};

std::map<std::string, BinaryMask> read_mask_dir(const std::string& dir) {
  std::map<std::string, BinaryMask> out;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  // A directory holding <id>_mask.png files next to images uses only those.
  const bool suffixed = std::any_of(files.begin(), files.end(), [](const fs::path& f) { return f.stem().string().ends_with("_mask"); });
  for (const auto& f : files) {
    std::string stem = f.stem().string();
    if (suffixed) {
      if (!stem.ends_with("_mask")) continue;
      stem.resize(stem.size() - 5);
    }
    out.emplace(stem, read_mask_png(f));
  }
  return out;
}

int cmd_eval(const EvalArgs& a, const Globals& g, std::ostream& out) {
  const fs::path dir = out_dir(g);
  EvalReport report;
  report.metadata = base_metadata(g, "eval");
  if (a.dice) {
    if (a.masks.empty() || a.gt.empty()) throw Error(Errc::ParseError, "--dice needs --masks and --gt");
    const auto d = dice_summary(read_mask_dir(a.masks), read_mask_dir(a.gt));
    report.metrics["dice_mean"] = d.mean;
    report.metrics["dice_min"] = d.min;
    report.metrics["dice_max"] = d.max;
    report.counts["dice_images"] = static_cast<long long>(d.per_image.size());
    Table t{{"image_id", "dice"}, {}};
    for (const auto& [id, v] : d.per_image) t.rows.push_back({id, csv::format_double(v)});
    report.tables["dice"] = std::move(t);
    out << "dice mean " << format_cell(d.mean) << '\n';
  }
  if (!a.predictions.empty()) {
    const auto lm = load_manifest(a.manifest);
    report.metadata["dataset_hash"] = lm.hash;
    const auto recs = eval_records(lm.manifest);
    const auto labels = labels_of(recs);
    const auto parts = partitions_of(recs);
    const int n = static_cast<int>(lm.manifest.class_count());
    const auto sets = load_prediction_files(a.predictions, "", n);
    const PredictionSet final_set = sets.size() == 1 ? sets.front().second : [&] {
      std::vector<PredictionSet> v;
      for (const auto& s : sets) v.push_back(s.second);
      return ensemble(v);
    }();
    add_classification(report, "classification", final_set, labels, parts);
    report.tables["classification"] = fold_table(sets, final_set, "ensemble", labels, parts);
    if (!a.agree.empty()) {
      const auto other = load_predictions(a.agree, n);
      const auto c = agreement(final_set, other, labels);
      report.counts["agreement.both_correct"] = c.both_correct;
      report.counts["agreement.both_wrong"] = c.both_wrong;
      report.counts["agreement.only_a"] = c.only_a;
      report.counts["agreement.only_b"] = c.only_b;
      report.tables["agreement"] = {{"both_correct", "both_wrong", "only_a", "only_b", "total"},
                                    {{std::to_string(c.both_correct), std::to_string(c.both_wrong),
                                      std::to_string(c.only_a), std::to_string(c.only_b), std::to_string(c.total())}}};
      out << "agreement " << c.both_correct << '/' << c.both_wrong << '/' << c.only_a << '/' << c.only_b << '\n';
    }
    out << "top1 " << format_cell(report.metrics["classification.all.top1"]) << '\n';
  } else if (!a.agree.empty()) {
    throw Error(Errc::ParseError, "--agree needs --predictions");
  }
  if (!a.dice && a.predictions.empty()) throw Error(Errc::ParseError, "nothing to evaluate: give --predictions or --dice");
  emit_report(report, dir);
  return kExitOk;
}

// ---------------------------------------------------------------- hazard

struct HazardCmdArgs {
  std::string manifest;
  std::string predictions;
  HazardArgs hazard;
};

int cmd_hazard(const HazardCmdArgs& a, const Globals& g, std::ostream& out) {
  if (a.hazard.catalog.empty()) throw Error(Errc::ParseError, "--catalog is required");
  const auto lm = load_manifest(a.manifest);
  const fs::path dir = out_dir(g);
  const auto cat = load_catalog(a.hazard.catalog, lm.manifest);
  const auto mode = parse_hazard_mode(a.hazard.mode);
  const auto preds = load_predictions(a.predictions, static_cast<int>(lm.manifest.class_count()));
  const auto recs = eval_records(lm.manifest);
  LabelMap labels;
  std::vector<const ImageRecord*> covered;
  for (const auto* r : recs)
    if (preds.rows.count(r->image_id)) {
      labels[r->image_id] = r->class_id;
      covered.push_back(r);
    }
  EvalReport report;
  report.metadata = base_metadata(g, "hazard");
  report.metadata["dataset_hash"] = lm.hash;
  const std::string decisions = add_hazard(report, preds, labels, partitions_of(covered), cat, mode, a.hazard.threshold);
  csv::write_text(dir / "hazard_decisions.csv", decisions);
  emit_report(report, dir);
  out << "decided " << preds.rows.size() << " images, catalog hazardous " << cat.hazardous_count() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- pipeline

struct PipelineArgs {
  ClassifyArgs classify;
  bool detector_given = false;
  std::vector<std::string> predictions;
  std::string predictions_dir;
  bool use_ensemble = false;
  bool frontback = false;
  HazardArgs hazard;
};

int cmd_pipeline(const PipelineArgs& a, const Globals& g, std::ostream& out) {
  const auto lm = load_manifest(a.classify.manifest);
  const fs::path dir = out_dir(g);
  const int n = static_cast<int>(lm.manifest.class_count());
  const auto recs = eval_records(lm.manifest);
  const auto labels = labels_of(recs);
  const auto parts = partitions_of(recs);
  std::optional<HazardCatalog> cat;
  if (!a.hazard.catalog.empty()) cat = load_catalog(a.hazard.catalog, lm.manifest);
  const HazardMode mode = parse_hazard_mode(a.hazard.mode);
  if (!(a.hazard.threshold >= 0 && a.hazard.threshold <= 1)) throw Error(Errc::InvalidThreshold, "--hazard-threshold outside [0, 1]");

  const bool external = !a.predictions.empty() || !a.predictions_dir.empty();
  std::vector<std::pair<std::string, PredictionSet>> folds;
  if (external) {
    folds = load_prediction_files(a.predictions, a.predictions_dir, n);
    if (folds.size() > 1 && !a.use_ensemble) throw Error(Errc::ParseError, "several prediction sets need --ensemble");
  }

  EvalReport report;
  report.metadata = base_metadata(g, "pipeline");
  report.metadata["dataset_hash"] = lm.hash;
  report.counts["images"] = static_cast<long long>(recs.size());

  PredictionSet final_set;
  std::vector<ImageDetection> dets;
  std::string final_name;
  if (!external || a.detector_given) {
    const auto backend = stage("detect", [&] { return make_detector(a.classify.detector, lm, recs); });
    report.metadata["detector"] = backend->name();
    if (!external) {
      const auto index = obtain_index(a.classify, lm, g);
      if (index.class_count() != n) throw Error(Errc::ShapeMismatch, "index and manifest differ in class count");
      final_set = baseline_predictions(index, *backend, lm, recs, a.classify.detector, a.classify.temperature, g, &dets);
      folds.emplace_back("baseline", final_set);
      final_name = "baseline";
      report.metadata["classifier"] = "baseline";
    } else {
      dets.resize(recs.size());
      stage("detect", [&] {
        parallel_for(recs.size(), g.workers, [&](std::size_t i) {
          dets[i] = detect_image(*backend, *recs[i], lm.dir, a.classify.detector);
          dets[i].input = PlaneStack();
        });
      });
    }
  }
  if (external) {
    report.metadata["classifier"] = "external";
    final_set = stage("ensemble", [&] {
      if (folds.size() == 1) return folds.front().second;
      std::vector<PredictionSet> v;
      for (const auto& f : folds) v.push_back(f.second);
      return ensemble(v);
    });
    final_name = folds.size() == 1 ? folds.front().first : "ensemble";
  }

  if (!dets.empty()) {
    const auto gt = gt_store(lm, recs);
    std::map<std::string, BinaryMask> pred, truth;
    long long detected = 0, placed = 0, fallbacks = 0;
    std::string table = "image_id,component,area,bbox,chosen\n";
    for (std::size_t i = 0; i < recs.size(); ++i) {
      detected += static_cast<long long>(dets[i].components.size());
      placed += static_cast<long long>(recs[i]->placements.size());
      fallbacks += dets[i].fallback;
      for (const auto& c : dets[i].components)
        table += csv::quote(recs[i]->image_id) + ',' + std::to_string(c.label) + ',' + std::to_string(c.area) + ',' +
                 bbox_text(c.bbox) + ',' + (c.bbox == dets[i].chosen ? "1" : "0") + '\n';
      if (auto m = gt->find(recs[i]->image_id)) {
        truth.emplace(recs[i]->image_id, std::move(*m));
        pred.emplace(recs[i]->image_id, dets[i].raw_mask);
      }
    }
    csv::write_text(dir / "detections.csv", table);
    report.counts["detect.detected"] = detected;
    report.counts["detect.placed"] = placed;
    report.counts["detect.fallback_full_frame"] = fallbacks;
    if (!truth.empty()) {
      const auto d = dice_summary(pred, truth);
      report.metrics["detect.dice_mean"] = d.mean;
      report.metrics["detect.dice_min"] = d.min;
      report.metrics["detect.dice_max"] = d.max;
    }
  }

  write_predictions(dir / "predictions.csv", final_set);
  stage("eval", [&] {
    add_classification(report, "classification", final_set, labels, parts);
    report.tables["classification"] = fold_table(folds, final_set, final_name, labels, parts);
    return 0;
  });

  if (a.frontback) {
    stage("fusion", [&] {
      std::map<std::string, std::pair<const ImageRecord*, const ImageRecord*>> pairs;
      for (const auto* r : recs) {
        if (r->pair_id.empty()) continue;
        auto& p = pairs[r->pair_id];
        (r->side == Side::Back ? p.second : p.first) = r;
      }
      PredictionSet fused{n, {}};
      LabelMap fused_labels;
      for (const auto& [pid, p] : pairs) {
        if (!p.first || !p.second) throw Error(Errc::MissingSide, "pair '" + pid + "' lacks a side");
        if (p.first->class_id != p.second->class_id) throw Error(Errc::SetMismatch, "pair '" + pid + "' mixes classes");
        fused.put(pid, combine_sides(final_set.at(p.first->image_id), final_set.at(p.second->image_id)));
        fused_labels[pid] = p.first->class_id;
      }
      const Partitions all{{"all"}, {{}}};
      Partitions pp = all;
      for (const auto& [id, _] : fused_labels) pp.ids[0].push_back(id);
      add_classification(report, "frontback", fused, fused_labels, pp);
      report.counts["frontback.pairs"] = static_cast<long long>(fused.rows.size());
      Table t{classification_header(pp), {}};
      std::vector<std::string> cells{"fused"};
      for (const auto& v : classification_row(fused, fused_labels, pp)) cells.push_back(format_cell(v));
      t.rows.push_back(std::move(cells));
      report.tables["frontback"] = std::move(t);
      write_predictions(dir / "frontback_predictions.csv", fused);
      return 0;
    });
  }

  if (cat) {
    const std::string decisions =
        stage("hazard", [&] { return add_hazard(report, final_set, labels, parts, *cat, mode, a.hazard.threshold); });
    csv::write_text(dir / "hazard_decisions.csv", decisions);
  }

  emit_report(report, dir);
  out << "images " << recs.size() << ", top1 " << format_cell(report.metrics["classification.all.top1"]);
  if (cat) out << ", hazard accuracy " << format_cell(report.metrics["hazard.all.accuracy"]);
  out << '\n';
  return kExitOk;
}

void add_detector_options(CLI::App* sub, DetectorChoice& d) {
  sub->add_option("--detector", d.name, "oracle, colordist or external")
      ->check(CLI::IsMember({"oracle", "colordist", "external"}));
  sub->add_option("--masks", d.masks_dir, "Directory of <image_id>.png masks for the external detector");
  sub->add_option("--min-area", d.min_area, "Smallest component kept, in pixels")->check(CLI::NonNegativeNumber);
  sub->add_option("--dilate-side", d.dilate_side, "Side of the final dilation element");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pill image sorting: synthesis, detection, classification, hazard gating and evaluation", "pillsort"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed for every random choice");
  app.add_option("--workers", g.workers, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output directory");

  IngestArgs ingest;
  auto* s_ingest = app.add_subcommand("ingest", "Build a manifest from a raw label file");
  s_ingest->add_option("--labels", ingest.labels, "CSV image_id,path,ndc,kind,side[,display_name]")->required();
  s_ingest->add_option("--test-list", ingest.test_list, "File of consumer image ids to hold out");
  s_ingest->add_option("--test-fraction", ingest.test_fraction, "Held-out consumer fraction");
  s_ingest->add_option("--folds", ingest.folds, "Cross-validation folds over the training consumers (0 = none)");

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "Generate detection scenes or front/back pairs");
  s_synth->add_option("--manifest", synth.manifest, "Manifest holding reference records");
  s_synth->add_option("--fixture-classes", synth.fixture_classes, "Render N procedural reference classes instead");
  s_synth->add_option("--scenes", synth.scenes, "Number of multi-pill scenes");
  s_synth->add_option("--pairs", synth.pairs, "Number of front/back pairs");
  s_synth->add_flag("--frontback", synth.frontback, "Generate front/back pairs");
  s_synth->add_option("--min-pills", synth.spec.min_pills);
  s_synth->add_option("--max-pills", synth.spec.max_pills);
  s_synth->add_option("--scale-min", synth.spec.scale_min);
  s_synth->add_option("--scale-max", synth.spec.scale_max);
  s_synth->add_option("--jitter", synth.spec.perspective_jitter, "Perspective corner jitter fraction");
  s_synth->add_option("--canvas-width", synth.spec.canvas_width);
  s_synth->add_option("--canvas-height", synth.spec.canvas_height);
  s_synth->add_flag("--allow-overlap", synth.spec.allow_overlap);

  DetectArgs detect_args;
  auto* s_detect = app.add_subcommand("detect", "Localize pills and write masks and detections");
  s_detect->add_option("--manifest", detect_args.manifest)->required();
  s_detect->add_flag("--crops", detect_args.write_crops, "Also write the 299x299 crops");
  add_detector_options(s_detect, detect_args.detector);

  ClassifyArgs classify_args;
  auto* s_classify = app.add_subcommand("classify", "Baseline classification of detected pills");
  s_classify->add_option("--manifest", classify_args.manifest)->required();
  s_classify->add_option("--references", classify_args.references, "Manifest of reference photos for the index");
  s_classify->add_option("--index", classify_args.index, "Prebuilt index file");
  s_classify->add_option("--temperature", classify_args.temperature)->check(CLI::PositiveNumber);
  s_classify->add_option("--crop-scales", classify_args.crop_scales, "Reference resize factors applied before cropping");
  add_detector_options(s_classify, classify_args.detector);

  EvalArgs eval_args;
  auto* s_eval = app.add_subcommand("eval", "Metrics over prediction files or masks");
  s_eval->add_option("--manifest", eval_args.manifest, "Manifest with the true labels");
  s_eval->add_option("--predictions", eval_args.predictions, "Prediction CSV; several are ensembled");
  s_eval->add_option("--agree", eval_args.agree, "Second prediction CSV for agreement counts");
  s_eval->add_flag("--dice", eval_args.dice, "Dice summary of --masks against --gt");
  s_eval->add_option("--masks", eval_args.masks);
  s_eval->add_option("--gt", eval_args.gt);

  HazardCmdArgs hazard_args;
  auto* s_hazard = app.add_subcommand("hazard", "Hazard decisions for a prediction file");
  s_hazard->add_option("--manifest", hazard_args.manifest)->required();
  s_hazard->add_option("--predictions", hazard_args.predictions)->required();
  s_hazard->add_option("--catalog", hazard_args.hazard.catalog, "CSV ndc_or_class_id,flag")->required();
  s_hazard->add_option("--mode", hazard_args.hazard.mode)->check(CLI::IsMember({"top1", "mass"}));
  s_hazard->add_option("--threshold", hazard_args.hazard.threshold);

  PipelineArgs pipe;
  auto* s_pipe = app.add_subcommand("pipeline", "Detect, classify, fuse, gate and report");
  s_pipe->add_option("--manifest", pipe.classify.manifest)->required();
  s_pipe->add_option("--references", pipe.classify.references);
  s_pipe->add_option("--index", pipe.classify.index);
  s_pipe->add_option("--temperature", pipe.classify.temperature)->check(CLI::PositiveNumber);
  s_pipe->add_option("--crop-scales", pipe.classify.crop_scales, "Reference resize factors applied before cropping");
  add_detector_options(s_pipe, pipe.classify.detector);
  s_pipe->add_option("--predictions", pipe.predictions, "External prediction CSVs");
  s_pipe->add_option("--predictions-dir", pipe.predictions_dir, "Directory of fold_<n>.csv prediction files");
  s_pipe->add_flag("--ensemble", pipe.use_ensemble, "Average several prediction sets");
  s_pipe->add_flag("--frontback", pipe.frontback, "Fuse front/back pairs by pair_id");
  s_pipe->add_option("--hazard-catalog", pipe.hazard.catalog);
  s_pipe->add_option("--hazard-mode", pipe.hazard.mode)->check(CLI::IsMember({"top1", "mass"}));
  s_pipe->add_option("--hazard-threshold", pipe.hazard.threshold);

  for (auto* s : {s_ingest, s_synth, s_detect, s_classify, s_eval, s_hazard, s_pipe}) s->fallthrough();

  std::vector<std::string> argv_store{"pillsort"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  if (*seed_opt) g.seed = seed_value;
  g.resolved_seed = g.seed ? *g.seed : (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}();
  std::vector<std::string> hashed = args;
  if (!g.seed) {
    hashed.push_back("--seed");
    hashed.push_back(std::to_string(g.resolved_seed));
  }
  g.config_hash = config_hash(hashed);
  pipe.detector_given = s_pipe->count("--detector") > 0;

  try {
    if (*s_ingest) return cmd_ingest(ingest, g, out);
    if (*s_synth) return cmd_synth(synth, g, out);
    if (*s_detect) return cmd_detect(detect_args, g, out);
    if (*s_classify) return cmd_classify(classify_args, g, out);
    if (*s_eval) return cmd_eval(eval_args, g, out);
    if (*s_hazard) return cmd_hazard(hazard_args, g, out);
    if (*s_pipe) return cmd_pipeline(pipe, g, out);
  } catch (const StageFailure& e) {
    err << "pillsort: stage " << e.stage << " failed: " << e.what() << '\n';
    return e.io ? kExitIo : kExitStage;
  } catch (const Error& e) {
    err << "pillsort: " << e.what() << '\n';
    return e.code() == Errc::Io ? kExitIo : kExitValidation;
  } catch (const fs::filesystem_error& e) {
    err << "pillsort: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "pillsort: " << e.what() << '\n';
    return kExitStage;
  }
  return kExitValidation;
}

}  // namespace pillsort::cli
