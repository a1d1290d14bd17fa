#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <json.hpp>
#include <sstream>

#include "pillsort/classify.hpp"
#include "pillsort/cli.hpp"
#include "pillsort/csv.hpp"
#include "pillsort/dataset.hpp"
#include "pillsort/random.hpp"

using namespace pillsort;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("pillsort_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

// Images only; ground-truth *_mask.png files are skipped.
std::size_t count_png(const fs::path& dir) {
  std::size_t n = 0;
  if (!fs::exists(dir)) return 0;
  for (const auto& e : fs::directory_iterator(dir))
    n += e.path().extension() == ".png" && !e.path().stem().string().ends_with("_mask");
  return n;
}

nlohmann::json report_of(const fs::path& dir) { return nlohmann::json::parse(slurp(dir / "report.json")); }

// Non-reference, non-train records: the ones the pipeline evaluates.
std::vector<std::string> eval_ids(const fs::path& manifest) {
  std::vector<std::string> ids;
  for (const auto& r : read_manifest(manifest).records)
    if (r.kind != ImageKind::Reference && r.split != Split::Train) ids.push_back(r.image_id);
  return ids;
}

std::string labels_csv(bool bad_ndc) {
  std::string s = "image_id,path,ndc,kind,side\n";
  for (int c = 0; c < 4; ++c)
    for (int k = 0; k < 5; ++k) {
      const std::string ndc = "0000" + std::to_string(c) + "-1234-56";
      s += "c" + std::to_string(c) + "_" + std::to_string(k) + ",img/c" + std::to_string(c) + "_" + std::to_string(k) +
           ".png," + ndc + ",consumer," + (k % 2 ? "back" : "front") + "\n";
    }
  if (bad_ndc) s += "broken,img/broken.png,1234-12,consumer,front\n";
  return s;
}

// One shared small scene set: 8 fixture classes, 24 one-pill scenes.
const fs::path& scene_dir() {
  static const fs::path dir = [] {
    const fs::path d = temp_dir("scenes");
    const CliResult r = run({"--seed", "11", "--out", d.string(), "synth", "--fixture-classes", "8", "--scenes", "24",
                       "--max-pills", "1", "--scale-min", "0.9", "--scale-max", "1.1"});
    if (r.code != 0) throw std::runtime_error("scene setup failed: " + r.err);
    return d;
  }();
  return dir;
}

std::string manifest_arg() { return (scene_dir() / "manifest.csv").string(); }

}  // namespace

TEST(CliIngest, ValidCsvWritesManifest) {
  const fs::path d = temp_dir("ingest_ok");
  csv::write_text(d / "labels.csv", labels_csv(false));
  const CliResult r = run({"--seed", "4", "--out", (d / "out").string(), "ingest", "--labels", (d / "labels.csv").string(),
                     "--folds", "2"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const Manifest m = read_manifest(d / "out" / "manifest.csv");
  EXPECT_EQ(m.classes.size(), 4u);
  EXPECT_EQ(m.records.size(), 20u);
  EXPECT_EQ(m.seed, std::optional<std::uint64_t>(4));
  int test = 0, folded = 0;
  for (const auto& rec : m.records) {
    test += rec.split == Split::Test;
    folded += rec.fold.has_value();
  }
  EXPECT_EQ(test, 4);
  EXPECT_EQ(folded, 16);
}

TEST(CliIngest, MalformedNdcExitsTwoWithLine) {
  const fs::path d = temp_dir("ingest_bad");
  csv::write_text(d / "labels.csv", labels_csv(true));
  const CliResult r = run({"--out", (d / "out").string(), "ingest", "--labels", (d / "labels.csv").string()});
  EXPECT_EQ(r.code, cli::kExitValidation);
  EXPECT_NE(r.err.find("line 22"), std::string::npos) << r.err;
}

TEST(CliIngest, TestListMatchesExactly) {
  const fs::path d = temp_dir("ingest_list");
  csv::write_text(d / "labels.csv", labels_csv(false));
  csv::write_text(d / "test.txt", "c0_1\nc3_4\n");
  const CliResult r = run({"--out", (d / "out").string(), "ingest", "--labels", (d / "labels.csv").string(), "--test-list",
                     (d / "test.txt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::set<std::string> test;
  for (const auto& rec : read_manifest(d / "out" / "manifest.csv").records)
    if (rec.split == Split::Test) test.insert(rec.image_id);
  EXPECT_EQ(test, (std::set<std::string>{"c0_1", "c3_4"}));
}

TEST(CliIngest, MissingFileIsIoAndBadFlagIsValidation) {
  const fs::path d = temp_dir("ingest_io");
  EXPECT_EQ(run({"--out", d.string(), "ingest", "--labels", (d / "absent.csv").string()}).code, cli::kExitIo);
  EXPECT_EQ(run({"ingest", "--no-such-flag"}).code, cli::kExitValidation);
  EXPECT_EQ(run({"--out", d.string(), "ingest", "--labels", "x", "--test-fraction", "1.5"}).code != 0, true);
}

TEST(CliSynth, SameSeedGivesIdenticalTree) {
  const fs::path d = temp_dir("synth_det");
  for (const char* sub : {"a", "b"}) {
    const CliResult r = run({"--seed", "7", "--workers", sub[0] == 'a' ? "1" : "2", "--out", (d / sub).string(), "synth",
                       "--fixture-classes", "6", "--scenes", "100"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(count_png(d / "a" / "images"), 100u);
  EXPECT_EQ(tree(d / "a"), tree(d / "b"));
}

TEST(CliSynth, ZeroScenesIsEmpty) {
  const fs::path d = temp_dir("synth_zero");
  const CliResult r = run({"--seed", "1", "--out", d.string(), "synth", "--fixture-classes", "3", "--scenes", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(eval_ids(d / "manifest.csv").empty());
  EXPECT_EQ(count_png(d / "images"), 0u);
}

TEST(CliSynth, TenPairsGiveTwentyImages) {
  const fs::path d = temp_dir("synth_pairs");
  const CliResult r = run({"--seed", "2", "--out", d.string(), "synth", "--fixture-classes", "5", "--pairs", "10",
                     "--frontback"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_png(d / "images"), 20u);
  EXPECT_EQ(eval_ids(d / "manifest.csv").size(), 20u);
}

TEST(CliSynth, ConflictingModesAreValidationErrors) {
  const fs::path d = temp_dir("synth_bad");
  EXPECT_EQ(run({"--out", d.string(), "synth", "--fixture-classes", "3"}).code, cli::kExitValidation);
  EXPECT_EQ(run({"--out", d.string(), "synth", "--fixture-classes", "3", "--scenes", "2", "--pairs", "2"}).code,
            cli::kExitValidation);
  EXPECT_EQ(run({"--out", d.string(), "synth", "--scenes", "2"}).code, cli::kExitValidation);
}

TEST(CliPipeline, OracleBaselineOnFixture) {
  const fs::path d = temp_dir("pipe_base");
  csv::write_text(d / "catalog.csv", "ndc_or_class_id,flag\n1,H\n4,H\n");
  const CliResult r = run({"--seed", "5", "--out", d.string(), "pipeline", "--manifest", manifest_arg(), "--references",
                     manifest_arg(), "--detector", "oracle", "--hazard-catalog", (d / "catalog.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = report_of(d);
  EXPECT_EQ(rep["schema"], 1);
  EXPECT_EQ(rep["metadata"]["seed"], "5");
  EXPECT_GE(rep["metrics"]["classification.all.top1"].get<double>(), 0.9);
  EXPECT_TRUE(rep["tables"].contains("hazard_metrics"));
  EXPECT_TRUE(rep["tables"].contains("hazard_confusion"));
  EXPECT_EQ(rep["counts"]["hazard.catalog_hazardous"], 2);
  for (const char* f : {"predictions.csv", "detections.csv", "hazard_decisions.csv", "classification.csv",
                        "hazard_metrics.csv", "pr_classification.svg"})
    EXPECT_TRUE(fs::exists(d / f)) << f;
}

TEST(CliPipeline, FoldFilesWithEnsembleGiveMinMeanMaxRows) {
  const fs::path d = temp_dir("pipe_folds");
  const auto ids = eval_ids(manifest_arg());
  const Manifest m = read_manifest(manifest_arg());
  const int n = static_cast<int>(m.class_count());
  Rng rng(3);
  fs::create_directories(d / "folds");
  for (int f = 1; f <= 4; ++f) {
    PredictionSet set{n, {}};
    for (const auto& id : ids) {
      std::vector<double> v(static_cast<std::size_t>(n));
      for (auto& x : v) x = rng.uniform();
      v[static_cast<std::size_t>(m.find(id)->class_id)] += f * 0.5;
      set.put(id, ProbVector::normalized(v));
    }
    write_predictions(d / "folds" / ("fold_" + std::to_string(f) + ".csv"), set);
  }
  const CliResult no_flag =
      run({"--out", (d / "x").string(), "pipeline", "--manifest", manifest_arg(), "--predictions-dir", (d / "folds").string()});
  EXPECT_EQ(no_flag.code, cli::kExitValidation);
  const CliResult r = run({"--seed", "1", "--out", (d / "out").string(), "pipeline", "--manifest", manifest_arg(),
                     "--predictions-dir", (d / "folds").string(), "--ensemble"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = report_of(d / "out");
  std::vector<std::string> names;
  for (const auto& row : rep["tables"]["classification"]["rows"]) names.push_back(row[0]);
  EXPECT_EQ(names, (std::vector<std::string>{"fold_1", "fold_2", "fold_3", "fold_4", "min", "mean", "max", "ensemble"}));
  EXPECT_EQ(rep["metadata"]["classifier"], "external");
}

TEST(CliPipeline, WorkerCountDoesNotChangeOutput) {
  const fs::path d = temp_dir("pipe_workers");
  csv::write_text(d / "catalog.csv", "0,H\n");
  for (const char* w : {"1", "3"}) {
    const CliResult r = run({"--seed", "9", "--workers", w, "--out", (d / w).string(), "pipeline", "--manifest",
                       manifest_arg(), "--references", manifest_arg(), "--detector", "colordist", "--hazard-catalog",
                       (d / "catalog.csv").string(), "--hazard-mode", "mass"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(tree(d / "1"), tree(d / "3"));
}

TEST(CliPipeline, StageFailureExitsThree) {
  const fs::path d = temp_dir("pipe_fail");
  fs::create_directories(d / "empty");
  const CliResult r = run({"--out", (d / "out").string(), "pipeline", "--manifest", manifest_arg(), "--references",
                     manifest_arg(), "--detector", "external", "--masks", (d / "empty").string()});
  EXPECT_EQ(r.code, cli::kExitStage);
  EXPECT_NE(r.err.find("stage detect"), std::string::npos) << r.err;
  EXPECT_EQ(run({"--out", (d / "o2").string(), "pipeline", "--manifest", (d / "none.csv").string()}).code, cli::kExitIo);
}

TEST(CliEval, PredictionsAgreementAndDice) {
  const fs::path d = temp_dir("eval");
  const CliResult base = run({"--seed", "2", "--out", (d / "p").string(), "pipeline", "--manifest", manifest_arg(),
                        "--references", manifest_arg(), "--detector", "oracle"});
  ASSERT_EQ(base.code, 0) << base.err;
  const CliResult r = run({"--out", (d / "e").string(), "eval", "--manifest", manifest_arg(), "--predictions",
                     (d / "p" / "predictions.csv").string(), "--agree", (d / "p" / "predictions.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = report_of(d / "e");
  const long long n = static_cast<long long>(eval_ids(manifest_arg()).size());
  EXPECT_EQ(rep["counts"]["agreement.only_a"], 0);
  EXPECT_EQ(rep["counts"]["agreement.only_b"], 0);
  EXPECT_EQ(rep["counts"]["agreement.both_correct"].get<long long>() + rep["counts"]["agreement.both_wrong"].get<long long>(), n);
  EXPECT_TRUE(rep["metrics"].contains("classification.all.top5"));
  EXPECT_TRUE(rep["metrics"].contains("classification.all.micro_ap"));

  const CliResult det = run({"--out", (d / "det").string(), "detect", "--manifest", manifest_arg(), "--detector", "oracle"});
  ASSERT_EQ(det.code, 0) << det.err;
  const CliResult dice = run({"--out", (d / "dice").string(), "eval", "--dice", "--masks", (d / "det" / "masks").string(),
                        "--gt", (scene_dir() / "images").string()});
  ASSERT_EQ(dice.code, 0) << dice.err;
  EXPECT_DOUBLE_EQ(report_of(d / "dice")["metrics"]["dice_mean"].get<double>(), 1.0);
  EXPECT_EQ(report_of(d / "dice")["counts"]["dice_images"].get<long long>(), n);
  EXPECT_EQ(run({"--out", (d / "x").string(), "eval"}).code, cli::kExitValidation);
}

TEST(CliHazard, DecisionsForPredictionFile) {
  const fs::path d = temp_dir("hazard");
  const CliResult base = run({"--seed", "2", "--out", (d / "p").string(), "pipeline", "--manifest", manifest_arg(),
                        "--references", manifest_arg(), "--detector", "oracle"});
  ASSERT_EQ(base.code, 0) << base.err;
  csv::write_text(d / "catalog.csv", "2,H\n5,H\n");
  const CliResult r = run({"--out", (d / "h").string(), "hazard", "--manifest", manifest_arg(), "--predictions",
                     (d / "p" / "predictions.csv").string(), "--catalog", (d / "catalog.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = csv::parse(slurp(d / "h" / "hazard_decisions.csv"));
  EXPECT_EQ(rows.size(), eval_ids(manifest_arg()).size() + 1);
  csv::write_text(d / "conflict.csv", "2,H\n2,N\n");
  EXPECT_EQ(run({"--out", (d / "h2").string(), "hazard", "--manifest", manifest_arg(), "--predictions",
                 (d / "p" / "predictions.csv").string(), "--catalog", (d / "conflict.csv").string()})
                .code,
            cli::kExitValidation);
}
