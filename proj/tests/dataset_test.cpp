#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>

#include "pillsort/csv.hpp"
#include "pillsort/dataset.hpp"

using namespace pillsort;

namespace {

std::string ndc_for(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05d-%04d-%02d", 10000 + i, i % 10000, i % 100);
  return buf;
}

RawLabel label(std::string id, std::string ndc, ImageKind kind = ImageKind::Consumer, Side side = Side::Front) {
  return {id, std::move(ndc), id + ".png", kind, side, ""};
}

// c classes with n consumer images each.
Manifest consumers(int classes, int per_class) {
  std::vector<RawLabel> raw;
  for (int c = 0; c < classes; ++c)
    for (int k = 0; k < per_class; ++k) {
      char id[32];
      std::snprintf(id, sizeof id, "c%04d_%d", c, k);
      raw.push_back(label(id, ndc_for(c)));
    }
  return build_manifest(raw);
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("pillsort_dataset_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
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

TEST(Ndc, Format) {
  EXPECT_TRUE(is_valid_ndc("00172-6359-60"));
  EXPECT_FALSE(is_valid_ndc("0172-6359-60"));
  EXPECT_FALSE(is_valid_ndc("00172-6359-6"));
  EXPECT_FALSE(is_valid_ndc("00172_6359_60"));
  EXPECT_FALSE(is_valid_ndc("0017a-6359-60"));
}

TEST(GroupByNdc, DuplicationPatternYields924Classes) {
  // 848 singly photographed NDCs plus 76 that appear twice.
  std::vector<RawLabel> raw;
  for (int i = 0; i < 924; ++i) {
    raw.push_back(label("img" + std::to_string(i), ndc_for(i), ImageKind::Reference));
    if (i < 76) raw.push_back(label("dup" + std::to_string(i), ndc_for(i), ImageKind::Reference));
  }
  ASSERT_EQ(raw.size(), 1000u);
  const auto classes = group_by_ndc(raw);
  EXPECT_EQ(classes.size(), 924u);
  for (std::size_t i = 0; i < classes.size(); ++i) EXPECT_EQ(classes[i].class_id, static_cast<int>(i));
  for (std::size_t i = 1; i < classes.size(); ++i) EXPECT_LT(classes[i - 1].ndc, classes[i].ndc);
}

TEST(GroupByNdc, SmallCases) {
  EXPECT_EQ(group_by_ndc({label("a", ndc_for(4)), label("b", ndc_for(3)), label("c", ndc_for(2)), label("d", ndc_for(1)),
                          label("e", ndc_for(0))})
                .size(),
            5u);
  const Manifest m = build_manifest({label("b", ndc_for(9)), label("a", ndc_for(9))});
  ASSERT_EQ(m.classes.size(), 1u);
  EXPECT_EQ(m.records.size(), 2u);
  for (const auto& r : m.records) EXPECT_EQ(r.class_id, 0);
}

TEST(GroupByNdc, AscendingOrderAssignsIds) {
  const Manifest m = build_manifest({label("x", "00003-0000-00"), label("y", "00001-0000-00")});
  EXPECT_EQ(m.classes[0].ndc, "00001-0000-00");
  EXPECT_EQ(m.find("x")->class_id, 1);
  EXPECT_EQ(m.find("y")->class_id, 0);
}

TEST(GroupByNdc, MalformedNdc) {
  EXPECT_EQ(error_code([] { group_by_ndc({label("a", "12-34")}); }), Errc::InvalidNdc);
}

TEST(SplitHoldout, FiveThousandAtTwentyPercent) {
  const Manifest m = split_holdout(consumers(1000, 5), 0.2, 11);
  int test = 0, train = 0;
  for (const auto& r : m.records) (r.split == Split::Test ? test : train)++;
  EXPECT_EQ(test, 1000);
  EXPECT_EQ(train, 4000);
}

TEST(SplitHoldout, StratifiedPerClass) {
  const Manifest m = split_holdout(consumers(50, 10), 0.2, 5);
  std::map<int, int> per_class;
  for (const auto& r : m.records)
    if (r.split == Split::Test) ++per_class[r.class_id];
  for (int c = 0; c < 50; ++c) EXPECT_EQ(per_class[c], 2) << c;
}

TEST(SplitHoldout, ZeroFractionAndBadFraction) {
  const Manifest m = split_holdout(consumers(10, 3), 0.0, 1);
  for (const auto& r : m.records) EXPECT_NE(r.split, Split::Test);
  EXPECT_EQ(error_code([] { split_holdout(consumers(2, 2), 1.0, 1); }), Errc::InvalidFraction);
  EXPECT_EQ(error_code([] { split_holdout(consumers(2, 2), -0.1, 1); }), Errc::InvalidFraction);
}

TEST(SplitHoldout, OnlyConsumersEnterTest) {
  std::vector<RawLabel> raw;
  for (int i = 0; i < 20; ++i) raw.push_back(label("r" + std::to_string(i), ndc_for(i % 4), ImageKind::Reference));
  for (int i = 0; i < 20; ++i) raw.push_back(label("c" + std::to_string(i), ndc_for(i % 4)));
  const Manifest m = split_holdout(build_manifest(raw), 0.5, 3);
  int test = 0;
  for (const auto& r : m.records) {
    if (r.split == Split::Test) {
      EXPECT_EQ(r.kind, ImageKind::Consumer);
      ++test;
    }
  }
  EXPECT_EQ(test, 10);
}

TEST(SplitHoldout, SameSeedSameManifest) {
  const Manifest base = consumers(40, 5);
  EXPECT_EQ(manifest_to_csv(split_holdout(base, 0.2, 99)), manifest_to_csv(split_holdout(base, 0.2, 99)));
  EXPECT_NE(manifest_to_csv(split_holdout(base, 0.2, 99)), manifest_to_csv(split_holdout(base, 0.2, 100)));
}

TEST(SplitByList, ExactlyTheListedIds) {
  const Manifest m = split_by_list(consumers(5, 4), {"c0001_2", "c0003_0", "c0004_3"});
  std::set<std::string> test;
  for (const auto& r : m.records)
    if (r.split == Split::Test) test.insert(r.image_id);
  EXPECT_EQ(test, (std::set<std::string>{"c0001_2", "c0003_0", "c0004_3"}));
}

TEST(SplitByList, UnknownId) {
  EXPECT_EQ(error_code([] { split_by_list(consumers(2, 2), {"nope"}); }), Errc::UnknownImage);
}

TEST(SplitByList, ReadsListFile) {
  const auto dir = temp_dir("list");
  csv::write_text(dir / "test.txt", "c0000_1\n\nc0001_0\n");
  EXPECT_EQ(read_test_list(dir / "test.txt"), (std::vector<std::string>{"c0000_1", "c0001_0"}));
}

TEST(Folds, FourPerClassFourFolds) {
  const Manifest m = consumers(30, 4);
  const FoldPlan plan = make_folds(m, 4, 21);
  for (int f = 0; f < 4; ++f) {
    std::map<int, int> per_class;
    for (const auto& id : plan.validation_slice(f)) ++per_class[m.find(id)->class_id];
    ASSERT_EQ(per_class.size(), 30u);
    for (const auto& [c, n] : per_class) EXPECT_EQ(n, 1) << "fold " << f << " class " << c;
  }
}

TEST(Folds, FourPerClassTenFoldsLeavesSixAbsent) {
  const Manifest m = consumers(30, 4);
  const FoldPlan plan = make_folds(m, 10, 21);
  for (int c = 0; c < 30; ++c) {
    int absent = 0;
    for (int f = 0; f < 10; ++f) {
      bool present = false;
      for (const auto& id : plan.validation_slice(f)) present = present || m.find(id)->class_id == c;
      absent += !present;
    }
    EXPECT_EQ(absent, 6) << c;
  }
}

TEST(Folds, PartitionOfConsumerTraining) {
  std::vector<RawLabel> raw;
  for (int i = 0; i < 12; ++i) raw.push_back(label("r" + std::to_string(i), ndc_for(i % 3), ImageKind::Reference));
  for (int i = 0; i < 60; ++i) raw.push_back(label("c" + std::to_string(i), ndc_for(i % 3)));
  const Manifest m = split_holdout(build_manifest(raw), 0.2, 4);
  const FoldPlan plan = make_folds(m, 4, 8);
  std::set<std::string> seen;
  for (int f = 0; f < 4; ++f)
    for (const auto& id : plan.validation_slice(f)) {
      EXPECT_TRUE(seen.insert(id).second) << id;
      const auto* r = m.find(id);
      EXPECT_EQ(r->kind, ImageKind::Consumer);
      EXPECT_NE(r->split, Split::Test);
    }
  std::set<std::string> expected;
  for (const auto& r : m.records)
    if (r.kind == ImageKind::Consumer && r.split != Split::Test) expected.insert(r.image_id);
  EXPECT_EQ(seen, expected);
  const Manifest applied = apply_folds(m, plan);
  EXPECT_NO_THROW(applied.validate());
  for (const auto& r : applied.records) EXPECT_EQ(r.fold.has_value(), expected.count(r.image_id) == 1);
}

TEST(Folds, RejectsKBelowTwo) {
  EXPECT_EQ(error_code([] { make_folds(consumers(2, 4), 1, 0); }), Errc::InvalidFoldCount);
  EXPECT_EQ(error_code([] { make_folds(consumers(2, 4), 0, 0); }), Errc::InvalidFoldCount);
}

TEST(Manifest, CsvRoundTripIsExact) {
  Manifest m = apply_folds(split_holdout(consumers(6, 5), 0.2, 2), make_folds(split_holdout(consumers(6, 5), 0.2, 2), 3, 2));
  m.seed = 12345;
  const std::string text = manifest_to_csv(m);
  EXPECT_EQ(manifest_to_csv(manifest_from_csv(text)), text);
  const Manifest back = manifest_from_csv(text);
  EXPECT_EQ(back.seed, std::optional<std::uint64_t>(12345));
  EXPECT_EQ(back.classes.size(), 6u);
}

TEST(Manifest, FullRangeSeedRoundTrips) {
  Manifest m = consumers(2, 1);
  m.seed = 0xfedcba9876543210ULL;
  EXPECT_EQ(manifest_from_csv(manifest_to_csv(m)).seed, m.seed);
  EXPECT_EQ(error_code([] { manifest_from_csv("# seed=12x\nimage_id\n"); }), Errc::ParseError);
}

TEST(Manifest, PlacementColumnsRoundTrip) {
  Manifest m = consumers(3, 1);
  m.records[0].kind = ImageKind::Synthetic;
  m.records[0].placements = {{0, {1, 2, 30, 40}, 12.5, 0.75}, {2, {50, 60, 70, 80}, 300.25, 1.25}};
  m.records[0].pair_id = "pair_000001";
  const std::string text = manifest_to_csv(m);
  const Manifest back = manifest_from_csv(text);
  ASSERT_EQ(back.records[0].placements.size(), 2u);
  EXPECT_EQ(back.records[0].placements[1].bbox, (BBox{50, 60, 70, 80}));
  EXPECT_EQ(back.records[0].placements[1].rotation, 300.25);
  EXPECT_EQ(back.records[0].pair_id, "pair_000001");
  EXPECT_EQ(manifest_to_csv(back), text);
}

TEST(Manifest, ValidationRules) {
  Manifest m = consumers(2, 2);
  m.records[0].class_id = 7;
  EXPECT_THROW(m.validate(), Error);
  m = consumers(2, 2);
  m.records[1].image_id = m.records[0].image_id;
  EXPECT_THROW(m.validate(), Error);
  m = consumers(2, 2);
  m.records[0].split = Split::Test;
  m.records[0].fold = 1;
  EXPECT_THROW(m.validate(), Error);
  m = consumers(2, 2);
  m.records[0].kind = ImageKind::Reference;
  m.records[0].side = Side::Both;
  EXPECT_THROW(m.validate(), Error);
}

TEST(RawLabels, ReportsLineOfBadNdc) {
  const auto dir = temp_dir("raw");
  csv::write_text(dir / "labels.csv",
                  "image_id,path,ndc,kind,side\na,a.png,00001-0001-01,consumer,front\nb,b.png,bad,consumer,back\n");
  try {
    read_raw_labels(dir / "labels.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InvalidNdc);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}
