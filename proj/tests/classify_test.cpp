#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <numeric>

#include "oracles.hpp"
#include "pillsort/classify.hpp"
#include "pillsort/fixtures.hpp"

using namespace pillsort;

namespace {

std::vector<ReferenceCrop> fixture_crops(int classes) {
  std::vector<ReferenceCrop> out;
  for (const auto& ref : render_fixture_references(fixture_catalog(classes)))
    out.push_back({ref.class_id, reference_input(ref.image)});
  return out;
}

const std::vector<ReferenceCrop>& five_class_crops() {
  static const auto crops = fixture_crops(5);
  return crops;
}

ProbVector one_hot(int n, int c) {
  std::vector<double> v(static_cast<std::size_t>(n), 0.0);
  v[static_cast<std::size_t>(c)] = 1.0;
  return ProbVector(v);
}

ProbVector random_prob(Rng& rng, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.uniform() + 1e-9;
  return ProbVector::normalized(v);
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

TEST(ProbVectorType, Invariants) {
  EXPECT_NO_THROW(ProbVector({0.25, 0.75}));
  EXPECT_EQ(error_code([] { ProbVector({0.5, 0.6}); }), Errc::NotADistribution);
  EXPECT_EQ(error_code([] { ProbVector({1.1, -0.1}); }), Errc::NotADistribution);
  EXPECT_EQ(ProbVector::normalized({1.0, 3.0}), ProbVector({0.25, 0.75}));
  EXPECT_EQ(error_code([] { ProbVector::normalized({0.0, 0.0}); }), Errc::NotADistribution);
}

TEST(BuildIndex, FiveClassesTwoCropsEach) {
  const auto index = build_index(5, five_class_crops());
  EXPECT_EQ(index.entries().size(), 10u);
  EXPECT_EQ(index.class_count(), 5);
  for (const auto& e : index.entries()) EXPECT_EQ(e.features.size(), static_cast<std::size_t>(kFeatureDims));
}

TEST(BuildIndex, MissingClass) {
  auto crops = five_class_crops();
  std::erase_if(crops, [](const ReferenceCrop& c) { return c.class_id == 3; });
  EXPECT_EQ(error_code([&] { build_index(5, crops); }), Errc::MissingClass);
  auto crops2 = five_class_crops();
  crops2[0].class_id = 9;
  EXPECT_EQ(error_code([&] { build_index(5, crops2); }), Errc::UnknownClass);
}

TEST(BuildIndex, DeterministicSerialization) {
  const auto a = build_index(5, five_class_crops(), 1);
  const auto b = build_index(5, five_class_crops(), 3);
  EXPECT_EQ(a.serialize(), b.serialize());
  const auto back = ReferenceFeatureIndex::deserialize(a.serialize());
  EXPECT_EQ(back, a);
  EXPECT_EQ(back.serialize(), a.serialize());
  EXPECT_EQ(error_code([] { ReferenceFeatureIndex::deserialize("not an index\n"); }), Errc::ParseError);
}

TEST(PredictBaseline, StoredCropIsArgmax) {
  const auto index = build_index(5, five_class_crops());
  for (const auto& c : five_class_crops()) {
    const ProbVector p = predict_baseline(index, c.input);
    EXPECT_EQ(p.argmax(), c.class_id);
    EXPECT_NEAR(std::accumulate(p.values().begin(), p.values().end(), 0.0), 1.0, 1e-12);
  }
}

TEST(PredictBaseline, EquidistantClassesShareProbability) {
  const PlaneStack query = five_class_crops()[0].input;
  const std::vector<double> q = extract_features(query);
  const std::size_t d = q.size();
  std::vector<double> up = q, down = q, far = q;
  for (std::size_t i = 0; i < d; i += 3) {
    up[i] += 0.25;
    down[i] -= 0.25;
  }
  for (auto& v : far) v += 50.0;
  ReferenceFeatureIndex index(3, std::vector<double>(d, 0.0), std::vector<double>(d, 1.0),
                              {{0, up}, {1, down}, {2, far}});
  const ProbVector p = predict_baseline(index, query);
  EXPECT_NEAR(p[0], p[1], 1e-9);
  EXPECT_LT(p[2], 1e-9);
}

TEST(PredictBaseline, ArgmaxInvariantUnderTemperature) {
  const auto index = build_index(5, five_class_crops());
  const auto crops = fixture_crops(7);
  for (std::size_t i = 10; i < crops.size(); ++i) {
    const int ref = predict_baseline(index, crops[i].input, 1.0).argmax();
    for (double t : {0.05, 0.5, 4.0, 40.0}) EXPECT_EQ(predict_baseline(index, crops[i].input, t).argmax(), ref);
  }
  EXPECT_EQ(error_code([&] { predict_baseline(index, crops[0].input, 0.0); }), Errc::InvalidThreshold);
}

TEST(Features, DimensionsAndHistogramMass) {
  const auto f = extract_features(five_class_crops()[2].input);
  ASSERT_EQ(f.size(), static_cast<std::size_t>(kFeatureDims));
  EXPECT_NEAR(std::accumulate(f.begin(), f.begin() + 256, 0.0), 1.0, 1e-9);
  EXPECT_GT(f[256], 0.0);
  EXPECT_LT(f[256], 1.0);
}

TEST(LoadPredictions, RenormalizesWithinTolerance) {
  const auto set = parse_predictions("image_id,p_0,p_1,p_2\na,0.5,0.4,0.099\nb,0,1,0\n", 3);
  ASSERT_EQ(set.rows.size(), 2u);
  const ProbVector& a = set.at("a");
  EXPECT_NEAR(a[0] + a[1] + a[2], 1.0, 1e-12);
  EXPECT_NEAR(a[0], 0.5 / 0.999, 1e-12);
  EXPECT_EQ(error_code([&] { set.at("zzz"); }), Errc::MissingPrediction);
}

TEST(LoadPredictions, Rejections) {
  EXPECT_EQ(error_code([] { parse_predictions("image_id,p_0,p_1\na,1.1,-0.1\n", 2); }), Errc::NotADistribution);
  EXPECT_EQ(error_code([] { parse_predictions("image_id,p_0,p_1\na,0.5,0.49\n", 2); }), Errc::NotADistribution);
  EXPECT_EQ(error_code([] { parse_predictions("image_id,p_0,p_1\na,0.5,0.3,0.2\n", 2); }), Errc::ShapeMismatch);
  EXPECT_EQ(error_code([] { parse_predictions("image_id,p_0,p_1,p_2\na,0.5,0.3,0.2\n", 2); }), Errc::ShapeMismatch);
  EXPECT_EQ(error_code([] { parse_predictions("image_id,p_0,p_1\na,0.5,0.5\na,0.5,0.5\n", 2); }), Errc::ParseError);
}

TEST(LoadPredictions, PaperScaleShapeRoundTrips) {
  Rng rng(1);
  PredictionSet set;
  set.class_count = 924;
  for (int i = 0; i < 1000; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "img%04d", i);
    set.put(id, random_prob(rng, 924));
  }
  const PredictionSet back = parse_predictions(predictions_to_csv(set), 924);
  EXPECT_EQ(back.rows.size(), 1000u);
  EXPECT_EQ(back, set);
}

TEST(Ensemble, Identities) {
  Rng rng(2);
  const ProbVector p = random_prob(rng, 12);
  for (std::size_t k = 1; k <= 5; ++k) {
    const ProbVector e = ensemble(std::vector<ProbVector>(k, p));
    for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(e[i], p[i], 1e-15);
  }
  const ProbVector ab = ensemble({one_hot(4, 1), one_hot(4, 3)});
  EXPECT_EQ(ab, ProbVector({0.0, 0.5, 0.0, 0.5}));
  EXPECT_EQ(error_code([] { ensemble(std::vector<ProbVector>{}); }), Errc::EmptyEnsemble);
  EXPECT_EQ(error_code([] { ensemble({one_hot(3, 0), one_hot(4, 0)}); }), Errc::ShapeMismatch);
}

TEST(Ensemble, PermutationInvariant) {
  Rng rng(3);
  std::vector<ProbVector> vs;
  for (int i = 0; i < 7; ++i) vs.push_back(random_prob(rng, 30));
  const ProbVector ref = ensemble(vs);
  for (int t = 0; t < 20; ++t) {
    rng.shuffle(vs);
    EXPECT_EQ(ensemble(vs), ref);
  }
}

TEST(Ensemble, PartitionAssociativity) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const int k = rng.uniform_int(2, 10);
    std::vector<ProbVector> vs;
    for (int i = 0; i < k; ++i) vs.push_back(random_prob(rng, 16));
    const int cut = rng.uniform_int(1, k - 1);
    const ProbVector left = ensemble(std::vector<ProbVector>(vs.begin(), vs.begin() + cut));
    const ProbVector right = ensemble(std::vector<ProbVector>(vs.begin() + cut, vs.end()));
    const ProbVector all = ensemble(vs);
    double sum = 0;
    for (std::size_t i = 0; i < 16; ++i) {
      EXPECT_NEAR(all[i], (cut * left[i] + (k - cut) * right[i]) / k, 1e-12);
      sum += all[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Ensemble, PredictionSetsMustCoverSameImages) {
  PredictionSet a{2, {}}, b{2, {}};
  a.put("x", one_hot(2, 0));
  b.put("x", one_hot(2, 1));
  EXPECT_EQ(ensemble(std::vector<PredictionSet>{a, b}).at("x"), ProbVector({0.5, 0.5}));
  b.put("y", one_hot(2, 1));
  EXPECT_EQ(error_code([&] { ensemble(std::vector<PredictionSet>{a, b}); }), Errc::SetMismatch);
}

TEST(CombineSides, Examples) {
  EXPECT_EQ(combine_sides(one_hot(3, 2), one_hot(3, 2)), one_hot(3, 2));
  const ProbVector f({0.6, 0.4}), b({0.2, 0.8});
  const ProbVector c = combine_sides(f, b);
  EXPECT_NEAR(c[0], 0.4, 1e-15);
  EXPECT_NEAR(c[1], 0.6, 1e-15);
  EXPECT_EQ(combine_sides(f, b), combine_sides(b, f));
  EXPECT_EQ(combine_sides(f, f), f);
  EXPECT_EQ(error_code([&] { combine_sides(f, one_hot(3, 0)); }), Errc::ShapeMismatch);
}

TEST(TopK, TieRuleAndOneHot) {
  EXPECT_EQ(top_k(one_hot(6, 4), 1), std::vector<int>{4});
  EXPECT_EQ(top_k(ProbVector({0.25, 0.25, 0.25, 0.25}), 3), (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(top_k(ProbVector({0.1, 0.4, 0.1, 0.4}), 4), (std::vector<int>{1, 3, 0, 2}));
}

TEST(TopK, MatchesSortOracle) {
  Rng rng(5);
  for (int t = 0; t < 500; ++t) {
    const int n = rng.uniform_int(1, 40);
    std::vector<double> v(static_cast<std::size_t>(n));
    // Coarse values force ties.
    for (auto& x : v) x = rng.uniform_int(0, 6);
    if (std::accumulate(v.begin(), v.end(), 0.0) == 0) v[0] = 1;
    const ProbVector p = ProbVector::normalized(v);
    const int k = rng.uniform_int(1, n);
    EXPECT_EQ(top_k(p, k), oracle::top_k(p.values(), k)) << t;
  }
}

TEST(TopK, FullRankIsPermutation) {
  Rng rng(6);
  const ProbVector p = random_prob(rng, 25);
  auto all = top_k(p, 25);
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 25; ++i) EXPECT_EQ(all[static_cast<std::size_t>(i)], i);
}

TEST(TopK, InvalidK) {
  EXPECT_EQ(error_code([] { top_k(one_hot(3, 0), 0); }), Errc::InvalidK);
  EXPECT_EQ(error_code([] { top_k(one_hot(3, 0), 4); }), Errc::InvalidK);
}
