#include "detfuse/fusion.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "detfuse/errors.h"
#include "oracles.h"
#include "test_util.h"

namespace detfuse {
namespace {

using testing::det;

FusionConfig config_for(FusionMethod m, double thr = 0.5) {
  FusionConfig c;
  c.method = m;
  c.iou_threshold = thr;
  return c;
}

std::vector<FusedDetection> run(FusionMethod m, std::vector<DetectionSet> sets, double thr = 0.5) {
  return fuse(sets, config_for(m, thr));
}

TEST(FuseTest, SingletonPassesThroughForEveryMethod) {
  for (FusionMethod m : kAllFusionMethods) {
    const auto out = run(m, {{"img", "m0", {det(1, 2, 30, 40, 0.7)}}});
    ASSERT_EQ(out.size(), 1u) << to_string(m);
    EXPECT_EQ(out[0].box, Box(1, 2, 30, 40));
    EXPECT_EQ(out[0].score, 0.7);
    EXPECT_EQ(out[0].cluster_size, 1);
    EXPECT_EQ(out[0].source_models, std::set<std::string>{"m0"});
  }
}

TEST(FuseTest, NoDetectionsGiveEmptyResult) {
  for (FusionMethod m : kAllFusionMethods) {
    EXPECT_TRUE(run(m, {{"img", "a", {}}, {"img", "b", {}}}).empty());
  }
}

TEST(FuseTest, Errors) {
  EXPECT_THROW(fuse({}, FusionConfig{}), InvalidArgument);
  std::vector<DetectionSet> mixed = {{"x", "a", {}}, {"y", "b", {}}};
  EXPECT_THROW(fuse(mixed, FusionConfig{}), InvalidArgument);
  std::vector<DetectionSet> ok = {{"x", "a", {}}};
  FusionConfig bad;
  bad.iou_threshold = 1.5;
  EXPECT_THROW(fuse(ok, bad), InvalidArgument);
  bad = FusionConfig{};
  bad.iou_threshold = 0.0;
  EXPECT_THROW(fuse(ok, bad), InvalidArgument);
  bad = FusionConfig{};
  bad.sigma = 0.0;
  EXPECT_THROW(fuse(ok, bad), InvalidArgument);
  bad = FusionConfig{};
  bad.score_prune = 1.0;
  EXPECT_THROW(fuse(ok, bad), InvalidArgument);
  bad = FusionConfig{};
  bad.model_weights["a"] = -1.0;
  EXPECT_THROW(fuse(ok, bad), InvalidArgument);
}

TEST(FuseTest, MethodNames) {
  for (FusionMethod m : kAllFusionMethods) EXPECT_EQ(parse_fusion_method(to_string(m)), m);
  EXPECT_THROW(parse_fusion_method("median"), InvalidArgument);
  EXPECT_EQ(parse_soft_nms_mode("gaussian"), SoftNmsMode::kGaussian);
  EXPECT_THROW(parse_soft_nms_mode("cubic"), InvalidArgument);
}

TEST(NmsTest, CoincidentBoxesKeepHigherScore) {
  const auto out = nms(std::vector{det(0, 0, 10, 10, 0.9), det(0, 0, 10, 10, 0.8, "m1")}, 0.5);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].score, 0.9);
  EXPECT_EQ(out[0].cluster_size, 2);
  EXPECT_EQ(out[0].source_models, (std::set<std::string>{"m0", "m1"}));
}

TEST(NmsTest, DisjointBoxesBothKept) {
  EXPECT_EQ(nms(std::vector{det(0, 0, 10, 10, 0.9), det(50, 50, 60, 60, 0.8)}, 0.5).size(), 2u);
}

TEST(NmsTest, IouEqualToThresholdIsNotSuppressed) {
  const auto a = det(0, 0, 10, 10, 0.9);
  const auto b = det(0, 0, 10, 5, 0.8);
  ASSERT_EQ(iou(a.box, b.box), 0.5);
  EXPECT_EQ(nms(std::vector{a, b}, 0.5).size(), 2u);
}

TEST(NmsTest, Idempotent) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 300; ++t) {
    const auto flat = flatten(testing::random_sets(rng, 3, 10));
    const auto once = nms(flat, 0.5);
    const auto twice = nms(to_detection_set(once, "img", "m0").detections, 0.5);
    ASSERT_EQ(once.size(), twice.size());
    for (std::size_t i = 0; i < once.size(); ++i) {
      ASSERT_EQ(once[i].box, twice[i].box);
      ASSERT_EQ(once[i].score, twice[i].score);
    }
  }
}

TEST(SoftNmsTest, LinearDecay) {
  const auto a = det(0, 0, 10, 10, 0.9);
  const auto b = det(0, 0, 10, 6, 0.8);
  ASSERT_DOUBLE_EQ(iou(a.box, b.box), 0.6);
  const auto out = soft_nms(std::vector{a, b}, 0.5, SoftNmsMode::kLinear, 0.5, 0.001);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].score, 0.9);
  EXPECT_NEAR(out[1].score, 0.32, 1e-12);
  EXPECT_EQ(out[1].cluster_size, 1);
}

TEST(SoftNmsTest, GaussianDecay) {
  const auto out = soft_nms(std::vector{det(0, 0, 10, 10, 0.9), det(0, 0, 10, 6, 0.8)}, 0.5,
                            SoftNmsMode::kGaussian, 0.5, 0.001);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_NEAR(out[1].score, 0.3894, 1e-4);
  EXPECT_NEAR(out[1].score, 0.8 * std::exp(-0.36 / 0.5), 1e-12);
}

TEST(SoftNmsTest, BelowThresholdLinearIsNoOp) {
  const auto a = det(0, 0, 10, 10, 0.9);
  const auto b = det(0, 0, 10, 3, 0.8);
  ASSERT_DOUBLE_EQ(iou(a.box, b.box), 0.3);
  const auto out = soft_nms(std::vector{b, a}, 0.5, SoftNmsMode::kLinear, 0.5, 0.001);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].score, 0.9);
  EXPECT_EQ(out[1].score, 0.8);
}

TEST(SoftNmsTest, PrunesDecayedScores) {
  // Identical boxes: linear decay multiplies by (1 - 1) = 0.
  const auto out = soft_nms(std::vector{det(0, 0, 10, 10, 0.9), det(0, 0, 10, 10, 0.8)}, 0.5,
                            SoftNmsMode::kLinear, 0.5, 0.001);
  EXPECT_EQ(out.size(), 1u);
}

TEST(WbfTest, TwoModelWeightedAverage) {
  std::vector<DetectionSet> sets = {{"img", "a", {det(0, 0, 10, 10, 0.9, "a")}},
                                    {"img", "b", {det(2, 2, 12, 12, 0.6, "b")}}};
  const auto out = run(FusionMethod::kWbf, sets, 0.4);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_NEAR(out[0].box.x1(), 0.8, 1e-12);
  EXPECT_NEAR(out[0].box.y1(), 0.8, 1e-12);
  EXPECT_NEAR(out[0].box.x2(), 10.8, 1e-12);
  EXPECT_NEAR(out[0].box.y2(), 10.8, 1e-12);
  EXPECT_NEAR(out[0].score, 0.75, 1e-12);
  EXPECT_EQ(out[0].cluster_size, 2);
}

TEST(WbfTest, SingleDetectionRescaledByModelCount) {
  std::vector<DetectionSet> sets = {
      {"img", "a", {det(0, 0, 10, 10, 0.9, "a")}}, {"img", "b", {}}, {"img", "c", {}}};
  const auto out = run(FusionMethod::kWbf, sets);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_NEAR(out[0].score, 0.9 / 3.0, 1e-15);
  EXPECT_EQ(out[0].box, Box(0, 0, 10, 10));

  FusionConfig no_rescale = config_for(FusionMethod::kWbf);
  no_rescale.score_rescale = false;
  EXPECT_EQ(fuse(sets, no_rescale).at(0).score, 0.9);
}

TEST(WbfTest, IdenticalDetectionsFuseExactly) {
  const Box b(3.1, 4.7, 55.3, 81.9);
  std::vector<DetectionSet> sets;
  for (int m = 0; m < 3; ++m) {
    const std::string id = "m" + std::to_string(m);
    sets.push_back({"img", id, {Detection{b, 0.7, "fracture", id}}});
  }
  const auto out = run(FusionMethod::kWbf, sets);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].box, b);
  EXPECT_EQ(out[0].score, 0.7);
  EXPECT_EQ(out[0].source_models.size(), 3u);
}

TEST(WbfTest, ModelWeightsShiftTheAverage) {
  std::vector<DetectionSet> sets = {{"img", "a", {det(0, 0, 10, 10, 0.5, "a")}},
                                    {"img", "b", {det(2, 0, 12, 10, 0.5, "b")}}};
  FusionConfig c = config_for(FusionMethod::kWbf);
  c.model_weights = {{"a", 3.0}};
  const auto out = fuse(sets, c);
  ASSERT_EQ(out.size(), 1u);
  // weighted scores 1.5 and 0.5
  EXPECT_NEAR(out[0].box.x1(), 0.5, 1e-12);
  EXPECT_NEAR(out[0].score, 0.5, 1e-12);
}

TEST(NmwTest, WeightsByScoreTimesIouWithBest) {
  std::vector<DetectionSet> sets = {{"img", "a", {det(0, 0, 10, 10, 0.9, "a")}},
                                    {"img", "b", {det(2, 0, 12, 10, 0.5, "b")}}};
  const auto out = run(FusionMethod::kNmw, sets);
  ASSERT_EQ(out.size(), 1u);
  const double w2 = 0.5 * (2.0 / 3.0);
  EXPECT_NEAR(out[0].box.x1(), (2 * w2) / (0.9 + w2), 1e-12);
  EXPECT_NEAR(out[0].box.x1(), 0.5405, 1e-4);
  EXPECT_NEAR(out[0].box.x2(), (10 * 0.9 + 12 * w2) / (0.9 + w2), 1e-12);
  EXPECT_EQ(out[0].box.y1(), 0.0);
  EXPECT_EQ(out[0].score, 0.9);
  EXPECT_EQ(out[0].cluster_size, 2);
}

TEST(NmwTest, IdenticalBoxesKeepBoxAndBestScore) {
  std::vector<DetectionSet> sets = {{"img", "a", {det(1, 1, 9, 9, 0.2, "a")}},
                                    {"img", "b", {det(1, 1, 9, 9, 0.9, "b")}}};
  const auto out = run(FusionMethod::kNmw, sets);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].box, Box(1, 1, 9, 9));
  EXPECT_EQ(out[0].score, 0.9);
}

TEST(FuseTest, ScoreTiesFollowModelThenIndexOrder) {
  std::vector<DetectionSet> sets = {
      {"img", "a", {det(0, 0, 10, 10, 0.5, "a"), det(40, 40, 50, 50, 0.5, "a")}},
      {"img", "b", {det(80, 80, 90, 90, 0.5, "b")}}};
  for (FusionMethod m : {FusionMethod::kNms, FusionMethod::kSoftNms, FusionMethod::kNmw}) {
    const auto out = run(m, sets);
    ASSERT_EQ(out.size(), 3u);
    EXPECT_EQ(out[0].box, Box(0, 0, 10, 10));
    EXPECT_EQ(out[1].box, Box(40, 40, 50, 50));
    EXPECT_EQ(out[2].box, Box(80, 80, 90, 90));
  }
}

TEST(FuseTest, SingleModelNeverMergesBelowThreshold) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 200; ++t) {
    auto sets = testing::random_sets(rng, 1, 10);
    const auto flat = flatten(sets);
    for (FusionMethod m : {FusionMethod::kWbf, FusionMethod::kNmw}) {
      const auto out = run(m, sets);
      std::size_t members = 0;
      for (const auto& f : out) members += static_cast<std::size_t>(f.cluster_size);
      ASSERT_EQ(members, flat.size());
      // If no pair overlaps above the threshold, nothing merges.
      bool any_overlap = false;
      for (std::size_t i = 0; i < flat.size(); ++i)
        for (std::size_t j = i + 1; j < flat.size(); ++j)
          any_overlap |= iou(flat[i].box, flat[j].box) > 0.5;
      if (!any_overlap) ASSERT_EQ(out.size(), flat.size());
    }
  }
}

// Envelope of the detections that could belong to each fused output: for
// every output, some subset of inputs overlapping it; checking against the
// envelope of all inputs whose IoU with the output exceeds zero is a
// necessary condition, and for NMS/soft-NMS the box must equal an input.
TEST(FusePropertyTest, EnvelopeAndScoreBounds) {
  std::mt19937_64 rng(4242);
  for (int t = 0; t < 500; ++t) {
    const auto sets = testing::random_sets(rng, 3, 10);
    const auto flat = flatten(sets);
    for (FusionMethod m : kAllFusionMethods) {
      for (const auto& f : run(m, sets)) {
        ASSERT_GE(f.score, 0.0);
        ASSERT_LE(f.score, 1.0);
        ASSERT_GE(f.cluster_size, 1);
        ASSERT_FALSE(f.source_models.empty());
        double lo[4] = {1e300, 1e300, 1e300, 1e300};
        double hi[4] = {-1e300, -1e300, -1e300, -1e300};
        bool exact = false;
        for (const auto& d : flat) {
          if (iou(d.box, f.box) <= 0.0) continue;
          exact |= d.box == f.box;
          for (int k = 0; k < 4; ++k) {
            lo[k] = std::min(lo[k], d.box.corners()[k]);
            hi[k] = std::max(hi[k], d.box.corners()[k]);
          }
        }
        for (int k = 0; k < 4; ++k) {
          ASSERT_GE(f.box.corners()[k], lo[k]);
          ASSERT_LE(f.box.corners()[k], hi[k]);
        }
        if (m == FusionMethod::kNms || m == FusionMethod::kSoftNms) ASSERT_TRUE(exact);
      }
    }
  }
}

TEST(FusePropertyTest, SoftNmsAndRescaleNeverIncreaseScores) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 300; ++t) {
    const auto sets = testing::random_sets(rng, 3, 10);
    const auto flat = flatten(sets);
    double max_in = 0.0;
    for (const auto& d : flat) max_in = std::max(max_in, d.score);
    FusionConfig soft = config_for(FusionMethod::kSoftNms);
    soft.soft_mode = t % 2 ? SoftNmsMode::kGaussian : SoftNmsMode::kLinear;
    const auto out = fuse(sets, soft);
    // Each output is some input with a decayed score.
    for (const auto& f : out) {
      const bool from_input = std::any_of(flat.begin(), flat.end(), [&](const Detection& d) {
        return d.box == f.box && f.score <= d.score;
      });
      ASSERT_TRUE(from_input);
    }
    FusionConfig on = config_for(FusionMethod::kWbf);
    FusionConfig off = on;
    off.score_rescale = false;
    const auto a = fuse(sets, on);
    const auto b = fuse(sets, off);
    ASSERT_EQ(a.size(), b.size());
    double sum_a = 0, sum_b = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      sum_a += a[i].score;
      sum_b += b[i].score;
    }
    ASSERT_LE(sum_a, sum_b + 1e-12);
    for (const auto& f : b) ASSERT_LE(f.score, max_in);
  }
}

TEST(FusePropertyTest, PermutationInvariantWithoutTies) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 300; ++t) {
    auto sets = testing::random_sets(rng, 3, 10);
    auto shuffled = sets;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    for (auto& s : shuffled) std::shuffle(s.detections.begin(), s.detections.end(), rng);
    for (FusionMethod m : kAllFusionMethods) {
      const auto a = run(m, sets);
      const auto b = run(m, shuffled);
      ASSERT_EQ(a.size(), b.size()) << to_string(m);
      for (std::size_t i = 0; i < a.size(); ++i) {
        ASSERT_EQ(a[i].box, b[i].box) << to_string(m);
        ASSERT_EQ(a[i].score, b[i].score) << to_string(m);
      }
    }
  }
}

void expect_matches_oracle(const std::vector<FusedDetection>& got,
                           const std::vector<oracle::Out>& want, const char* what) {
  ASSERT_EQ(got.size(), want.size()) << what;
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_NEAR(got[i].box.x1(), want[i].x1, 1e-9) << what;
    EXPECT_NEAR(got[i].box.y1(), want[i].y1, 1e-9) << what;
    EXPECT_NEAR(got[i].box.x2(), want[i].x2, 1e-9) << what;
    EXPECT_NEAR(got[i].box.y2(), want[i].y2, 1e-9) << what;
    EXPECT_NEAR(got[i].score, want[i].score, 1e-9) << what;
    EXPECT_EQ(got[i].cluster_size, want[i].cluster_size) << what;
  }
}

TEST(FuseOracleTest, MatchesReferenceImplementations) {
  std::mt19937_64 rng(1234);
  std::uniform_real_distribution<double> thr(0.1, 0.9);
  for (int t = 0; t < 300; ++t) {
    const auto sets = testing::random_sets(rng, 3, 10);
    const auto flat = flatten(sets);
    const int models = static_cast<int>(sets.size());
    const double th = thr(rng);
    std::map<std::string, double> weights = {{"m0", 1.0 + t % 3}};
    expect_matches_oracle(nms(flat, th), oracle::nms(flat, th), "nms");
    expect_matches_oracle(soft_nms(flat, th, SoftNmsMode::kLinear, 0.5, 0.001),
                          oracle::soft_nms(flat, th, false, 0.5, 0.001), "soft linear");
    expect_matches_oracle(soft_nms(flat, th, SoftNmsMode::kGaussian, 0.3, 0.01),
                          oracle::soft_nms(flat, th, true, 0.3, 0.01), "soft gaussian");
    expect_matches_oracle(wbf(flat, models, th, weights, true),
                          oracle::wbf(flat, models, th, weights, true), "wbf");
    expect_matches_oracle(nmw(flat, th), oracle::nmw(flat, th), "nmw");
  }
}

}  // namespace
}  // namespace detfuse
