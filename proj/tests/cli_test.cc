#include "commands.h"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "detfuse/detection_io.h"
#include "detfuse/errors.h"
#include "test_util.h"

namespace detfuse {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::det;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("detfuse_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string put(const std::string& name, const std::string& text) const {
    write_file(path(name), text);
    return path(name);
  }

  int run(std::vector<std::string> args) {
    args.insert(args.begin(), "detfuse");
    out_.str("");
    err_.str("");
    return cli::run(args, out_, err_);
  }

  // Two images: "pos" has one fracture, "neg" has none.
  std::string write_gt() const {
    return put("gt.json", serialize_ground_truth({{"pos", {Box(10, 10, 60, 60)}}, {"neg", {}}}));
  }

  std::string write_model(const std::string& model, double pos_score, double neg_score) const {
    std::vector<DetectionSet> sets = {
        {"pos", model, {det(11, 10, 60, 61, pos_score, model)}},
        {"neg", model, {det(70, 70, 90, 90, neg_score, model)}},
    };
    return put(model + ".json", serialize_detections(sets));
  }

  fs::path dir_;
  std::ostringstream out_, err_;
};

TEST_F(CliTest, FuseIsDeterministicAndWritesManifest) {
  const auto a = write_model("a", 0.9, 0.2);
  const auto b = write_model("b", 0.7, 0.6);
  for (const char* method : {"nms", "soft_nms", "wbf", "nmw"}) {
    ASSERT_EQ(run({"fuse", a, b, "--method", method, "--out", path("f1.json")}), 0) << err_.str();
    ASSERT_EQ(run({"fuse", a, b, "--method", method, "--out", path("f2.json"), "--jobs", "4"}), 0);
    EXPECT_EQ(read_file(path("f1.json")), read_file(path("f2.json"))) << method;
    const auto fused = parse_predictions(read_file(path("f1.json")));
    ASSERT_EQ(fused.size(), 2u);
    EXPECT_EQ(fused[0].model_id, std::string("ensemble:") + method);
    const auto manifest = json::parse(read_file(path("f1.json.manifest.json")));
    EXPECT_EQ(manifest["command"], "fuse");
    EXPECT_EQ(manifest["inputs"].size(), 2u);
  }
}

TEST_F(CliTest, FuseSingleFileWbfKeepsBoxes) {
  const auto a = write_model("a", 0.9, 0.2);
  ASSERT_EQ(run({"fuse", a, "--method", "wbf", "--out", path("f.json")}), 0);
  const auto in = parse_predictions(read_file(a));
  const auto out = parse_predictions(read_file(path("f.json")));
  for (std::size_t i = 0; i < in.size(); ++i) {
    ASSERT_EQ(out[i].detections.size(), 1u);
    EXPECT_EQ(out[i].detections[0].box, in[i].detections[0].box);
    EXPECT_EQ(out[i].detections[0].score, in[i].detections[0].score);
  }
}

TEST_F(CliTest, FuseRejectsBadArguments) {
  const auto a = write_model("a", 0.9, 0.2);
  EXPECT_EQ(run({"fuse", a, "--method", "wbf", "--iou-thr", "1.5", "--out", path("f.json")}), 2);
  EXPECT_NE(err_.str().find("iou"), std::string::npos) << err_.str();
  EXPECT_EQ(run({"fuse", a, "--method", "bogus", "--out", path("f.json")}), 2);
  EXPECT_EQ(run({"fuse", a, "--out", path("f.json")}), 2);
  EXPECT_EQ(run({"fuse", path("missing.json"), "--method", "nms", "--out", path("f.json")}), 1);
  EXPECT_NE(err_.str().find("missing.json"), std::string::npos);
  const auto bad = put("bad.json", R"({"format_version":"1","records":[{"image_id":"i","model_id":"m",
    "detections":[{"bbox":[0,0,1,1],"score":1.3,"label":"fracture"}]}]})");
  EXPECT_EQ(run({"fuse", bad, "--method", "nms", "--out", path("f.json")}), 2);
  EXPECT_NE(err_.str().find("score"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("f.json")));
}

TEST_F(CliTest, FuseWeightsAndTheirErrors) {
  const auto a = write_model("a", 0.9, 0.2);
  const auto b = write_model("b", 0.7, 0.6);
  EXPECT_EQ(run({"fuse", a, b, "--method", "wbf", "--weights", "a=2,b=1", "--out", path("f.json")}), 0)
      << err_.str();
  const auto fused = parse_predictions(read_file(path("f.json")));
  // Weighted mean of 0.9 (weight 2) and 0.7 (weight 1), two of two models.
  EXPECT_NEAR(fused[0].detections[0].score, (2 * 0.9 + 0.7) / 3, 1e-12);
  EXPECT_EQ(run({"fuse", a, b, "--method", "wbf", "--weights", "a=-1", "--out", path("f.json")}), 2);
  EXPECT_EQ(run({"fuse", a, b, "--method", "wbf", "--weights", "a2", "--out", path("f.json")}), 2);
}

TEST_F(CliTest, VotePolicies) {
  const auto a = write_model("a", 0.9, 0.2);
  const auto b = write_model("b", 0.7, 0.6);
  const auto c = write_model("c", 0.3, 0.1);
  auto labels = [&](const std::string& policy) {
    EXPECT_EQ(run({"vote", a, b, c, "--policy", policy, "--out", path("v.json")}), 0) << err_.str();
    const auto doc = json::parse(read_file(path("v.json")));
    std::map<std::string, std::string> m;
    for (const auto& d : doc["decisions"]) m[d["image_id"]] = d["label"];
    return m;
  };
  EXPECT_EQ(labels("affirmative")["pos"], "fracture");
  EXPECT_EQ(labels("affirmative")["neg"], "fracture");
  EXPECT_EQ(labels("consensus")["pos"], "fracture");
  EXPECT_EQ(labels("consensus")["neg"], "non-fracture");
  EXPECT_EQ(labels("unanimous")["pos"], "non-fracture");
  EXPECT_EQ(run({"vote", a, "--policy", "majority", "--out", path("v.json")}), 2);
}

TEST_F(CliTest, VoteTreatsMissingRecordAsEmpty) {
  const auto a = write_model("a", 0.9, 0.2);
  const auto b = put("b.json", serialize_detections({{"pos", "b", {det(10, 10, 60, 60, 0.8, "b")}}}));
  ASSERT_EQ(run({"vote", a, b, "--policy", "unanimous", "--out", path("v.json")}), 0) << err_.str();
  const auto doc = json::parse(read_file(path("v.json")));
  ASSERT_EQ(doc["decisions"].size(), 2u);
  EXPECT_EQ(doc["decisions"][0]["image_id"], "pos");
  EXPECT_EQ(doc["decisions"][0]["label"], "fracture");
  EXPECT_EQ(doc["decisions"][1]["image_id"], "neg");
  EXPECT_EQ(doc["decisions"][1]["label"], "non-fracture");
}

TEST_F(CliTest, EvaluatePerfectAndEmptyPredictions) {
  const auto gt = write_gt();
  const auto perfect =
      put("p.json", serialize_detections({{"pos", "m", {det(10, 10, 60, 60, 0.9, "m")}}}));
  ASSERT_EQ(run({"evaluate", "--gt", gt, "--pred", perfect, "--out", path("e.json")}), 0)
      << err_.str();
  auto r = json::parse(read_file(path("e.json")))["rows"][0]["report"];
  EXPECT_EQ(r["accuracy"], 1.0);
  EXPECT_EQ(r["f1"], 1.0);
  EXPECT_EQ(r["ap50"], 1.0);
  EXPECT_EQ(r["ap_50_95"], 1.0);
  EXPECT_NE(out_.str().find("AP@0.5"), std::string::npos);

  const auto empty = put("e.json.in", serialize_detections({{"pos", "m", {}}}));
  ASSERT_EQ(run({"evaluate", "--gt", gt, "--pred", empty, "--out", path("e.json")}), 0);
  r = json::parse(read_file(path("e.json")))["rows"][0]["report"];
  EXPECT_EQ(r["recall"], 0.0);
  EXPECT_EQ(r["specificity"], 1.0);
  EXPECT_EQ(r["ap50"], 0.0);
}

TEST_F(CliTest, EvaluateMicroCorpusMatchesFrozenAp) {
  std::vector<GroundTruth> gt = {{"i0", {Box(0, 0, 100, 100)}},
                                 {"i1", {}},
                                 {"i2", {Box(200, 200, 300, 300)}},
                                 {"i3", {Box(0, 0, 100, 100)}},
                                 {"i4", {}}};
  std::vector<DetectionSet> preds = {{"i0", "m", {det(0, 0, 100, 92, 0.9, "m")}},
                                     {"i1", "m", {det(10, 10, 60, 60, 0.8, "m")}},
                                     {"i2", "m", {det(200, 200, 300, 283, 0.7, "m")}},
                                     {"i3", "m", {det(0, 0, 100, 62, 0.6, "m")}}};
  const auto g = put("gt.json", serialize_ground_truth(gt));
  const auto p = put("p.json", serialize_detections(preds));
  ASSERT_EQ(run({"evaluate", "--gt", g, "--pred", p, "--out", path("e.json")}), 0) << err_.str();
  const auto r = json::parse(read_file(path("e.json")))["rows"][0]["report"];
  const double ap50 = (34 + 67 * 0.75) / 101;
  const double ap75 = (34 + 33 * 2.0 / 3.0) / 101;
  const double ap90 = 34.0 / 101;
  EXPECT_NEAR(r["ap50"].get<double>(), ap50, 1e-12);
  EXPECT_NEAR(r["ap_50_95"].get<double>(), (3 * ap50 + 4 * ap75 + 2 * ap90) / 10, 1e-12);
}

TEST_F(CliTest, EvaluateDecisionsAndUnknownImages) {
  const auto gt = write_gt();
  const auto a = write_model("a", 0.9, 0.2);
  ASSERT_EQ(run({"vote", a, "--policy", "affirmative", "--out", path("v.json")}), 0);
  ASSERT_EQ(run({"evaluate", "--gt", gt, "--decisions", path("v.json"), "--out", path("e.json")}), 0)
      << err_.str();
  const auto r = json::parse(read_file(path("e.json")))["rows"][0]["report"];
  EXPECT_EQ(r["accuracy"], 1.0);
  EXPECT_TRUE(r["ap50"].is_null());

  const auto stray = put("s.json", serialize_detections({{"ghost_17", "m", {}}}));
  EXPECT_EQ(run({"evaluate", "--gt", gt, "--pred", stray, "--out", path("e2.json")}), 2);
  EXPECT_NE(err_.str().find("ghost_17"), std::string::npos);
  EXPECT_EQ(run({"evaluate", "--gt", gt, "--pred", a, "--decisions", path("v.json"), "--out",
                 path("e2.json")}),
            2);
  EXPECT_EQ(run({"evaluate", "--gt", gt, "--pred", a, "--iou", "0.5:0.4:0.05", "--out",
                 path("e2.json")}),
            2);
}

TEST_F(CliTest, SimulateValidatesAndIsDeterministic) {
  const std::string config = R"({"seed": 5, "n_seeds": 2, "n_images": 30, "profiles": [
      {"model_id": "a"}, {"model_id": "b", "p_miss": 0.3}]})";
  const auto cfg = put("bench.json", config);
  ASSERT_EQ(run({"simulate", "--config", cfg, "--out", path("s1")}), 0) << err_.str();
  ASSERT_EQ(run({"simulate", "--config", cfg, "--out", path("s2"), "--jobs", "3"}), 0);
  for (const char* f : {"results.json", "report.txt", "seed_5/ground_truth.json",
                        "seed_6/predictions_b.json"}) {
    EXPECT_EQ(read_file(path(std::string("s1/") + f)), read_file(path(std::string("s2/") + f))) << f;
  }
  const auto manifest = json::parse(read_file(path("s1/manifest.json")));
  EXPECT_EQ(manifest["seed"], 5);
  EXPECT_TRUE(manifest.contains("rng"));

  ASSERT_EQ(run({"report", path("s1/results.json")}), 0);
  EXPECT_NE(out_.str().find("nmw"), std::string::npos);

  const auto one = put("one.json", R"({"profiles": [{"model_id": "a"}]})");
  EXPECT_EQ(run({"simulate", "--config", one, "--out", path("s3")}), 2);
  const auto weak = put("weak.json", R"({"profiles": [{"model_id": "a"},
      {"model_id": "b", "tp_score": {"mean": 0.3}, "fp_score": {"mean": 0.4}}]})");
  EXPECT_EQ(run({"simulate", "--config", weak, "--out", path("s3")}), 2);
  EXPECT_NE(err_.str().find("b"), std::string::npos);
}

TEST(ParseIouSpecTest, ListsRangesAndErrors) {
  EXPECT_EQ(cli::parse_iou_spec("0.5"), std::vector<double>{0.5});
  EXPECT_EQ(cli::parse_iou_spec("0.5,0.75"), (std::vector<double>{0.5, 0.75}));
  const auto r = cli::parse_iou_spec("0.5:0.95:0.05");
  ASSERT_EQ(r.size(), 10u);
  EXPECT_EQ(r.front(), 0.5);
  EXPECT_EQ(r.back(), 0.95);
  EXPECT_THROW(cli::parse_iou_spec("0"), InvalidArgument);
  EXPECT_THROW(cli::parse_iou_spec("1.2"), InvalidArgument);
  EXPECT_THROW(cli::parse_iou_spec("a"), InvalidArgument);
  EXPECT_THROW(cli::parse_iou_spec("0.5:0.9:0"), InvalidArgument);
}

}  // namespace
}  // namespace detfuse
