#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "detfuse/detection_io.h"
#include "detfuse/fusion.h"
#include "detfuse/geometry.h"
#include "detfuse/voting.h"

namespace detfuse {

struct ScoredBox {
  Box box;
  double score;
};

std::vector<ScoredBox> scored_boxes(std::span<const Detection> dets);
std::vector<ScoredBox> scored_boxes(std::span<const FusedDetection> dets);

struct Match {
  std::size_t pred_index;              // index into the caller's list
  std::optional<std::size_t> gt_index; // nullopt: false positive
};

// Greedy one-to-one matching. Predictions are visited by score descending
// (ties by index); each takes the unmatched ground truth with the highest
// IoU (ties by lower index) provided IoU >= iou_threshold. The result is in
// visiting order.
std::vector<Match> match_detections(std::span<const ScoredBox> preds,
                                    std::span<const Box> gts, double iou_threshold);

struct ImageEval {
  std::vector<ScoredBox> preds;
  std::vector<Box> gts;
};

struct PRPoint {
  double score_cut;  // predictions with score >= score_cut are retained
  double precision;
  double recall;
};

// One point per distinct prediction score, score_cut descending.
// Throws InvalidArgument when the corpus has no ground-truth boxes.
std::vector<PRPoint> pr_curve(std::span<const ImageEval> images, double iou_threshold);

// 101-point interpolated AP: the precision envelope (max precision at any
// recall >= r) averaged over r = 0, 0.01, ..., 1. Zero predictions give 0.
// Throws InvalidArgument when the corpus has no ground-truth boxes.
double average_precision(std::span<const ImageEval> images, double iou_threshold);

// Mean AP over thresholds 0.50, 0.55, ..., 0.95.
double average_precision_50_95(std::span<const ImageEval> images);

// IoU thresholds 0.50, 0.55, ..., 0.95 (k / 20 for k = 10..19).
std::vector<double> coco_iou_thresholds();

struct ConfusionMatrix {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const noexcept { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct ImageOutcome {
  std::string image_id;
  ImageDecision decision;
  ImageLabel gt_label;

  friend bool operator==(const ImageOutcome&, const ImageOutcome&) = default;
};

struct EvalReport {
  ConfusionMatrix confusion;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;  // == sensitivity
  double f1 = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  // Set when a ratio had a zero denominator and the 1.0 convention applied.
  bool precision_defaulted = false;
  bool recall_defaulted = false;
  bool specificity_defaulted = false;
  // Absent for decision-only evaluation or a corpus without boxes.
  std::optional<double> ap50;
  std::optional<double> ap_50_95;
  std::vector<std::pair<double, double>> ap_at;  // (iou threshold, AP)
  std::vector<ImageOutcome> per_image;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// Image-level metrics, positive class = fracture. Throws InvalidArgument
// for a decision on an unknown image or two decisions for one image.
EvalReport classification_report(std::span<const ImageDecision> decisions,
                                  const GroundTruthMap& ground_truth);

// Per-image predictions of one model (raw or fused) in image order.
struct ImagePredictions {
  std::string image_id;
  std::vector<ScoredBox> preds;
};

// Decides every image at `decision_threshold`, builds the classification
// report, and adds AP@0.5, AP@[0.5:0.95] and AP at `extra_iou_thresholds`
// when the ground truth has at least one box.
EvalReport evaluate_detections(std::span<const ImagePredictions> predictions,
                               const GroundTruthMap& ground_truth,
                               double decision_threshold,
                               std::span<const double> extra_iou_thresholds = {});

}  // namespace detfuse
