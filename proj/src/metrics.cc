#include "detfuse/metrics.h"

#include <algorithm>
#include <numeric>
#include <set>

#include "detfuse/errors.h"

namespace detfuse {
namespace {

struct Ranked {
  double score;
  bool true_positive;
};

std::size_t count_gts(std::span<const ImageEval> images) {
  std::size_t n = 0;
  for (const auto& im : images) n += im.gts.size();
  return n;
}

double ratio_or_one(std::int64_t num, std::int64_t den, bool& defaulted) {
  defaulted = den == 0;
  return defaulted ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::vector<ScoredBox> scored_boxes(std::span<const Detection> dets) {
  std::vector<ScoredBox> out;
  out.reserve(dets.size());
  for (const auto& d : dets) out.push_back({d.box, d.score});
  return out;
}

std::vector<ScoredBox> scored_boxes(std::span<const FusedDetection> dets) {
  std::vector<ScoredBox> out;
  out.reserve(dets.size());
  for (const auto& d : dets) out.push_back({d.box, d.score});
  return out;
}

std::vector<Match> match_detections(std::span<const ScoredBox> preds,
                                    std::span<const Box> gts, double iou_threshold) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return preds[a].score > preds[b].score;
  });
  std::vector<bool> taken(gts.size(), false);
  std::vector<Match> out;
  out.reserve(preds.size());
  for (std::size_t p : order) {
    std::optional<std::size_t> best;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double o = iou(preds[p].box, gts[g]);
      if (o >= iou_threshold && o > best_iou) {
        best = g;
        best_iou = o;
      }
    }
    if (best) taken[*best] = true;
    out.push_back({p, best});
  }
  return out;
}

std::vector<PRPoint> pr_curve(std::span<const ImageEval> images, double iou_threshold) {
  const std::size_t n_gt = count_gts(images);
  if (n_gt == 0) throw InvalidArgument("AP is undefined without ground-truth boxes");

  std::vector<Ranked> ranked;
  for (const auto& im : images) {
    for (const auto& m : match_detections(im.preds, im.gts, iou_threshold)) {
      ranked.push_back({im.preds[m.pred_index].score, m.gt_index.has_value()});
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  std::vector<PRPoint> curve;
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    (ranked[i].true_positive ? tp : fp) += 1;
    // Emit once per distinct score so tied predictions enter together.
    if (i + 1 < ranked.size() && ranked[i + 1].score == ranked[i].score) continue;
    curve.push_back({ranked[i].score,
                     static_cast<double>(tp) / static_cast<double>(tp + fp),
                     static_cast<double>(tp) / static_cast<double>(n_gt)});
  }
  return curve;
}

double average_precision(std::span<const ImageEval> images, double iou_threshold) {
  const auto curve = pr_curve(images, iou_threshold);
  std::vector<double> envelope(curve.size());
  double running = 0.0;
  for (std::size_t i = curve.size(); i-- > 0;) {
    running = std::max(running, curve[i].precision);
    envelope[i] = running;
  }
  double sum = 0.0;
  std::size_t i = 0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    while (i < curve.size() && curve[i].recall < r) ++i;
    if (i == curve.size()) break;
    sum += envelope[i];
  }
  return sum / 101.0;
}

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int k = 10; k < 20; ++k) t.push_back(k / 20.0);
  return t;
}

double average_precision_50_95(std::span<const ImageEval> images) {
  double sum = 0.0;
  const auto thresholds = coco_iou_thresholds();
  for (double t : thresholds) sum += average_precision(images, t);
  return sum / static_cast<double>(thresholds.size());
}

EvalReport classification_report(std::span<const ImageDecision> decisions,
                                  const GroundTruthMap& ground_truth) {
  EvalReport r;
  std::set<std::string> seen;
  for (const auto& d : decisions) {
    auto it = ground_truth.find(d.image_id);
    if (it == ground_truth.end()) {
      throw InvalidArgument("decision for unknown image \"" + d.image_id + "\"");
    }
    if (!seen.insert(d.image_id).second) {
      throw InvalidArgument("duplicate decision for image \"" + d.image_id + "\"");
    }
    const bool actual = it->second.is_fracture();
    const bool predicted = d.is_fracture();
    auto& c = r.confusion;
    if (actual && predicted) ++c.tp;
    else if (!actual && predicted) ++c.fp;
    else if (actual && !predicted) ++c.fn;
    else ++c.tn;
    r.per_image.push_back(
        {d.image_id, d, actual ? ImageLabel::kFracture : ImageLabel::kNonFracture});
  }
  const auto& c = r.confusion;
  bool unused = false;
  r.accuracy = c.total() == 0 ? 0.0 : ratio_or_one(c.tp + c.tn, c.total(), unused);
  r.precision = ratio_or_one(c.tp, c.tp + c.fp, r.precision_defaulted);
  r.recall = ratio_or_one(c.tp, c.tp + c.fn, r.recall_defaulted);
  r.sensitivity = r.recall;
  r.specificity = ratio_or_one(c.tn, c.tn + c.fp, r.specificity_defaulted);
  const double pr = r.precision + r.recall;
  r.f1 = pr > 0.0 ? 2.0 * r.precision * r.recall / pr : 0.0;
  return r;
}

EvalReport evaluate_detections(std::span<const ImagePredictions> predictions,
                               const GroundTruthMap& ground_truth,
                               double decision_threshold,
                               std::span<const double> extra_iou_thresholds) {
  std::vector<ImageDecision> decisions;
  std::vector<ImageEval> evals;
  decisions.reserve(predictions.size());
  for (const auto& p : predictions) {
    std::vector<double> scores;
    for (const auto& sb : p.preds) scores.push_back(sb.score);
    decisions.push_back(decide_image(p.image_id, scores, decision_threshold));
  }
  EvalReport r = classification_report(decisions, ground_truth);
  for (const auto& p : predictions) {
    evals.push_back({p.preds, ground_truth.at(p.image_id).boxes});
  }
  if (count_gts(evals) > 0) {
    r.ap50 = average_precision(evals, 0.5);
    r.ap_50_95 = average_precision_50_95(evals);
    for (double t : extra_iou_thresholds) r.ap_at.emplace_back(t, average_precision(evals, t));
  }
  return r;
}

}  // namespace detfuse
