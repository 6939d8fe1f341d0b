#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "detfuse/detection_io.h"
#include "detfuse/geometry.h"

namespace detfuse {

enum class FusionMethod { kNms, kSoftNms, kWbf, kNmw };
enum class SoftNmsMode { kLinear, kGaussian };

std::string_view to_string(FusionMethod m) noexcept;
std::string_view to_string(SoftNmsMode m) noexcept;
// Accepts "nms", "soft_nms", "wbf", "nmw". Throws InvalidArgument.
FusionMethod parse_fusion_method(std::string_view name);
// Accepts "linear", "gaussian". Throws InvalidArgument.
SoftNmsMode parse_soft_nms_mode(std::string_view name);

inline constexpr FusionMethod kAllFusionMethods[] = {
    FusionMethod::kNms, FusionMethod::kSoftNms, FusionMethod::kWbf, FusionMethod::kNmw};

struct FusionConfig {
  FusionMethod method = FusionMethod::kWbf;
  double iou_threshold = 0.5;           // (0, 1); merge/suppress when IoU > this
  SoftNmsMode soft_mode = SoftNmsMode::kLinear;
  double sigma = 0.5;                   // gaussian soft-NMS only
  double score_prune = 0.001;           // soft-NMS only
  std::map<std::string, double> model_weights;  // WBF only; missing => 1.0
  bool score_rescale = true;            // WBF only

  // Throws InvalidArgument describing the first out-of-range knob.
  void validate() const;
};

struct FusedDetection {
  Box box;
  double score;
  int cluster_size = 1;
  std::set<std::string> source_models;
};

// Fuses all models' detections for one image. Output is sorted by score
// descending; ties keep the order of the detection that seeded each output
// (earlier model in `inputs`, then earlier detection index).
// Throws InvalidArgument on an empty input list, mixed image ids or an
// invalid config.
std::vector<FusedDetection> fuse(std::span<const DetectionSet> inputs,
                                 const FusionConfig& config);

// The individual strategies. `dets` is the flattened detection list in
// (model, index) order; that order is the tie-break for equal scores.
std::vector<FusedDetection> nms(std::span<const Detection> dets, double iou_threshold);

std::vector<FusedDetection> soft_nms(std::span<const Detection> dets,
                                     double iou_threshold, SoftNmsMode mode,
                                     double sigma, double score_prune);

// Weighted boxes fusion. `num_models` is T in the min(n, T) / T rescale.
std::vector<FusedDetection> wbf(std::span<const Detection> dets, int num_models,
                                double iou_threshold,
                                const std::map<std::string, double>& model_weights,
                                bool score_rescale);

// Non-maximum weighted fusion: members weighted by score * IoU with the
// cluster's best box; the fused score is the best member's score.
std::vector<FusedDetection> nmw(std::span<const Detection> dets, double iou_threshold);

// Concatenates sets in order; the flattening `fuse` uses.
std::vector<Detection> flatten(std::span<const DetectionSet> inputs);

// Fused output re-expressed as detections of a single (ensemble) model.
DetectionSet to_detection_set(const std::vector<FusedDetection>& fused,
                              std::string image_id, std::string model_id);

}  // namespace detfuse
