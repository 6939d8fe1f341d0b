#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "detfuse/detection_io.h"
#include "detfuse/fusion.h"

namespace detfuse {

enum class ImageLabel { kNonFracture, kFracture };

std::string_view to_string(ImageLabel l) noexcept;
ImageLabel parse_image_label(std::string_view s);  // throws InvalidArgument

struct ImageDecision {
  std::string image_id;
  ImageLabel label = ImageLabel::kNonFracture;
  double evidence_score = 0.0;  // max supporting score, 0 without detections

  bool is_fracture() const noexcept { return label == ImageLabel::kFracture; }
  friend bool operator==(const ImageDecision&, const ImageDecision&) = default;
};

enum class VoteKind { kAffirmative, kUnanimous, kConsensus };

std::string_view to_string(VoteKind k) noexcept;
VoteKind parse_vote_kind(std::string_view s);  // throws InvalidArgument

inline constexpr VoteKind kAllVoteKinds[] = {VoteKind::kAffirmative, VoteKind::kUnanimous,
                                             VoteKind::kConsensus};

struct VotePolicy {
  VoteKind kind = VoteKind::kConsensus;
  double threshold = 0.5;  // (0, 1)

  void validate() const;  // throws InvalidArgument
};

// Fracture iff some score >= threshold; evidence is the max score.
ImageDecision decide_image(std::string image_id, std::span<const double> scores,
                           double threshold);
ImageDecision decide_image(std::string image_id, std::span<const Detection> dets,
                           double threshold);
ImageDecision decide_image(std::string image_id, std::span<const FusedDetection> dets,
                           double threshold);

// Combines per-model decisions for one image.
//   affirmative: any model says fracture
//   unanimous:   every model says fracture
//   consensus:   more than half say fracture; an exact tie counts as fracture
// Evidence is the max evidence among the models that agree with the result.
// Throws InvalidArgument on an empty list or mixed image ids.
ImageDecision vote(std::span<const ImageDecision> decisions, const VotePolicy& policy);

// decide_image per model, then vote.
ImageDecision vote_on_sets(std::span<const DetectionSet> per_model,
                           const VotePolicy& policy);

}  // namespace detfuse
