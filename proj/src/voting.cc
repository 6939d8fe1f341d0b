#include "detfuse/voting.h"

#include <algorithm>

#include "detfuse/errors.h"

namespace detfuse {
namespace {

void check_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw InvalidArgument("decision threshold must lie in (0, 1), got " +
                          std::to_string(threshold));
  }
}

template <typename Range>
std::vector<double> collect_scores(const Range& dets) {
  std::vector<double> s;
  s.reserve(dets.size());
  for (const auto& d : dets) s.push_back(d.score);
  return s;
}

}  // namespace

std::string_view to_string(ImageLabel l) noexcept {
  return l == ImageLabel::kFracture ? kFractureLabel : kNonFractureLabel;
}

ImageLabel parse_image_label(std::string_view s) {
  if (s == kFractureLabel) return ImageLabel::kFracture;
  if (s == kNonFractureLabel) return ImageLabel::kNonFracture;
  throw InvalidArgument("unknown image label \"" + std::string(s) + "\"");
}

std::string_view to_string(VoteKind k) noexcept {
  switch (k) {
    case VoteKind::kAffirmative: return "affirmative";
    case VoteKind::kUnanimous: return "unanimous";
    case VoteKind::kConsensus: return "consensus";
  }
  return "?";
}

VoteKind parse_vote_kind(std::string_view s) {
  for (VoteKind k : kAllVoteKinds) {
    if (to_string(k) == s) return k;
  }
  throw InvalidArgument("unknown voting policy \"" + std::string(s) +
                        "\" (expected affirmative, unanimous or consensus)");
}

void VotePolicy::validate() const { check_threshold(threshold); }

ImageDecision decide_image(std::string image_id, std::span<const double> scores,
                           double threshold) {
  check_threshold(threshold);
  ImageDecision d{std::move(image_id), ImageLabel::kNonFracture, 0.0};
  if (!scores.empty()) d.evidence_score = *std::max_element(scores.begin(), scores.end());
  if (d.evidence_score >= threshold) d.label = ImageLabel::kFracture;
  return d;
}

ImageDecision decide_image(std::string image_id, std::span<const Detection> dets,
                           double threshold) {
  return decide_image(std::move(image_id), collect_scores(dets), threshold);
}

ImageDecision decide_image(std::string image_id, std::span<const FusedDetection> dets,
                           double threshold) {
  return decide_image(std::move(image_id), collect_scores(dets), threshold);
}

ImageDecision vote(std::span<const ImageDecision> decisions, const VotePolicy& policy) {
  policy.validate();
  if (decisions.empty()) throw InvalidArgument("vote needs at least one decision");
  const std::string& image_id = decisions.front().image_id;
  std::size_t positives = 0;
  for (const auto& d : decisions) {
    if (d.image_id != image_id) {
      throw InvalidArgument("vote got mixed image ids \"" + image_id + "\" and \"" +
                            d.image_id + "\"");
    }
    if (d.is_fracture()) ++positives;
  }
  const std::size_t n = decisions.size();
  bool fracture = false;
  switch (policy.kind) {
    case VoteKind::kAffirmative: fracture = positives > 0; break;
    case VoteKind::kUnanimous: fracture = positives == n; break;
    case VoteKind::kConsensus: fracture = 2 * positives >= n; break;
  }
  ImageDecision out{image_id, fracture ? ImageLabel::kFracture : ImageLabel::kNonFracture,
                    0.0};
  for (const auto& d : decisions) {
    if (d.label == out.label) out.evidence_score = std::max(out.evidence_score, d.evidence_score);
  }
  return out;
}

ImageDecision vote_on_sets(std::span<const DetectionSet> per_model,
                           const VotePolicy& policy) {
  std::vector<ImageDecision> decisions;
  decisions.reserve(per_model.size());
  for (const auto& set : per_model) {
    decisions.push_back(decide_image(set.image_id, set.detections, policy.threshold));
  }
  return vote(decisions, policy);
}

}  // namespace detfuse
