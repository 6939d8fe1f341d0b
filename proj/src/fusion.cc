#include "detfuse/fusion.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "detfuse/errors.h"

namespace detfuse {
namespace {

// Indices of `keys` sorted by key descending; equal keys keep index order.
std::vector<std::size_t> descending_order(const std::vector<double>& keys) {
  std::vector<std::size_t> order(keys.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return keys[a] > keys[b]; });
  return order;
}

std::vector<double> scores_of(std::span<const Detection> dets) {
  std::vector<double> s;
  s.reserve(dets.size());
  for (const auto& d : dets) s.push_back(d.score);
  return s;
}

struct Seeded {
  FusedDetection fused;
  std::size_t seed;  // flattened index of the detection that started it
};

std::vector<FusedDetection> finish(std::vector<Seeded> out) {
  std::stable_sort(out.begin(), out.end(), [](const Seeded& a, const Seeded& b) {
    if (a.fused.score != b.fused.score) return a.fused.score > b.fused.score;
    return a.seed < b.seed;
  });
  std::vector<FusedDetection> result;
  result.reserve(out.size());
  for (auto& s : out) result.push_back(std::move(s.fused));
  return result;
}

// Weighted mean computed as an offset from the first value, so equal inputs
// average to themselves exactly; clamped to the inputs' range. Falls back
// to equal weights when every weight is zero.
double weighted_mean(std::span<const double> values, std::span<const double> weights) {
  const double ref = values[0];
  double total = 0.0;
  for (double w : weights) total += w;
  const bool uniform = !(total > 0.0);
  if (uniform) total = static_cast<double>(values.size());
  double acc = 0.0;
  double lo = ref;
  double hi = ref;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double w = uniform ? 1.0 : weights[i];
    acc += w * (values[i] - ref);
    lo = std::min(lo, values[i]);
    hi = std::max(hi, values[i]);
  }
  return std::clamp(ref + acc / total, lo, hi);
}

Box weighted_box(std::span<const Box> boxes, std::span<const double> weights) {
  std::array<double, 4> out{};
  std::vector<double> column(boxes.size());
  for (int k = 0; k < 4; ++k) {
    for (std::size_t i = 0; i < boxes.size(); ++i) column[i] = boxes[i].corners()[k];
    out[k] = weighted_mean(column, weights);
  }
  return Box(out[0], out[1], out[2], out[3]);
}

// Clustering shared by WBF and NMW: detections are visited in `order`, and
// each one joins the first cluster whose current fused box overlaps it by
// more than the threshold. `refit` recomputes a cluster's fused box.
struct Cluster {
  std::vector<std::size_t> members;  // flattened indices, best first
  Box fused;
};

template <typename Refit>
std::vector<Cluster> cluster_boxes(std::span<const Detection> dets,
                                   const std::vector<std::size_t>& order,
                                   double iou_threshold, Refit refit) {
  std::vector<Cluster> clusters;
  for (std::size_t idx : order) {
    const Box& box = dets[idx].box;
    auto it = std::find_if(clusters.begin(), clusters.end(), [&](const Cluster& c) {
      return iou(c.fused, box) > iou_threshold;
    });
    if (it == clusters.end()) {
      clusters.push_back(Cluster{{idx}, box});
    } else {
      it->members.push_back(idx);
      it->fused = refit(it->members);
    }
  }
  return clusters;
}

std::set<std::string> models_of(std::span<const Detection> dets,
                                const std::vector<std::size_t>& members) {
  std::set<std::string> models;
  for (std::size_t i : members) models.insert(dets[i].model_id);
  return models;
}

}  // namespace

std::string_view to_string(FusionMethod m) noexcept {
  switch (m) {
    case FusionMethod::kNms: return "nms";
    case FusionMethod::kSoftNms: return "soft_nms";
    case FusionMethod::kWbf: return "wbf";
    case FusionMethod::kNmw: return "nmw";
  }
  return "?";
}

std::string_view to_string(SoftNmsMode m) noexcept {
  return m == SoftNmsMode::kLinear ? "linear" : "gaussian";
}

FusionMethod parse_fusion_method(std::string_view name) {
  for (FusionMethod m : kAllFusionMethods) {
    if (to_string(m) == name) return m;
  }
  throw InvalidArgument("unknown fusion method \"" + std::string(name) +
                        "\" (expected nms, soft_nms, wbf or nmw)");
}

SoftNmsMode parse_soft_nms_mode(std::string_view name) {
  if (name == "linear") return SoftNmsMode::kLinear;
  if (name == "gaussian") return SoftNmsMode::kGaussian;
  throw InvalidArgument("unknown soft-NMS mode \"" + std::string(name) +
                        "\" (expected linear or gaussian)");
}

void FusionConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    throw InvalidArgument("iou_threshold must lie in (0, 1), got " +
                          std::to_string(iou_threshold));
  }
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw InvalidArgument("sigma must be positive, got " + std::to_string(sigma));
  }
  if (!(score_prune >= 0.0 && score_prune < 1.0)) {
    throw InvalidArgument("score_prune must lie in [0, 1), got " +
                          std::to_string(score_prune));
  }
  for (const auto& [model, w] : model_weights) {
    if (!(w > 0.0) || !std::isfinite(w)) {
      throw InvalidArgument("weight for model \"" + model + "\" must be positive");
    }
  }
}

std::vector<Detection> flatten(std::span<const DetectionSet> inputs) {
  std::vector<Detection> flat;
  for (const auto& set : inputs) {
    flat.insert(flat.end(), set.detections.begin(), set.detections.end());
  }
  return flat;
}

std::vector<FusedDetection> nms(std::span<const Detection> dets, double iou_threshold) {
  const auto order = descending_order(scores_of(dets));
  std::vector<bool> suppressed(dets.size(), false);
  std::vector<Seeded> out;
  for (std::size_t a = 0; a < order.size(); ++a) {
    const std::size_t keep = order[a];
    if (suppressed[keep]) continue;
    FusedDetection f{dets[keep].box, dets[keep].score, 1, {dets[keep].model_id}};
    for (std::size_t b = a + 1; b < order.size(); ++b) {
      const std::size_t other = order[b];
      if (suppressed[other]) continue;
      if (iou(dets[keep].box, dets[other].box) > iou_threshold) {
        suppressed[other] = true;
        ++f.cluster_size;
        f.source_models.insert(dets[other].model_id);
      }
    }
    out.push_back({std::move(f), keep});
  }
  return finish(std::move(out));
}

std::vector<FusedDetection> soft_nms(std::span<const Detection> dets,
                                     double iou_threshold, SoftNmsMode mode,
                                     double sigma, double score_prune) {
  std::vector<double> score = scores_of(dets);
  std::vector<std::size_t> alive;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (score[i] >= score_prune) alive.push_back(i);
  }
  std::vector<Seeded> out;
  while (!alive.empty()) {
    // `alive` stays in index order, so the first maximum wins ties.
    auto best_it = std::max_element(alive.begin(), alive.end(), [&](auto a, auto b) {
      return score[a] < score[b];
    });
    const std::size_t best = *best_it;
    alive.erase(best_it);
    out.push_back({FusedDetection{dets[best].box, score[best], 1, {dets[best].model_id}},
                   best});

    std::erase_if(alive, [&](std::size_t i) {
      const double o = iou(dets[best].box, dets[i].box);
      if (mode == SoftNmsMode::kLinear) {
        if (o > iou_threshold) score[i] *= (1.0 - o);
      } else if (o > 0.0) {
        score[i] *= std::exp(-(o * o) / sigma);
      }
      return score[i] < score_prune;
    });
  }
  return finish(std::move(out));
}

std::vector<FusedDetection> wbf(std::span<const Detection> dets, int num_models,
                                double iou_threshold,
                                const std::map<std::string, double>& model_weights,
                                bool score_rescale) {
  if (num_models < 1) throw InvalidArgument("wbf needs at least one model");
  std::vector<double> model_weight(dets.size(), 1.0);
  std::vector<double> weighted(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (auto it = model_weights.find(dets[i].model_id); it != model_weights.end()) {
      model_weight[i] = it->second;
    }
    weighted[i] = dets[i].score * model_weight[i];
  }
  const auto order = descending_order(weighted);

  std::vector<Box> boxes;
  std::vector<double> weights;
  auto refit = [&](const std::vector<std::size_t>& members) {
    boxes.clear();
    weights.clear();
    for (std::size_t i : members) {
      boxes.push_back(dets[i].box);
      weights.push_back(weighted[i]);
    }
    return weighted_box(boxes, weights);
  };
  const auto clusters = cluster_boxes(dets, order, iou_threshold, refit);

  std::vector<Seeded> out;
  out.reserve(clusters.size());
  for (const auto& c : clusters) {
    std::vector<double> member_scores;
    std::vector<double> member_weights;
    for (std::size_t i : c.members) {
      member_scores.push_back(dets[i].score);
      member_weights.push_back(model_weight[i]);
    }
    double score = weighted_mean(member_scores, member_weights);
    const int n = static_cast<int>(c.members.size());
    if (score_rescale) {
      score *= static_cast<double>(std::min(n, num_models)) / num_models;
    }
    out.push_back({FusedDetection{c.fused, score, n, models_of(dets, c.members)},
                   c.members.front()});
  }
  return finish(std::move(out));
}

std::vector<FusedDetection> nmw(std::span<const Detection> dets, double iou_threshold) {
  const auto order = descending_order(scores_of(dets));

  std::vector<Box> boxes;
  std::vector<double> weights;
  auto refit = [&](const std::vector<std::size_t>& members) {
    const Box& best = dets[members.front()].box;
    boxes.clear();
    weights.clear();
    for (std::size_t i : members) {
      boxes.push_back(dets[i].box);
      weights.push_back(dets[i].score * iou(dets[i].box, best));
    }
    return weighted_box(boxes, weights);
  };
  const auto clusters = cluster_boxes(dets, order, iou_threshold, refit);

  std::vector<Seeded> out;
  out.reserve(clusters.size());
  for (const auto& c : clusters) {
    const std::size_t best = c.members.front();
    out.push_back({FusedDetection{c.fused, dets[best].score,
                                  static_cast<int>(c.members.size()),
                                  models_of(dets, c.members)},
                   best});
  }
  return finish(std::move(out));
}

std::vector<FusedDetection> fuse(std::span<const DetectionSet> inputs,
                                 const FusionConfig& config) {
  if (inputs.empty()) throw InvalidArgument("fuse needs at least one detection set");
  for (const auto& set : inputs) {
    if (set.image_id != inputs.front().image_id) {
      throw InvalidArgument("fuse got mixed image ids \"" + inputs.front().image_id +
                            "\" and \"" + set.image_id + "\"");
    }
  }
  config.validate();
  const auto flat = flatten(inputs);
  switch (config.method) {
    case FusionMethod::kNms:
      return nms(flat, config.iou_threshold);
    case FusionMethod::kSoftNms:
      return soft_nms(flat, config.iou_threshold, config.soft_mode, config.sigma,
                      config.score_prune);
    case FusionMethod::kWbf:
      return wbf(flat, static_cast<int>(inputs.size()), config.iou_threshold,
                 config.model_weights, config.score_rescale);
    case FusionMethod::kNmw:
      return nmw(flat, config.iou_threshold);
  }
  throw InvalidArgument("unhandled fusion method");
}

DetectionSet to_detection_set(const std::vector<FusedDetection>& fused,
                              std::string image_id, std::string model_id) {
  DetectionSet set{std::move(image_id), std::move(model_id), {}};
  set.detections.reserve(fused.size());
  for (const auto& f : fused) {
    set.detections.push_back(
        Detection{f.box, f.score, std::string(kFractureLabel), set.model_id});
  }
  return set;
}

}  // namespace detfuse
