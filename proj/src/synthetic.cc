#include "detfuse/synthetic.h"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "detfuse/errors.h"
#include "detfuse/random.h"
#include "detfuse/voting.h"

namespace detfuse {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr std::uint64_t kGroundTruthStream = 0;
constexpr std::uint64_t kDetectorStream = 1;
constexpr int kPlacementAttempts = 32;
constexpr int kJitterAttempts = 16;

void check_distribution(const ScoreDistribution& d, const std::string& what) {
  if (!(d.mean > 0.0 && d.mean <= 1.0)) {
    throw InvalidArgument(what + " mean must lie in (0, 1]");
  }
  if (!(d.spread >= 0.0 && d.spread <= 1.0)) {
    throw InvalidArgument(what + " spread must lie in [0, 1]");
  }
}

Box random_box(Rng& rng, const BoxGeometry& g) {
  const double w = rng.uniform(g.min_size, g.max_size);
  const double h = rng.uniform(g.min_size, g.max_size);
  const double x = rng.uniform(0.0, g.frame - w);
  const double y = rng.uniform(0.0, g.frame - h);
  return Box(x, y, x + w, y + h);
}

Box jitter_box(Rng& rng, const Box& box, double jitter_frac, const BoxGeometry& g) {
  const double sx = jitter_frac * box.width();
  const double sy = jitter_frac * box.height();
  for (int attempt = 0; attempt < kJitterAttempts; ++attempt) {
    const double x1 = std::clamp(box.x1() + sx * rng.normal(), 0.0, g.frame);
    const double y1 = std::clamp(box.y1() + sy * rng.normal(), 0.0, g.frame);
    const double x2 = std::clamp(box.x2() + sx * rng.normal(), 0.0, g.frame);
    const double y2 = std::clamp(box.y2() + sy * rng.normal(), 0.0, g.frame);
    if (is_valid_box(x1, y1, x2, y2)) return Box(x1, y1, x2, y2);
  }
  return box;
}

std::string image_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%05d", i);
  return buf;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bench config field \"") + key + "\": " + e.what());
  }
}

ScoreDistribution parse_distribution(const json& j, const char* key, ScoreDistribution d) {
  auto it = j.find(key);
  if (it == j.end()) return d;
  if (!it->is_object()) throw ValidationError(std::string("\"") + key + "\" must be an object");
  d.mean = get_or(*it, "mean", d.mean);
  d.spread = get_or(*it, "spread", d.spread);
  return d;
}

ordered_json distribution_json(const ScoreDistribution& d) {
  return {{"mean", d.mean}, {"spread", d.spread}};
}

std::vector<ImagePredictions> to_image_predictions(const std::vector<DetectionSet>& sets) {
  std::vector<ImagePredictions> out;
  out.reserve(sets.size());
  for (const auto& s : sets) out.push_back({s.image_id, scored_boxes(s.detections)});
  return out;
}

}  // namespace

void DetectorProfile::validate() const {
  if (model_id.empty()) throw InvalidArgument("profile needs a model_id");
  const std::string who = "profile \"" + model_id + "\": ";
  if (!(p_miss >= 0.0 && p_miss <= 1.0)) throw InvalidArgument(who + "p_miss must lie in [0, 1]");
  if (!(fp_rate >= 0.0 && fp_rate <= 500.0)) {
    throw InvalidArgument(who + "fp_rate must lie in [0, 500]");
  }
  if (!(jitter_frac >= 0.0) || !std::isfinite(jitter_frac)) {
    throw InvalidArgument(who + "jitter_frac must be non-negative");
  }
  check_distribution(tp_score, who + "tp_score");
  check_distribution(fp_score, who + "fp_score");
  if (!(tp_score.mean > fp_score.mean)) {
    throw InvalidArgument(who + "tp_score mean must exceed fp_score mean");
  }
}

void BoxGeometry::validate() const {
  if (!(frame > 0.0) || !(min_size > 0.0) || !(min_size <= max_size) ||
      !(max_size < frame) || max_boxes < 1) {
    throw InvalidArgument(
        "box geometry needs 0 < min_size <= max_size < frame and max_boxes >= 1");
  }
}

std::vector<GroundTruth> generate_corpus(std::uint64_t seed, int n_images,
                                         double prevalence, const BoxGeometry& geometry) {
  if (n_images < 1) throw InvalidArgument("n_images must be at least 1");
  if (!(prevalence > 0.0 && prevalence <= 1.0)) {
    throw InvalidArgument("prevalence must lie in (0, 1]");
  }
  geometry.validate();
  std::vector<GroundTruth> out;
  out.reserve(static_cast<std::size_t>(n_images));
  for (int i = 0; i < n_images; ++i) {
    Rng rng = Rng::substream(seed, kGroundTruthStream, static_cast<std::uint64_t>(i));
    GroundTruth gt{image_name(i), {}};
    if (rng.bernoulli(prevalence)) {
      const int wanted = 1 + static_cast<int>(rng.uniform() * geometry.max_boxes);
      gt.boxes.push_back(random_box(rng, geometry));
      for (int b = 1; b < std::min(wanted, geometry.max_boxes); ++b) {
        for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
          Box candidate = random_box(rng, geometry);
          const bool clear = std::none_of(gt.boxes.begin(), gt.boxes.end(),
                                          [&](const Box& o) { return iou(o, candidate) > 0.0; });
          if (clear) {
            gt.boxes.push_back(candidate);
            break;
          }
        }
      }
    }
    out.push_back(std::move(gt));
  }
  return out;
}

std::vector<DetectionSet> simulate_detector(const std::vector<GroundTruth>& ground_truth,
                                            const DetectorProfile& profile,
                                            std::uint64_t seed, const BoxGeometry& geometry) {
  profile.validate();
  geometry.validate();
  std::vector<DetectionSet> out;
  out.reserve(ground_truth.size());
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    Rng rng = Rng::substream(seed, kDetectorStream, i);
    const GroundTruth& gt = ground_truth[i];
    DetectionSet set{gt.image_id, profile.model_id, {}};
    for (const Box& box : gt.boxes) {
      if (rng.bernoulli(profile.p_miss)) continue;
      Box jittered = jitter_box(rng, box, profile.jitter_frac, geometry);
      const double score =
          rng.truncated_normal_unit(profile.tp_score.mean, profile.tp_score.spread);
      set.detections.push_back(
          Detection{jittered, score, std::string(kFractureLabel), profile.model_id});
    }
    const std::uint64_t spurious = rng.poisson(profile.fp_rate);
    for (std::uint64_t k = 0; k < spurious; ++k) {
      Box box = random_box(rng, geometry);
      const double score =
          rng.truncated_normal_unit(profile.fp_score.mean, profile.fp_score.spread);
      set.detections.push_back(
          Detection{box, score, std::string(kFractureLabel), profile.model_id});
    }
    out.push_back(std::move(set));
  }
  return out;
}

void BenchSpec::validate() const {
  if (profiles.size() < 2) throw InvalidArgument("bench needs at least 2 detector profiles");
  if (n_seeds < 1) throw InvalidArgument("n_seeds must be at least 1");
  if (n_images < 1) throw InvalidArgument("n_images must be at least 1");
  if (!(prevalence > 0.0 && prevalence <= 1.0)) {
    throw InvalidArgument("prevalence must lie in (0, 1]");
  }
  if (!(decision_threshold > 0.0 && decision_threshold < 1.0)) {
    throw InvalidArgument("decision_threshold must lie in (0, 1)");
  }
  geometry.validate();
  fusion.validate();
  std::vector<std::string> ids;
  for (const auto& p : profiles) {
    p.validate();
    if (std::find(ids.begin(), ids.end(), p.model_id) != ids.end()) {
      throw InvalidArgument("duplicate profile model_id \"" + p.model_id + "\"");
    }
    ids.push_back(p.model_id);
  }
}

BenchSpec parse_bench_config(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed bench config: ") + e.what(), e.byte);
  }
  if (!doc.is_object()) throw ValidationError("bench config must be a JSON object");
  BenchSpec spec;
  spec.seed = get_or(doc, "seed", spec.seed);
  spec.n_seeds = get_or(doc, "n_seeds", spec.n_seeds);
  spec.n_images = get_or(doc, "n_images", spec.n_images);
  spec.prevalence = get_or(doc, "prevalence", spec.prevalence);
  spec.decision_threshold = get_or(doc, "decision_threshold", spec.decision_threshold);
  if (auto it = doc.find("geometry"); it != doc.end()) {
    spec.geometry.frame = get_or(*it, "frame", spec.geometry.frame);
    spec.geometry.min_size = get_or(*it, "min_size", spec.geometry.min_size);
    spec.geometry.max_size = get_or(*it, "max_size", spec.geometry.max_size);
    spec.geometry.max_boxes = get_or(*it, "max_boxes", spec.geometry.max_boxes);
  }
  if (auto it = doc.find("fusion"); it != doc.end()) {
    auto& f = spec.fusion;
    f.iou_threshold = get_or(*it, "iou_threshold", f.iou_threshold);
    f.sigma = get_or(*it, "sigma", f.sigma);
    f.score_prune = get_or(*it, "score_prune", f.score_prune);
    f.score_rescale = get_or(*it, "score_rescale", f.score_rescale);
    try {
      f.soft_mode = parse_soft_nms_mode(get_or<std::string>(*it, "soft_mode", "linear"));
    } catch (const InvalidArgument& e) {
      throw ValidationError(e.what());
    }
    f.model_weights = get_or(*it, "model_weights", f.model_weights);
  }
  auto profiles = doc.find("profiles");
  if (profiles == doc.end() || !profiles->is_array()) {
    throw ValidationError("bench config needs a \"profiles\" array");
  }
  for (const auto& p : *profiles) {
    DetectorProfile prof;
    prof.model_id = get_or<std::string>(p, "model_id", "");
    prof.p_miss = get_or(p, "p_miss", prof.p_miss);
    prof.fp_rate = get_or(p, "fp_rate", prof.fp_rate);
    prof.jitter_frac = get_or(p, "jitter_frac", prof.jitter_frac);
    prof.tp_score = parse_distribution(p, "tp_score", prof.tp_score);
    prof.fp_score = parse_distribution(p, "fp_score", prof.fp_score);
    spec.profiles.push_back(std::move(prof));
  }
  try {
    spec.validate();
  } catch (const InvalidArgument& e) {
    throw ValidationError(e.what());
  }
  return spec;
}

ordered_json to_json(const BenchSpec& spec) {
  ordered_json profiles = ordered_json::array();
  for (const auto& p : spec.profiles) {
    profiles.push_back({{"model_id", p.model_id},
                        {"p_miss", p.p_miss},
                        {"fp_rate", p.fp_rate},
                        {"jitter_frac", p.jitter_frac},
                        {"tp_score", distribution_json(p.tp_score)},
                        {"fp_score", distribution_json(p.fp_score)}});
  }
  ordered_json j;
  j["seed"] = spec.seed;
  j["n_seeds"] = spec.n_seeds;
  j["n_images"] = spec.n_images;
  j["prevalence"] = spec.prevalence;
  j["decision_threshold"] = spec.decision_threshold;
  j["geometry"] = {{"frame", spec.geometry.frame},
                   {"min_size", spec.geometry.min_size},
                   {"max_size", spec.geometry.max_size},
                   {"max_boxes", spec.geometry.max_boxes}};
  j["fusion"] = {{"iou_threshold", spec.fusion.iou_threshold},
                 {"soft_mode", to_string(spec.fusion.soft_mode)},
                 {"sigma", spec.fusion.sigma},
                 {"score_prune", spec.fusion.score_prune},
                 {"score_rescale", spec.fusion.score_rescale},
                 {"model_weights", spec.fusion.model_weights}};
  j["profiles"] = std::move(profiles);
  return j;
}

std::uint64_t detector_seed(std::uint64_t bench_seed, std::size_t profile_index) {
  return splitmix64(bench_seed ^ splitmix64(0xd17ec7ULL + profile_index));
}

BenchData simulate_bench_data(const BenchSpec& spec, std::uint64_t seed) {
  spec.validate();
  BenchData data;
  data.ground_truth = generate_corpus(seed, spec.n_images, spec.prevalence, spec.geometry);
  for (std::size_t k = 0; k < spec.profiles.size(); ++k) {
    data.predictions.push_back(simulate_detector(data.ground_truth, spec.profiles[k],
                                                 detector_seed(seed, k), spec.geometry));
  }
  return data;
}

const EvalReport& BenchRun::ensemble(FusionMethod m) const {
  for (const auto& r : ensembles) {
    if (r.name == to_string(m)) return r.report;
  }
  throw InvalidArgument("bench run has no row for " + std::string(to_string(m)));
}

BenchRun evaluate_bench(const BenchSpec& spec, const BenchData& data, std::uint64_t seed) {
  GroundTruthMap gt;
  for (const auto& g : data.ground_truth) gt.emplace(g.image_id, g);
  const std::size_t n_images = data.ground_truth.size();

  BenchRun run;
  run.seed = seed;
  for (FusionMethod method : kAllFusionMethods) {
    FusionConfig config = spec.fusion;
    config.method = method;
    std::vector<ImagePredictions> fused;
    fused.reserve(n_images);
    for (std::size_t i = 0; i < n_images; ++i) {
      std::vector<DetectionSet> per_model;
      for (const auto& model : data.predictions) per_model.push_back(model[i]);
      fused.push_back({data.ground_truth[i].image_id, scored_boxes(fuse(per_model, config))});
    }
    run.ensembles.push_back({std::string(to_string(method)),
                             evaluate_detections(fused, gt, spec.decision_threshold)});
  }
  for (std::size_t k = 0; k < data.predictions.size(); ++k) {
    run.solo.push_back({spec.profiles[k].model_id,
                        evaluate_detections(to_image_predictions(data.predictions[k]), gt,
                                            spec.decision_threshold)});
  }
  for (VoteKind kind : kAllVoteKinds) {
    const VotePolicy policy{kind, spec.decision_threshold};
    std::vector<ImageDecision> decisions;
    for (std::size_t i = 0; i < n_images; ++i) {
      std::vector<DetectionSet> per_model;
      for (const auto& model : data.predictions) per_model.push_back(model[i]);
      decisions.push_back(vote_on_sets(per_model, policy));
    }
    run.votes.push_back({"vote:" + std::string(to_string(kind)),
                         classification_report(decisions, gt)});
  }
  return run;
}

BenchRun run_bench(const BenchSpec& spec, std::uint64_t seed) {
  return evaluate_bench(spec, simulate_bench_data(spec, seed), seed);
}

ordered_json to_json(const BenchRun& run, bool include_per_image) {
  auto rows = [&](const std::vector<NamedReport>& reports) {
    ordered_json arr = ordered_json::array();
    for (const auto& r : reports) {
      ordered_json j = to_json(r.report);
      if (!include_per_image) j.erase("per_image");
      arr.push_back({{"name", r.name}, {"report", std::move(j)}});
    }
    return arr;
  };
  ordered_json j;
  j["seed"] = run.seed;
  j["ensembles"] = rows(run.ensembles);
  j["solo"] = rows(run.solo);
  j["votes"] = rows(run.votes);
  return j;
}

BenchSummary summarize(const std::vector<BenchRun>& runs) {
  BenchSummary s;
  if (runs.empty()) return s;
  const double n = static_cast<double>(runs.size());
  auto mean_of = [&](auto pick, const std::string& name) {
    double sum = 0.0;
    for (const auto& r : runs) sum += pick(r).f1;
    s.mean_f1.emplace_back(name, sum / n);
  };
  const auto& first = runs.front();
  for (std::size_t i = 0; i < first.ensembles.size(); ++i) {
    mean_of([i](const BenchRun& r) -> const EvalReport& { return r.ensembles[i].report; },
            first.ensembles[i].name);
  }
  for (std::size_t i = 0; i < first.solo.size(); ++i) {
    mean_of([i](const BenchRun& r) -> const EvalReport& { return r.solo[i].report; },
            first.solo[i].name);
  }
  for (std::size_t i = 0; i < first.votes.size(); ++i) {
    mean_of([i](const BenchRun& r) -> const EvalReport& { return r.votes[i].report; },
            first.votes[i].name);
  }
  for (std::size_t i = 0; i < first.ensembles.size(); ++i) {
    int wins = 0;
    for (const auto& r : runs) {
      double best_solo = 0.0;
      for (const auto& solo : r.solo) best_solo = std::max(best_solo, solo.report.f1);
      if (r.ensembles[i].report.f1 >= best_solo) ++wins;
    }
    s.win_rate.emplace_back(first.ensembles[i].name, wins / n);
  }
  return s;
}

ordered_json to_json(const BenchSummary& s) {
  ordered_json mean = ordered_json::object();
  for (const auto& [name, v] : s.mean_f1) mean[name] = v;
  ordered_json wins = ordered_json::object();
  for (const auto& [name, v] : s.win_rate) wins[name] = v;
  return {{"mean_f1", std::move(mean)}, {"win_rate_vs_best_solo", std::move(wins)}};
}

}  // namespace detfuse
