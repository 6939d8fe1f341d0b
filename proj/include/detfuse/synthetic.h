#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "detfuse/detection_io.h"
#include "detfuse/fusion.h"
#include "detfuse/report.h"

namespace detfuse {

// Mean and spread of a normal distribution truncated to (0, 1].
struct ScoreDistribution {
  double mean = 0.5;
  double spread = 0.1;
};

// Error model of a simulated detector.
struct DetectorProfile {
  std::string model_id;
  double p_miss = 0.0;       // per ground-truth box
  double fp_rate = 0.0;      // expected spurious boxes per image (Poisson)
  double jitter_frac = 0.0;  // corner noise sd as a fraction of box width/height
  ScoreDistribution tp_score{0.8, 0.1};
  ScoreDistribution fp_score{0.3, 0.1};

  // Requires tp_score.mean > fp_score.mean; throws InvalidArgument.
  void validate() const;
};

struct BoxGeometry {
  double frame = 1024.0;  // square image side in pixels
  double min_size = 48.0;
  double max_size = 320.0;
  int max_boxes = 2;      // per fracture image; at least 1

  void validate() const;
};

// Ground truth for `n_images` images named img_00000, img_00001, ...; each is
// a fracture image with probability `prevalence` (in (0, 1]) and then gets
// 1..max_boxes non-overlapping boxes. Image i draws from its own substream.
std::vector<GroundTruth> generate_corpus(std::uint64_t seed, int n_images,
                                         double prevalence,
                                         const BoxGeometry& geometry = {});

// One DetectionSet per ground-truth image, in the same order.
std::vector<DetectionSet> simulate_detector(const std::vector<GroundTruth>& ground_truth,
                                            const DetectorProfile& profile,
                                            std::uint64_t seed,
                                            const BoxGeometry& geometry = {});

struct BenchSpec {
  std::uint64_t seed = 7;
  int n_seeds = 1;  // runs seed, seed + 1, ...
  int n_images = 207;
  double prevalence = 117.0 / 207.0;
  BoxGeometry geometry;
  std::vector<DetectorProfile> profiles;
  FusionConfig fusion;  // method is overridden per row
  double decision_threshold = 0.5;

  void validate() const;  // needs >= 2 profiles
};

// Parses a bench config (JSON); throws ParseError / ValidationError.
BenchSpec parse_bench_config(std::string_view json_text);
nlohmann::ordered_json to_json(const BenchSpec& spec);

struct BenchData {
  std::vector<GroundTruth> ground_truth;
  std::vector<std::vector<DetectionSet>> predictions;  // [profile][image]
};

// Seed for profile k's detector under a bench seed.
std::uint64_t detector_seed(std::uint64_t bench_seed, std::size_t profile_index);

BenchData simulate_bench_data(const BenchSpec& spec, std::uint64_t seed);

struct BenchRun {
  std::uint64_t seed = 0;
  std::vector<NamedReport> ensembles;  // nms, soft_nms, wbf, nmw
  std::vector<NamedReport> solo;       // one per profile
  std::vector<NamedReport> votes;      // affirmative, unanimous, consensus

  const EvalReport& ensemble(FusionMethod m) const;
};

// Fuses, decides and evaluates one simulated corpus.
BenchRun evaluate_bench(const BenchSpec& spec, const BenchData& data, std::uint64_t seed);
BenchRun run_bench(const BenchSpec& spec, std::uint64_t seed);

nlohmann::ordered_json to_json(const BenchRun& run, bool include_per_image = false);

// Across-seed summary: mean F1 per row and the fraction of seeds where each
// ensemble's F1 reaches the best solo F1 of that seed.
struct BenchSummary {
  std::vector<std::pair<std::string, double>> mean_f1;
  std::vector<std::pair<std::string, double>> win_rate;  // ensembles only
};
BenchSummary summarize(const std::vector<BenchRun>& runs);
nlohmann::ordered_json to_json(const BenchSummary& s);

}  // namespace detfuse
