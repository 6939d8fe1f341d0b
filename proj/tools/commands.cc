#include "commands.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "detfuse/detection_io.h"
#include "detfuse/errors.h"
#include "detfuse/fusion.h"
#include "detfuse/metrics.h"
#include "detfuse/random.h"
#include "detfuse/report.h"
#include "detfuse/synthetic.h"
#include "detfuse/voting.h"
#include "manifest.h"

namespace detfuse::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

// Runs body(i) for i in [0, n) on up to `jobs` threads. Each index writes
// only its own output slot, so results do not depend on scheduling.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& body) {
  const std::size_t workers =
      std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::string read_input(const std::string& path, RunManifest& manifest) {
  std::string text = read_file(path);
  manifest.add_input(path, text);
  return text;
}

// Adds the file name to parse/validation errors.
template <typename F>
auto with_file(const std::string& path, F&& parse) {
  try {
    return parse();
  } catch (const ParseError& e) {
    throw ParseError(path + ": byte " + std::to_string(e.byte_offset()) + ": " + e.what(),
                     e.byte_offset());
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

// Prediction files merged into per-image, per-model sets. Images and models
// keep first-appearance order; a model missing for an image gets an empty set.
struct MergedPredictions {
  std::vector<std::string> images;
  std::vector<std::string> models;
  std::map<std::pair<std::string, std::string>, DetectionSet> sets;

  std::vector<DetectionSet> for_image(const std::string& image) const {
    std::vector<DetectionSet> out;
    for (const auto& m : models) {
      auto it = sets.find({image, m});
      out.push_back(it != sets.end() ? it->second : DetectionSet{image, m, {}});
    }
    return out;
  }
};

MergedPredictions load_predictions(const std::vector<std::string>& paths,
                                   RunManifest& manifest) {
  MergedPredictions merged;
  std::set<std::string> images;
  std::set<std::string> models;
  for (const auto& path : paths) {
    const std::string text = read_input(path, manifest);
    auto sets = with_file(path, [&] { return parse_predictions(text); });
    for (auto& s : sets) {
      if (images.insert(s.image_id).second) merged.images.push_back(s.image_id);
      if (models.insert(s.model_id).second) merged.models.push_back(s.model_id);
      auto key = std::make_pair(s.image_id, s.model_id);
      if (merged.sets.contains(key)) {
        throw ValidationError(path + ": duplicate record for image \"" + s.image_id +
                              "\", model \"" + s.model_id + "\"");
      }
      merged.sets.emplace(std::move(key), std::move(s));
    }
  }
  return merged;
}

std::map<std::string, double> parse_weights(const std::string& spec) {
  std::map<std::string, double> weights;
  if (spec.empty()) return weights;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw InvalidArgument("--weights expects model=weight[,model=weight...], got \"" +
                            item + "\"");
    }
    try {
      std::size_t used = 0;
      const std::string value = item.substr(eq + 1);
      const double w = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      weights[item.substr(0, eq)] = w;
    } catch (const std::logic_error&) {
      throw InvalidArgument("bad weight in \"" + item + "\"");
    }
  }
  return weights;
}

std::string manifest_path(const std::string& out) { return out + ".manifest.json"; }

ordered_json fusion_json(const FusionConfig& c) {
  return {{"method", to_string(c.method)},
          {"iou_threshold", c.iou_threshold},
          {"soft_mode", to_string(c.soft_mode)},
          {"sigma", c.sigma},
          {"score_prune", c.score_prune},
          {"model_weights", c.model_weights},
          {"score_rescale", c.score_rescale}};
}

// ---- fuse -----------------------------------------------------------------

struct FuseOptions {
  std::vector<std::string> inputs;
  std::string method;
  double iou_thr = 0.5;
  std::string soft_mode = "linear";
  double sigma = 0.5;
  double score_prune = 0.001;
  std::string weights;
  bool no_rescale = false;
  std::string out;
  int jobs = 1;
};

int cmd_fuse(const FuseOptions& o, std::ostream& out) {
  RunManifest manifest;
  manifest.command = "fuse";
  FusionConfig config;
  config.method = parse_fusion_method(o.method);
  config.iou_threshold = o.iou_thr;
  config.soft_mode = parse_soft_nms_mode(o.soft_mode);
  config.sigma = o.sigma;
  config.score_prune = o.score_prune;
  config.model_weights = parse_weights(o.weights);
  config.score_rescale = !o.no_rescale;
  config.validate();

  const MergedPredictions merged = load_predictions(o.inputs, manifest);
  for (const auto& [model, w] : config.model_weights) {
    if (std::find(merged.models.begin(), merged.models.end(), model) == merged.models.end()) {
      throw InvalidArgument("--weights names unknown model \"" + model + "\"");
    }
  }
  const std::string ensemble_id = "ensemble:" + std::string(to_string(config.method));
  std::vector<DetectionSet> fused(merged.images.size());
  parallel_for(merged.images.size(), o.jobs, [&](std::size_t i) {
    const auto& image = merged.images[i];
    fused[i] = to_detection_set(fuse(merged.for_image(image), config), image, ensemble_id);
  });
  write_file(o.out, serialize_detections(fused));

  manifest.config = fusion_json(config);
  manifest.config["inputs"] = o.inputs;
  manifest.config["models"] = merged.models;
  manifest.outputs = {o.out};
  manifest.write(manifest_path(o.out));
  out << "fused " << merged.images.size() << " images from " << merged.models.size()
      << " model(s) with " << to_string(config.method) << " -> " << o.out << '\n';
  return kExitOk;
}

// ---- vote -----------------------------------------------------------------

struct VoteOptions {
  std::vector<std::string> inputs;
  std::string policy;
  double threshold = 0.5;
  std::string out;
};

int cmd_vote(const VoteOptions& o, std::ostream& out) {
  RunManifest manifest;
  manifest.command = "vote";
  const VotePolicy policy{parse_vote_kind(o.policy), o.threshold};
  policy.validate();
  const MergedPredictions merged = load_predictions(o.inputs, manifest);
  std::vector<ImageDecision> decisions;
  std::size_t positives = 0;
  for (const auto& image : merged.images) {
    decisions.push_back(vote_on_sets(merged.for_image(image), policy));
    if (decisions.back().is_fracture()) ++positives;
  }
  write_file(o.out, serialize_decisions(decisions, policy));

  manifest.config = {{"policy", to_string(policy.kind)},
                     {"threshold", policy.threshold},
                     {"inputs", o.inputs},
                     {"models", merged.models}};
  manifest.outputs = {o.out};
  manifest.write(manifest_path(o.out));
  out << positives << " of " << decisions.size() << " images labeled fracture ("
      << to_string(policy.kind) << ", " << merged.models.size() << " model(s)) -> " << o.out
      << '\n';
  return kExitOk;
}

// ---- evaluate -------------------------------------------------------------

struct EvaluateOptions {
  std::string gt;
  std::string pred;
  std::string decisions;
  std::string iou = "0.5:0.95:0.05";
  double threshold = 0.5;
  std::string out;
};

int cmd_evaluate(const EvaluateOptions& o, std::ostream& out) {
  if (o.pred.empty() == o.decisions.empty()) {
    throw InvalidArgument("evaluate needs exactly one of --pred or --decisions");
  }
  if (!(o.threshold > 0.0 && o.threshold < 1.0)) {
    throw InvalidArgument("--threshold must lie in (0, 1)");
  }
  const std::vector<double> ious = parse_iou_spec(o.iou);
  RunManifest manifest;
  manifest.command = "evaluate";
  const std::string gt_text = read_input(o.gt, manifest);
  auto [gt, order] = with_file(o.gt, [&] { return parse_ground_truth_ordered(gt_text); });

  std::vector<NamedReport> rows;
  if (!o.pred.empty()) {
    const MergedPredictions merged = load_predictions({o.pred}, manifest);
    for (const auto& image : merged.images) {
      if (!gt.contains(image)) {
        throw ValidationError(o.pred + ": image \"" + image + "\" is not in the ground truth");
      }
    }
    std::vector<std::string> models = merged.models;
    if (models.empty()) models.push_back("predictions");
    for (const auto& model : models) {
      std::vector<ImagePredictions> preds;
      for (const auto& image : order) {
        auto it = merged.sets.find({image, model});
        preds.push_back({image, it == merged.sets.end()
                                    ? std::vector<ScoredBox>{}
                                    : scored_boxes(it->second.detections)});
      }
      rows.push_back({model, evaluate_detections(preds, gt, o.threshold, ious)});
    }
  } else {
    const std::string text = read_input(o.decisions, manifest);
    auto decisions = with_file(o.decisions, [&] { return parse_decisions(text); });
    std::map<std::string, ImageDecision> by_image;
    for (auto& d : decisions) {
      if (!gt.contains(d.image_id)) {
        throw ValidationError(o.decisions + ": image \"" + d.image_id +
                              "\" is not in the ground truth");
      }
      if (!by_image.emplace(d.image_id, d).second) {
        throw ValidationError(o.decisions + ": duplicate decision for image \"" + d.image_id +
                              "\"");
      }
    }
    std::vector<ImageDecision> ordered;
    for (const auto& image : order) {
      auto it = by_image.find(image);
      ordered.push_back(it != by_image.end() ? it->second : ImageDecision{image, {}, 0.0});
    }
    rows.push_back({"decisions", classification_report(ordered, gt)});
  }

  ordered_json doc;
  doc["format_version"] = kFormatVersion;
  doc["decision_threshold"] = o.threshold;
  doc["iou_thresholds"] = ious;
  ordered_json arr = ordered_json::array();
  for (const auto& r : rows) arr.push_back({{"name", r.name}, {"report", to_json(r.report)}});
  doc["rows"] = std::move(arr);
  write_file(o.out, doc.dump(1) + "\n");

  manifest.config = {{"iou", o.iou}, {"threshold", o.threshold}};
  manifest.outputs = {o.out};
  manifest.write(manifest_path(o.out));
  out << render_table(rows, "Model");
  return kExitOk;
}

// ---- simulate -------------------------------------------------------------

struct SimulateOptions {
  std::string config;
  std::string out;
  int jobs = 1;
};

std::string render_bench_tables(const std::vector<BenchRun>& runs, const BenchSummary& summary) {
  std::ostringstream os;
  for (const auto& run : runs) {
    std::vector<NamedReport> rows;
    rows.insert(rows.end(), run.ensembles.begin(), run.ensembles.end());
    rows.insert(rows.end(), run.solo.begin(), run.solo.end());
    rows.insert(rows.end(), run.votes.begin(), run.votes.end());
    os << "seed " << run.seed << '\n' << render_table(rows) << '\n';
  }
  if (runs.size() > 1) {
    os << "mean F1 over " << runs.size() << " seeds\n";
    for (const auto& [name, f1] : summary.mean_f1) {
      os << "  " << std::left << std::setw(20) << name << std::fixed << std::setprecision(4)
         << f1 << '\n';
    }
    os << "fraction of seeds with F1 >= best solo F1\n";
    for (const auto& [name, rate] : summary.win_rate) {
      os << "  " << std::left << std::setw(20) << name << std::fixed << std::setprecision(2)
         << rate << '\n';
    }
  }
  return os.str();
}

int cmd_simulate(const SimulateOptions& o, std::ostream& out) {
  RunManifest manifest;
  manifest.command = "simulate";
  const std::string text = read_input(o.config, manifest);
  const BenchSpec spec = with_file(o.config, [&] { return parse_bench_config(text); });

  fs::create_directories(o.out);
  const std::size_t n = static_cast<std::size_t>(spec.n_seeds);
  std::vector<BenchRun> runs(n);
  std::vector<std::string> outputs;
  for (std::size_t k = 0; k < n; ++k) {
    const std::string dir = "seed_" + std::to_string(spec.seed + k);
    fs::create_directories(fs::path(o.out) / dir);
    outputs.push_back(dir + "/ground_truth.json");
    for (const auto& p : spec.profiles) {
      outputs.push_back(dir + "/predictions_" + p.model_id + ".json");
    }
  }
  parallel_for(n, o.jobs, [&](std::size_t k) {
    const std::uint64_t seed = spec.seed + k;
    const BenchData data = simulate_bench_data(spec, seed);
    const fs::path dir = fs::path(o.out) / ("seed_" + std::to_string(seed));
    write_file((dir / "ground_truth.json").string(), serialize_ground_truth(data.ground_truth));
    for (std::size_t m = 0; m < spec.profiles.size(); ++m) {
      write_file((dir / ("predictions_" + spec.profiles[m].model_id + ".json")).string(),
                 serialize_detections(data.predictions[m]));
    }
    runs[k] = evaluate_bench(spec, data, seed);
  });
  const BenchSummary summary = summarize(runs);

  ordered_json results;
  results["rng"] = kRngDescription;
  results["spec"] = to_json(spec);
  ordered_json arr = ordered_json::array();
  for (const auto& r : runs) arr.push_back(to_json(r));
  results["runs"] = std::move(arr);
  results["summary"] = to_json(summary);
  const std::string tables = render_bench_tables(runs, summary);
  write_file((fs::path(o.out) / "results.json").string(), results.dump(1) + "\n");
  write_file((fs::path(o.out) / "report.txt").string(), tables);
  outputs.push_back("results.json");
  outputs.push_back("report.txt");

  manifest.config = to_json(spec);
  manifest.seed = spec.seed;
  manifest.outputs = outputs;
  manifest.write((fs::path(o.out) / "manifest.json").string());
  out << tables;
  return kExitOk;
}

// ---- report ---------------------------------------------------------------

int cmd_report(const std::string& path, std::ostream& out) {
  const std::string text = read_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": malformed JSON: " + e.what(), e.byte);
  }
  auto rows_of = [&](const nlohmann::json& arr) {
    std::vector<NamedReport> rows;
    for (const auto& r : arr) {
      rows.push_back({r.at("name").get<std::string>(), report_from_json(r.at("report"))});
    }
    return rows;
  };
  try {
    if (doc.contains("rows")) {
      out << render_table(rows_of(doc["rows"]), "Model");
    } else if (doc.contains("runs")) {
      for (const auto& run : doc["runs"]) {
        auto rows = rows_of(run.at("ensembles"));
        for (auto& r : rows_of(run.at("solo"))) rows.push_back(std::move(r));
        for (auto& r : rows_of(run.at("votes"))) rows.push_back(std::move(r));
        out << "seed " << run.at("seed").get<std::uint64_t>() << '\n'
            << render_table(rows) << '\n';
      }
      if (doc.contains("summary") && doc["runs"].size() > 1) {
        // Reparse keeping key order so rows follow the results file.
        const auto s = ordered_json::parse(text).at("summary");
        out << "mean F1 over " << doc["runs"].size() << " seeds\n";
        for (const auto& [name, f1] : s.at("mean_f1").items()) {
          out << "  " << std::left << std::setw(20) << name << std::fixed
              << std::setprecision(4) << f1.get<double>() << '\n';
        }
        out << "fraction of seeds with F1 >= best solo F1\n";
        for (const auto& [name, rate] : s.at("win_rate_vs_best_solo").items()) {
          out << "  " << std::left << std::setw(20) << name << std::fixed
              << std::setprecision(2) << rate.get<double>() << '\n';
        }
      }
    } else {
      throw ValidationError(path + ": not an evaluate or simulate result file");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return kExitOk;
}

}  // namespace

std::vector<double> parse_iou_spec(const std::string& spec) {
  auto number = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::logic_error&) {
      throw InvalidArgument("bad IoU spec \"" + spec + "\"");
    }
  };
  std::vector<double> out;
  if (spec.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() != 3) throw InvalidArgument("IoU range must be start:stop:step");
    const double start = number(parts[0]);
    const double stop = number(parts[1]);
    const double step = number(parts[2]);
    if (!(step > 0.0) || stop < start) throw InvalidArgument("bad IoU range \"" + spec + "\"");
    const long n = std::lround((stop - start) / step);
    for (long k = 0; k <= n; ++k) {
      out.push_back(std::round((start + static_cast<double>(k) * step) * 1e9) / 1e9);
    }
  } else {
    std::stringstream ss(spec);
    for (std::string p; std::getline(ss, p, ',');) out.push_back(number(p));
  }
  if (out.empty()) throw InvalidArgument("empty IoU spec");
  for (double t : out) {
    if (!(t > 0.0 && t <= 1.0)) throw InvalidArgument("IoU thresholds must lie in (0, 1]");
  }
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Detection ensemble fusion and evaluation toolkit", "detfuse"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  FuseOptions fuse_opts;
  auto* fuse_cmd = app.add_subcommand("fuse", "Fuse per-model predictions box by box");
  fuse_cmd->add_option("inputs", fuse_opts.inputs, "Prediction files")->required();
  fuse_cmd->add_option("--method", fuse_opts.method, "nms | soft_nms | wbf | nmw")->required();
  fuse_cmd->add_option("--iou-thr", fuse_opts.iou_thr, "IoU threshold in (0, 1)");
  fuse_cmd->add_option("--soft-mode", fuse_opts.soft_mode, "Soft-NMS decay: linear | gaussian");
  fuse_cmd->add_option("--sigma", fuse_opts.sigma, "Gaussian soft-NMS sigma");
  fuse_cmd->add_option("--score-prune", fuse_opts.score_prune, "Soft-NMS score floor");
  fuse_cmd->add_option("--weights", fuse_opts.weights, "WBF model weights: m1=2,m2=1");
  fuse_cmd->add_flag("--no-rescale", fuse_opts.no_rescale, "Disable WBF model-count rescale");
  fuse_cmd->add_option("--out", fuse_opts.out, "Output prediction file")->required();
  fuse_cmd->add_option("--jobs", fuse_opts.jobs, "Worker threads")->check(CLI::PositiveNumber);

  VoteOptions vote_opts;
  auto* vote_cmd = app.add_subcommand("vote", "Image-level voting across models");
  vote_cmd->add_option("inputs", vote_opts.inputs, "Prediction files")->required();
  vote_cmd->add_option("--policy", vote_opts.policy, "affirmative | unanimous | consensus")
      ->required();
  vote_cmd->add_option("--threshold", vote_opts.threshold, "Per-model decision threshold");
  vote_cmd->add_option("--out", vote_opts.out, "Output decision file")->required();

  EvaluateOptions eval_opts;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score predictions or decisions");
  eval_cmd->add_option("--gt", eval_opts.gt, "Ground-truth file")->required();
  eval_cmd->add_option("--pred", eval_opts.pred, "Prediction file");
  eval_cmd->add_option("--decisions", eval_opts.decisions, "Decision file from `vote`");
  eval_cmd->add_option("--iou", eval_opts.iou, "IoU list or start:stop:step range");
  eval_cmd->add_option("--threshold", eval_opts.threshold, "Decision threshold");
  eval_cmd->add_option("--out", eval_opts.out, "Output report (JSON)")->required();

  SimulateOptions sim_opts;
  auto* sim_cmd = app.add_subcommand("simulate", "Run the synthetic detector benchmark");
  sim_cmd->add_option("--config", sim_opts.config, "Bench config (JSON)")->required();
  sim_cmd->add_option("--out", sim_opts.out, "Output directory")->required();
  sim_cmd->add_option("--jobs", sim_opts.jobs, "Worker threads")->check(CLI::PositiveNumber);

  std::string report_path;
  auto* report_cmd = app.add_subcommand("report", "Print a result file as a table");
  report_cmd->add_option("result", report_path, "evaluate or simulate result JSON")->required();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "usage error: " << e.what() << '\n';
    return kExitInvalid;
  }

  try {
    if (*fuse_cmd) return cmd_fuse(fuse_opts, out);
    if (*vote_cmd) return cmd_vote(vote_opts, out);
    if (*eval_cmd) return cmd_evaluate(eval_opts, out);
    if (*sim_cmd) return cmd_simulate(sim_opts, out);
    if (*report_cmd) return cmd_report(report_path, out);
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitInvalid;
}

}  // namespace detfuse::cli
