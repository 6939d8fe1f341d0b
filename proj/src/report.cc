#include "detfuse/report.h"

#include <cstdio>
#include <iomanip>
#include <sstream>

#include "detfuse/errors.h"

namespace detfuse {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string fixed(double v, int decimals) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(decimals) << v;
  return os.str();
}

std::string optional_fixed(const std::optional<double>& v, int decimals) {
  return v ? fixed(*v, decimals) : std::string("n/a");
}

template <typename T>
T field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError(std::string("report is missing \"") + key + "\"");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("report field \"") + key + "\": " + e.what());
  }
}

std::optional<double> optional_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

}  // namespace

ordered_json to_json(const EvalReport& r) {
  ordered_json j;
  j["accuracy"] = r.accuracy;
  j["accuracy_percent"] = fixed(100.0 * r.accuracy, 2);
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["sensitivity"] = r.sensitivity;
  j["specificity"] = r.specificity;
  j["ap50"] = r.ap50 ? ordered_json(*r.ap50) : ordered_json(nullptr);
  j["ap_50_95"] = r.ap_50_95 ? ordered_json(*r.ap_50_95) : ordered_json(nullptr);
  ordered_json ap_at = ordered_json::array();
  for (const auto& [t, ap] : r.ap_at) ap_at.push_back({{"iou", t}, {"ap", ap}});
  j["ap_at"] = std::move(ap_at);
  j["confusion"] = {{"tp", r.confusion.tp},
                    {"fp", r.confusion.fp},
                    {"fn", r.confusion.fn},
                    {"tn", r.confusion.tn}};
  ordered_json flags = ordered_json::array();
  if (r.precision_defaulted) flags.push_back("precision_defaulted_no_predicted_positives");
  if (r.recall_defaulted) flags.push_back("recall_defaulted_no_actual_positives");
  if (r.specificity_defaulted) flags.push_back("specificity_defaulted_no_actual_negatives");
  j["conventions"] = std::move(flags);
  ordered_json per_image = ordered_json::array();
  for (const auto& o : r.per_image) {
    per_image.push_back({{"image_id", o.image_id},
                         {"decision", to_string(o.decision.label)},
                         {"evidence_score", o.decision.evidence_score},
                         {"gt_label", to_string(o.gt_label)}});
  }
  j["per_image"] = std::move(per_image);
  return j;
}

EvalReport report_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("report must be a JSON object");
  EvalReport r;
  r.accuracy = field<double>(j, "accuracy");
  r.precision = field<double>(j, "precision");
  r.recall = field<double>(j, "recall");
  r.f1 = field<double>(j, "f1");
  r.sensitivity = field<double>(j, "sensitivity");
  r.specificity = field<double>(j, "specificity");
  r.ap50 = optional_field(j, "ap50");
  r.ap_50_95 = optional_field(j, "ap_50_95");
  if (auto it = j.find("ap_at"); it != j.end()) {
    for (const auto& e : *it) r.ap_at.emplace_back(field<double>(e, "iou"), field<double>(e, "ap"));
  }
  const json c = field<json>(j, "confusion");
  r.confusion = {field<std::int64_t>(c, "tp"), field<std::int64_t>(c, "fp"),
                 field<std::int64_t>(c, "fn"), field<std::int64_t>(c, "tn")};
  if (auto it = j.find("conventions"); it != j.end()) {
    for (const auto& f : *it) {
      const auto s = f.get<std::string>();
      if (s.starts_with("precision")) r.precision_defaulted = true;
      if (s.starts_with("recall")) r.recall_defaulted = true;
      if (s.starts_with("specificity")) r.specificity_defaulted = true;
    }
  }
  if (auto it = j.find("per_image"); it != j.end()) {
    try {
      for (const auto& e : *it) {
        const auto id = field<std::string>(e, "image_id");
        r.per_image.push_back(
            {id,
             ImageDecision{id, parse_image_label(field<std::string>(e, "decision")),
                           field<double>(e, "evidence_score")},
             parse_image_label(field<std::string>(e, "gt_label"))});
      }
    } catch (const InvalidArgument& e) {
      throw ValidationError(e.what());
    }
  }
  return r;
}

std::string render_table(std::span<const NamedReport> rows, std::string_view first_column) {
  const std::vector<std::string> headers = {std::string(first_column), "Accuracy (%)",
                                            "Precision", "Recall", "F1-Score", "AP@0.5",
                                            "AP@[.5:.95]", "Specificity"};
  std::vector<std::vector<std::string>> cells;
  for (const auto& row : rows) {
    const auto& r = row.report;
    cells.push_back({row.name, fixed(100.0 * r.accuracy, 2), fixed(r.precision, 4),
                     fixed(r.recall, 4), fixed(r.f1, 4), optional_fixed(r.ap50, 4),
                     optional_fixed(r.ap_50_95, 4), fixed(r.specificity, 4)});
  }
  std::vector<std::size_t> width(headers.size());
  for (std::size_t c = 0; c < headers.size(); ++c) {
    width[c] = headers[c].size();
    for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream os;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) {
        os << std::left << std::setw(static_cast<int>(width[c])) << row[c];
      } else {
        os << "  " << std::right << std::setw(static_cast<int>(width[c])) << row[c];
      }
    }
    os << '\n';
  };
  emit(headers);
  std::size_t total = 0;
  for (auto w : width) total += w;
  os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
  for (const auto& row : cells) emit(row);
  return os.str();
}

std::string serialize_decisions(std::span<const ImageDecision> decisions,
                                const VotePolicy& policy) {
  ordered_json doc;
  doc["format_version"] = kFormatVersion;
  doc["policy"] = to_string(policy.kind);
  doc["threshold"] = policy.threshold;
  ordered_json arr = ordered_json::array();
  for (const auto& d : decisions) {
    arr.push_back({{"image_id", d.image_id},
                   {"label", to_string(d.label)},
                   {"evidence_score", d.evidence_score}});
  }
  doc["decisions"] = std::move(arr);
  return doc.dump(1) + "\n";
}

std::vector<ImageDecision> parse_decisions(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), e.byte);
  }
  if (!doc.is_object() || doc.value("format_version", std::string()) != kFormatVersion) {
    throw ValidationError("decision file needs format_version \"1\"");
  }
  auto it = doc.find("decisions");
  if (it == doc.end() || !it->is_array()) {
    throw ValidationError("decision file needs a \"decisions\" array");
  }
  std::vector<ImageDecision> out;
  for (std::size_t i = 0; i < it->size(); ++i) {
    const json& e = (*it)[i];
    const std::string where = "decision " + std::to_string(i);
    try {
      ImageDecision d{field<std::string>(e, "image_id"),
                      parse_image_label(field<std::string>(e, "label")),
                      field<double>(e, "evidence_score")};
      if (d.image_id.empty()) throw ValidationError("empty image_id");
      if (!(d.evidence_score >= 0.0 && d.evidence_score <= 1.0)) {
        throw ValidationError("evidence_score outside [0, 1]");
      }
      out.push_back(std::move(d));
    } catch (const std::exception& ex) {
      throw ValidationError(where + ": " + ex.what());
    }
  }
  return out;
}

}  // namespace detfuse
