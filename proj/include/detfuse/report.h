#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "detfuse/metrics.h"
#include "detfuse/voting.h"

namespace detfuse {

struct NamedReport {
  std::string name;
  EvalReport report;
};

nlohmann::ordered_json to_json(const EvalReport& r);
// Inverse of to_json. Throws ValidationError on a malformed report.
EvalReport report_from_json(const nlohmann::json& j);

// Aligned plain-text table, one row per report:
//   Method | Accuracy (%) | Precision | Recall | F1-Score | AP@0.5 | AP@[.5:.95] | Specificity
// Accuracy is printed as a percentage with 2 decimals, ratios with 4.
std::string render_table(std::span<const NamedReport> rows, std::string_view first_column = "Method");

// Decision file:
//   {"format_version": "1", "policy": ..., "threshold": ...,
//    "decisions": [{"image_id", "label", "evidence_score"}]}
std::string serialize_decisions(std::span<const ImageDecision> decisions,
                                const VotePolicy& policy);
std::vector<ImageDecision> parse_decisions(std::string_view json_text);

}  // namespace detfuse
