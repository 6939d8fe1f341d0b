#include "detfuse/detection_io.h"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "detfuse/errors.h"

namespace detfuse {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

json parse_document(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), e.byte);
  }
}

void check_version(const json& doc) {
  if (!doc.is_object()) throw ValidationError("top-level JSON value must be an object");
  auto it = doc.find("format_version");
  if (it == doc.end()) throw ValidationError("missing \"format_version\"");
  if (!it->is_string() || it->get<std::string>() != kFormatVersion) {
    throw ValidationError("unsupported format_version " + it->dump() +
                          " (expected \"" + std::string(kFormatVersion) + "\")");
  }
}

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) throw ValidationError(where + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw ValidationError(where + ": missing field \"" + key + "\"");
  }
  return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_string()) throw ValidationError(where + ": \"" + key + "\" must be a string");
  auto s = v.get<std::string>();
  if (s.empty()) throw ValidationError(where + ": \"" + key + "\" must be non-empty");
  return s;
}

Box parse_box(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 4) {
    throw ValidationError(where + ": bbox must be an array [x1, y1, x2, y2]");
  }
  double c[4];
  for (int i = 0; i < 4; ++i) {
    if (!v[i].is_number()) throw ValidationError(where + ": bbox coordinates must be numbers");
    c[i] = v[i].get<double>();
  }
  if (!is_valid_box(c[0], c[1], c[2], c[3])) {
    throw ValidationError(where + ": degenerate bbox " + v.dump() +
                          " (need x1 < x2, y1 < y2, finite)");
  }
  return Box(c[0], c[1], c[2], c[3]);
}

std::string record_where(const std::string& image_id, std::size_t record) {
  return "image \"" + image_id + "\", record " + std::to_string(record);
}

ordered_json box_json(const Box& b) {
  return ordered_json::array({b.x1(), b.y1(), b.x2(), b.y2()});
}

}  // namespace

std::vector<DetectionSet> parse_predictions(std::string_view text) {
  const json doc = parse_document(text);
  check_version(doc);
  const json& records = require(doc, "records", "document");
  if (!records.is_array()) throw ValidationError("\"records\" must be an array");

  std::vector<DetectionSet> out;
  out.reserve(records.size());
  for (std::size_t r = 0; r < records.size(); ++r) {
    const json& rec = records[r];
    const std::string at = "record " + std::to_string(r);
    DetectionSet set;
    set.image_id = require_string(rec, "image_id", at);
    const std::string where = record_where(set.image_id, r);
    set.model_id = require_string(rec, "model_id", where);
    const json& dets = require(rec, "detections", where);
    if (!dets.is_array()) throw ValidationError(where + ": \"detections\" must be an array");
    set.detections.reserve(dets.size());
    for (std::size_t d = 0; d < dets.size(); ++d) {
      const std::string dwhere = where + ", detection " + std::to_string(d);
      const json& det = dets[d];
      Box box = parse_box(require(det, "bbox", dwhere), dwhere);
      const json& score = require(det, "score", dwhere);
      if (!score.is_number()) throw ValidationError(dwhere + ": score must be a number");
      const double s = score.get<double>();
      if (!(s >= 0.0 && s <= 1.0)) {
        throw ValidationError(dwhere + ": score " + score.dump() + " outside [0, 1]");
      }
      const json& label = require(det, "label", dwhere);
      if (!label.is_string() || label.get<std::string>() != kFractureLabel) {
        throw ValidationError(dwhere + ": unknown label " + label.dump());
      }
      set.detections.push_back(
          Detection{std::move(box), s, std::string(kFractureLabel), set.model_id});
    }
    out.push_back(std::move(set));
  }
  return out;
}

std::pair<GroundTruthMap, std::vector<std::string>> parse_ground_truth_ordered(
    std::string_view text) {
  const json doc = parse_document(text);
  check_version(doc);
  const json& images = require(doc, "images", "document");
  if (!images.is_array()) throw ValidationError("\"images\" must be an array");

  GroundTruthMap out;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const json& rec = images[i];
    GroundTruth gt;
    gt.image_id = require_string(rec, "image_id", "image " + std::to_string(i));
    const std::string where = record_where(gt.image_id, i);
    const json& boxes = require(rec, "boxes", where);
    if (!boxes.is_array()) throw ValidationError(where + ": \"boxes\" must be an array");
    for (std::size_t b = 0; b < boxes.size(); ++b) {
      gt.boxes.push_back(parse_box(boxes[b], where + ", box " + std::to_string(b)));
    }
    if (out.contains(gt.image_id)) {
      throw ValidationError(where + ": duplicate image_id \"" + gt.image_id + "\"");
    }
    order.push_back(gt.image_id);
    out.emplace(gt.image_id, std::move(gt));
  }
  return {std::move(out), std::move(order)};
}

GroundTruthMap parse_ground_truth(std::string_view text) {
  return parse_ground_truth_ordered(text).first;
}

std::string serialize_detections(const std::vector<DetectionSet>& sets) {
  ordered_json records = ordered_json::array();
  for (const auto& set : sets) {
    ordered_json dets = ordered_json::array();
    for (const auto& d : set.detections) {
      ordered_json det;
      det["bbox"] = box_json(d.box);
      det["score"] = d.score;
      det["label"] = d.label;
      dets.push_back(std::move(det));
    }
    ordered_json rec;
    rec["image_id"] = set.image_id;
    rec["model_id"] = set.model_id;
    rec["detections"] = std::move(dets);
    records.push_back(std::move(rec));
  }
  ordered_json doc;
  doc["format_version"] = kFormatVersion;
  doc["records"] = std::move(records);
  return doc.dump(1) + "\n";
}

std::string serialize_ground_truth(const std::vector<GroundTruth>& images) {
  ordered_json arr = ordered_json::array();
  for (const auto& gt : images) {
    ordered_json boxes = ordered_json::array();
    for (const auto& b : gt.boxes) boxes.push_back(box_json(b));
    ordered_json rec;
    rec["image_id"] = gt.image_id;
    rec["boxes"] = std::move(boxes);
    arr.push_back(std::move(rec));
  }
  ordered_json doc;
  doc["format_version"] = kFormatVersion;
  doc["images"] = std::move(arr);
  return doc.dump(1) + "\n";
}

Corpus Corpus::assemble(GroundTruthMap ground_truth,
                        const std::vector<DetectionSet>& predictions,
                        std::vector<std::string> images) {
  Corpus c;
  if (images.empty()) {
    for (const auto& [id, gt] : ground_truth) images.push_back(id);
  }
  std::set<std::string> seen;
  for (const auto& id : images) {
    if (!ground_truth.contains(id)) {
      throw ValidationError("image \"" + id + "\" has no ground truth");
    }
    if (!seen.insert(id).second) {
      throw ValidationError("image \"" + id + "\" listed twice");
    }
  }
  if (seen.size() != ground_truth.size()) {
    throw ValidationError("image order does not cover the ground truth");
  }

  std::set<std::string> models;
  for (const auto& set : predictions) {
    if (!ground_truth.contains(set.image_id)) {
      throw ValidationError("prediction for unknown image \"" + set.image_id + "\"");
    }
    for (const auto& d : set.detections) {
      if (d.model_id != set.model_id) {
        throw ValidationError("image \"" + set.image_id + "\": detection model \"" +
                              d.model_id + "\" differs from set model \"" +
                              set.model_id + "\"");
      }
    }
    auto key = std::make_pair(set.image_id, set.model_id);
    if (!c.predictions_.emplace(key, set).second) {
      throw ValidationError("duplicate predictions for image \"" + set.image_id +
                            "\", model \"" + set.model_id + "\"");
    }
    if (models.insert(set.model_id).second) c.models_.push_back(set.model_id);
  }
  for (const auto& image : images) {
    for (const auto& model : c.models_) {
      auto key = std::make_pair(image, model);
      if (!c.predictions_.contains(key)) {
        c.predictions_.emplace(key, DetectionSet{image, model, {}});
      }
    }
  }
  c.images_ = std::move(images);
  c.ground_truth_ = std::move(ground_truth);
  return c;
}

const GroundTruth& Corpus::ground_truth(const std::string& image_id) const {
  auto it = ground_truth_.find(image_id);
  if (it == ground_truth_.end()) {
    throw InvalidArgument("unknown image \"" + image_id + "\"");
  }
  return it->second;
}

const DetectionSet& Corpus::predictions(const std::string& image_id,
                                        const std::string& model_id) const {
  auto it = predictions_.find({image_id, model_id});
  if (it == predictions_.end()) {
    throw InvalidArgument("no predictions for image \"" + image_id + "\", model \"" +
                          model_id + "\"");
  }
  return it->second;
}

std::vector<DetectionSet> Corpus::predictions_for(const std::string& image_id) const {
  std::vector<DetectionSet> out;
  out.reserve(models_.size());
  for (const auto& m : models_) out.push_back(predictions(image_id, m));
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("error reading " + path);
  return ss.str();
}

void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("error writing " + path);
}

}  // namespace detfuse
