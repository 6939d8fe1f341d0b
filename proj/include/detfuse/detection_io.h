#pragma once

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "detfuse/geometry.h"

namespace detfuse {

inline constexpr std::string_view kFormatVersion = "1";
inline constexpr std::string_view kFractureLabel = "fracture";
inline constexpr std::string_view kNonFractureLabel = "non-fracture";

struct Detection {
  Box box;
  double score;  // [0, 1]
  std::string label{kFractureLabel};
  std::string model_id;

  friend bool operator==(const Detection&, const Detection&) = default;
};

// All detections one model produced for one image, in file order.
struct DetectionSet {
  std::string image_id;
  std::string model_id;
  std::vector<Detection> detections;

  friend bool operator==(const DetectionSet&, const DetectionSet&) = default;
};

// Annotated fracture boxes for one image. The image-level label is derived
// from the boxes and never stored.
struct GroundTruth {
  std::string image_id;
  std::vector<Box> boxes;

  bool is_fracture() const noexcept { return !boxes.empty(); }
  std::string_view image_label() const noexcept {
    return is_fracture() ? kFractureLabel : kNonFractureLabel;
  }

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

using GroundTruthMap = std::map<std::string, GroundTruth>;

// Ground truth plus every model's predictions, with the model set made
// uniform across images: a model with no record for an image gets an
// explicit empty DetectionSet.
class Corpus {
 public:
  // `images` fixes the image order; when empty, the ground-truth order is
  // used. Throws ValidationError if a prediction names an image that has
  // no ground truth, or if (image, model) appears twice.
  static Corpus assemble(GroundTruthMap ground_truth,
                         const std::vector<DetectionSet>& predictions,
                         std::vector<std::string> images = {});

  const std::vector<std::string>& images() const noexcept { return images_; }
  const std::vector<std::string>& models() const noexcept { return models_; }
  const GroundTruthMap& ground_truth() const noexcept { return ground_truth_; }
  const GroundTruth& ground_truth(const std::string& image_id) const;
  const DetectionSet& predictions(const std::string& image_id,
                                  const std::string& model_id) const;
  // One set per model, in model order.
  std::vector<DetectionSet> predictions_for(const std::string& image_id) const;

 private:
  std::vector<std::string> images_;
  std::vector<std::string> models_;
  GroundTruthMap ground_truth_;
  std::map<std::pair<std::string, std::string>, DetectionSet> predictions_;
};

// Prediction file:
//   {"format_version": "1",
//    "records": [{"image_id", "model_id",
//                 "detections": [{"bbox": [x1,y1,x2,y2], "score", "label"}]}]}
// Throws ParseError (with byte offset) on malformed JSON and ValidationError
// (naming image_id and record/detection index) on schema violations.
std::vector<DetectionSet> parse_predictions(std::string_view json_text);

// Ground-truth file:
//   {"format_version": "1", "images": [{"image_id", "boxes": [[x1,y1,x2,y2]]}]}
GroundTruthMap parse_ground_truth(std::string_view json_text);

// Like parse_ground_truth but also returns the image order of the file.
std::pair<GroundTruthMap, std::vector<std::string>> parse_ground_truth_ordered(
    std::string_view json_text);

// Numbers are written in shortest round-trip form, so parse(serialize(x))
// reproduces every coordinate and score bit-for-bit.
std::string serialize_detections(const std::vector<DetectionSet>& sets);
std::string serialize_ground_truth(const std::vector<GroundTruth>& images);

std::string read_file(const std::string& path);  // throws IoError
void write_file(const std::string& path, std::string_view contents);

}  // namespace detfuse
