#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uavkit/geometry.hpp"

namespace uavkit::evalkit {

using geometry::PixelBox;

struct Detection {
  PixelBox box;
  double confidence = 0.0;  // in [0,1]
  std::string image_id;
};

// Ground-truth boxes keyed by image id.
using GroundTruthMap = std::map<std::string, std::vector<PixelBox>>;

struct DetectionOutcome {
  std::size_t det_index = 0;
  double confidence = 0.0;
  bool true_positive = false;
};

struct MatchResult {
  std::vector<DetectionOutcome> outcomes;  // ordered by detection input index
  std::vector<bool> gt_matched;
  double iou_threshold = 0.5;
};

struct PRPoint {
  double beta = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// One point per distinct confidence value, beta descending.
struct PRCurve {
  std::vector<PRPoint> points;
};

// Absent entries mirror bins with no ground truth.
struct APReport {
  std::optional<double> ap_0_64;      // area in [0, 8^2]
  std::optional<double> ap_64_256;    // (8^2, 16^2]
  std::optional<double> ap_256_1024;  // (16^2, 32^2]
  std::optional<double> ap_small;     // [0, 32^2]
  std::optional<double> ap_overall;   // all areas
};

struct EvalOptions {
  double iou_threshold = 0.5;
  // When true, a detection participates in a bin's evaluation only if its own
  // area lies in the bin; when false, every detection survives every bin and
  // unmatched ones count as FP everywhere.
  bool ignore_outside_bin = true;
  std::array<double, 3> bin_edges{64.0, 256.0, 1024.0};
};

double iou(const PixelBox& a, const PixelBox& b);

// Greedy matching for a single image: detections in descending confidence
// (ties by input index) each claim the unmatched ground truth of highest IoU
// (ties by ground-truth index); TP iff that IoU >= threshold.
MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<PixelBox>& gts,
                             double threshold = 0.5);

// Matches per image and concatenates outcomes; total_gt receives the ground
// truth count across all images.
std::vector<DetectionOutcome> match_all(const std::vector<Detection>& dets,
                                        const GroundTruthMap& gts,
                                        double threshold,
                                        std::size_t* total_gt);

PRCurve pr_curve(const std::vector<DetectionOutcome>& outcomes, std::size_t total_gt);

// Interpolated precision: max precision over curve points with recall >= r.
double interp_precision(const PRCurve& curve, double r);

// Eleven-point interpolated average precision over r in {0, 0.1, ..., 1.0}.
double average_precision(const PRCurve& curve);

APReport size_stratified_report(const std::vector<Detection>& dets,
                                const GroundTruthMap& gts,
                                const EvalOptions& options = {});

// One detection per line: image_id class confidence x_min y_min x_max y_max.
std::vector<Detection> parse_detections(std::istream& in);

std::string format_report(const APReport& report);
std::string report_to_json(const APReport& report);

}  // namespace uavkit::evalkit
