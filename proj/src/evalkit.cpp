#include "uavkit/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace uavkit::evalkit {

namespace {

void validate_positive_area(const PixelBox& b, const char* who) {
  if (!(b.width() > 0.0) || !(b.height() > 0.0)) {
    std::ostringstream os;
    os << who << " box has non-positive area: [" << b.x_min << ", " << b.y_min << ", "
       << b.x_max << ", " << b.y_max << "]";
    throw ValidationError(os.str());
  }
}

bool area_in_range(double area, double lo, double hi) {
  // First bin is closed on both ends; the rest are (lo, hi].
  if (lo <= 0.0) return area <= hi;
  return area > lo && area <= hi;
}

std::optional<double> ap_for_range(const std::vector<Detection>& dets,
                                   const GroundTruthMap& gts,
                                   const EvalOptions& opt,
                                   double lo,
                                   double hi) {
  GroundTruthMap gts_bin;
  std::size_t gt_count = 0;
  for (const auto& [image_id, boxes] : gts) {
    std::vector<PixelBox> keep;
    for (const PixelBox& b : boxes) {
      if (area_in_range(b.area(), lo, hi)) keep.push_back(b);
    }
    gt_count += keep.size();
    if (!keep.empty()) gts_bin.emplace(image_id, std::move(keep));
  }
  if (gt_count == 0) return std::nullopt;

  std::vector<Detection> dets_bin;
  for (const Detection& d : dets) {
    if (!opt.ignore_outside_bin || area_in_range(d.box.area(), lo, hi)) {
      dets_bin.push_back(d);
    }
  }

  std::size_t total_gt = 0;
  const auto outcomes = match_all(dets_bin, gts_bin, opt.iou_threshold, &total_gt);
  return average_precision(pr_curve(outcomes, total_gt));
}

}  // namespace

double iou(const PixelBox& a, const PixelBox& b) {
  validate_positive_area(a, "first");
  validate_positive_area(b, "second");
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<PixelBox>& gts,
                             double threshold) {
  MatchResult result;
  result.iou_threshold = threshold;
  result.gt_matched.assign(gts.size(), false);
  result.outcomes.resize(dets.size());

  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return dets[i].confidence > dets[j].confidence;
  });

  for (std::size_t i : order) {
    double best_iou = -1.0;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (result.gt_matched[g]) continue;
      const double v = iou(dets[i].box, gts[g]);
      if (v > best_iou) {
        best_iou = v;
        best_gt = g;
      }
    }
    const bool tp = best_gt < gts.size() && best_iou >= threshold;
    if (tp) result.gt_matched[best_gt] = true;
    result.outcomes[i] = DetectionOutcome{i, dets[i].confidence, tp};
  }
  return result;
}

std::vector<DetectionOutcome> match_all(const std::vector<Detection>& dets,
                                        const GroundTruthMap& gts,
                                        double threshold,
                                        std::size_t* total_gt) {
  std::map<std::string, std::vector<std::size_t>> by_image;
  for (std::size_t i = 0; i < dets.size(); ++i) by_image[dets[i].image_id].push_back(i);

  std::size_t gt_count = 0;
  for (const auto& [image_id, boxes] : gts) gt_count += boxes.size();

  std::vector<DetectionOutcome> all;
  all.reserve(dets.size());
  static const std::vector<PixelBox> kNoBoxes;
  for (const auto& [image_id, indices] : by_image) {
    std::vector<Detection> image_dets;
    image_dets.reserve(indices.size());
    for (std::size_t i : indices) image_dets.push_back(dets[i]);
    const auto gt_it = gts.find(image_id);
    const auto& gt_boxes = gt_it == gts.end() ? kNoBoxes : gt_it->second;
    MatchResult m = match_detections(image_dets, gt_boxes, threshold);
    for (const DetectionOutcome& o : m.outcomes) {
      all.push_back(DetectionOutcome{indices[o.det_index], o.confidence, o.true_positive});
    }
  }
  if (total_gt) *total_gt = gt_count;
  return all;
}

PRCurve pr_curve(const std::vector<DetectionOutcome>& outcomes, std::size_t total_gt) {
  if (total_gt == 0) {
    throw ValidationError("recall is undefined: total ground-truth count is zero");
  }
  std::vector<DetectionOutcome> sorted = outcomes;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const DetectionOutcome& a, const DetectionOutcome& b) {
                     return a.confidence > b.confidence;
                   });

  PRCurve curve;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i].true_positive) {
      ++tp;
    } else {
      ++fp;
    }
    // Emit one point per distinct confidence, counting everything >= it.
    if (i + 1 < sorted.size() && sorted[i + 1].confidence == sorted[i].confidence) continue;
    PRPoint pt;
    pt.beta = sorted[i].confidence;
    pt.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    pt.recall = static_cast<double>(tp) / static_cast<double>(total_gt);
    curve.points.push_back(pt);
  }
  return curve;
}

double interp_precision(const PRCurve& curve, double r) {
  double best = 0.0;
  for (const PRPoint& pt : curve.points) {
    if (pt.recall >= r) best = std::max(best, pt.precision);
  }
  return best;
}

double average_precision(const PRCurve& curve) {
  double sum = 0.0;
  for (int i = 0; i <= 10; ++i) {
    sum += interp_precision(curve, static_cast<double>(i) / 10.0);
  }
  return sum / 11.0;
}

APReport size_stratified_report(const std::vector<Detection>& dets,
                                const GroundTruthMap& gts,
                                const EvalOptions& opt) {
  const double inf = std::numeric_limits<double>::infinity();
  APReport report;
  report.ap_0_64 = ap_for_range(dets, gts, opt, 0.0, opt.bin_edges[0]);
  report.ap_64_256 = ap_for_range(dets, gts, opt, opt.bin_edges[0], opt.bin_edges[1]);
  report.ap_256_1024 = ap_for_range(dets, gts, opt, opt.bin_edges[1], opt.bin_edges[2]);
  report.ap_small = ap_for_range(dets, gts, opt, 0.0, opt.bin_edges[2]);
  report.ap_overall = ap_for_range(dets, gts, opt, 0.0, inf);
  return report;
}

std::vector<Detection> parse_detections(std::istream& in) {
  std::vector<Detection> dets;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Detection d;
    int cls = 0;
    if (!(ls >> d.image_id >> cls >> d.confidence >> d.box.x_min >> d.box.y_min >>
          d.box.x_max >> d.box.y_max)) {
      throw ValidationError("malformed detection record at line " + std::to_string(line_no));
    }
    if (d.confidence < 0.0 || d.confidence > 1.0) {
      throw ValidationError("confidence out of [0,1] at line " + std::to_string(line_no));
    }
    validate_positive_area(d.box, "detection");
    dets.push_back(std::move(d));
  }
  return dets;
}

namespace {

std::string cell(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

}  // namespace

std::string format_report(const APReport& r) {
  std::ostringstream os;
  const char* headers[] = {"AP_0~8^2", "AP_8^2~16^2", "AP_16^2~32^2", "AP_0~32^2", "AP_all"};
  const std::string cells[] = {cell(r.ap_0_64), cell(r.ap_64_256), cell(r.ap_256_1024),
                               cell(r.ap_small), cell(r.ap_overall)};
  for (int i = 0; i < 5; ++i) {
    os << headers[i];
    size_t pad = 14 - std::string(headers[i]).size();
    os << std::string(pad, ' ');
  }
  os << "\n";
  for (int i = 0; i < 5; ++i) {
    os << cells[i] << std::string(14 - cells[i].size(), ' ');
  }
  os << "\n";
  return os.str();
}

std::string report_to_json(const APReport& r) {
  nlohmann::json j;
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) {
      j[key] = *v;
    } else {
      j[key] = nullptr;
    }
  };
  put("ap_0_64", r.ap_0_64);
  put("ap_64_256", r.ap_64_256);
  put("ap_256_1024", r.ap_256_1024);
  put("ap_small", r.ap_small);
  put("ap_overall", r.ap_overall);
  return j.dump(2);
}

}  // namespace uavkit::evalkit
