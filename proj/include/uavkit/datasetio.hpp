#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "uavkit/evalkit.hpp"
#include "uavkit/scenario.hpp"

namespace uavkit::datasetio {

struct ManifestEntry {
  std::string id;         // unique within a manifest
  std::string file_name;  // relative image path; empty for label-only datasets
  int width = 0;
  int height = 0;
  scenario::SceneId scene = scenario::SceneId::pool;
  std::vector<scenario::LabeledBox> boxes;
  std::vector<std::string> split_tags;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  // Pixel-area thresholds separating the size strata 0~8^2, 8^2~16^2,
  // 16^2~32^2, >=32^2.
  std::array<double, 3> bin_edges{64.0, 256.0, 1024.0};

  void validate() const;
};

enum class BinCounting {
  per_image_largest,  // an image counts in the bin of its largest box
  per_box,
};

struct SizeBin {
  std::string label;
  std::size_t count = 0;
};

ManifestEntry entry_from_frame(const scenario::AnnotatedFrame& frame, const std::string& id,
                               const std::string& file_name);

// One line per box: "class cx cy w h", center/size normalized to [0,1] at a
// fixed 6 decimals. Single-category datasets always write class 0.
std::string write_labels_normalized(const scenario::AnnotatedFrame& frame);
std::string write_labels_normalized(const ManifestEntry& entry);
std::vector<geometry::PixelBox> parse_labels_normalized(const std::string& text, int image_width,
                                                        int image_height);

// COCO-style images/annotations/categories document (single category "uav").
std::string write_coco_manifest(const DatasetManifest& manifest);
DatasetManifest read_coco_manifest(const std::string& json_text);
DatasetManifest load_manifest(const std::string& path);

// Uniform shuffle by seed, cut into `parts` chunks; subset k is the union of
// chunks 0..k, so subsets are nested and the last equals the whole set.
// Entries are id-sorted within each chunk, so each subset's id list extends
// the previous one.
std::vector<DatasetManifest> partition_nested(const DatasetManifest& manifest, int parts,
                                              std::uint64_t seed);

std::vector<std::string> split_file_lines(const DatasetManifest& subset);

std::vector<SizeBin> size_histogram(const DatasetManifest& manifest,
                                    BinCounting counting = BinCounting::per_image_largest);

// Keeps exactly the images whose every box area is <= bin_edges[2]; images
// without boxes satisfy the condition vacuously and are kept.
DatasetManifest filter_small_test(const DatasetManifest& manifest);

// Ground truth view for evalkit, keyed by entry id.
evalkit::GroundTruthMap ground_truth_map(const DatasetManifest& manifest);

}  // namespace uavkit::datasetio
