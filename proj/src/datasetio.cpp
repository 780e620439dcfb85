#include "uavkit/datasetio.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "uavkit/rng.hpp"

namespace uavkit::datasetio {

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const ManifestEntry& e : entries) {
    if (e.id.empty()) throw ValidationError("manifest entry with empty id");
    if (!ids.insert(e.id).second) throw ValidationError("duplicate manifest entry id: " + e.id);
    if (e.width <= 0 || e.height <= 0) {
      throw ValidationError("manifest entry " + e.id + " has non-positive image size");
    }
  }
  if (!(bin_edges[0] < bin_edges[1] && bin_edges[1] < bin_edges[2])) {
    throw ValidationError("bin edges must be strictly increasing");
  }
}

ManifestEntry entry_from_frame(const scenario::AnnotatedFrame& frame, const std::string& id,
                               const std::string& file_name) {
  ManifestEntry e;
  e.id = id;
  e.file_name = file_name;
  e.width = frame.image_width;
  e.height = frame.image_height;
  e.scene = frame.scene;
  e.boxes = frame.boxes;
  return e;
}

namespace {

std::string labels_for_boxes(const std::vector<scenario::LabeledBox>& boxes, int width,
                             int height) {
  std::string out;
  char line[128];
  for (const scenario::LabeledBox& lb : boxes) {
    const geometry::PixelBox& b = lb.box;
    const double cx = (b.x_min + b.x_max) / 2.0 / width;
    const double cy = (b.y_min + b.y_max) / 2.0 / height;
    const double w = b.width() / width;
    const double h = b.height() / height;
    std::snprintf(line, sizeof(line), "0 %.6f %.6f %.6f %.6f\n", cx, cy, w, h);
    out += line;
  }
  return out;
}

}  // namespace

std::string write_labels_normalized(const scenario::AnnotatedFrame& frame) {
  return labels_for_boxes(frame.boxes, frame.image_width, frame.image_height);
}

std::string write_labels_normalized(const ManifestEntry& entry) {
  return labels_for_boxes(entry.boxes, entry.width, entry.height);
}

std::vector<geometry::PixelBox> parse_labels_normalized(const std::string& text, int image_width,
                                                        int image_height) {
  std::vector<geometry::PixelBox> boxes;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    int cls = 0;
    double cx = 0, cy = 0, w = 0, h = 0;
    if (!(ls >> cls >> cx >> cy >> w >> h)) {
      throw ValidationError("malformed normalized label line: " + line);
    }
    geometry::PixelBox b;
    b.x_min = (cx - w / 2.0) * image_width;
    b.x_max = (cx + w / 2.0) * image_width;
    b.y_min = (cy - h / 2.0) * image_height;
    b.y_max = (cy + h / 2.0) * image_height;
    boxes.push_back(b);
  }
  return boxes;
}

std::string write_coco_manifest(const DatasetManifest& manifest) {
  manifest.validate();
  nlohmann::json doc;
  doc["bin_edges"] = manifest.bin_edges;
  doc["categories"] = nlohmann::json::array({{{"id", 1}, {"name", "uav"}}});
  nlohmann::json images = nlohmann::json::array();
  nlohmann::json annotations = nlohmann::json::array();
  int ann_id = 0;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const ManifestEntry& e = manifest.entries[i];
    nlohmann::json img;
    img["id"] = i;
    img["name"] = e.id;
    img["file_name"] = e.file_name;
    img["width"] = e.width;
    img["height"] = e.height;
    img["scene"] = scenario::to_string(e.scene);
    if (!e.split_tags.empty()) img["split_tags"] = e.split_tags;
    images.push_back(std::move(img));
    for (const scenario::LabeledBox& lb : e.boxes) {
      nlohmann::json ann;
      ann["id"] = ann_id++;
      ann["image_id"] = i;
      ann["category_id"] = 1;
      ann["bbox"] = {lb.box.x_min, lb.box.y_min, lb.box.width(), lb.box.height()};
      ann["area"] = lb.box.area();
      ann["iscrowd"] = 0;
      ann["model"] = scenario::to_string(lb.model);
      annotations.push_back(std::move(ann));
    }
  }
  doc["images"] = std::move(images);
  doc["annotations"] = std::move(annotations);
  return doc.dump(2);
}

DatasetManifest read_coco_manifest(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("manifest is not valid JSON: ") + e.what());
  }
  DatasetManifest manifest;
  try {
    if (doc.contains("bin_edges")) {
      for (int k = 0; k < 3; ++k) manifest.bin_edges[k] = doc["bin_edges"].at(k).get<double>();
    }
    std::map<std::int64_t, std::size_t> index_of;
    for (const auto& img : doc.at("images")) {
      ManifestEntry e;
      e.id = img.contains("name") ? img.at("name").get<std::string>()
                                  : img.at("file_name").get<std::string>();
      e.file_name = img.value("file_name", std::string{});
      e.width = img.at("width").get<int>();
      e.height = img.at("height").get<int>();
      if (img.contains("scene")) e.scene = scenario::scene_from_string(img.at("scene"));
      if (img.contains("split_tags")) {
        for (const auto& t : img.at("split_tags")) e.split_tags.push_back(t.get<std::string>());
      }
      index_of[img.at("id").get<std::int64_t>()] = manifest.entries.size();
      manifest.entries.push_back(std::move(e));
    }
    for (const auto& ann : doc.at("annotations")) {
      const auto it = index_of.find(ann.at("image_id").get<std::int64_t>());
      if (it == index_of.end()) {
        throw ValidationError("annotation references unknown image_id");
      }
      scenario::LabeledBox lb;
      const auto& bbox = ann.at("bbox");
      lb.box.x_min = bbox.at(0).get<double>();
      lb.box.y_min = bbox.at(1).get<double>();
      lb.box.x_max = lb.box.x_min + bbox.at(2).get<double>();
      lb.box.y_max = lb.box.y_min + bbox.at(3).get<double>();
      if (ann.contains("model")) lb.model = scenario::model_from_string(ann.at("model"));
      manifest.entries[it->second].boxes.push_back(lb);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad manifest field: ") + e.what());
  }
  manifest.validate();
  return manifest;
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return read_coco_manifest(buf.str());
}

std::vector<DatasetManifest> partition_nested(const DatasetManifest& manifest, int parts,
                                              std::uint64_t seed) {
  manifest.validate();
  const std::size_t n = manifest.entries.size();
  if (parts < 1) throw ValidationError("parts must be >= 1");
  if (static_cast<std::size_t>(parts) > n) {
    throw ValidationError("parts (" + std::to_string(parts) + ") exceeds entry count (" +
                          std::to_string(n) + ")");
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::stream(seed, "partition");
  rng.shuffle(order);

  const std::size_t base = n / static_cast<std::size_t>(parts);
  const std::size_t rem = n % static_cast<std::size_t>(parts);

  std::vector<DatasetManifest> subsets;
  subsets.reserve(parts);
  std::size_t cursor = 0;
  DatasetManifest running;
  running.bin_edges = manifest.bin_edges;
  for (int k = 0; k < parts; ++k) {
    const std::size_t chunk_size = base + (static_cast<std::size_t>(k) < rem ? 1 : 0);
    std::vector<ManifestEntry> chunk;
    chunk.reserve(chunk_size);
    for (std::size_t j = 0; j < chunk_size; ++j) chunk.push_back(manifest.entries[order[cursor++]]);
    std::sort(chunk.begin(), chunk.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.id < b.id; });
    for (ManifestEntry& e : chunk) running.entries.push_back(std::move(e));
    subsets.push_back(running);
  }
  return subsets;
}

std::vector<std::string> split_file_lines(const DatasetManifest& subset) {
  std::vector<std::string> lines;
  lines.reserve(subset.entries.size());
  for (const ManifestEntry& e : subset.entries) lines.push_back(e.id);
  return lines;
}

namespace {

std::size_t bin_index(double area, const std::array<double, 3>& edges) {
  if (area <= edges[0]) return 0;
  if (area <= edges[1]) return 1;
  if (area <= edges[2]) return 2;
  return 3;
}

}  // namespace

std::vector<SizeBin> size_histogram(const DatasetManifest& manifest, BinCounting counting) {
  manifest.validate();
  std::vector<SizeBin> bins{{"0~8^2", 0}, {"8^2~16^2", 0}, {"16^2~32^2", 0}, {">=32^2", 0}};
  for (const ManifestEntry& e : manifest.entries) {
    if (counting == BinCounting::per_box) {
      for (const scenario::LabeledBox& lb : e.boxes) {
        ++bins[bin_index(lb.box.area(), manifest.bin_edges)].count;
      }
    } else {
      double largest = 0.0;  // boxless images land in the first bin
      for (const scenario::LabeledBox& lb : e.boxes) largest = std::max(largest, lb.box.area());
      ++bins[bin_index(largest, manifest.bin_edges)].count;
    }
  }
  return bins;
}

DatasetManifest filter_small_test(const DatasetManifest& manifest) {
  manifest.validate();
  DatasetManifest out;
  out.bin_edges = manifest.bin_edges;
  for (const ManifestEntry& e : manifest.entries) {
    const bool all_small = std::all_of(
        e.boxes.begin(), e.boxes.end(),
        [&](const scenario::LabeledBox& lb) { return lb.box.area() <= manifest.bin_edges[2]; });
    if (all_small) out.entries.push_back(e);
  }
  return out;
}

evalkit::GroundTruthMap ground_truth_map(const DatasetManifest& manifest) {
  evalkit::GroundTruthMap gts;
  for (const ManifestEntry& e : manifest.entries) {
    auto& boxes = gts[e.id];
    for (const scenario::LabeledBox& lb : e.boxes) boxes.push_back(lb.box);
  }
  return gts;
}

}  // namespace uavkit::datasetio
