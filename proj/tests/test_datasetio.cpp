#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "uavkit/datasetio.hpp"
#include "uavkit/rng.hpp"

using namespace uavkit;
using namespace uavkit::datasetio;

namespace {

scenario::LabeledBox lbox(double x0, double y0, double x1, double y1,
                          scenario::ModelId m = scenario::ModelId::mavic2) {
  scenario::LabeledBox lb;
  lb.box.x_min = x0;
  lb.box.y_min = y0;
  lb.box.x_max = x1;
  lb.box.y_max = y1;
  lb.model = m;
  return lb;
}

ManifestEntry entry(std::string id, std::vector<scenario::LabeledBox> boxes, int w = 640,
                    int h = 640) {
  ManifestEntry e;
  e.id = std::move(id);
  e.file_name = e.id + ".ppm";
  e.width = w;
  e.height = h;
  e.boxes = std::move(boxes);
  return e;
}

DatasetManifest random_manifest(Rng& rng, std::size_t n) {
  DatasetManifest m;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<scenario::LabeledBox> boxes;
    const std::size_t n_boxes = rng.uniform_index(4);
    for (std::size_t b = 0; b < n_boxes; ++b) {
      const double x = rng.uniform(0, 500), y = rng.uniform(0, 500);
      boxes.push_back(lbox(x, y, x + rng.uniform(1, 60), y + rng.uniform(1, 60)));
    }
    m.entries.push_back(entry("e" + std::to_string(1000 + i), std::move(boxes)));
  }
  return m;
}

std::vector<std::string> ids_of(const DatasetManifest& m) {
  std::vector<std::string> out;
  for (const ManifestEntry& e : m.entries) out.push_back(e.id);
  return out;
}

}  // namespace

TEST_CASE("entry_from_frame copies geometry and labels") {
  scenario::AnnotatedFrame frame;
  frame.image_width = 320;
  frame.image_height = 240;
  frame.scene = scenario::SceneId::palace;
  frame.boxes.push_back(lbox(5, 6, 25, 30, scenario::ModelId::inspire1));
  const ManifestEntry e = entry_from_frame(frame, "palace_f00000_c0", "images/x.ppm");
  CHECK(e.id == "palace_f00000_c0");
  CHECK(e.file_name == "images/x.ppm");
  CHECK(e.width == 320);
  CHECK(e.height == 240);
  CHECK(e.scene == scenario::SceneId::palace);
  REQUIRE(e.boxes.size() == 1);
  CHECK(e.boxes[0].model == scenario::ModelId::inspire1);
}

TEST_CASE("normalized labels write the documented fixed-point line") {
  scenario::AnnotatedFrame frame;
  frame.image_width = 640;
  frame.image_height = 640;
  frame.boxes.push_back(lbox(288, 288, 352, 352));
  CHECK(write_labels_normalized(frame) == "0 0.500000 0.500000 0.100000 0.100000\n");
  frame.boxes.clear();
  CHECK(write_labels_normalized(frame) == "");
}

TEST_CASE("normalized labels round-trip within quantization error") {
  Rng rng = Rng::stream(50, "labels");
  for (int trial = 0; trial < 100; ++trial) {
    ManifestEntry e = entry("x", {});
    const std::size_t n = 1 + rng.uniform_index(5);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = rng.uniform(0, 600), y = rng.uniform(0, 600);
      e.boxes.push_back(lbox(x, y, x + rng.uniform(0.5, 39), y + rng.uniform(0.5, 39)));
    }
    const auto parsed = parse_labels_normalized(write_labels_normalized(e), e.width, e.height);
    REQUIRE(parsed.size() == e.boxes.size());
    // Six decimals in normalized units: at most 5e-7 * 640 per coordinate,
    // doubled by the center/size reconstruction.
    for (std::size_t i = 0; i < parsed.size(); ++i) {
      REQUIRE(std::abs(parsed[i].x_min - e.boxes[i].box.x_min) <= 1e-3);
      REQUIRE(std::abs(parsed[i].y_min - e.boxes[i].box.y_min) <= 1e-3);
      REQUIRE(std::abs(parsed[i].x_max - e.boxes[i].box.x_max) <= 1e-3);
      REQUIRE(std::abs(parsed[i].y_max - e.boxes[i].box.y_max) <= 1e-3);
    }
  }
}

TEST_CASE("malformed label lines are rejected") {
  CHECK_THROWS_AS(parse_labels_normalized("0 0.5 0.5 zero 0.1\n", 640, 640), ValidationError);
  CHECK(parse_labels_normalized("", 640, 640).empty());
  CHECK(parse_labels_normalized("\n\n", 640, 640).empty());
}

TEST_CASE("an empty manifest serializes to empty arrays and back") {
  DatasetManifest m;
  const std::string json = write_coco_manifest(m);
  CHECK(json.find("\"images\": []") != std::string::npos);
  CHECK(json.find("\"annotations\": []") != std::string::npos);
  CHECK(json.find("\"uav\"") != std::string::npos);
  const DatasetManifest back = read_coco_manifest(json);
  CHECK(back.entries.empty());
  CHECK(back.bin_edges == m.bin_edges);
}

TEST_CASE("a one-image manifest keeps ids and boxes linked") {
  DatasetManifest m;
  m.entries.push_back(entry("img_a", {lbox(10, 20, 30, 50, scenario::ModelId::phantom4)}));
  const DatasetManifest back = read_coco_manifest(write_coco_manifest(m));
  REQUIRE(back.entries.size() == 1);
  CHECK(back.entries[0].id == "img_a");
  REQUIRE(back.entries[0].boxes.size() == 1);
  CHECK(back.entries[0].boxes[0].box.x_min == 10.0);
  CHECK(back.entries[0].boxes[0].box.y_max == 50.0);
  CHECK(back.entries[0].boxes[0].model == scenario::ModelId::phantom4);
}

TEST_CASE("manifests round-trip losslessly for random content") {
  Rng rng = Rng::stream(51, "coco");
  DatasetManifest m = random_manifest(rng, 25);
  m.entries[3].split_tags = {"rd1", "rd2"};
  m.bin_edges = {50.0, 200.0, 800.0};
  const DatasetManifest back = read_coco_manifest(write_coco_manifest(m));
  REQUIRE(back.entries.size() == m.entries.size());
  CHECK(back.bin_edges == m.bin_edges);
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const ManifestEntry& a = m.entries[i];
    const ManifestEntry& b = back.entries[i];
    CHECK(a.id == b.id);
    CHECK(a.file_name == b.file_name);
    CHECK(a.width == b.width);
    CHECK(a.height == b.height);
    CHECK(a.scene == b.scene);
    CHECK(a.split_tags == b.split_tags);
    REQUIRE(a.boxes.size() == b.boxes.size());
    for (std::size_t k = 0; k < a.boxes.size(); ++k) {
      CHECK(a.boxes[k].box.x_min == b.boxes[k].box.x_min);
      CHECK(a.boxes[k].box.y_min == b.boxes[k].box.y_min);
      CHECK(a.boxes[k].box.x_max == b.boxes[k].box.x_max);
      CHECK(a.boxes[k].box.y_max == b.boxes[k].box.y_max);
      CHECK(a.boxes[k].model == b.boxes[k].model);
    }
  }
}

TEST_CASE("manifest reading rejects dangling annotations and duplicates") {
  CHECK_THROWS_AS(read_coco_manifest("{ nope"), ValidationError);
  const std::string dangling = R"({
    "images": [{"id": 0, "name": "a", "file_name": "a.ppm", "width": 10, "height": 10}],
    "annotations": [{"id": 0, "image_id": 7, "category_id": 1, "bbox": [0,0,2,2]}]
  })";
  CHECK_THROWS_AS(read_coco_manifest(dangling), ValidationError);
  DatasetManifest dup;
  dup.entries.push_back(entry("same", {}));
  dup.entries.push_back(entry("same", {}));
  CHECK_THROWS_AS(write_coco_manifest(dup), ValidationError);
  DatasetManifest bad_size;
  bad_size.entries.push_back(entry("z", {}, 0, 10));
  CHECK_THROWS_AS(bad_size.validate(), ValidationError);
  DatasetManifest bad_edges;
  bad_edges.bin_edges = {10.0, 10.0, 30.0};
  CHECK_THROWS_AS(bad_edges.validate(), ValidationError);
}

TEST_CASE("a single-part partition is the id-sorted input") {
  Rng rng = Rng::stream(52, "part1");
  const DatasetManifest m = random_manifest(rng, 17);
  const auto subsets = partition_nested(m, 1, 99);
  REQUIRE(subsets.size() == 1);
  std::vector<std::string> got = ids_of(subsets[0]);
  std::vector<std::string> want = ids_of(m);
  std::sort(want.begin(), want.end());
  CHECK(got == want);
}

TEST_CASE("nested partitions are prefix-extending, disjoint, and exhaustive") {
  Rng rng = Rng::stream(53, "part");
  const DatasetManifest m = random_manifest(rng, 137);
  const int parts = 4;
  const auto subsets = partition_nested(m, parts, 1234);
  REQUIRE(subsets.size() == parts);

  // 137 = 4*34 + 1: the first chunk takes the remainder.
  CHECK(subsets[0].entries.size() == 35);
  CHECK(subsets[1].entries.size() == 69);
  CHECK(subsets[2].entries.size() == 103);
  CHECK(subsets[3].entries.size() == 137);

  for (int k = 1; k < parts; ++k) {
    const auto prev = ids_of(subsets[k - 1]);
    const auto cur = ids_of(subsets[k]);
    REQUIRE(std::equal(prev.begin(), prev.end(), cur.begin()));  // prefix property
    // The increment is sorted and disjoint from the prefix.
    std::vector<std::string> inc(cur.begin() + prev.size(), cur.end());
    CHECK(std::is_sorted(inc.begin(), inc.end()));
    std::set<std::string> prev_set(prev.begin(), prev.end());
    for (const std::string& id : inc) CHECK(prev_set.count(id) == 0);
  }

  std::vector<std::string> last = ids_of(subsets[parts - 1]);
  std::vector<std::string> all = ids_of(m);
  std::sort(last.begin(), last.end());
  std::sort(all.begin(), all.end());
  CHECK(last == all);

  // Deterministic in the seed.
  const auto again = partition_nested(m, parts, 1234);
  for (int k = 0; k < parts; ++k) CHECK(ids_of(again[k]) == ids_of(subsets[k]));
  const auto other = partition_nested(m, parts, 4321);
  CHECK(ids_of(other[0]) != ids_of(subsets[0]));
}

TEST_CASE("partition argument errors") {
  Rng rng = Rng::stream(54, "part_err");
  const DatasetManifest m = random_manifest(rng, 3);
  CHECK_THROWS_AS(partition_nested(m, 0, 1), ValidationError);
  CHECK_THROWS_AS(partition_nested(m, 4, 1), ValidationError);
  CHECK_NOTHROW(partition_nested(m, 3, 1));
}

TEST_CASE("split file lines are the subset ids in order") {
  Rng rng = Rng::stream(55, "split");
  const DatasetManifest m = random_manifest(rng, 9);
  const auto subsets = partition_nested(m, 3, 5);
  for (const auto& s : subsets) {
    CHECK(split_file_lines(s) == ids_of(s));
  }
}

TEST_CASE("the size histogram of an empty manifest is all zeros") {
  DatasetManifest m;
  const auto bins = size_histogram(m);
  REQUIRE(bins.size() == 4);
  CHECK(bins[0].label == "0~8^2");
  CHECK(bins[1].label == "8^2~16^2");
  CHECK(bins[2].label == "16^2~32^2");
  CHECK(bins[3].label == ">=32^2");
  for (const SizeBin& b : bins) CHECK(b.count == 0);
}

TEST_CASE("a ten-by-ten box lands in the second bin") {
  DatasetManifest m;
  m.entries.push_back(entry("a", {lbox(0, 0, 10, 10)}));
  const auto bins = size_histogram(m);
  CHECK(bins[0].count == 0);
  CHECK(bins[1].count == 1);
  const auto per_box = size_histogram(m, BinCounting::per_box);
  CHECK(per_box[1].count == 1);
}

TEST_CASE("image counting uses the largest box and boxless images sit in bin zero") {
  DatasetManifest m;
  m.entries.push_back(entry("a", {lbox(0, 0, 7, 7), lbox(0, 0, 20, 20)}));  // 49 and 400
  m.entries.push_back(entry("b", {}));
  const auto image_bins = size_histogram(m);
  CHECK(image_bins[0].count == 1);  // the boxless image
  CHECK(image_bins[2].count == 1);  // area 400 dominates the first image
  const auto box_bins = size_histogram(m, BinCounting::per_box);
  CHECK(box_bins[0].count == 1);
  CHECK(box_bins[2].count == 1);
  std::size_t total = 0;
  for (const SizeBin& b : box_bins) total += b.count;
  CHECK(total == 2);  // boxless images contribute nothing per box
}

TEST_CASE("histogram counts match an independent recount over scenario frames") {
  scenario::ScenarioConfig cfg;
  cfg.scene = scenario::SceneId::seaside_temple;
  cfg.models = {scenario::ModelId::parrot_ar2, scenario::ModelId::inspire1};
  cfg.target_count = 3;
  cfg.distance_min = 6.0;
  cfg.distance_max = 90.0;
  cfg.frame_count = 1000;
  cfg.vibration.amplitude = 0.02;
  cfg.vibration.persistence = 0.8;
  cfg.seed = 2024;
  const auto frames = scenario::run_scenario(cfg);

  DatasetManifest m;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    m.entries.push_back(entry_from_frame(frames[i], "f" + std::to_string(i), ""));
  }
  const auto image_bins = size_histogram(m, BinCounting::per_image_largest);
  const auto box_bins = size_histogram(m, BinCounting::per_box);

  auto bin_of = [](double area) {
    if (area <= 64.0) return 0;
    if (area <= 256.0) return 1;
    if (area <= 1024.0) return 2;
    return 3;
  };
  std::size_t image_expect[4] = {0, 0, 0, 0};
  std::size_t box_expect[4] = {0, 0, 0, 0};
  for (const auto& frame : frames) {
    double largest = 0.0;
    for (const auto& lb : frame.boxes) {
      box_expect[bin_of(lb.box.area())] += 1;
      largest = std::max(largest, lb.box.area());
    }
    image_expect[bin_of(largest)] += 1;
  }
  std::size_t box_total = 0;
  for (int k = 0; k < 4; ++k) {
    CHECK(image_bins[k].count == image_expect[k]);
    CHECK(box_bins[k].count == box_expect[k]);
    box_total += box_expect[k];
  }
  CHECK(box_total > 0);  // the scenario ranges must produce actual boxes
}

TEST_CASE("filtering keeps exactly the images whose boxes are all small") {
  DatasetManifest m;
  m.entries.push_back(entry("keep_small", {lbox(0, 0, 30, 30)}));          // 900
  m.entries.push_back(entry("keep_edge", {lbox(0, 0, 32, 32)}));           // 1024 inclusive
  m.entries.push_back(entry("drop_big", {lbox(0, 0, 40, 40)}));            // 1600
  m.entries.push_back(entry("drop_mixed", {lbox(0, 0, 5, 5), lbox(0, 0, 40, 40)}));
  m.entries.push_back(entry("keep_boxless", {}));
  const DatasetManifest f = filter_small_test(m);
  CHECK(ids_of(f) == std::vector<std::string>{"keep_small", "keep_edge", "keep_boxless"});
  // Idempotent: filtering a filtered set changes nothing.
  CHECK(ids_of(filter_small_test(f)) == ids_of(f));
}

TEST_CASE("filtering respects custom bin edges") {
  DatasetManifest m;
  m.bin_edges = {10.0, 20.0, 100.0};
  m.entries.push_back(entry("small", {lbox(0, 0, 10, 10)}));  // 100 <= 100
  m.entries.push_back(entry("big", {lbox(0, 0, 11, 11)}));    // 121 > 100
  const DatasetManifest f = filter_small_test(m);
  CHECK(ids_of(f) == std::vector<std::string>{"small"});
  CHECK(f.bin_edges == m.bin_edges);
}

TEST_CASE("the ground-truth view maps ids to bare boxes") {
  DatasetManifest m;
  m.entries.push_back(entry("a", {lbox(1, 2, 3, 4), lbox(5, 6, 7, 8)}));
  m.entries.push_back(entry("b", {}));
  const auto gts = ground_truth_map(m);
  REQUIRE(gts.count("a") == 1);
  REQUIRE(gts.count("b") == 1);
  CHECK(gts.at("a").size() == 2);
  CHECK(gts.at("b").empty());
  CHECK(gts.at("a")[1].x_min == 5.0);
}
