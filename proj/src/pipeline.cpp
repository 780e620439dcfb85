#include "uavkit/pipeline.hpp"

#include <cstdio>

#include "uavkit/errors.hpp"

namespace uavkit::pipeline {

fusionnet::FeatureMap feature_map_from_image(const image::Image& img) {
  if (img.channels < 3) throw ValidationError("feature map conversion needs an RGB image");
  fusionnet::FeatureMap map = fusionnet::FeatureMap::zeros(3, img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        map.at(c, y, x) = img.at(x, y)[c] / 255.0;
      }
    }
  }
  return map;
}

std::vector<fusionnet::TrainSample> samples_from_scenario(const scenario::ScenarioConfig& cfg) {
  scenario::validate(cfg);
  for (const scenario::CameraMount& mount : cfg.rig) {
    if (mount.image_width % 32 != 0 || mount.image_height % 32 != 0) {
      throw ValidationError("training cameras need dims that are multiples of 32");
    }
  }
  const std::vector<scenario::AnnotatedFrame> frames = scenario::run_scenario(cfg);
  std::vector<fusionnet::TrainSample> samples;
  samples.reserve(frames.size());
  // One asset set per camera size keeps composites consistent across frames.
  std::map<std::pair<int, int>, scenario::SceneAssets> assets;
  for (const scenario::AnnotatedFrame& frame : frames) {
    const auto key = std::make_pair(frame.image_width, frame.image_height);
    auto it = assets.find(key);
    if (it == assets.end()) {
      it = assets
               .emplace(key, scenario::builtin_assets(cfg.scene, cfg.models, frame.image_width,
                                                      frame.image_height))
               .first;
    }
    fusionnet::TrainSample s;
    char id[64];
    std::snprintf(id, sizeof(id), "f%05d_c%d", frame.frame_index, frame.camera_index);
    s.id = id;
    s.image = feature_map_from_image(scenario::composite_image(frame, it->second));
    for (const scenario::LabeledBox& lb : frame.boxes) s.gt_boxes.push_back(lb.box);
    s.targets = fusionnet::targets_from_boxes(s.gt_boxes, frame.image_width, frame.image_height);
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace uavkit::pipeline
