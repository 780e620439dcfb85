#pragma once

#include <vector>

#include "uavkit/fusionnet.hpp"
#include "uavkit/scenario.hpp"

namespace uavkit::pipeline {

// Renders every frame of the scenario with the built-in assets and pairs it
// with surrogate training targets. Camera dims must be positive multiples of
// 32 so the feature grids line up.
std::vector<fusionnet::TrainSample> samples_from_scenario(const scenario::ScenarioConfig& cfg);

// Planar RGB conversion, values scaled to [0,1].
fusionnet::FeatureMap feature_map_from_image(const image::Image& img);

}  // namespace uavkit::pipeline
