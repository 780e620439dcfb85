#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "uavkit/geometry.hpp"
#include "uavkit/image.hpp"
#include "uavkit/rng.hpp"

namespace uavkit::scenario {

using geometry::CameraModel;
using geometry::PixelBox;
using geometry::RigidTransform;
using geometry::TargetExtent;

enum class SceneId {
  pool,
  street,
  trees,
  grass,
  mountain_lake,
  palace,
  seaside_temple,
  winter_town,
};

enum class ModelId {
  parrot_ar2,
  inspire1,
  mavic2,
  phantom4,
};

const std::vector<SceneId>& all_scenes();
const std::vector<ModelId>& all_models();
std::string to_string(SceneId s);
std::string to_string(ModelId m);
SceneId scene_from_string(const std::string& name);
ModelId model_from_string(const std::string& name);

// Bounding cuboid half-sizes of each vehicle, meters.
TargetExtent extent_for(ModelId m);

// First-order autoregressive attitude jitter.
struct VibrationParams {
  double amplitude = 0.0;    // radians, stationary std of each jitter angle
  double persistence = 0.0;  // in [0,1)
};

struct VibrationState {
  Eigen::Vector3d jitter = Eigen::Vector3d::Zero();  // roll, pitch, yaw
};

struct BodyState {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();  // meters, world frame
  Eigen::Matrix3d attitude = Eigen::Matrix3d::Identity();
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();  // m/s
};

// One camera of the observer's rig. `pose_in_body` places the camera in the
// body frame (camera->body); identity means camera at the body origin with
// the optical axis along body +z.
struct CameraMount {
  int image_width = 640;
  int image_height = 640;
  double fov_radians = 1.5707963267948966;  // horizontal
  double center_x = 320.0;
  double center_y = 320.0;
  RigidTransform pose_in_body;

  // Intrinsics only; extrinsics are composed per frame.
  CameraModel camera() const;
};

struct LabeledBox {
  PixelBox box;
  ModelId model = ModelId::mavic2;
};

struct AnnotatedFrame {
  int frame_index = 0;
  int camera_index = 0;
  int image_width = 0;
  int image_height = 0;
  std::vector<LabeledBox> boxes;
  SceneId scene = SceneId::pool;
  std::uint64_t seed = 0;
};

struct ScenarioConfig {
  SceneId scene = SceneId::pool;
  std::vector<ModelId> models{ModelId::mavic2};
  int target_count = 1;
  double distance_min = 12.0;  // meters
  double distance_max = 120.0;
  int frame_count = 1;
  double frame_dt = 0.1;  // seconds per simulation step
  std::vector<CameraMount> rig{CameraMount{}};
  VibrationParams vibration;
  std::uint64_t seed = 0;
};

// Throws ValidationError listing every violation at once.
void validate(const ScenarioConfig& cfg);

// JSON config file with a schema_version field; see docs/config_schema.md.
ScenarioConfig load_config(const std::string& path);
std::string config_to_json(const ScenarioConfig& cfg);

// Constant-speed pursuit of the waypoint; arrival within one step snaps.
BodyState step_trajectory(const BodyState& s, double dt, const Eigen::Vector3d& waypoint);

// jitter_t = persistence * jitter_{t-1} + amplitude * sqrt(1-persistence^2) * N(0,1),
// applied as a body-frame rotation and re-orthonormalized.
Eigen::Matrix3d apply_vibration(const Eigen::Matrix3d& attitude, const VibrationParams& params,
                                VibrationState& state, Rng& rng);

struct TargetInstance {
  BodyState state;
  TargetExtent extent;
  ModelId model = ModelId::mavic2;
};

// One frame per rig camera; invisible targets are simply omitted. The caller
// stamps frame_index, scene, and seed.
std::vector<AnnotatedFrame> capture_frame(const BodyState& observer,
                                          const std::vector<TargetInstance>& targets,
                                          const std::vector<CameraMount>& rig);

// Deterministic in (cfg, cfg.seed); emits frame_count * rig-size frames.
std::vector<AnnotatedFrame> run_scenario(const ScenarioConfig& cfg);

struct SceneAssets {
  image::Image backdrop;                   // RGB
  std::map<ModelId, image::Image> sprites;  // RGBA
};

// Procedural stand-ins: gradient-plus-noise backdrop, silhouette sprites.
SceneAssets builtin_assets(SceneId scene, const std::vector<ModelId>& models, int backdrop_width,
                           int backdrop_height);

// Loads backdrops/<scene>.ppm and sprites/<model>.pam from `dir`.
// Throws AssetNotFoundError when a required file is missing.
SceneAssets load_assets(const std::string& dir, SceneId scene, const std::vector<ModelId>& models);

// Sprites are scaled to each box and alpha-composited over the backdrop.
image::Image composite_image(const AnnotatedFrame& frame, const SceneAssets& assets);

}  // namespace uavkit::scenario
