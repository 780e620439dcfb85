#include "uavkit/scenario.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace uavkit::scenario {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

struct SceneInfo {
  SceneId id;
  const char* name;
  std::array<std::uint8_t, 3> sky;
  std::array<std::uint8_t, 3> ground;
};

const SceneInfo kScenes[] = {
    {SceneId::pool, "pool", {90, 170, 220}, {40, 110, 170}},
    {SceneId::street, "street", {150, 160, 175}, {70, 70, 80}},
    {SceneId::trees, "trees", {120, 170, 140}, {25, 70, 35}},
    {SceneId::grass, "grass", {170, 210, 150}, {90, 140, 60}},
    {SceneId::mountain_lake, "mountain_lake", {140, 180, 220}, {80, 90, 70}},
    {SceneId::palace, "palace", {210, 190, 160}, {140, 90, 70}},
    {SceneId::seaside_temple, "seaside_temple", {130, 200, 215}, {190, 170, 120}},
    {SceneId::winter_town, "winter_town", {220, 228, 240}, {170, 185, 205}},
};

struct ModelInfo {
  ModelId id;
  const char* name;
  TargetExtent extent;
  std::array<std::uint8_t, 3> color;
};

const ModelInfo kModels[] = {
    {ModelId::parrot_ar2, "parrot_ar2", {0.26, 0.26, 0.065}, {62, 60, 58}},
    {ModelId::inspire1, "inspire1", {0.29, 0.255, 0.15}, {198, 200, 205}},
    {ModelId::mavic2, "mavic2", {0.16, 0.12, 0.042}, {44, 48, 56}},
    {ModelId::phantom4, "phantom4", {0.175, 0.175, 0.098}, {235, 235, 240}},
};

const SceneInfo& scene_info(SceneId s) {
  for (const auto& info : kScenes)
    if (info.id == s) return info;
  throw ValidationError("unknown scene id");
}

const ModelInfo& model_info(ModelId m) {
  for (const auto& info : kModels)
    if (info.id == m) return info;
  throw ValidationError("unknown model id");
}

}  // namespace

const std::vector<SceneId>& all_scenes() {
  static const std::vector<SceneId> v = [] {
    std::vector<SceneId> out;
    for (const auto& info : kScenes) out.push_back(info.id);
    return out;
  }();
  return v;
}

const std::vector<ModelId>& all_models() {
  static const std::vector<ModelId> v = [] {
    std::vector<ModelId> out;
    for (const auto& info : kModels) out.push_back(info.id);
    return out;
  }();
  return v;
}

std::string to_string(SceneId s) { return scene_info(s).name; }
std::string to_string(ModelId m) { return model_info(m).name; }

SceneId scene_from_string(const std::string& name) {
  for (const auto& info : kScenes)
    if (name == info.name) return info.id;
  throw ValidationError("unknown scene: " + name);
}

ModelId model_from_string(const std::string& name) {
  for (const auto& info : kModels)
    if (name == info.name) return info.id;
  throw ValidationError("unknown model: " + name);
}

TargetExtent extent_for(ModelId m) { return model_info(m).extent; }

CameraModel CameraMount::camera() const {
  CameraModel cam;
  cam.focal_length = geometry::focal_from_fov(fov_radians, image_width);
  cam.image_width = image_width;
  cam.image_height = image_height;
  cam.center_x = center_x;
  cam.center_y = center_y;
  return cam;
}

void validate(const ScenarioConfig& cfg) {
  std::vector<std::string> problems;
  if (cfg.target_count < 1) problems.push_back("target_count must be >= 1");
  if (!(cfg.distance_min > 0.0)) problems.push_back("distance_range minimum must be > 0");
  if (!(cfg.distance_max >= cfg.distance_min))
    problems.push_back("distance_range maximum must be >= minimum");
  if (cfg.frame_count < 1) problems.push_back("frame_count must be >= 1");
  if (!(cfg.frame_dt > 0.0)) problems.push_back("frame_dt must be > 0");
  if (cfg.models.empty()) problems.push_back("at least one model is required");
  if (cfg.rig.empty()) problems.push_back("rig must have at least one camera");
  if (!(cfg.vibration.amplitude >= 0.0)) problems.push_back("vibration amplitude must be >= 0");
  if (!(cfg.vibration.persistence >= 0.0 && cfg.vibration.persistence < 1.0))
    problems.push_back("vibration persistence must lie in [0,1)");
  for (std::size_t i = 0; i < cfg.rig.size(); ++i) {
    const CameraMount& m = cfg.rig[i];
    const std::string tag = "rig[" + std::to_string(i) + "]: ";
    if (m.image_width <= 0 || m.image_height <= 0) problems.push_back(tag + "image dimensions must be > 0");
    if (!(m.fov_radians > 0.0 && m.fov_radians < kPi)) problems.push_back(tag + "fov must lie in (0, pi)");
    if (m.center_x < 0.0 || m.center_x > m.image_width || m.center_y < 0.0 ||
        m.center_y > m.image_height)
      problems.push_back(tag + "principal point must lie inside the image");
    if (!m.pose_in_body.rotation_is_valid(1e-6)) problems.push_back(tag + "mount rotation is not a rotation matrix");
  }
  if (!problems.empty()) {
    std::string joined = "invalid scenario config: ";
    for (std::size_t i = 0; i < problems.size(); ++i) {
      if (i) joined += "; ";
      joined += problems[i];
    }
    throw ValidationError(joined);
  }
}

BodyState step_trajectory(const BodyState& s, double dt, const Eigen::Vector3d& waypoint) {
  if (!(dt > 0.0)) throw ValidationError("dt must be > 0");
  const double speed = s.velocity.norm();
  const Eigen::Vector3d delta = waypoint - s.position;
  const double dist = delta.norm();
  BodyState out = s;
  if (speed <= 0.0 || dist == 0.0) return out;
  const Eigen::Vector3d dir = delta / dist;
  out.velocity = speed * dir;
  if (dist <= speed * dt) {
    out.position = waypoint;
  } else {
    out.position = s.position + out.velocity * dt;
  }
  return out;
}

Eigen::Matrix3d apply_vibration(const Eigen::Matrix3d& attitude, const VibrationParams& params,
                                VibrationState& state, Rng& rng) {
  if (params.amplitude == 0.0 && state.jitter.isZero(0.0)) return attitude;
  const double drive = params.amplitude * std::sqrt(1.0 - params.persistence * params.persistence);
  for (int i = 0; i < 3; ++i) {
    state.jitter[i] = params.persistence * state.jitter[i] + drive * rng.normal();
  }
  const Eigen::Matrix3d wobble =
      geometry::rotation_from_euler(state.jitter[0], state.jitter[1], state.jitter[2]);
  return geometry::orthonormalize(attitude * wobble);
}

std::vector<AnnotatedFrame> capture_frame(const BodyState& observer,
                                          const std::vector<TargetInstance>& targets,
                                          const std::vector<CameraMount>& rig) {
  RigidTransform body_to_world;
  body_to_world.rotation = observer.attitude;
  body_to_world.translation = observer.position;
  const RigidTransform world_to_body = body_to_world.inverse();

  std::vector<AnnotatedFrame> frames;
  frames.reserve(rig.size());
  for (std::size_t ci = 0; ci < rig.size(); ++ci) {
    const CameraMount& mount = rig[ci];
    CameraModel cam = mount.camera();
    cam.extrinsics = mount.pose_in_body.inverse().compose(world_to_body);

    AnnotatedFrame frame;
    frame.camera_index = static_cast<int>(ci);
    frame.image_width = mount.image_width;
    frame.image_height = mount.image_height;
    for (const TargetInstance& t : targets) {
      RigidTransform pose;
      pose.rotation = t.state.attitude;
      pose.translation = t.state.position;
      if (auto box = geometry::project_bbox(pose, t.extent, cam)) {
        frame.boxes.push_back(LabeledBox{*box, t.model});
      }
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

namespace {

// Samples a point in the shell [distance_min, distance_max] inside the
// forward cone of camera 0, expressed in world coordinates. Log-uniform
// distance spreads target sizes across the logarithmic area bins.
Eigen::Vector3d sample_placement(Rng& rng, const ScenarioConfig& cfg,
                                 const RigidTransform& cam0_to_world) {
  const double d = rng.log_uniform(cfg.distance_min, cfg.distance_max);
  const double cone = 0.35 * cfg.rig[0].fov_radians;
  const double theta = rng.uniform(0.0, cone);
  const double phi = rng.uniform(0.0, 2.0 * kPi);
  const Eigen::Vector3d in_cam(d * std::sin(theta) * std::cos(phi),
                               d * std::sin(theta) * std::sin(phi), d * std::cos(theta));
  return cam0_to_world.rotation * in_cam + cam0_to_world.translation;
}

}  // namespace

std::vector<AnnotatedFrame> run_scenario(const ScenarioConfig& cfg) {
  validate(cfg);

  Rng distance_rng = Rng::stream(cfg.seed, "distances");
  Rng trajectory_rng = Rng::stream(cfg.seed, "trajectory");
  Rng vibration_rng = Rng::stream(cfg.seed, "vibration");

  BodyState observer;  // hovers at the origin; vibration wobbles the attitude

  RigidTransform body_to_world;  // identity at t=0
  const RigidTransform cam0_to_world = body_to_world.compose(cfg.rig[0].pose_in_body);

  std::vector<TargetInstance> targets;
  std::vector<Eigen::Vector3d> waypoints;
  targets.reserve(cfg.target_count);
  for (int i = 0; i < cfg.target_count; ++i) {
    TargetInstance t;
    t.model = cfg.models[i % cfg.models.size()];
    t.extent = extent_for(t.model);
    t.state.position = sample_placement(distance_rng, cfg, cam0_to_world);
    const double yaw = distance_rng.uniform(0.0, 2.0 * kPi);
    t.state.attitude = geometry::rotation_from_euler(0.0, 0.0, yaw);
    const Eigen::Vector3d waypoint = sample_placement(distance_rng, cfg, cam0_to_world);
    const double speed = trajectory_rng.uniform(0.5, 2.5);
    const Eigen::Vector3d delta = waypoint - t.state.position;
    t.state.velocity = delta.norm() > 0.0 ? Eigen::Vector3d(speed * delta / delta.norm())
                                          : Eigen::Vector3d(speed, 0.0, 0.0);
    targets.push_back(std::move(t));
    waypoints.push_back(waypoint);
  }

  VibrationState vibration_state;
  std::vector<AnnotatedFrame> frames;
  frames.reserve(static_cast<std::size_t>(cfg.frame_count) * cfg.rig.size());
  for (int f = 0; f < cfg.frame_count; ++f) {
    if (f > 0) {
      for (std::size_t i = 0; i < targets.size(); ++i) {
        if ((waypoints[i] - targets[i].state.position).norm() < 1e-9) {
          waypoints[i] = sample_placement(distance_rng, cfg, cam0_to_world);
        }
        targets[i].state = step_trajectory(targets[i].state, cfg.frame_dt, waypoints[i]);
      }
    }
    BodyState wobbled = observer;
    wobbled.attitude =
        apply_vibration(observer.attitude, cfg.vibration, vibration_state, vibration_rng);
    for (AnnotatedFrame& frame : capture_frame(wobbled, targets, cfg.rig)) {
      frame.frame_index = f;
      frame.scene = cfg.scene;
      frame.seed = cfg.seed;
      frames.push_back(std::move(frame));
    }
  }
  return frames;
}

// ---- config file ----

namespace {

RigidTransform mount_from_json(const nlohmann::json& j) {
  RigidTransform pose;
  const double roll = j.value("roll_deg", 0.0) * kPi / 180.0;
  const double pitch = j.value("pitch_deg", 0.0) * kPi / 180.0;
  const double yaw = j.value("yaw_deg", 0.0) * kPi / 180.0;
  pose.rotation = geometry::rotation_from_euler(roll, pitch, yaw);
  if (j.contains("offset")) {
    const auto& o = j.at("offset");
    pose.translation = Eigen::Vector3d(o.at(0).get<double>(), o.at(1).get<double>(),
                                       o.at(2).get<double>());
  }
  return pose;
}

}  // namespace

ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config is not valid JSON (" + path + "): " + e.what());
  }
  try {
    const int version = j.value("schema_version", 0);
    if (version != 1) {
      throw ValidationError("unsupported schema_version " + std::to_string(version) +
                            " (expected 1)");
    }
    ScenarioConfig cfg;
    cfg.scene = scene_from_string(j.at("scene").get<std::string>());
    cfg.models.clear();
    for (const auto& m : j.at("models")) cfg.models.push_back(model_from_string(m.get<std::string>()));
    cfg.target_count = j.value("target_count", 1);
    const auto& range = j.at("distance_range");
    cfg.distance_min = range.at(0).get<double>();
    cfg.distance_max = range.at(1).get<double>();
    cfg.frame_count = j.value("frame_count", 1);
    cfg.frame_dt = j.value("frame_dt", 0.1);
    cfg.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("vibration")) {
      cfg.vibration.amplitude = j.at("vibration").value("amplitude", 0.0);
      cfg.vibration.persistence = j.at("vibration").value("persistence", 0.0);
    }
    if (j.contains("rig")) {
      cfg.rig.clear();
      for (const auto& rj : j.at("rig")) {
        CameraMount m;
        m.image_width = rj.value("image_width", 640);
        m.image_height = rj.value("image_height", 640);
        m.fov_radians = rj.value("fov_degrees", 90.0) * kPi / 180.0;
        m.center_x = rj.value("center_x", m.image_width / 2.0);
        m.center_y = rj.value("center_y", m.image_height / 2.0);
        if (rj.contains("mount")) m.pose_in_body = mount_from_json(rj.at("mount"));
        cfg.rig.push_back(std::move(m));
      }
    }
    validate(cfg);
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("bad config field in " + path + ": " + e.what());
  }
}

std::string config_to_json(const ScenarioConfig& cfg) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["scene"] = to_string(cfg.scene);
  nlohmann::json models = nlohmann::json::array();
  for (ModelId m : cfg.models) models.push_back(to_string(m));
  j["models"] = models;
  j["target_count"] = cfg.target_count;
  j["distance_range"] = {cfg.distance_min, cfg.distance_max};
  j["frame_count"] = cfg.frame_count;
  j["frame_dt"] = cfg.frame_dt;
  j["seed"] = cfg.seed;
  j["vibration"] = {{"amplitude", cfg.vibration.amplitude},
                    {"persistence", cfg.vibration.persistence}};
  nlohmann::json rig = nlohmann::json::array();
  for (const CameraMount& m : cfg.rig) {
    nlohmann::json rj;
    rj["image_width"] = m.image_width;
    rj["image_height"] = m.image_height;
    rj["fov_degrees"] = m.fov_radians * 180.0 / kPi;
    rj["center_x"] = m.center_x;
    rj["center_y"] = m.center_y;
    rig.push_back(rj);
  }
  j["rig"] = rig;
  return j.dump(2);
}

// ---- assets & compositing ----

namespace {

std::uint8_t clamp_u8(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

// Deterministic per-pixel speckle in [-12, 12].
int speckle(std::uint64_t scene_tag, int x, int y) {
  const std::uint64_t h = Rng::splitmix64(scene_tag * 0x100000001b3ull +
                                          (static_cast<std::uint64_t>(y) << 20) +
                                          static_cast<std::uint64_t>(x));
  return static_cast<int>(h % 25) - 12;
}

image::Image make_backdrop(const SceneInfo& info, int w, int h) {
  image::Image img = image::Image::rgb(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t* px = img.at(x, y);
      const int noise = speckle(static_cast<std::uint64_t>(info.id), x, y);
      for (int c = 0; c < 3; ++c) {
        const double t = h > 1 ? static_cast<double>(y) / (h - 1) : 0.0;
        const double base = info.sky[c] + t * (info.ground[c] - info.sky[c]);
        px[c] = clamp_u8(static_cast<int>(base) + noise);
      }
    }
  }
  return img;
}

// Quad-rotor silhouette: central body ellipse, four arms, four rotor disks.
image::Image make_sprite(const ModelInfo& info) {
  const int n = 48;
  image::Image img = image::Image::rgba(n, n);
  const double cx = n / 2.0, cy = n / 2.0;
  auto put = [&](int x, int y, int alpha) {
    if (x < 0 || y < 0 || x >= n || y >= n) return;
    std::uint8_t* px = img.at(x, y);
    px[0] = info.color[0];
    px[1] = info.color[1];
    px[2] = info.color[2];
    px[3] = clamp_u8(std::max<int>(px[3], alpha));
  };
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      // body
      if ((dx * dx) / (10.0 * 10.0) + (dy * dy) / (6.0 * 6.0) <= 1.0) put(x, y, 255);
      // arms along the diagonals
      if (std::abs(std::abs(dx) - std::abs(dy)) < 1.6 && std::abs(dx) <= 16.0) put(x, y, 255);
      // rotors
      for (double sx : {-1.0, 1.0}) {
        for (double sy : {-1.0, 1.0}) {
          const double rx = dx - sx * 15.0, ry = dy - sy * 15.0;
          if (rx * rx + ry * ry <= 7.0 * 7.0) put(x, y, 235);
        }
      }
    }
  }
  return img;
}

}  // namespace

SceneAssets builtin_assets(SceneId scene, const std::vector<ModelId>& models, int backdrop_width,
                           int backdrop_height) {
  SceneAssets assets;
  assets.backdrop = make_backdrop(scene_info(scene), backdrop_width, backdrop_height);
  for (ModelId m : models) assets.sprites.emplace(m, make_sprite(model_info(m)));
  return assets;
}

SceneAssets load_assets(const std::string& dir, SceneId scene, const std::vector<ModelId>& models) {
  SceneAssets assets;
  const std::string backdrop_path = dir + "/backdrops/" + to_string(scene) + ".ppm";
  try {
    assets.backdrop = image::read_image(backdrop_path);
  } catch (const IoError&) {
    throw AssetNotFoundError("missing backdrop asset: " + backdrop_path);
  }
  for (ModelId m : models) {
    const std::string sprite_path = dir + "/sprites/" + to_string(m) + ".pam";
    try {
      assets.sprites.emplace(m, image::read_image(sprite_path));
    } catch (const IoError&) {
      throw AssetNotFoundError("missing sprite asset: " + sprite_path);
    }
  }
  return assets;
}

image::Image composite_image(const AnnotatedFrame& frame, const SceneAssets& assets) {
  image::Image out = image::resize_nearest(assets.backdrop, frame.image_width, frame.image_height);
  for (const LabeledBox& lb : frame.boxes) {
    const auto it = assets.sprites.find(lb.model);
    if (it == assets.sprites.end()) {
      throw AssetNotFoundError("no sprite loaded for model " + to_string(lb.model));
    }
    const image::Image& sprite = it->second;
    const PixelBox& b = lb.box;
    const int x0 = std::max(0, static_cast<int>(std::floor(b.x_min)));
    const int y0 = std::max(0, static_cast<int>(std::floor(b.y_min)));
    const int x1 = std::min(frame.image_width, static_cast<int>(std::ceil(b.x_max)));
    const int y1 = std::min(frame.image_height, static_cast<int>(std::ceil(b.y_max)));
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        const double u = (x + 0.5 - b.x_min) / b.width();
        const double v = (y + 0.5 - b.y_min) / b.height();
        const int sx = std::clamp(static_cast<int>(u * sprite.width), 0, sprite.width - 1);
        const int sy = std::clamp(static_cast<int>(v * sprite.height), 0, sprite.height - 1);
        const std::uint8_t* s = sprite.at(sx, sy);
        const int a = s[3];
        if (a == 0) continue;
        std::uint8_t* d = out.at(x, y);
        for (int c = 0; c < 3; ++c) {
          d[c] = static_cast<std::uint8_t>((a * s[c] + (255 - a) * d[c] + 127) / 255);
        }
      }
    }
  }
  return out;
}

}  // namespace uavkit::scenario
