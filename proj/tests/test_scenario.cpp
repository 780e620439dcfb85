#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "temp_dir.hpp"
#include "uavkit/errors.hpp"
#include "uavkit/scenario.hpp"

using namespace uavkit;
using namespace uavkit::scenario;

namespace {

BodyState body_at(double x, double y, double z, double vx = 0, double vy = 0, double vz = 0) {
  BodyState s;
  s.position = Eigen::Vector3d(x, y, z);
  s.velocity = Eigen::Vector3d(vx, vy, vz);
  return s;
}

bool frames_equal(const AnnotatedFrame& a, const AnnotatedFrame& b) {
  if (a.frame_index != b.frame_index || a.camera_index != b.camera_index ||
      a.image_width != b.image_width || a.image_height != b.image_height ||
      a.scene != b.scene || a.seed != b.seed || a.boxes.size() != b.boxes.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.boxes.size(); ++i) {
    if (a.boxes[i].model != b.boxes[i].model) return false;
    if (std::memcmp(&a.boxes[i].box.x_min, &b.boxes[i].box.x_min, sizeof(double)) != 0) return false;
    if (a.boxes[i].box.y_min != b.boxes[i].box.y_min) return false;
    if (a.boxes[i].box.x_max != b.boxes[i].box.x_max) return false;
    if (a.boxes[i].box.y_max != b.boxes[i].box.y_max) return false;
  }
  return true;
}

ScenarioConfig tiny_config() {
  ScenarioConfig cfg;
  cfg.scene = SceneId::grass;
  cfg.models = {ModelId::mavic2, ModelId::phantom4};
  cfg.target_count = 3;
  cfg.distance_min = 8.0;
  cfg.distance_max = 40.0;
  cfg.frame_count = 4;
  cfg.vibration.amplitude = 0.01;
  cfg.vibration.persistence = 0.7;
  cfg.seed = 77;
  return cfg;
}

}  // namespace

TEST_CASE("scene and model names round-trip") {
  for (SceneId s : all_scenes()) CHECK(scene_from_string(to_string(s)) == s);
  for (ModelId m : all_models()) CHECK(model_from_string(to_string(m)) == m);
  CHECK(all_scenes().size() == 8);
  CHECK(all_models().size() == 4);
  CHECK_THROWS_AS(scene_from_string("volcano"), ValidationError);
  CHECK_THROWS_AS(model_from_string("tricopter"), ValidationError);
}

TEST_CASE("every model has a positive bounding extent") {
  for (ModelId m : all_models()) {
    const geometry::TargetExtent e = extent_for(m);
    CHECK(e.hx > 0.0);
    CHECK(e.hy > 0.0);
    CHECK(e.hz > 0.0);
    CHECK(e.hx < 1.0);  // desk-scale quadrotors, not airliners
  }
}

TEST_CASE("config validation lists every problem at once") {
  ScenarioConfig cfg = tiny_config();
  cfg.target_count = 0;
  cfg.distance_min = -3.0;
  cfg.vibration.persistence = 1.5;
  try {
    validate(cfg);
    FAIL("expected validation to throw");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("target_count") != std::string::npos);
    CHECK(msg.find("distance_range") != std::string::npos);
    CHECK(msg.find("persistence") != std::string::npos);
  }
  CHECK_NOTHROW(validate(tiny_config()));
}

TEST_CASE("a body with zero velocity never moves") {
  const BodyState s = body_at(1, 2, 3);
  const BodyState out = step_trajectory(s, 0.1, Eigen::Vector3d(50, 0, 0));
  CHECK(out.position == s.position);
  CHECK(out.velocity == s.velocity);
}

TEST_CASE("a body within one step of the waypoint snaps onto it") {
  const BodyState s = body_at(0, 0, 0, 2, 0, 0);  // speed 2, dt 1 covers 2 m
  const Eigen::Vector3d waypoint(1.5, 0, 0);
  const BodyState out = step_trajectory(s, 1.0, waypoint);
  CHECK(out.position == waypoint);
}

TEST_CASE("stepping never increases the distance to the waypoint") {
  Rng rng = Rng::stream(40, "pursuit");
  for (int i = 0; i < 1000; ++i) {
    BodyState s = body_at(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50),
                          rng.normal(), rng.normal(), rng.normal());
    const Eigen::Vector3d waypoint(rng.uniform(-50, 50), rng.uniform(-50, 50),
                                   rng.uniform(-50, 50));
    const double before = (waypoint - s.position).norm();
    const BodyState out = step_trajectory(s, rng.uniform(0.01, 2.0), waypoint);
    const double after = (waypoint - out.position).norm();
    REQUIRE(after <= before + 1e-12);
    // Pursuit redirects velocity but never changes the speed.
    REQUIRE(out.velocity.norm() == doctest::Approx(s.velocity.norm()).epsilon(1e-12));
  }
  CHECK_THROWS_AS(step_trajectory(body_at(0, 0, 0), 0.0, Eigen::Vector3d::Zero()),
                  ValidationError);
}

TEST_CASE("zero vibration amplitude leaves the attitude untouched") {
  VibrationParams params;  // amplitude 0
  VibrationState state;
  Rng rng = Rng::stream(41, "vib0");
  const Eigen::Matrix3d attitude = geometry::rotation_from_euler(0.2, -0.1, 0.8);
  const Eigen::Matrix3d out = apply_vibration(attitude, params, state, rng);
  CHECK(out == attitude);
  Rng fresh = Rng::stream(41, "vib0");
  CHECK(rng.next_u64() == fresh.next_u64());  // and consumes no randomness
}

TEST_CASE("vibration is deterministic for a fixed stream") {
  VibrationParams params;
  params.amplitude = 0.02;
  params.persistence = 0.6;
  VibrationState s1, s2;
  Rng r1 = Rng::stream(42, "vib");
  Rng r2 = Rng::stream(42, "vib");
  Eigen::Matrix3d a1 = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d a2 = Eigen::Matrix3d::Identity();
  for (int i = 0; i < 50; ++i) {
    a1 = apply_vibration(a1, params, s1, r1);
    a2 = apply_vibration(a2, params, s2, r2);
    REQUIRE(a1 == a2);
  }
  geometry::RigidTransform check;
  check.rotation = a1;
  CHECK_NOTHROW(check.validate());  // stays a proper rotation through 50 compositions
}

TEST_CASE("vibration jitter reaches the configured stationary deviation") {
  VibrationParams params;
  params.amplitude = 0.01;
  params.persistence = 0.9;
  VibrationState state;
  Rng rng = Rng::stream(43, "vib_std");
  Eigen::Matrix3d attitude = Eigen::Matrix3d::Identity();
  const int steps = 10000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < steps; ++i) {
    attitude = apply_vibration(attitude, params, state, rng);
    for (int axis = 0; axis < 3; ++axis) {
      sum += state.jitter[axis];
      sum_sq += state.jitter[axis] * state.jitter[axis];
    }
  }
  const double n = 3.0 * steps;
  const double std_dev = std::sqrt(sum_sq / n - (sum / n) * (sum / n));
  CHECK(std_dev > 0.8 * params.amplitude);
  CHECK(std_dev < 1.2 * params.amplitude);
}

TEST_CASE("an on-axis target captures as a single centered box") {
  BodyState observer;  // origin, identity attitude
  TargetInstance target;
  target.state.position = Eigen::Vector3d(0, 0, 50);
  target.extent = extent_for(ModelId::mavic2);
  target.model = ModelId::mavic2;
  const auto frames = capture_frame(observer, {target}, {CameraMount{}});
  REQUIRE(frames.size() == 1);
  REQUIRE(frames[0].boxes.size() == 1);
  const geometry::PixelBox& b = frames[0].boxes[0].box;
  CHECK(b.x_min + b.x_max == doctest::Approx(640.0).epsilon(1e-9));
  CHECK(b.y_min + b.y_max == doctest::Approx(640.0).epsilon(1e-9));
  CHECK(frames[0].boxes[0].model == ModelId::mavic2);
}

TEST_CASE("targets behind the rig are omitted, not errors") {
  BodyState observer;
  TargetInstance target;
  target.state.position = Eigen::Vector3d(0, 0, -50);
  target.extent = extent_for(ModelId::mavic2);
  const auto frames = capture_frame(observer, {target}, {CameraMount{}});
  REQUIRE(frames.size() == 1);
  CHECK(frames[0].boxes.empty());
}

TEST_CASE("multi-camera capture matches direct per-target projection") {
  Rng rng = Rng::stream(44, "capture");
  CameraMount forward;
  CameraMount tilted;
  tilted.pose_in_body.rotation = geometry::rotation_from_euler(0.0, -0.3, 0.15);
  tilted.pose_in_body.translation = Eigen::Vector3d(0.1, -0.05, 0.02);
  const std::vector<CameraMount> rig = {forward, tilted};

  for (int trial = 0; trial < 50; ++trial) {
    BodyState observer;
    observer.position = Eigen::Vector3d(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
    observer.attitude = geometry::rotation_from_euler(rng.uniform(-0.2, 0.2),
                                                      rng.uniform(-0.2, 0.2),
                                                      rng.uniform(-0.2, 0.2));
    std::vector<TargetInstance> targets;
    for (int t = 0; t < 3; ++t) {
      TargetInstance ti;
      ti.model = t % 2 == 0 ? ModelId::inspire1 : ModelId::phantom4;
      ti.extent = extent_for(ti.model);
      ti.state.position = observer.position +
                          observer.attitude * Eigen::Vector3d(rng.uniform(-6, 6),
                                                              rng.uniform(-6, 6),
                                                              rng.uniform(15, 60));
      ti.state.attitude = geometry::rotation_from_euler(0, 0, rng.uniform(-3.1, 3.1));
      targets.push_back(ti);
    }

    const auto frames = capture_frame(observer, targets, rig);
    REQUIRE(frames.size() == 2);
    for (std::size_t ci = 0; ci < rig.size(); ++ci) {
      // Reference: compose camera->world directly, then invert.
      geometry::RigidTransform body_to_world;
      body_to_world.rotation = observer.attitude;
      body_to_world.translation = observer.position;
      const geometry::RigidTransform cam_to_world = body_to_world.compose(rig[ci].pose_in_body);
      geometry::CameraModel cam = rig[ci].camera();
      cam.extrinsics = cam_to_world.inverse();

      std::vector<LabeledBox> expect;
      for (const TargetInstance& t : targets) {
        geometry::RigidTransform pose;
        pose.rotation = t.state.attitude;
        pose.translation = t.state.position;
        if (auto box = geometry::project_bbox(pose, t.extent, cam)) {
          expect.push_back(LabeledBox{*box, t.model});
        }
      }
      REQUIRE(frames[ci].boxes.size() == expect.size());
      for (std::size_t i = 0; i < expect.size(); ++i) {
        CHECK(frames[ci].boxes[i].model == expect[i].model);
        CHECK(frames[ci].boxes[i].box.x_min ==
              doctest::Approx(expect[i].box.x_min).epsilon(1e-9));
        CHECK(frames[ci].boxes[i].box.y_min ==
              doctest::Approx(expect[i].box.y_min).epsilon(1e-9));
        CHECK(frames[ci].boxes[i].box.x_max ==
              doctest::Approx(expect[i].box.x_max).epsilon(1e-9));
        CHECK(frames[ci].boxes[i].box.y_max ==
              doctest::Approx(expect[i].box.y_max).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("scenario runs are deterministic in the seed") {
  const ScenarioConfig cfg = tiny_config();
  const auto a = run_scenario(cfg);
  const auto b = run_scenario(cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(frames_equal(a[i], b[i]));

  ScenarioConfig other = cfg;
  other.seed = cfg.seed + 1;
  const auto c = run_scenario(other);
  bool all_same = c.size() == a.size();
  if (all_same) {
    for (std::size_t i = 0; i < a.size(); ++i) all_same = all_same && frames_equal(a[i], c[i]);
  }
  CHECK_FALSE(all_same);
}

TEST_CASE("a scenario emits one frame per simulation step per camera") {
  ScenarioConfig cfg = tiny_config();
  cfg.rig.push_back(CameraMount{});
  const auto frames = run_scenario(cfg);
  REQUIRE(frames.size() == static_cast<std::size_t>(cfg.frame_count) * cfg.rig.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    CHECK(frames[i].frame_index == static_cast<int>(i / cfg.rig.size()));
    CHECK(frames[i].camera_index == static_cast<int>(i % cfg.rig.size()));
    CHECK(frames[i].scene == cfg.scene);
    CHECK(frames[i].seed == cfg.seed);
    CHECK(frames[i].image_width == 640);
  }
}

TEST_CASE("config json round-trips through a file") {
  testutil::TempDir dir("config");
  ScenarioConfig cfg = tiny_config();
  cfg.rig[0].image_width = 320;
  cfg.rig[0].image_height = 256;
  cfg.rig[0].center_x = 160.0;
  cfg.rig[0].center_y = 128.0;
  cfg.rig[0].fov_radians = 1.2;
  {
    std::ofstream out(dir.file("cfg.json"));
    out << config_to_json(cfg);
  }
  const ScenarioConfig back = load_config(dir.file("cfg.json"));
  CHECK(back.scene == cfg.scene);
  CHECK(back.models == cfg.models);
  CHECK(back.target_count == cfg.target_count);
  CHECK(back.distance_min == cfg.distance_min);
  CHECK(back.distance_max == cfg.distance_max);
  CHECK(back.frame_count == cfg.frame_count);
  CHECK(back.frame_dt == cfg.frame_dt);
  CHECK(back.seed == cfg.seed);
  CHECK(back.vibration.amplitude == cfg.vibration.amplitude);
  CHECK(back.vibration.persistence == cfg.vibration.persistence);
  REQUIRE(back.rig.size() == 1);
  CHECK(back.rig[0].image_width == 320);
  CHECK(back.rig[0].image_height == 256);
  CHECK(back.rig[0].center_x == 160.0);
  CHECK(back.rig[0].fov_radians == doctest::Approx(1.2).epsilon(1e-12));
}

TEST_CASE("config loading rejects missing files, bad json, and wrong versions") {
  testutil::TempDir dir("badcfg");
  CHECK_THROWS_AS(load_config(dir.file("nope.json")), IoError);
  {
    std::ofstream out(dir.file("garbage.json"));
    out << "{ not json";
  }
  CHECK_THROWS_AS(load_config(dir.file("garbage.json")), ValidationError);
  {
    std::ofstream out(dir.file("v9.json"));
    out << R"({"schema_version": 9, "scene": "pool", "models": ["mavic2"],)"
        << R"( "distance_range": [5, 50]})";
  }
  try {
    load_config(dir.file("v9.json"));
    FAIL("expected a version failure");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("schema_version") != std::string::npos);
  }
}

TEST_CASE("composited frames with no boxes equal the backdrop") {
  const SceneAssets assets = builtin_assets(SceneId::pool, {ModelId::mavic2}, 64, 64);
  AnnotatedFrame frame;
  frame.image_width = 64;
  frame.image_height = 64;
  const image::Image out = composite_image(frame, assets);
  REQUIRE(out.pixels.size() == assets.backdrop.pixels.size());
  CHECK(out.pixels == assets.backdrop.pixels);
}

TEST_CASE("compositing touches only pixels inside the padded box") {
  const SceneAssets assets = builtin_assets(SceneId::street, {ModelId::phantom4}, 64, 64);
  AnnotatedFrame frame;
  frame.image_width = 64;
  frame.image_height = 64;
  LabeledBox lb;
  lb.model = ModelId::phantom4;
  lb.box.x_min = 20.3;
  lb.box.y_min = 30.7;
  lb.box.x_max = 29.1;
  lb.box.y_max = 38.2;
  frame.boxes.push_back(lb);
  const image::Image out = composite_image(frame, assets);
  bool changed_inside = false;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      const bool same = std::memcmp(out.at(x, y), assets.backdrop.at(x, y), 3) == 0;
      const bool inside = x >= 20 && x < 30 && y >= 30 && y < 39;
      if (!inside) {
        REQUIRE(same);
      } else if (!same) {
        changed_inside = true;
      }
    }
  }
  CHECK(changed_inside);
}

TEST_CASE("fully opaque sprites replace pixels and fully transparent ones vanish") {
  SceneAssets assets;
  assets.backdrop = image::Image::rgb(32, 32);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      std::uint8_t* p = assets.backdrop.at(x, y);
      p[0] = 7;
      p[1] = 77;
      p[2] = 177;
    }
  }
  image::Image opaque = image::Image::rgba(4, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      std::uint8_t* p = opaque.at(x, y);
      p[0] = 10;
      p[1] = 200;
      p[2] = 60;
      p[3] = 255;
    }
  }
  assets.sprites[ModelId::mavic2] = opaque;

  AnnotatedFrame frame;
  frame.image_width = 32;
  frame.image_height = 32;
  LabeledBox lb;
  lb.model = ModelId::mavic2;
  lb.box.x_min = 8;
  lb.box.y_min = 8;
  lb.box.x_max = 16;
  lb.box.y_max = 16;
  frame.boxes.push_back(lb);

  const image::Image out = composite_image(frame, assets);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const std::uint8_t* p = out.at(x, y);
      if (x >= 8 && x < 16 && y >= 8 && y < 16) {
        REQUIRE(p[0] == 10);
        REQUIRE(p[1] == 200);
        REQUIRE(p[2] == 60);
      } else {
        REQUIRE(p[0] == 7);
        REQUIRE(p[1] == 77);
        REQUIRE(p[2] == 177);
      }
    }
  }

  // Alpha 0 everywhere: the backdrop survives byte-for-byte.
  image::Image clear = image::Image::rgba(4, 4);
  assets.sprites[ModelId::mavic2] = clear;
  const image::Image untouched = composite_image(frame, assets);
  CHECK(untouched.pixels == assets.backdrop.pixels);
}

TEST_CASE("half-transparent sprites blend by the integer rounding rule") {
  SceneAssets assets;
  assets.backdrop = image::Image::rgb(8, 8);
  for (auto& b : assets.backdrop.pixels) b = 100;
  image::Image sprite = image::Image::rgba(2, 2);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) {
      std::uint8_t* p = sprite.at(x, y);
      p[0] = 200;
      p[1] = 0;
      p[2] = 50;
      p[3] = 128;
    }
  }
  assets.sprites[ModelId::inspire1] = sprite;
  AnnotatedFrame frame;
  frame.image_width = 8;
  frame.image_height = 8;
  frame.boxes.push_back(LabeledBox{geometry::PixelBox{2, 2, 4, 4, false}, ModelId::inspire1});
  const image::Image out = composite_image(frame, assets);
  const std::uint8_t* p = out.at(3, 3);
  CHECK(p[0] == (128 * 200 + 127 * 100 + 127) / 255);
  CHECK(p[1] == (128 * 0 + 127 * 100 + 127) / 255);
  CHECK(p[2] == (128 * 50 + 127 * 100 + 127) / 255);
}

TEST_CASE("compositing a model with no sprite loaded fails loudly") {
  SceneAssets assets;
  assets.backdrop = image::Image::rgb(16, 16);
  AnnotatedFrame frame;
  frame.image_width = 16;
  frame.image_height = 16;
  frame.boxes.push_back(LabeledBox{geometry::PixelBox{2, 2, 6, 6, false}, ModelId::parrot_ar2});
  CHECK_THROWS_AS(composite_image(frame, assets), AssetNotFoundError);
}

TEST_CASE("asset loading round-trips through ppm and pam files") {
  testutil::TempDir dir("assets");
  std::filesystem::create_directories(dir.path() / "backdrops");
  std::filesystem::create_directories(dir.path() / "sprites");
  const SceneAssets made = builtin_assets(SceneId::trees, {ModelId::inspire1}, 48, 48);
  image::write_image((dir.path() / "backdrops" / "trees.ppm").string(), made.backdrop);
  image::write_image((dir.path() / "sprites" / "inspire1.pam").string(),
                     made.sprites.at(ModelId::inspire1));
  const SceneAssets loaded = load_assets(dir.str(), SceneId::trees, {ModelId::inspire1});
  CHECK(loaded.backdrop.pixels == made.backdrop.pixels);
  CHECK(loaded.sprites.at(ModelId::inspire1).pixels == made.sprites.at(ModelId::inspire1).pixels);
  CHECK_THROWS_AS(load_assets(dir.str(), SceneId::pool, {ModelId::inspire1}), AssetNotFoundError);
  CHECK_THROWS_AS(load_assets(dir.str(), SceneId::trees, {ModelId::mavic2}), AssetNotFoundError);
}
