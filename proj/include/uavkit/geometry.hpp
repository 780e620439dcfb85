#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>

#include "uavkit/errors.hpp"

namespace uavkit::geometry {

// A point is in front of the camera iff its depth exceeds this.
inline constexpr double kDepthEpsilon = 1e-6;

inline constexpr double kRotationTolerance = 1e-9;

struct WorldPoint {
  Eigen::Vector3d p;
};

struct CameraPoint {
  Eigen::Vector3d p;
};

struct PixelPoint {
  double x = 0.0;
  double y = 0.0;
};

// Proper rigid motion: p_out = rotation * p_in + translation.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  bool rotation_is_valid(double tol = kRotationTolerance) const;
  void validate() const;  // throws ValidationError

  RigidTransform inverse() const;
  // this applied after other: (this * other)(p) = this(other(p)).
  RigidTransform compose(const RigidTransform& other) const;
};

struct CameraModel {
  double focal_length = 0.0;  // pixels
  int image_width = 0;
  int image_height = 0;
  double center_x = 0.0;  // pixels
  double center_y = 0.0;
  RigidTransform extrinsics;  // world -> camera

  void validate() const;
};

// Axis-aligned bounding cuboid of a vehicle in its body frame, as half-sizes.
struct TargetExtent {
  double hx = 0.0;
  double hy = 0.0;
  double hz = 0.0;

  void validate() const;
  std::array<Eigen::Vector3d, 8> corners() const;
};

struct PixelBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;
  bool clamped = false;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
};

// Horizontal-FOV parameterization of the focal length: f = w / (2 tan(fov/2)).
double focal_from_fov(double fov_radians, int image_width);

// Intrinsic Z-Y-X (yaw, then pitch, then roll), right-handed.
Eigen::Matrix3d rotation_from_euler(double roll, double pitch, double yaw);

// Nearest rotation matrix (polar factor); used after compounding jitter.
Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& m);

CameraPoint world_to_camera(const WorldPoint& p, const RigidTransform& x);

// Throws NotVisibleError unless depth > kDepthEpsilon. The camera frame
// implied by the projection: +z is the optical axis, +x maps to +pixel-y and
// +y maps to -pixel-x (see docs/file_formats.md).
PixelPoint project_to_pixel(const CameraPoint& p, const CameraModel& cam);

// Projects the 8 cuboid corners, takes the pixel-space axis-aligned hull, and
// clips it to the image. Returns nullopt when any corner is behind the camera
// (close-range targets are dropped rather than partially projected) or when
// the hull misses the image.
std::optional<PixelBox> project_bbox(const RigidTransform& target_pose,
                                     const TargetExtent& extent,
                                     const CameraModel& cam);

}  // namespace uavkit::geometry
