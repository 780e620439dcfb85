#include "uavkit/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace uavkit::geometry {

bool RigidTransform::rotation_is_valid(double tol) const {
  const Eigen::Matrix3d gram = rotation.transpose() * rotation;
  const double ortho_err = (gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  const double det_err = std::abs(rotation.determinant() - 1.0);
  return ortho_err <= tol && det_err <= tol;
}

void RigidTransform::validate() const {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw ValidationError("rigid transform has non-finite entries");
  }
  if (!rotation_is_valid()) {
    std::ostringstream os;
    os << "rotation matrix is not a proper rotation (R^T R != I or det != 1):\n" << rotation;
    throw ValidationError(os.str());
  }
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

RigidTransform RigidTransform::compose(const RigidTransform& other) const {
  RigidTransform out;
  out.rotation = rotation * other.rotation;
  out.translation = rotation * other.translation + translation;
  return out;
}

void CameraModel::validate() const {
  std::ostringstream os;
  bool bad = false;
  auto fail = [&](const char* msg) {
    if (bad) os << "; ";
    os << msg;
    bad = true;
  };
  if (!(focal_length > 0.0)) fail("focal_length must be > 0");
  if (image_width <= 0 || image_height <= 0) fail("image dimensions must be > 0");
  if (center_x < 0.0 || center_x > image_width || center_y < 0.0 || center_y > image_height) {
    fail("principal point must lie inside the image");
  }
  if (bad) throw ValidationError("invalid camera model: " + os.str());
  extrinsics.validate();
}

void TargetExtent::validate() const {
  if (!(hx > 0.0 && hy > 0.0 && hz > 0.0)) {
    throw ValidationError("target extent half-sizes must all be > 0");
  }
}

std::array<Eigen::Vector3d, 8> TargetExtent::corners() const {
  std::array<Eigen::Vector3d, 8> out;
  int i = 0;
  for (double sx : {-1.0, 1.0})
    for (double sy : {-1.0, 1.0})
      for (double sz : {-1.0, 1.0}) out[i++] = Eigen::Vector3d(sx * hx, sy * hy, sz * hz);
  return out;
}

double focal_from_fov(double fov_radians, int image_width) {
  if (!(fov_radians > 0.0 && fov_radians < 3.141592653589793)) {
    throw ValidationError("horizontal FOV must lie in (0, pi)");
  }
  return image_width / (2.0 * std::tan(fov_radians / 2.0));
}

Eigen::Matrix3d rotation_from_euler(double roll, double pitch, double yaw) {
  if (!std::isfinite(roll) || !std::isfinite(pitch) || !std::isfinite(yaw)) {
    throw ValidationError("euler angles must be finite");
  }
  const double cr = std::cos(roll), sr = std::sin(roll);
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  Eigen::Matrix3d rx, ry, rz;
  rx << 1, 0, 0, 0, cr, -sr, 0, sr, cr;
  ry << cp, 0, sp, 0, 1, 0, -sp, 0, cp;
  rz << cy, -sy, 0, sy, cy, 0, 0, 0, 1;
  return rz * ry * rx;
}

Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
    flip(2, 2) = -1.0;
    r = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return r;
}

CameraPoint world_to_camera(const WorldPoint& p, const RigidTransform& x) {
  x.validate();
  return CameraPoint{x.rotation * p.p + x.translation};
}

PixelPoint project_to_pixel(const CameraPoint& p, const CameraModel& cam) {
  const double zc = p.p.z();
  if (!(zc > kDepthEpsilon)) {
    std::ostringstream os;
    os << "point at depth " << zc << " is not in front of the camera";
    throw NotVisibleError(os.str());
  }
  PixelPoint px;
  px.x = cam.center_y - cam.focal_length * (p.p.y() / zc);
  px.y = cam.center_x + cam.focal_length * (p.p.x() / zc);
  return px;
}

std::optional<PixelBox> project_bbox(const RigidTransform& target_pose,
                                     const TargetExtent& extent,
                                     const CameraModel& cam) {
  target_pose.validate();
  extent.validate();
  cam.validate();

  std::array<PixelPoint, 8> projected;
  int i = 0;
  for (const Eigen::Vector3d& corner : extent.corners()) {
    const WorldPoint pw{target_pose.rotation * corner + target_pose.translation};
    const CameraPoint pc = world_to_camera(pw, cam.extrinsics);
    if (!(pc.p.z() > kDepthEpsilon)) return std::nullopt;
    projected[i++] = project_to_pixel(pc, cam);
  }

  PixelBox box;
  box.x_min = box.x_max = projected[0].x;
  box.y_min = box.y_max = projected[0].y;
  for (const PixelPoint& px : projected) {
    box.x_min = std::min(box.x_min, px.x);
    box.x_max = std::max(box.x_max, px.x);
    box.y_min = std::min(box.y_min, px.y);
    box.y_max = std::max(box.y_max, px.y);
  }

  const double w = static_cast<double>(cam.image_width);
  const double h = static_cast<double>(cam.image_height);
  if (box.x_max <= 0.0 || box.y_max <= 0.0 || box.x_min >= w || box.y_min >= h) {
    return std::nullopt;
  }
  PixelBox clipped = box;
  clipped.x_min = std::clamp(box.x_min, 0.0, w);
  clipped.x_max = std::clamp(box.x_max, 0.0, w);
  clipped.y_min = std::clamp(box.y_min, 0.0, h);
  clipped.y_max = std::clamp(box.y_max, 0.0, h);
  clipped.clamped = clipped.x_min != box.x_min || clipped.x_max != box.x_max ||
                    clipped.y_min != box.y_min || clipped.y_max != box.y_max;
  if (clipped.area() <= 0.0) return std::nullopt;
  return clipped;
}

}  // namespace uavkit::geometry
