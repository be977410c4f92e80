#include "vedet/geometry.hpp"

#include <cmath>
#include <random>
#include <string>

#include "vedet/errors.hpp"

namespace vedet {

double wrap_angle(double a) {
  const double two_pi = 2.0 * kPi;
  double r = a - two_pi * std::floor((a + kPi) / two_pi);
  if (r >= kPi) r -= two_pi;
  if (r < -kPi) r += two_pi;
  return r;
}

Quaternion::Quaternion(double w, double x, double y, double z) {
  double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (n == 0.0) return;
  if (w < 0.0) n = -n;
  w_ = w / n;
  x_ = x / n;
  y_ = y / n;
  z_ = z / n;
}

Quaternion Quaternion::from_rotmat(const Mat3& r) {
  Eigen::Quaterniond q(r);
  return {q.w(), q.x(), q.y(), q.z()};
}

Quaternion Quaternion::unchecked(double w, double x, double y, double z) {
  Quaternion q;
  q.w_ = w;
  q.x_ = x;
  q.y_ = y;
  q.z_ = z;
  return q;
}

Quaternion Quaternion::operator*(const Quaternion& o) const {
  return {w_ * o.w_ - x_ * o.x_ - y_ * o.y_ - z_ * o.z_,
          w_ * o.x_ + x_ * o.w_ + y_ * o.z_ - z_ * o.y_,
          w_ * o.y_ - x_ * o.z_ + y_ * o.w_ + z_ * o.x_,
          w_ * o.z_ + x_ * o.y_ - y_ * o.x_ + z_ * o.w_};
}

Vec3 Quaternion::rotate(const Vec3& v) const { return quat_to_rotmat(*this) * v; }

Quaternion quat_from_yaw(double yaw) {
  return {std::cos(0.5 * yaw), 0.0, 0.0, std::sin(0.5 * yaw)};
}

Quaternion quat_from_euler(double roll, double pitch, double yaw) {
  const Quaternion qx{std::cos(0.5 * roll), std::sin(0.5 * roll), 0.0, 0.0};
  const Quaternion qy{std::cos(0.5 * pitch), 0.0, std::sin(0.5 * pitch), 0.0};
  return quat_from_yaw(yaw) * qy * qx;
}

Mat3 quat_to_rotmat(const Quaternion& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

double quat_yaw(const Quaternion& q) {
  return std::atan2(2.0 * (q.w() * q.z() + q.x() * q.y()),
                    1.0 - 2.0 * (q.y() * q.y() + q.z() * q.z()));
}

Pose pose_inverse(const Pose& p) {
  const Quaternion inv = p.rotation.conjugate();
  return {inv, -inv.rotate(p.translation)};
}

Pose pose_compose(const Pose& a, const Pose& b) {
  return {a.rotation * b.rotation, a.rotation.rotate(b.translation) + a.translation};
}

Mat3 Camera::intrinsics() const {
  Mat3 k;
  k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return k;
}

int Camera::feature_height() const { return static_cast<int>(std::lround(height * alpha)); }
int Camera::feature_width() const { return static_cast<int>(std::lround(width * alpha)); }

std::array<Vec3, 8> Box3D::corners() const {
  const Mat3 r = quat_to_rotmat(quat_from_yaw(yaw));
  const double hl = 0.5 * dims.y(), hw = 0.5 * dims.x(), hh = 0.5 * dims.z();
  std::array<Vec3, 8> out;
  int i = 0;
  for (double sx : {1.0, -1.0})
    for (double sy : {1.0, -1.0})
      for (double sz : {1.0, -1.0}) out[i++] = center + r * Vec3(sx * hl, sy * hw, sz * hh);
  return out;
}

Vec3 compute_ray(const Camera& camera, int u, int v, bool cell_center) {
  if (!(camera.fx > 0.0) || !(camera.fy > 0.0)) {
    throw InvalidCameraError("camera intrinsics are not invertible (fx=" +
                             std::to_string(camera.fx) + ", fy=" + std::to_string(camera.fy) + ")");
  }
  const double off = cell_center ? 0.5 : 0.0;
  const double px = (u + off) / camera.alpha;
  const double py = (v + off) / camera.alpha;
  const Vec3 dir_cam((px - camera.cx) / camera.fx, (py - camera.cy) / camera.fy, 1.0);
  return (camera.pose.rotmat() * dir_cam).normalized();
}

Projection project_point(const Camera& camera, const Vec3& point_world) {
  const Vec3 p = camera.pose.rotmat().transpose() * (point_world - camera.pose.translation);
  if (!(p.z() > 0.0)) {
    throw BehindCameraError("point is behind the camera (depth " + std::to_string(p.z()) + ")");
  }
  return {Vec2(camera.fx * p.x() / p.z() + camera.cx, camera.fy * p.y() / p.z() + camera.cy),
          p.z()};
}

Box3D transform_box_to_view(const Box3D& box, const Pose& view) {
  const Mat3 rt = view.rotmat().transpose();
  Box3D out = box;
  out.center = rt * (box.center - view.translation);
  out.yaw = wrap_angle(box.yaw - quat_yaw(view.rotation));
  out.velocity = rt * box.velocity;
  return out;
}

std::vector<Pose> sample_virtual_views(std::uint64_t seed, const ViewSamplingRanges& ranges,
                                       int count) {
  std::vector<Pose> views;
  if (count <= 0) return views;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  views.reserve(count);
  for (int i = 0; i < count; ++i) {
    Pose p;
    for (int a = 0; a < 3; ++a) {
      p.translation[a] = ranges.translation_min[a] +
                         unit(rng) * (ranges.translation_max[a] - ranges.translation_min[a]);
    }
    const double yaw = ranges.yaw_min + unit(rng) * (ranges.yaw_max - ranges.yaw_min);
    if (ranges.full_rotation) {
      const double roll = (2.0 * unit(rng) - 1.0) * ranges.max_tilt;
      const double pitch = (2.0 * unit(rng) - 1.0) * ranges.max_tilt;
      p.rotation = quat_from_euler(roll, pitch, yaw);
    } else {
      p.rotation = quat_from_yaw(yaw);
    }
    views.push_back(p);
  }
  return views;
}

}  // namespace vedet
