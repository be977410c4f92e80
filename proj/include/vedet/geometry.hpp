#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <vector>

namespace vedet {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle to [-pi, pi).
double wrap_angle(double a);

/// Unit quaternion, Hamilton convention, scalar first. Always stored
/// normalized with w >= 0.
class Quaternion {
 public:
  Quaternion() = default;
  /// Normalizes and canonicalizes the given components.
  Quaternion(double w, double x, double y, double z);

  static Quaternion identity() { return {}; }
  static Quaternion from_rotmat(const Mat3& r);
  /// Stores components verbatim; for values already known to be canonical
  /// (e.g. read back from a file written by this library).
  static Quaternion unchecked(double w, double x, double y, double z);

  double w() const { return w_; }
  double x() const { return x_; }
  double y() const { return y_; }
  double z() const { return z_; }
  Eigen::Vector4d coeffs() const { return {w_, x_, y_, z_}; }

  Quaternion operator*(const Quaternion& o) const;
  Quaternion conjugate() const { return {w_, -x_, -y_, -z_}; }
  Vec3 rotate(const Vec3& v) const;
  bool operator==(const Quaternion&) const = default;

 private:
  double w_ = 1.0, x_ = 0.0, y_ = 0.0, z_ = 0.0;
};

Quaternion quat_from_yaw(double yaw);
Quaternion quat_from_euler(double roll, double pitch, double yaw);
Mat3 quat_to_rotmat(const Quaternion& q);
/// Heading of the rotated x axis projected onto the ground plane.
double quat_yaw(const Quaternion& q);

/// Rigid transform p -> R p + t.
struct Pose {
  Quaternion rotation;
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  Mat3 rotmat() const { return quat_to_rotmat(rotation); }
  Vec3 apply(const Vec3& p) const { return rotation.rotate(p) + translation; }
  bool operator==(const Pose& o) const {
    return rotation == o.rotation && translation == o.translation;
  }
};

Pose pose_inverse(const Pose& p);
/// Applies `b` first, then `a`.
Pose pose_compose(const Pose& a, const Pose& b);

/// Pinhole camera. `pose` maps camera coordinates to world coordinates
/// (x right, y down, z forward in the camera frame).
struct Camera {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  Pose pose;
  int height = 1, width = 1;
  /// Feature-grid downsample factor, e.g. 1/16.
  double alpha = 1.0;

  Mat3 intrinsics() const;
  Vec3 center() const { return pose.translation; }
  int feature_height() const;
  int feature_width() const;
  bool operator==(const Camera&) const = default;
};

struct Box3D {
  Vec3 center = Vec3::Zero();
  /// (w, l, h): extent along the box's local y, x and z axes.
  Vec3 dims = Vec3::Ones();
  double yaw = 0.0;
  Vec3 velocity = Vec3::Zero();
  int class_id = 0;

  bool operator==(const Box3D&) const = default;
  /// Eight corners in the frame the box is expressed in.
  std::array<Vec3, 8> corners() const;
};

struct ViewSamplingRanges {
  Vec3 translation_min{-0.6, -1.0, -0.3};
  Vec3 translation_max{0.6, 1.0, 0.0};
  double yaw_min = 0.0;
  double yaw_max = 2.0 * kPi;
  /// Sample roll and pitch as well (uniform in +-max_tilt).
  bool full_rotation = false;
  double max_tilt = 0.0;
};

/// Unit world-frame ray through feature cell (u, v). The cell's top-left
/// corner is used unless `cell_center` is set.
Vec3 compute_ray(const Camera& camera, int u, int v, bool cell_center = false);

struct Projection {
  Vec2 pixel;
  double depth;
};

Projection project_point(const Camera& camera, const Vec3& point_world);

/// Expresses `box` in the frame of `view` (view maps view coordinates to
/// the box's current frame).
Box3D transform_box_to_view(const Box3D& box, const Pose& view);

std::vector<Pose> sample_virtual_views(std::uint64_t seed, const ViewSamplingRanges& ranges,
                                       int count);

}  // namespace vedet
