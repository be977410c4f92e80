#include <cmath>
#include <random>

#include "vedet/errors.hpp"
#include "vedet/scene.hpp"

namespace vedet {

namespace {

// Conjugates the ego motion by a linear map A (rotation or reflection) and
// a uniform scale s applied to the global frame: E' = G E G^-1.
Pose conjugate_ego(const Pose& e, const Mat3& a, double s) {
  Pose out;
  out.rotation = Quaternion::from_rotmat(a * e.rotmat() * a.transpose());
  out.translation = s * (a * e.translation);
  return out;
}

void apply_to_images(SceneImages& images, auto&& fn) {
  for (Image& img : images.current) img = fn(img);
  for (Image& img : images.previous) img = fn(img);
}

}  // namespace

AugmentResult augment(const Scene& scene, const SceneImages& images, const AugmentationConfig& cfg,
                      std::uint64_t seed) {
  if (scene.rig.empty()) throw ConfigError("augment: scene has no cameras");
  if (cfg.resize_min <= 0.0 || cfg.resize_max < cfg.resize_min || cfg.scale_min <= 0.0 ||
      cfg.scale_max < cfg.scale_min || cfg.rot_max < cfg.rot_min || cfg.hflip_prob < 0.0 ||
      cfg.hflip_prob > 1.0) {
    throw ConfigError("augment: invalid sampling ranges");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentResult res{scene, images, {}};
  Scene& s = res.scene;
  AppliedAugmentation& ap = res.applied;
  const int h0 = scene.rig[0].height, w0 = scene.rig[0].width;

  // Resize.
  const double factor = cfg.resize_min + (cfg.resize_max - cfg.resize_min) * unit(rng);
  const int rh = static_cast<int>(std::lround(h0 * factor));
  const int rw = static_cast<int>(std::lround(w0 * factor));
  const int ch = cfg.crop_height > 0 ? cfg.crop_height : rh;
  const int cw = cfg.crop_width > 0 ? cfg.crop_width : rw;
  if (ch > static_cast<int>(std::floor(h0 * cfg.resize_min + 0.5)) ||
      cw > static_cast<int>(std::floor(w0 * cfg.resize_min + 0.5))) {
    throw ConfigError("augment: crop " + std::to_string(ch) + "x" + std::to_string(cw) +
                      " larger than the smallest resized image");
  }
  if (rh != h0 || rw != w0) {
    ap.resize_y = static_cast<double>(rh) / h0;
    ap.resize_x = static_cast<double>(rw) / w0;
    for (Camera& c : s.rig) {
      c.fx *= ap.resize_x;
      c.cx *= ap.resize_x;
      c.fy *= ap.resize_y;
      c.cy *= ap.resize_y;
      c.height = rh;
      c.width = rw;
    }
    apply_to_images(res.images, [&](const Image& img) { return resize_bilinear(img, rh, rw); });
  }

  // Crop: the top rows are dropped, the left offset is random.
  if (ch != rh || cw != rw) {
    ap.crop_top = rh - ch;
    ap.crop_left = static_cast<int>(unit(rng) * (rw - cw + 1));
    if (ap.crop_left > rw - cw) ap.crop_left = rw - cw;
    for (Camera& c : s.rig) {
      c.cx -= ap.crop_left;
      c.cy -= ap.crop_top;
      c.height = ch;
      c.width = cw;
    }
    apply_to_images(res.images,
                    [&](const Image& img) { return crop(img, ap.crop_top, ap.crop_left, ch, cw); });
  }

  // Horizontal flip mirrors the world about the x = 0 plane.
  if (unit(rng) < cfg.hflip_prob) {
    ap.flipped = true;
    ap.flip_width = cw;
    const Mat3 mirror = Eigen::Vector3d(-1.0, 1.0, 1.0).asDiagonal();
    for (Camera& c : s.rig) {
      c.cx = c.width - c.cx;
      c.pose.rotation = Quaternion::from_rotmat(mirror * c.pose.rotmat() * mirror);
      c.pose.translation = mirror * c.pose.translation;
    }
    for (Box3D& b : s.boxes) {
      b.center.x() = -b.center.x();
      b.velocity.x() = -b.velocity.x();
      b.yaw = wrap_angle(kPi - b.yaw);
    }
    s.ego_motion = conjugate_ego(s.ego_motion, mirror, 1.0);
    apply_to_images(res.images, [](const Image& img) { return flip_horizontal(img); });
  }

  // Global rotation about world Z; images unchanged.
  ap.rotation = cfg.rot_min + (cfg.rot_max - cfg.rot_min) * unit(rng);
  if (ap.rotation != 0.0) {
    const Pose g{quat_from_yaw(ap.rotation), Vec3::Zero()};
    const Mat3 r = g.rotmat();
    for (Camera& c : s.rig) c.pose = pose_compose(g, c.pose);
    for (Box3D& b : s.boxes) {
      b.center = r * b.center;
      b.velocity = r * b.velocity;
      b.yaw = wrap_angle(b.yaw + ap.rotation);
    }
    s.ego_motion = conjugate_ego(s.ego_motion, r, 1.0);
  }

  // Global scaling about the origin; images unchanged.
  ap.scale = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * unit(rng);
  if (ap.scale != 1.0) {
    for (Camera& c : s.rig) c.pose.translation *= ap.scale;
    for (Box3D& b : s.boxes) {
      b.center *= ap.scale;
      b.dims *= ap.scale;
      b.velocity *= ap.scale;
    }
    s.ego_motion = conjugate_ego(s.ego_motion, Mat3::Identity(), ap.scale);
  }
  return res;
}

}  // namespace vedet
