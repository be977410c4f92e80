#include "vedet/scene.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "vedet/errors.hpp"

namespace vedet {

namespace {

constexpr double kNearPlane = 0.1;

struct Face {
  std::array<int, 4> corners;
  Vec3 normal;
  std::uint8_t intensity;
};

// Corner i of Box3D::corners() has signs (x, y, z) = bits (4, 2, 1) set -> negative.
const std::array<Face, 6>& box_faces() {
  static const std::array<Face, 6> faces = {{
      {{0, 1, 3, 2}, Vec3::UnitX(), 255},
      {{4, 5, 7, 6}, -Vec3::UnitX(), 110},
      {{0, 1, 5, 4}, Vec3::UnitY(), 170},
      {{2, 3, 7, 6}, -Vec3::UnitY(), 170},
      {{0, 2, 6, 4}, Vec3::UnitZ(), 215},
      {{1, 3, 7, 5}, -Vec3::UnitZ(), 80},
  }};
  return faces;
}

double cross2(const Vec2& a, const Vec2& b, const Vec2& p) {
  return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

void fill_convex(Image& img, const std::array<Vec2, 4>& poly, int channel, std::uint8_t value) {
  double xmin = poly[0].x(), xmax = xmin, ymin = poly[0].y(), ymax = ymin;
  for (const Vec2& p : poly) {
    xmin = std::min(xmin, p.x());
    xmax = std::max(xmax, p.x());
    ymin = std::min(ymin, p.y());
    ymax = std::max(ymax, p.y());
  }
  const int x0 = std::max(0, static_cast<int>(std::floor(xmin)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(xmax)));
  const int y0 = std::max(0, static_cast<int>(std::floor(ymin)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(ymax)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const Vec2 p(x + 0.5, y + 0.5);
      bool has_pos = false, has_neg = false;
      for (int i = 0; i < 4; ++i) {
        const double c = cross2(poly[i], poly[(i + 1) % 4], p);
        has_pos = has_pos || c > 0.0;
        has_neg = has_neg || c < 0.0;
      }
      if (has_pos && has_neg) continue;
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = c == channel ? value : 0;
    }
  }
}

bool all_corners_in_front(const Camera& camera, const Box3D& box) {
  const Mat3 rt = camera.pose.rotmat().transpose();
  for (const Vec3& c : box.corners()) {
    if ((rt * (c - camera.pose.translation)).z() <= kNearPlane) return false;
  }
  return true;
}

}  // namespace

const std::vector<ClassProfile>& class_profiles() {
  static const std::vector<ClassProfile> profiles = {
      {"car", Vec3(1.9, 4.5, 1.6), 5.0},
      {"pedestrian", Vec3(0.7, 0.7, 1.75), 1.5},
      {"cyclist", Vec3(0.7, 1.8, 1.5), 4.0},
  };
  return profiles;
}

std::vector<Box3D> Scene::previous_boxes() const {
  std::vector<Box3D> out = boxes;
  for (Box3D& b : out) b.center -= b.velocity * sweep_dt;
  return out;
}

std::vector<Camera> Scene::previous_rig() const {
  std::vector<Camera> out = rig;
  for (Camera& c : out) c.pose = pose_compose(ego_motion, c.pose);
  return out;
}

std::vector<Camera> make_rig(const RigConfig& cfg) {
  if (cfg.num_cameras < 1 || cfg.image_height <= 0 || cfg.image_width <= 0) {
    throw ConfigError("rig: need at least one camera and a positive image size");
  }
  if (!(cfg.hfov_deg > 0.0 && cfg.hfov_deg < 180.0)) throw ConfigError("rig: hfov_deg must be in (0, 180)");
  const double stride = 1.0 / cfg.alpha;
  if (std::abs(stride - std::round(stride)) > 1e-9 ||
      cfg.image_height % static_cast<int>(std::lround(stride)) != 0 ||
      cfg.image_width % static_cast<int>(std::lround(stride)) != 0) {
    throw ConfigError("rig: image size must be divisible by 1/alpha");
  }
  Mat3 base;
  // camera x -> -y, camera y -> -z, camera z -> +x
  base << 0, 0, 1, -1, 0, 0, 0, -1, 0;
  const double f = 0.5 * cfg.image_width / std::tan(0.5 * cfg.hfov_deg * kPi / 180.0);
  std::vector<Camera> rig;
  for (int i = 0; i < cfg.num_cameras; ++i) {
    const double yaw = 2.0 * kPi * i / cfg.num_cameras;
    Camera cam;
    cam.fx = cam.fy = f;
    cam.cx = 0.5 * cfg.image_width;
    cam.cy = 0.5 * cfg.image_height;
    cam.height = cfg.image_height;
    cam.width = cfg.image_width;
    cam.alpha = cfg.alpha;
    cam.pose.rotation = Quaternion::from_rotmat(quat_to_rotmat(quat_from_yaw(yaw)) * base);
    cam.pose.translation = Vec3(cfg.mount_radius * std::cos(yaw), cfg.mount_radius * std::sin(yaw),
                                cfg.mount_height);
    rig.push_back(cam);
  }
  return rig;
}

bool box_visible(const Camera& camera, const Box3D& box) {
  if (!all_corners_in_front(camera, box)) return false;
  const Projection p = project_point(camera, box.center);
  return p.pixel.x() >= 0.0 && p.pixel.x() < camera.width && p.pixel.y() >= 0.0 &&
         p.pixel.y() < camera.height;
}

Scene generate_scene(const SimConfig& cfg, std::uint64_t seed) {
  if (cfg.max_objects < 1 || cfg.min_objects < 1 || cfg.min_objects > cfg.max_objects) {
    throw ConfigError("sim: need 1 <= min_objects <= max_objects");
  }
  if (cfg.rig.num_cameras < 2) throw ConfigError("sim: the surround rig needs at least 2 cameras");
  if (cfg.num_classes < 1 || cfg.num_classes > static_cast<int>(class_profiles().size())) {
    throw ConfigError("sim: num_classes must be in [1, " + std::to_string(class_profiles().size()) + "]");
  }
  if (!(cfg.min_radius > 0.0 && cfg.max_radius > cfg.min_radius)) {
    throw ConfigError("sim: need 0 < min_radius < max_radius");
  }
  Scene scene;
  scene.seed = seed;
  scene.sweep_dt = cfg.sweep_dt;
  scene.rig = make_rig(cfg.rig);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double a, double b) { return a + (b - a) * unit(rng); };

  const double ego_speed = uniform(0.0, cfg.ego_speed_max);
  const double ego_yaw = uniform(-cfg.ego_yaw_rate_max, cfg.ego_yaw_rate_max) * cfg.sweep_dt;
  scene.ego_motion = {quat_from_yaw(-ego_yaw), Vec3(-ego_speed * cfg.sweep_dt, 0.0, 0.0)};

  const int count = cfg.min_objects + static_cast<int>(unit(rng) * (cfg.max_objects - cfg.min_objects + 1));
  constexpr int kMaxAttempts = 1000;
  for (int n = 0; n < std::min(count, cfg.max_objects); ++n) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      Box3D b;
      b.class_id = std::min(cfg.num_classes - 1, static_cast<int>(unit(rng) * cfg.num_classes));
      const ClassProfile& prof = class_profiles()[b.class_id];
      for (int a = 0; a < 3; ++a) b.dims[a] = prof.mean_dims[a] * uniform(0.9, 1.1);
      const double r = std::sqrt(uniform(cfg.min_radius * cfg.min_radius, cfg.max_radius * cfg.max_radius));
      const double theta = uniform(-kPi, kPi);
      b.center = Vec3(r * std::cos(theta), r * std::sin(theta), cfg.ground_z + 0.5 * b.dims.z());
      b.yaw = wrap_angle(uniform(-kPi, kPi));
      const double speed = uniform(0.0, prof.max_speed);
      b.velocity = Vec3(speed * std::cos(b.yaw), speed * std::sin(b.yaw), 0.0);
      if (!cfg.range.contains(b.center)) continue;
      const double radius_b = 0.5 * std::hypot(b.dims.x(), b.dims.y());
      bool overlaps = false;
      for (const Box3D& o : scene.boxes) {
        const double radius_o = 0.5 * std::hypot(o.dims.x(), o.dims.y());
        if ((o.center - b.center).head<2>().norm() < radius_b + radius_o + 0.5) overlaps = true;
      }
      if (overlaps) continue;
      if (std::none_of(scene.rig.begin(), scene.rig.end(),
                       [&](const Camera& c) { return box_visible(c, b); })) {
        continue;
      }
      scene.boxes.push_back(b);
      placed = true;
    }
    if (!placed) {
      throw ConfigError("sim: could not place a visible, non-overlapping box after " +
                        std::to_string(kMaxAttempts) + " attempts");
    }
  }
  return scene;
}

std::vector<Image> render_cameras(const std::vector<Box3D>& boxes, const std::vector<Camera>& cameras) {
  std::vector<Image> images;
  images.reserve(cameras.size());
  for (const Camera& cam : cameras) {
    Image img(cam.height, cam.width);
    const Mat3 rt = cam.pose.rotmat().transpose();
    std::vector<std::pair<double, const Box3D*>> order;
    for (const Box3D& b : boxes) {
      if (all_corners_in_front(cam, b)) order.emplace_back((rt * (b.center - cam.center())).z(), &b);
    }
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (const auto& [depth, box] : order) {
      const auto corners = box->corners();
      const Mat3 rb = quat_to_rotmat(quat_from_yaw(box->yaw));
      const Vec3 half(0.5 * box->dims.y(), 0.5 * box->dims.x(), 0.5 * box->dims.z());
      const int channel = box->class_id % 3;
      for (const Face& f : box_faces()) {
        const Vec3 n = rb * f.normal;
        const Vec3 face_center = box->center + rb * f.normal.cwiseProduct(half);
        if (n.dot(cam.center() - face_center) <= 0.0) continue;
        std::array<Vec2, 4> poly;
        for (int i = 0; i < 4; ++i) poly[i] = project_point(cam, corners[f.corners[i]]).pixel;
        fill_convex(img, poly, channel, f.intensity);
      }
    }
    images.push_back(std::move(img));
  }
  return images;
}

SceneImages render(const Scene& scene) {
  return {render_cameras(scene.boxes, scene.rig),
          render_cameras(scene.previous_boxes(), scene.previous_rig())};
}

std::string scene_id(std::uint64_t seed) {
  std::string s = std::to_string(seed);
  if (s.size() < 6) s.insert(0, 6 - s.size(), '0');
  return s;
}

}  // namespace vedet
