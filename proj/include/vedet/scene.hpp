#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vedet/geometry.hpp"
#include "vedet/image.hpp"

namespace vedet {

/// [x_min, y_min, z_min, x_max, y_max, z_max] in meters.
struct ObjectRange {
  Vec3 min{-20.0, -20.0, -2.0};
  Vec3 max{20.0, 20.0, 2.0};

  Vec3 span() const { return max - min; }
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

/// Surround rig: cameras evenly spaced in yaw, mounted on a circle around
/// the ego origin and looking outward.
struct RigConfig {
  int num_cameras = 4;
  int image_height = 64;
  int image_width = 64;
  double hfov_deg = 90.0;
  double alpha = 1.0 / 16.0;
  double mount_radius = 0.5;
  double mount_height = 1.0;
};

struct SimConfig {
  RigConfig rig;
  ObjectRange range;
  int num_classes = 3;
  int min_objects = 1;
  int max_objects = 4;
  /// Boxes are placed uniformly by area in this ground-plane annulus.
  double min_radius = 3.0;
  double max_radius = 10.0;
  double ground_z = -1.5;
  double sweep_dt = 0.5;
  double ego_speed_max = 4.0;
  double ego_yaw_rate_max = 0.2;
};

/// One synthetic sample: ground truth at the current sweep, the camera rig
/// in the current global frame, and the previous-to-current ego motion.
struct Scene {
  std::vector<Box3D> boxes;
  std::vector<Camera> rig;
  Pose ego_motion;
  double sweep_dt = 0.5;
  std::uint64_t seed = 0;

  bool operator==(const Scene&) const = default;
  /// Rig poses at the previous sweep, expressed in the current global frame.
  std::vector<Camera> previous_rig() const;
  /// Boxes moved back by velocity * sweep_dt.
  std::vector<Box3D> previous_boxes() const;
};

struct SceneImages {
  std::vector<Image> current;
  std::vector<Image> previous;
  bool operator==(const SceneImages&) const = default;
};

/// Class names and mean (w, l, h) dimensions of the synthetic classes.
struct ClassProfile {
  const char* name;
  Vec3 mean_dims;
  double max_speed;
};
const std::vector<ClassProfile>& class_profiles();

std::vector<Camera> make_rig(const RigConfig& cfg);
/// True when every corner of the box is in front of the camera and its
/// center projects inside the image.
bool box_visible(const Camera& camera, const Box3D& box);

Scene generate_scene(const SimConfig& cfg, std::uint64_t seed);

std::vector<Image> render_cameras(const std::vector<Box3D>& boxes, const std::vector<Camera>& cameras);
SceneImages render(const Scene& scene);

struct AugmentationConfig {
  double resize_min = 1.0;
  double resize_max = 1.0;
  /// Final crop size; 0 keeps the resized size.
  int crop_height = 0;
  int crop_width = 0;
  double hflip_prob = 0.0;
  double rot_min = 0.0;
  double rot_max = 0.0;
  double scale_min = 1.0;
  double scale_max = 1.0;
};

/// Parameters actually drawn by one augment() call.
struct AppliedAugmentation {
  double resize_x = 1.0, resize_y = 1.0;
  int crop_top = 0, crop_left = 0;
  bool flipped = false;
  int flip_width = 0;
  double rotation = 0.0;
  double scale = 1.0;
};

struct AugmentResult {
  Scene scene;
  SceneImages images;
  AppliedAugmentation applied;
};

/// Resize, crop, horizontal flip, global rotation, global scaling, in that
/// order, keeping boxes and cameras geometrically consistent with the images.
AugmentResult augment(const Scene& scene, const SceneImages& images, const AugmentationConfig& cfg,
                      std::uint64_t seed);

/// Scene meta file (JSON, schema version 1) and dataset directories.
inline constexpr int kSceneSchemaVersion = 1;
void write_scene(const std::filesystem::path& path, const Scene& scene);
Scene read_scene(const std::filesystem::path& path);

/// <dir>/meta.json, cam{i}_t.ppm, cam{i}_t-1.ppm
void write_scene_dir(const std::filesystem::path& dir, const Scene& scene, const SceneImages& images);
struct LoadedScene {
  Scene scene;
  SceneImages images;
};
LoadedScene read_scene_dir(const std::filesystem::path& dir);
std::string scene_id(std::uint64_t seed);

}  // namespace vedet
