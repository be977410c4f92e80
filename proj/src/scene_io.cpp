#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vedet/errors.hpp"
#include "vedet/scene.hpp"

namespace vedet {

using nlohmann::json;

namespace {

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json pose_json(const Pose& p) {
  const Quaternion& q = p.rotation;
  return {{"rotation_wxyz", json::array({q.w(), q.x(), q.y(), q.z()})},
          {"translation_m", vec_json(p.translation)}};
}

// Field access with the JSON path in every diagnostic.
class Reader {
 public:
  explicit Reader(std::string file) : file_(std::move(file)) {}

  [[noreturn]] void fail(const std::string& path, const std::string& what) const {
    throw ParseError(file_ + ": field '" + path + "': " + what);
  }

  const json& field(const json& obj, const std::string& key, const std::string& path) const {
    if (!obj.is_object()) fail(path, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) fail(path + "." + key, "missing");
    return *it;
  }

  double number(const json& obj, const std::string& key, const std::string& path) const {
    const json& v = field(obj, key, path);
    if (!v.is_number()) fail(path + "." + key, "expected a number");
    return v.get<double>();
  }

  std::int64_t integer(const json& obj, const std::string& key, const std::string& path) const {
    const json& v = field(obj, key, path);
    if (!v.is_number_integer()) fail(path + "." + key, "expected an integer");
    return v.get<std::int64_t>();
  }

  std::vector<double> numbers(const json& obj, const std::string& key, const std::string& path,
                              std::size_t n) const {
    const json& v = field(obj, key, path);
    if (!v.is_array() || v.size() != n) fail(path + "." + key, "expected an array of " + std::to_string(n) + " numbers");
    std::vector<double> out;
    for (const json& e : v) {
      if (!e.is_number()) fail(path + "." + key, "expected numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  Vec3 vec3(const json& obj, const std::string& key, const std::string& path) const {
    const auto v = numbers(obj, key, path, 3);
    return {v[0], v[1], v[2]};
  }

  Pose pose(const json& obj, const std::string& key, const std::string& path) const {
    const json& p = field(obj, key, path);
    const std::string sub = path + "." + key;
    const auto q = numbers(p, "rotation_wxyz", sub, 4);
    const double n2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3];
    if (std::abs(n2 - 1.0) > 1e-9 || q[0] < 0.0) fail(sub + ".rotation_wxyz", "not a canonical unit quaternion");
    return {Quaternion::unchecked(q[0], q[1], q[2], q[3]), vec3(p, "translation_m", sub)};
  }

 private:
  std::string file_;
};

}  // namespace

void write_scene(const std::filesystem::path& path, const Scene& scene) {
  json j;
  j["schema_version"] = kSceneSchemaVersion;
  j["seed"] = scene.seed;
  j["sweep_dt_s"] = scene.sweep_dt;
  j["ego_motion"] = pose_json(scene.ego_motion);
  j["cameras"] = json::array();
  for (const Camera& c : scene.rig) {
    j["cameras"].push_back({{"fx_px", c.fx},
                            {"fy_px", c.fy},
                            {"cx_px", c.cx},
                            {"cy_px", c.cy},
                            {"height_px", c.height},
                            {"width_px", c.width},
                            {"alpha", c.alpha},
                            {"pose", pose_json(c.pose)}});
  }
  j["boxes"] = json::array();
  for (const Box3D& b : scene.boxes) {
    j["boxes"].push_back({{"center_m", vec_json(b.center)},
                          {"dims_wlh_m", vec_json(b.dims)},
                          {"yaw_rad", b.yaw},
                          {"velocity_mps", vec_json(b.velocity)},
                          {"class_id", b.class_id}});
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw Error("failed writing " + path.string());
}

Scene read_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw ParseError(path.string() + ":" + std::to_string(line) + ": malformed JSON: " + e.what());
  }
  Reader r(path.string());
  const std::int64_t version = r.integer(j, "schema_version", "$");
  if (version != kSceneSchemaVersion) {
    throw UnsupportedVersionError(path.string() + ": unsupported schema_version " +
                                  std::to_string(version) + " (expected " +
                                  std::to_string(kSceneSchemaVersion) + ")");
  }
  Scene s;
  const json& seed = r.field(j, "seed", "$");
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0)) {
    r.fail("$.seed", "expected a non-negative integer");
  }
  s.seed = seed.get<std::uint64_t>();
  s.sweep_dt = r.number(j, "sweep_dt_s", "$");
  s.ego_motion = r.pose(j, "ego_motion", "$");
  const json& cams = r.field(j, "cameras", "$");
  if (!cams.is_array()) r.fail("$.cameras", "expected an array");
  for (std::size_t i = 0; i < cams.size(); ++i) {
    const std::string p = "$.cameras[" + std::to_string(i) + "]";
    Camera c;
    c.fx = r.number(cams[i], "fx_px", p);
    c.fy = r.number(cams[i], "fy_px", p);
    c.cx = r.number(cams[i], "cx_px", p);
    c.cy = r.number(cams[i], "cy_px", p);
    c.height = static_cast<int>(r.integer(cams[i], "height_px", p));
    c.width = static_cast<int>(r.integer(cams[i], "width_px", p));
    c.alpha = r.number(cams[i], "alpha", p);
    c.pose = r.pose(cams[i], "pose", p);
    if (!(c.fx > 0.0 && c.fy > 0.0)) r.fail(p, "focal lengths must be positive");
    s.rig.push_back(c);
  }
  const json& boxes = r.field(j, "boxes", "$");
  if (!boxes.is_array()) r.fail("$.boxes", "expected an array");
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const std::string p = "$.boxes[" + std::to_string(i) + "]";
    Box3D b;
    b.center = r.vec3(boxes[i], "center_m", p);
    b.dims = r.vec3(boxes[i], "dims_wlh_m", p);
    b.yaw = r.number(boxes[i], "yaw_rad", p);
    b.velocity = r.vec3(boxes[i], "velocity_mps", p);
    b.class_id = static_cast<int>(r.integer(boxes[i], "class_id", p));
    if ((b.dims.array() <= 0.0).any()) r.fail(p + ".dims_wlh_m", "dimensions must be positive");
    s.boxes.push_back(b);
  }
  return s;
}

void write_scene_dir(const std::filesystem::path& dir, const Scene& scene, const SceneImages& images) {
  std::filesystem::create_directories(dir);
  write_scene(dir / "meta.json", scene);
  for (std::size_t i = 0; i < images.current.size(); ++i) {
    write_ppm(dir / ("cam" + std::to_string(i) + "_t.ppm"), images.current[i]);
  }
  for (std::size_t i = 0; i < images.previous.size(); ++i) {
    write_ppm(dir / ("cam" + std::to_string(i) + "_t-1.ppm"), images.previous[i]);
  }
}

LoadedScene read_scene_dir(const std::filesystem::path& dir) {
  LoadedScene out;
  out.scene = read_scene(dir / "meta.json");
  for (std::size_t i = 0; i < out.scene.rig.size(); ++i) {
    out.images.current.push_back(read_ppm(dir / ("cam" + std::to_string(i) + "_t.ppm")));
    const auto prev = dir / ("cam" + std::to_string(i) + "_t-1.ppm");
    if (std::filesystem::exists(prev)) out.images.previous.push_back(read_ppm(prev));
  }
  return out;
}

}  // namespace vedet
