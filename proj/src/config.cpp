#include "vedet/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "vedet/errors.hpp"

namespace vedet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& want) {
  throw ConfigError("config: key '" + key + "': cannot parse '" + value + "' as " + want);
}

double to_double(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  double out = 0.0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || p != t.data() + t.size() || !std::isfinite(out)) bad(key, v, "a number");
  return out;
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  std::int64_t out = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || p != t.data() + t.size()) bad(key, v, "an integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  if (t == "true") return true;
  if (t == "false") return false;
  bad(key, v, "true/false");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

Vec3 to_vec3(const std::string& key, const std::string& v) {
  const auto parts = split(v, ',');
  if (parts.size() != 3) bad(key, v, "three comma-separated numbers");
  return {to_double(key, parts[0]), to_double(key, parts[1]), to_double(key, parts[2])};
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string fmt(const Vec3& v) { return fmt(v.x()) + ", " + fmt(v.y()) + ", " + fmt(v.z()); }

struct Entry {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename Field>
Entry real(std::string key, Field field) {
  return {key, [key, field](ExperimentConfig& c, const std::string& v) { field(c) = to_double(key, v); },
          [field](const ExperimentConfig& c) { return fmt(field(const_cast<ExperimentConfig&>(c))); }};
}

template <typename Field>
Entry integer(std::string key, Field field) {
  return {key,
          [key, field](ExperimentConfig& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(field(c))>;
            const std::int64_t x = to_int(key, v);
            if constexpr (std::is_unsigned_v<T>) {
              if (x < 0) bad(key, v, "a non-negative integer");
            }
            field(c) = static_cast<T>(x);
          },
          [field](const ExperimentConfig& c) { return std::to_string(field(const_cast<ExperimentConfig&>(c))); }};
}

template <typename Field>
Entry boolean(std::string key, Field field) {
  return {key, [key, field](ExperimentConfig& c, const std::string& v) { field(c) = to_bool(key, v); },
          [field](const ExperimentConfig& c) {
            return std::string(field(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
          }};
}

template <typename Field>
Entry vec3(std::string key, Field field) {
  return {key, [key, field](ExperimentConfig& c, const std::string& v) { field(c) = to_vec3(key, v); },
          [field](const ExperimentConfig& c) { return fmt(field(const_cast<ExperimentConfig&>(c))); }};
}

template <typename Field>
Entry seeds(std::string key, Field field) {
  return {key,
          [key, field](ExperimentConfig& c, const std::string& v) {
            try {
              field(c) = parse_seed_range(v);
            } catch (const ConfigError&) {
              bad(key, v, "a seed range A:B");
            }
          },
          [field](const ExperimentConfig& c) {
            const SeedRange& r = field(const_cast<ExperimentConfig&>(c));
            return std::to_string(r.begin) + ":" + std::to_string(r.end);
          }};
}

#define F(expr) [](ExperimentConfig& c) -> auto& { return expr; }

const std::vector<Entry>& schema() {
  static const std::vector<Entry> entries = {
      integer("sim.num_cameras", F(c.sim.rig.num_cameras)),
      integer("sim.image_height", F(c.sim.rig.image_height)),
      integer("sim.image_width", F(c.sim.rig.image_width)),
      real("sim.hfov_deg", F(c.sim.rig.hfov_deg)),
      {"sim.feature_stride",
       [](ExperimentConfig& c, const std::string& v) {
         const std::int64_t s = to_int("sim.feature_stride", v);
         if (s < 1) bad("sim.feature_stride", v, "a positive integer");
         c.sim.rig.alpha = 1.0 / static_cast<double>(s);
       },
       [](const ExperimentConfig& c) { return std::to_string(std::lround(1.0 / c.sim.rig.alpha)); }},
      real("sim.mount_radius", F(c.sim.rig.mount_radius)),
      real("sim.mount_height", F(c.sim.rig.mount_height)),
      vec3("sim.range_min", F(c.sim.range.min)),
      vec3("sim.range_max", F(c.sim.range.max)),
      integer("sim.num_classes", F(c.sim.num_classes)),
      integer("sim.min_objects", F(c.sim.min_objects)),
      integer("sim.max_objects", F(c.sim.max_objects)),
      real("sim.min_radius", F(c.sim.min_radius)),
      real("sim.max_radius", F(c.sim.max_radius)),
      real("sim.ground_z", F(c.sim.ground_z)),
      real("sim.sweep_dt", F(c.sim.sweep_dt)),
      real("sim.ego_speed_max", F(c.sim.ego_speed_max)),
      real("sim.ego_yaw_rate_max", F(c.sim.ego_yaw_rate_max)),
      seeds("sim.train_seeds", F(c.train_seeds)),
      seeds("sim.val_seeds", F(c.val_seeds)),

      integer("model.num_layers", F(c.model.decoder.num_layers)),
      integer("model.embed_dim", F(c.model.decoder.embed_dim)),
      integer("model.num_heads", F(c.model.decoder.num_heads)),
      integer("model.ffn_dim", F(c.model.decoder.ffn_dim)),
      real("model.dropout", F(c.model.decoder.dropout)),
      boolean("model.per_view_self_attention", F(c.model.decoder.per_view_self_attention)),
      integer("model.geometry_hidden", F(c.model.geometry_hidden)),
      {"model.backbone_channels",
       [](ExperimentConfig& c, const std::string& v) {
         std::vector<int> ch;
         for (const std::string& p : split(v, ',')) {
           const std::int64_t x = to_int("model.backbone_channels", p);
           if (x < 1) bad("model.backbone_channels", v, "positive integers");
           ch.push_back(static_cast<int>(x));
         }
         c.model.backbone_channels = ch;
       },
       [](const ExperimentConfig& c) {
         std::string s;
         for (std::size_t i = 0; i < c.model.backbone_channels.size(); ++i) {
           s += (i ? ", " : "") + std::to_string(c.model.backbone_channels[i]);
         }
         return s;
       }},
      integer("model.reg_hidden", F(c.model.reg_hidden)),
      integer("model.num_queries", F(c.model.num_queries)),
      boolean("model.two_sweeps", F(c.model.two_sweeps)),
      boolean("model.ray_cell_center", F(c.model.ray_cell_center)),
      integer("model.init_seed", F(c.model.init_seed)),

      real("fourier.f_max", F(c.model.fourier.f_max)),
      integer("fourier.bands", F(c.model.fourier.bands)),

      real("loss.lambda_cls", F(c.loss.weights.lambda_cls)),
      real("loss.lambda_reg", F(c.loss.weights.lambda_reg)),
      real("loss.lambda_v", F(c.loss.weights.lambda_v)),
      real("loss.focal_alpha", F(c.loss.weights.focal_alpha)),
      real("loss.focal_gamma", F(c.loss.weights.focal_gamma)),
      {"loss.code_weights",
       [](ExperimentConfig& c, const std::string& v) {
         const auto parts = split(v, ',');
         if (parts.size() != static_cast<std::size_t>(kBoxCode)) bad("loss.code_weights", v, "11 comma-separated numbers");
         for (std::size_t k = 0; k < parts.size(); ++k) {
           const double x = to_double("loss.code_weights", parts[k]);
           if (x < 0.0) bad("loss.code_weights", v, "non-negative numbers");
           c.loss.weights.code_weights[k] = x;
         }
       },
       [](const ExperimentConfig& c) {
         std::string s;
         for (std::size_t k = 0; k < c.loss.weights.code_weights.size(); ++k) {
           s += (k ? ", " : "") + fmt(c.loss.weights.code_weights[k]);
         }
         return s;
       }},
      integer("loss.virtual_views", F(c.loss.virtual_views)),
      vec3("loss.view_translation_min", F(c.loss.view_ranges.translation_min)),
      vec3("loss.view_translation_max", F(c.loss.view_ranges.translation_max)),
      real("loss.view_yaw_min_deg", F(c.angles.view_yaw_min)),
      real("loss.view_yaw_max_deg", F(c.angles.view_yaw_max)),
      boolean("loss.view_full_rotation", F(c.loss.view_ranges.full_rotation)),
      real("loss.view_max_tilt_deg", F(c.angles.view_max_tilt)),

      real("train.lr_init", F(c.train.schedule.lr_init)),
      real("train.lr_final", F(c.train.schedule.lr_final)),
      integer("train.warmup_iters", F(c.train.schedule.warmup_iters)),
      real("train.weight_decay", F(c.train.adamw.weight_decay)),
      real("train.backbone_lr_mult", F(c.train.adamw.backbone_lr_mult)),
      real("train.grad_clip", F(c.train.adamw.grad_clip)),
      integer("train.epochs", F(c.train.epochs)),
      integer("train.iters_per_epoch", F(c.train.iters_per_epoch)),
      integer("train.batch_size", F(c.train.batch_size)),
      integer("train.seed", F(c.train.seed)),
      real("train.resize_min", F(c.train.augment.resize_min)),
      real("train.resize_max", F(c.train.augment.resize_max)),
      integer("train.crop_height", F(c.train.augment.crop_height)),
      integer("train.crop_width", F(c.train.augment.crop_width)),
      real("train.hflip_prob", F(c.train.augment.hflip_prob)),
      real("train.rot_min_deg", F(c.angles.rot_min)),
      real("train.rot_max_deg", F(c.angles.rot_max)),
      real("train.scale_min", F(c.train.augment.scale_min)),
      real("train.scale_max", F(c.train.augment.scale_max)),

      real("eval.score_threshold", F(c.eval.score_threshold)),
      integer("eval.epoch_val_scenes", F(c.eval.epoch_val_scenes)),

      boolean("ablation.use_fourier", F(c.model.ablation.use_fourier)),
      boolean("ablation.mask_rotation", F(c.model.ablation.mask_rotation)),
      boolean("ablation.mask_translation", F(c.model.ablation.mask_translation)),
      boolean("ablation.joint_match", F(c.ablation.joint_match)),
      integer("ablation.extra_query_sets", F(c.model.extra_query_sets)),
  };
  return entries;
}

#undef F

const Entry& find_entry(const std::string& key) {
  static const std::map<std::string, const Entry*> index = [] {
    std::map<std::string, const Entry*> m;
    for (const Entry& e : schema()) m[e.key] = &e;
    return m;
  }();
  const auto it = index.find(key);
  if (it == index.end()) throw ConfigError("config: unknown key '" + key + "'");
  return *it->second;
}

}  // namespace

SeedRange parse_seed_range(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("seed range '" + text + "' must be A:B");
  SeedRange r;
  try {
    const std::int64_t a = to_int("seed range", text.substr(0, colon));
    const std::int64_t b = to_int("seed range", text.substr(colon + 1));
    if (a < 0 || b < a) throw ConfigError("");
    r.begin = static_cast<std::uint64_t>(a);
    r.end = static_cast<std::uint64_t>(b);
  } catch (const ConfigError&) {
    throw ConfigError("seed range '" + text + "' must be A:B with 0 <= A <= B");
  }
  return r;
}

void ExperimentConfig::finalize() {
  constexpr double deg = kPi / 180.0;
  loss.view_ranges.yaw_min = angles.view_yaw_min * deg;
  loss.view_ranges.yaw_max = angles.view_yaw_max * deg;
  loss.view_ranges.max_tilt = angles.view_max_tilt * deg;
  train.augment.rot_min = angles.rot_min * deg;
  train.augment.rot_max = angles.rot_max * deg;
  model.range = sim.range;
  model.num_classes = sim.num_classes;
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("config: " + msg);
  };
  require((sim.range.min.array() < sim.range.max.array()).all(), "sim.range_min must be below sim.range_max");
  require(sim.rig.num_cameras >= 1, "sim.num_cameras must be >= 1");
  require(model.decoder.num_layers >= 1, "model.num_layers must be >= 1");
  require(model.decoder.embed_dim >= 1 && model.decoder.num_heads >= 1 &&
              model.decoder.embed_dim % model.decoder.num_heads == 0,
          "model.embed_dim must be divisible by model.num_heads");
  require(model.decoder.dropout >= 0.0 && model.decoder.dropout < 1.0, "model.dropout must be in [0, 1)");
  require(model.geometry_hidden >= 1 && model.reg_hidden >= 1 && model.decoder.ffn_dim >= 1,
          "model widths must be positive");
  const int stride = static_cast<int>(std::lround(1.0 / sim.rig.alpha));
  require((1 << (model.backbone_channels.size() + 1)) == stride,
          "model.backbone_channels needs log2(sim.feature_stride) - 1 entries");
  require(model.num_queries >= sim.max_objects, "model.num_queries must be >= sim.max_objects");
  require(model.extra_query_sets >= 0, "ablation.extra_query_sets must be >= 0");
  require(model.fourier.bands >= 1 && model.fourier.f_max > 0.0, "fourier.bands and fourier.f_max must be positive");
  require(loss.virtual_views >= 0, "loss.virtual_views must be >= 0");
  require(loss.weights.lambda_cls > 0.0 && loss.weights.lambda_reg > 0.0 && loss.weights.lambda_v >= 0.0,
          "loss weights must be positive");
  require((loss.view_ranges.translation_min.array() <= loss.view_ranges.translation_max.array()).all(),
          "loss.view_translation_min must not exceed loss.view_translation_max");
  require(loss.virtual_views == 0 || model.extra_query_sets == 0,
          "ablation.extra_query_sets and loss.virtual_views are mutually exclusive");
  require(train.schedule.lr_final <= train.schedule.lr_init && train.schedule.lr_final > 0.0,
          "train.lr_final must be in (0, train.lr_init]");
  require(train.schedule.warmup_iters >= 0, "train.warmup_iters must be >= 0");
  require(train.epochs >= 1 && train.batch_size >= 1 && train.iters_per_epoch >= 0,
          "train.epochs and train.batch_size must be >= 1");
  require(train_seeds.size() > 0, "sim.train_seeds is empty");
  require(val_seeds.size() > 0, "sim.val_seeds is empty");
  require(train_seeds.end <= val_seeds.begin || val_seeds.end <= train_seeds.begin,
          "sim.train_seeds and sim.val_seeds overlap");
  require(eval.epoch_val_scenes >= 0, "eval.epoch_val_scenes must be >= 0");
}

void apply_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  find_entry(trim(key)).set(cfg, value);
}

void apply_config_file(ExperimentConfig& cfg, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config: file not found: " + path.string());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config: " + path.string() + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config: " + path.string() + ": key '" + section + "' outside a section");
    for (const auto& [key, val] : body) {
      try {
        apply_config_value(cfg, section + "." + key, val.data());
      } catch (const ConfigError& e) {
        throw ConfigError(std::string(e.what()) + " (in " + path.string() + ")");
      }
    }
  }
}

ExperimentConfig load_config(const std::vector<std::filesystem::path>& files,
                             const std::vector<std::string>& overrides) {
  ExperimentConfig cfg;
  for (const auto& f : files) apply_config_file(cfg, f);
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("config: override '" + o + "' must be section.key=value");
    apply_config_value(cfg, o.substr(0, eq), o.substr(eq + 1));
  }
  cfg.finalize();
  return cfg;
}

std::string dump_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const Entry& e : schema()) {
    const auto dot = e.key.find('.');
    const std::string s = e.key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) os << "\n";
      os << "[" << s << "]\n";
      section = s;
    }
    os << e.key.substr(dot + 1) << " = " << e.get(cfg) << "\n";
  }
  return os.str();
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Entry& e : schema()) out.push_back(e.key);
  return out;
}

}  // namespace vedet
