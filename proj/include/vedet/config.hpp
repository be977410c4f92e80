#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "vedet/detector.hpp"
#include "vedet/loss.hpp"
#include "vedet/optim.hpp"
#include "vedet/scene.hpp"

namespace vedet {

/// Half-open seed interval [begin, end).
struct SeedRange {
  std::uint64_t begin = 0;
  std::uint64_t end = 0;
  std::uint64_t size() const { return end > begin ? end - begin : 0; }
  bool operator==(const SeedRange&) const = default;
};
SeedRange parse_seed_range(const std::string& text);

struct LossConfig {
  LossWeights weights;
  int virtual_views = 2;
  ViewSamplingRanges view_ranges;
};

struct TrainConfig {
  ScheduleConfig schedule;
  AdamWConfig adamw;
  int epochs = 24;
  /// Iterations per epoch; 0 means one pass over the training split.
  int iters_per_epoch = 0;
  int batch_size = 1;
  std::uint64_t seed = 0;
  AugmentationConfig augment;
};

struct EvalConfig {
  double score_threshold = 0.0;
  /// Validation scenes scored after each epoch; 0 means all.
  int epoch_val_scenes = 0;
};

struct AblationConfig {
  bool joint_match = true;
};

/// Angles as written in config files, in degrees. finalize() converts them
/// into the radian fields of the other sections.
struct AngleConfig {
  double view_yaw_min = 0.0;
  double view_yaw_max = 360.0;
  double view_max_tilt = 0.0;
  double rot_min = 0.0;
  double rot_max = 0.0;
};

struct ExperimentConfig {
  SimConfig sim;
  SeedRange train_seeds{0, 2000};
  SeedRange val_seeds{1000000, 1000200};
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  EvalConfig eval;
  AblationConfig ablation;
  AngleConfig angles;

  /// Derives dependent fields (radians, model range and class count) and
  /// checks cross-section constraints.
  void finalize();
};

/// Applies one "section.key = value" assignment. Unknown keys and bad
/// values raise ConfigError naming the key path.
void apply_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
/// Applies every key of an INI file on top of `cfg`.
void apply_config_file(ExperimentConfig& cfg, const std::filesystem::path& path);
/// Layered load: defaults, then each file in order, then "key=value" overrides.
ExperimentConfig load_config(const std::vector<std::filesystem::path>& files,
                             const std::vector<std::string>& overrides);
/// Every key with its resolved value, INI formatted.
std::string dump_config(const ExperimentConfig& cfg);
std::vector<std::string> config_keys();

}  // namespace vedet
