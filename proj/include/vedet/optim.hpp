#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "vedet/nn.hpp"

namespace vedet {

struct ScheduleConfig {
  double lr_init = 2e-4;
  double lr_final = 2e-7;
  int warmup_iters = 500;
};

/// Linear warmup from lr_init/3 to lr_init, then cosine decay to lr_final
/// at total_iters.
double lr_at(long iter, long total_iters, const ScheduleConfig& cfg);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double backbone_lr_mult = 0.1;
  /// Global gradient-norm clip; <= 0 disables.
  double grad_clip = 35.0;
};

class AdamW {
 public:
  AdamW(nn::ParameterStore& store, const AdamWConfig& cfg);

  /// One update with the accumulated gradients; returns the pre-clip
  /// gradient norm.
  double step(double lr);
  long steps() const { return step_; }

  /// Moment buffers keyed "adam.m/<param>" and "adam.v/<param>".
  std::map<std::string, nn::Mat> state() const;
  void load_state(const std::map<std::string, nn::Mat>& state, long steps);

 private:
  nn::ParameterStore* store_;
  AdamWConfig cfg_;
  std::map<std::string, nn::Mat> m_, v_;
  long step_ = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Flat name -> float64 tensor map plus integer metadata.
struct Checkpoint {
  std::map<std::string, nn::Mat> tensors;
  std::map<std::string, std::int64_t> meta;
  bool operator==(const Checkpoint&) const = default;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies every store parameter into the checkpoint under its own name.
void store_to_checkpoint(const nn::ParameterStore& store, Checkpoint& ckpt);
/// Loads parameters by name; a missing name or shape mismatch is an error.
void checkpoint_to_store(const Checkpoint& ckpt, nn::ParameterStore& store);

}  // namespace vedet
