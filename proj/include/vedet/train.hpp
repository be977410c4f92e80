#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vedet/config.hpp"
#include "vedet/detector.hpp"
#include "vedet/loss.hpp"
#include "vedet/metrics.hpp"
#include "vedet/optim.hpp"

namespace vedet {

struct Dataset {
  std::vector<LoadedScene> scenes;
};

/// Worker count from VEDET_NUM_WORKERS (default 1).
int num_workers();

/// Generates and renders every seed of the range in memory.
Dataset generate_dataset(const SimConfig& sim, SeedRange seeds);
/// Writes <dir>/<scene_id>/... for every seed; existing scene dirs are rewritten.
void write_dataset(const std::filesystem::path& dir, const SimConfig& sim, SeedRange seeds);
/// Reads every scene directory under `dir` in lexicographic order.
Dataset load_dataset(const std::filesystem::path& dir);

/// Global-frame detections of the last decoder layer: one per query point,
/// labeled with its arg-max class.
std::vector<Detection> detect(const Detector& model, const LoadedScene& scene);
MetricReport evaluate_model(const Detector& model, const Dataset& data, double score_threshold,
                            std::size_t limit = 0);

struct StepLog {
  long iter = 0;
  double lr = 0.0;
  double loss = 0.0;
  double loss_cls = 0.0;
  double loss_reg = 0.0;
  double grad_norm = 0.0;
  std::vector<LayerLoss> layers;  // summed over the batch
};

struct EpochLog {
  int epoch = 0;
  long iters = 0;
  double lr = 0.0;
  double loss = 0.0, loss_cls = 0.0, loss_reg = 0.0;  // epoch means
  MetricReport val;
};

/// Training state for one experiment. Every random draw of iteration i is a
/// pure function of (train.seed, i), so resuming from a checkpoint replays
/// the uninterrupted run exactly.
class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, const Dataset& train);

  Detector& model() { return *model_; }
  const Detector& model() const { return *model_; }
  long iters_per_epoch() const { return iters_per_epoch_; }
  long total_iters() const { return iters_per_epoch_ * cfg_.train.epochs; }
  long iteration() const { return iter_; }

  /// Runs the next iteration.
  StepLog step();

  Checkpoint checkpoint() const;
  void restore(const Checkpoint& ckpt);

  /// Loss of one sample under the configured mode without touching the
  /// optimizer (exposed for checks).
  LossResult sample_loss(ag::Tape& tape, const LoadedScene& sample, std::uint64_t view_seed) const;

 private:
  ExperimentConfig cfg_;
  const Dataset* train_;
  std::unique_ptr<Detector> model_;
  std::unique_ptr<AdamW> opt_;
  long iters_per_epoch_ = 1;
  long iter_ = 0;
};

struct TrainOptions {
  /// Output directory for checkpoint.bin, metrics.csv, losses.csv and the
  /// resolved config; empty writes nothing.
  std::filesystem::path out_dir;
  std::optional<Checkpoint> resume;
  /// Stop after this many iterations in total (testing); 0 runs to the end.
  long stop_after = 0;
  std::function<void(const StepLog&)> on_step;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::vector<StepLog> steps;
  Checkpoint checkpoint;
  /// True when the schedule ran to its last iteration.
  bool finished = false;
};

TrainResult train(const ExperimentConfig& cfg, const Dataset& train, const Dataset& val,
                  const TrainOptions& opts = {});

/// Column names of metrics.csv.
const std::vector<std::string>& metrics_columns();
std::string metrics_row(const EpochLog& e);

/// 64-bit mix of a seed and a stream of integers.
std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts);

}  // namespace vedet
