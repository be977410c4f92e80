#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vedet/metrics.hpp"
#include "vedet/train.hpp"

namespace vedet {

/// One named cell of an ablation matrix: "section.key=value" overrides
/// applied on top of the base configs.
struct AblationCell {
  std::string name;
  std::vector<std::string> overrides;
};

/// INI file with a [matrix] section (config = base files relative to the
/// matrix file, seeds = comma list, optional set.<key> overrides shared by
/// every cell) and one [cell.<name>] section per cell.
struct AblationMatrix {
  std::vector<std::filesystem::path> configs;
  std::vector<std::string> overrides;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationCell> cells;
};
AblationMatrix parse_ablation_matrix(const std::filesystem::path& path);

/// Overrides that select seed k for a run: train.seed and model.init_seed.
std::vector<std::string> seed_overrides(std::uint64_t seed);

/// Header and rows of a comma-separated file of numbers and labels.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;
  double number(std::size_t row, const std::string& name) const;
};
CsvTable read_csv(const std::filesystem::path& path);

/// Columns of final.csv and the ablation table.
const std::vector<std::string>& report_columns();
std::string report_row(const MetricReport& r);

/// Per-scene detections in the global frame, keyed by scene id.
using PredictionSet = std::map<std::string, std::vector<Detection>>;
void write_predictions(const std::filesystem::path& path, const PredictionSet& preds);
PredictionSet read_predictions(const std::filesystem::path& path);
/// Scores predictions against a dataset; scenes without an entry count as
/// having no detections.
MetricReport evaluate_predictions(const PredictionSet& preds, const Dataset& data, int num_classes,
                                  double score_threshold);

/// Ablation output layout: <dir>/table.csv and <dir>/runs/<cell>/seed<k>/.
std::filesystem::path run_dir(const std::filesystem::path& out, const std::string& cell, std::uint64_t seed);

struct CurvePoint {
  int epoch = 0;
  double mAP = 0.0;
  double nds_like = 0.0;
};

/// Seed-averaged per-epoch curves and final metrics of one cell.
struct CellSummary {
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::vector<CurvePoint> curve;
  double mAP = 0.0, mAP_std = 0.0;
  double nds_like = 0.0, mATE = 0.0;
};

/// Reads table.csv and every run's metrics.csv under an ablation output
/// directory. An empty filter keeps every cell, in table order.
std::vector<CellSummary> summarize_ablation(const std::filesystem::path& dir,
                                            const std::vector<std::string>& cells = {});

/// Writes curves.svg (per-epoch mAP and nds_like, one labeled line per
/// cell), curves.csv, ablation.svg, ablation.csv and ablation.txt.
void write_report(const std::vector<CellSummary>& cells, const std::filesystem::path& out);

}  // namespace vedet
