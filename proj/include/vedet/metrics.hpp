#pragma once

#include <array>
#include <vector>

#include "vedet/geometry.hpp"

namespace vedet {

struct Detection {
  Box3D box;
  double score = 0.0;
};

inline constexpr std::array<double, 4> kDistanceThresholds{0.5, 1.0, 2.0, 4.0};
inline constexpr double kTpThreshold = 2.0;

struct ClassMetrics {
  std::array<double, 4> ap{};  // one per distance threshold
  double ate = 1.0, ase = 1.0, aoe = 1.0, ave = 1.0;
  int num_gt = 0;
  int num_tp = 0;  // at the TP threshold
  double max_recall = 0.0;  // at the TP threshold
};

struct MetricReport {
  double mAP = 0.0;
  double mATE = 0.0, mASE = 0.0, mAOE = 0.0, mAVE = 0.0;
  double nds_like = 0.0;
  std::vector<ClassMetrics> per_class;
};

/// Area under the precision/recall curve with precision made monotone
/// (all-point interpolation). `tp` flags detections sorted by descending
/// score.
double average_precision(const std::vector<bool>& tp, int num_gt);

/// Greedy center-distance matching per class: detections in descending score
/// order take the nearest unmatched GT within the threshold (BEV distance).
/// Returns TP flags for the sorted detections and the matched GT per TP.
struct MatchResult {
  std::vector<bool> tp;
  std::vector<std::pair<int, int>> gt_of;  // (scene, gt index) or (-1, -1)
  std::vector<std::pair<int, int>> order;  // (scene, detection index), sorted
};
MatchResult match_class(const std::vector<std::vector<Detection>>& dets,
                        const std::vector<std::vector<Box3D>>& gts, int class_id, double threshold);

/// Scale error 1 - IoU of the two boxes after aligning centers and yaw.
double scale_error(const Vec3& dims_a, const Vec3& dims_b);

/// dets[s] and gts[s] belong to scene s. Detections below the score
/// threshold are dropped. Classes without GT are left out of the means.
MetricReport evaluate_detections(const std::vector<std::vector<Detection>>& dets,
                                 const std::vector<std::vector<Box3D>>& gts, int num_classes,
                                 double score_threshold);

}  // namespace vedet
