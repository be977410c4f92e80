#pragma once

#include <array>
#include <vector>

#include "vedet/detector.hpp"
#include "vedet/hungarian.hpp"

namespace vedet {

struct LossWeights {
  double lambda_cls = 2.0;
  double lambda_reg = 0.25;
  double lambda_v = 0.2;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  /// Per-scalar weights of the 11-value box code, used in both the matching
  /// cost and the regression loss.
  std::array<double, kBoxCode> code_weights{1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
};

enum class MatchMode { kJoint, kIndependent };

/// One ground-truth object expressed in every view, (V+1, 11).
struct GtSuperBox {
  Eigen::MatrixXd codes;
  int class_id = 0;
};

using BoxCode = Eigen::Matrix<double, kBoxCode, 1>;

GtSuperBox build_gt_super_box(const Box3D& gt, const std::vector<Pose>& views, const ObjectRange& range);

/// Regroups a view-major (P*(V+1), 11) box matrix into (P, 11*(V+1)) super boxes.
Eigen::MatrixXd build_super_boxes(const Eigen::MatrixXd& boxes, int num_points, int num_views);

/// Regression cost: view 0 with weight 1, virtual views with lambda_v.
double super_box_l1(const Eigen::Ref<const Eigen::RowVectorXd>& pred, const GtSuperBox& gt,
                    const LossWeights& w);

/// -log(max(p, 1e-12)) + super_box_l1.
double matching_cost(const Eigen::Ref<const Eigen::RowVectorXd>& super_pred,
                     const Eigen::Ref<const Eigen::RowVectorXd>& probs, const GtSuperBox& gt,
                     const LossWeights& w);

/// (P, G) cost matrix over all super boxes and GT objects.
Eigen::MatrixXd cost_matrix(const Eigen::MatrixXd& super_preds, const Eigen::MatrixXd& probs,
                            const std::vector<GtSuperBox>& gts, const LossWeights& w);

struct LayerLoss {
  double total = 0.0;
  double cls = 0.0;  // weighted focal term
  double reg = 0.0;  // weighted L1 term
  /// point_of_gt[v][m]: query point supervising GT m in view v. Joint
  /// matching fills every view with the same assignment.
  std::vector<std::vector<int>> point_of_gt;
};

struct LossResult {
  ag::Var total;
  std::vector<LayerLoss> layers;
};

struct LossOptions {
  LossWeights weights;
  MatchMode mode = MatchMode::kJoint;
  /// GT list repetition for the extra-query baseline.
  int gt_copies = 1;
};

/// Deep-supervised matching loss summed over every decoder layer.
LossResult detection_loss(const ForwardResult& fwd, const std::vector<Box3D>& gt, const ObjectRange& range,
                          const LossOptions& opts);

}  // namespace vedet
