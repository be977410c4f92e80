#include "vedet/loss.hpp"

#include <algorithm>
#include <cmath>

#include "vedet/errors.hpp"

namespace vedet {

GtSuperBox build_gt_super_box(const Box3D& gt, const std::vector<Pose>& views, const ObjectRange& range) {
  GtSuperBox s;
  s.class_id = gt.class_id;
  s.codes.resize(static_cast<Eigen::Index>(views.size()), kBoxCode);
  for (std::size_t v = 0; v < views.size(); ++v) {
    const Box3D in_view = v == 0 ? gt : transform_box_to_view(gt, views[v]);
    s.codes.row(static_cast<Eigen::Index>(v)) = encode_box(in_view, range).transpose();
  }
  return s;
}

Eigen::MatrixXd build_super_boxes(const Eigen::MatrixXd& boxes, int num_points, int num_views) {
  if (boxes.cols() != kBoxCode || boxes.rows() != static_cast<Eigen::Index>(num_points) * num_views) {
    throw StructuralError("build_super_boxes: expected " + std::to_string(num_points * num_views) +
                          " view predictions, got " + std::to_string(boxes.rows()));
  }
  Eigen::MatrixXd out(num_points, kBoxCode * num_views);
  for (int v = 0; v < num_views; ++v) {
    out.middleCols(v * kBoxCode, kBoxCode) = boxes.middleRows(static_cast<Eigen::Index>(v) * num_points, num_points);
  }
  return out;
}

namespace {

double code_l1(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b,
               const LossWeights& w) {
  double s = 0.0;
  for (int k = 0; k < kBoxCode; ++k) s += w.code_weights[static_cast<std::size_t>(k)] * std::abs(a[k] - b[k]);
  return s;
}

}  // namespace

double super_box_l1(const Eigen::Ref<const Eigen::RowVectorXd>& pred, const GtSuperBox& gt, const LossWeights& w) {
  double total = 0.0;
  for (Eigen::Index v = 0; v < gt.codes.rows(); ++v) {
    total += (v == 0 ? 1.0 : w.lambda_v) * code_l1(pred.segment(v * kBoxCode, kBoxCode), gt.codes.row(v), w);
  }
  return total;
}

double matching_cost(const Eigen::Ref<const Eigen::RowVectorXd>& super_pred,
                     const Eigen::Ref<const Eigen::RowVectorXd>& probs, const GtSuperBox& gt,
                     const LossWeights& w) {
  return -std::log(std::max(probs[gt.class_id], 1e-12)) + super_box_l1(super_pred, gt, w);
}

Eigen::MatrixXd cost_matrix(const Eigen::MatrixXd& super_preds, const Eigen::MatrixXd& probs,
                            const std::vector<GtSuperBox>& gts, const LossWeights& w) {
  Eigen::MatrixXd c(super_preds.rows(), static_cast<Eigen::Index>(gts.size()));
  for (Eigen::Index j = 0; j < c.rows(); ++j) {
    for (std::size_t m = 0; m < gts.size(); ++m) {
      c(j, static_cast<Eigen::Index>(m)) = matching_cost(super_preds.row(j), probs.row(j), gts[m], w);
    }
  }
  return c;
}

namespace {

// Matching for view v alone (independent mode).
std::vector<int> match_single_view(const Eigen::MatrixXd& boxes, const Eigen::MatrixXd& probs,
                                   const std::vector<GtSuperBox>& gts, int view, int num_points,
                                   const LossWeights& w) {
  Eigen::MatrixXd c(num_points, static_cast<Eigen::Index>(gts.size()));
  for (int j = 0; j < num_points; ++j) {
    const auto pred = boxes.row(static_cast<Eigen::Index>(view) * num_points + j);
    for (std::size_t m = 0; m < gts.size(); ++m) {
      c(j, static_cast<Eigen::Index>(m)) = -std::log(std::max(probs(j, gts[m].class_id), 1e-12)) +
                                           code_l1(pred, gts[m].codes.row(view), w);
    }
  }
  return hungarian(c).row_of_col;
}

}  // namespace

LossResult detection_loss(const ForwardResult& fwd, const std::vector<Box3D>& gt, const ObjectRange& range,
                          const LossOptions& opts) {
  if (fwd.layers.empty()) throw StructuralError("detection_loss: no decoder layers");
  if (opts.gt_copies < 1) throw ConfigError("detection_loss: gt_copies must be >= 1");
  const LossWeights& w = opts.weights;
  const int points = fwd.num_points;
  const int views = fwd.num_views;
  std::vector<GtSuperBox> gts;
  for (int copy = 0; copy < opts.gt_copies; ++copy) {
    for (const Box3D& b : gt) gts.push_back(build_gt_super_box(b, fwd.views, range));
  }
  const int num_gt = static_cast<int>(gts.size());
  if (num_gt > points) {
    throw StructuralError("detection_loss: " + std::to_string(num_gt) + " targets exceed " +
                          std::to_string(points) + " query points");
  }
  const double norm = std::max(1.0, static_cast<double>(num_gt));
  std::vector<double> view_weight(static_cast<std::size_t>(views), w.lambda_v);
  view_weight[0] = 1.0;

  LossResult res;
  std::vector<ag::Var> terms;
  for (const LayerOutput& layer : fwd.layers) {
    const ag::Mat& logits = layer.cls_logits.value();
    const Eigen::MatrixXd probs = logits.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    const Eigen::MatrixXd boxes = layer.box.value();
    LayerLoss ll;
    if (num_gt > 0) {
      if (opts.mode == MatchMode::kJoint || views == 1) {
        const Eigen::MatrixXd supers = build_super_boxes(boxes, points, views);
        const std::vector<int> a = hungarian(cost_matrix(supers, probs, gts, w)).row_of_col;
        ll.point_of_gt.assign(static_cast<std::size_t>(views), a);
      } else {
        for (int v = 0; v < views; ++v) ll.point_of_gt.push_back(match_single_view(boxes, probs, gts, v, points, w));
      }
    } else {
      ll.point_of_gt.assign(static_cast<std::size_t>(views), {});
    }

    ag::Mat targets = ag::Mat::Zero(logits.rows(), logits.cols());
    for (int m = 0; m < num_gt; ++m) targets(ll.point_of_gt[0][static_cast<std::size_t>(m)], gts[static_cast<std::size_t>(m)].class_id) = 1.0;
    const ag::Var cls = ag::scale(ag::sigmoid_focal_loss(layer.cls_logits, targets, w.focal_alpha, w.focal_gamma),
                                  w.lambda_cls / norm);
    ll.cls = cls.scalar();
    ag::Var total = cls;
    if (num_gt > 0) {
      std::vector<int> rows;
      std::vector<double> row_w;
      ag::Mat target(static_cast<Eigen::Index>(num_gt) * views, kBoxCode);
      for (int v = 0; v < views; ++v) {
        for (int m = 0; m < num_gt; ++m) {
          const int j = ll.point_of_gt[static_cast<std::size_t>(v)][static_cast<std::size_t>(m)];
          target.row(static_cast<Eigen::Index>(rows.size())) = gts[static_cast<std::size_t>(m)].codes.row(v);
          rows.push_back(v * points + j);
          row_w.push_back(view_weight[static_cast<std::size_t>(v)]);
        }
      }
      ag::Mat cw(1, kBoxCode);
      for (int k = 0; k < kBoxCode; ++k) cw(0, k) = w.code_weights[static_cast<std::size_t>(k)];
      const ag::Var picked = ag::mul_row(ag::gather_rows(layer.box, rows), layer.box.tape->constant(cw));
      target.array().rowwise() *= cw.row(0).array();
      const ag::Var reg = ag::scale(ag::weighted_l1(picked, target, row_w), w.lambda_reg / norm);
      ll.reg = reg.scalar();
      total = ag::add(total, reg);
    }
    ll.total = total.scalar();
    terms.push_back(total);
    res.layers.push_back(std::move(ll));
  }
  res.total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) res.total = ag::add(res.total, terms[i]);
  return res;
}

}  // namespace vedet
