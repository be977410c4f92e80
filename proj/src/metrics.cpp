#include "vedet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "vedet/errors.hpp"

namespace vedet {

double average_precision(const std::vector<bool>& tp, int num_gt) {
  if (num_gt <= 0) return 0.0;
  const std::size_t n = tp.size();
  std::vector<double> prec(n), rec(n);
  int ctp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ctp += tp[i] ? 1 : 0;
    prec[i] = static_cast<double>(ctp) / static_cast<double>(i + 1);
    rec[i] = static_cast<double>(ctp) / num_gt;
  }
  for (std::size_t i = n; i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0.0, prev_rec = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (rec[i] > prev_rec) {
      ap += (rec[i] - prev_rec) * prec[i];
      prev_rec = rec[i];
    }
  }
  return ap;
}

MatchResult match_class(const std::vector<std::vector<Detection>>& dets,
                        const std::vector<std::vector<Box3D>>& gts, int class_id, double threshold) {
  MatchResult r;
  for (std::size_t s = 0; s < dets.size(); ++s) {
    for (std::size_t i = 0; i < dets[s].size(); ++i) {
      if (dets[s][i].box.class_id == class_id) r.order.emplace_back(static_cast<int>(s), static_cast<int>(i));
    }
  }
  // Stable on ties so the order is reproducible.
  std::stable_sort(r.order.begin(), r.order.end(), [&](const auto& a, const auto& b) {
    return dets[a.first][a.second].score > dets[b.first][b.second].score;
  });
  std::vector<std::vector<char>> taken(gts.size());
  for (std::size_t s = 0; s < gts.size(); ++s) taken[s].assign(gts[s].size(), 0);
  for (const auto& [s, i] : r.order) {
    const Box3D& d = dets[s][i].box;
    int best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < gts[s].size(); ++g) {
      const Box3D& gt = gts[s][g];
      if (gt.class_id != class_id || taken[s][g]) continue;
      const double dist = (gt.center - d.center).head<2>().norm();
      if (dist < best_dist) {
        best_dist = dist;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_dist <= threshold) {
      taken[s][best] = 1;
      r.tp.push_back(true);
      r.gt_of.emplace_back(s, best);
    } else {
      r.tp.push_back(false);
      r.gt_of.emplace_back(-1, -1);
    }
  }
  return r;
}

double scale_error(const Vec3& a, const Vec3& b) {
  const double inter = a.cwiseMin(b).prod();
  return 1.0 - inter / (a.prod() + b.prod() - inter);
}

MetricReport evaluate_detections(const std::vector<std::vector<Detection>>& dets_in,
                                 const std::vector<std::vector<Box3D>>& gts, int num_classes,
                                 double score_threshold) {
  if (gts.empty()) throw Error("evaluate: empty split");
  if (dets_in.size() != gts.size()) throw StructuralError("evaluate: detections and GT scene counts differ");
  std::vector<std::vector<Detection>> dets(dets_in.size());
  for (std::size_t s = 0; s < dets_in.size(); ++s) {
    for (const Detection& d : dets_in[s]) {
      if (d.score >= score_threshold) dets[s].push_back(d);
    }
  }
  MetricReport rep;
  int used = 0;
  for (int c = 0; c < num_classes; ++c) {
    ClassMetrics cm;
    for (const auto& g : gts) cm.num_gt += static_cast<int>(std::count_if(g.begin(), g.end(), [&](const Box3D& b) { return b.class_id == c; }));
    for (std::size_t t = 0; t < kDistanceThresholds.size(); ++t) {
      const MatchResult m = match_class(dets, gts, c, kDistanceThresholds[t]);
      cm.ap[t] = average_precision(m.tp, cm.num_gt);
      if (kDistanceThresholds[t] != kTpThreshold) continue;
      double ate = 0, ase = 0, aoe = 0, ave = 0;
      for (std::size_t k = 0; k < m.tp.size(); ++k) {
        if (!m.tp[k]) continue;
        const Box3D& d = dets[m.order[k].first][m.order[k].second].box;
        const Box3D& g = gts[m.gt_of[k].first][m.gt_of[k].second];
        ate += (d.center - g.center).head<2>().norm();
        ase += scale_error(d.dims, g.dims);
        aoe += std::abs(wrap_angle(d.yaw - g.yaw));
        ave += (d.velocity - g.velocity).head<2>().norm();
        ++cm.num_tp;
      }
      if (cm.num_tp > 0) {
        cm.ate = ate / cm.num_tp;
        cm.ase = ase / cm.num_tp;
        cm.aoe = aoe / cm.num_tp;
        cm.ave = ave / cm.num_tp;
      }
      if (cm.num_gt > 0) cm.max_recall = static_cast<double>(cm.num_tp) / cm.num_gt;
    }
    if (cm.num_gt > 0) {
      ++used;
      rep.mAP += std::accumulate(cm.ap.begin(), cm.ap.end(), 0.0) / static_cast<double>(cm.ap.size());
      rep.mATE += cm.ate;
      rep.mASE += cm.ase;
      rep.mAOE += cm.aoe;
      rep.mAVE += cm.ave;
    }
    rep.per_class.push_back(cm);
  }
  if (used > 0) {
    rep.mAP /= used;
    rep.mATE /= used;
    rep.mASE /= used;
    rep.mAOE /= used;
    rep.mAVE /= used;
  }
  const double tp_score = (1.0 - std::min(1.0, rep.mATE / 1.0)) + (1.0 - std::min(1.0, rep.mASE / 0.5)) +
                          (1.0 - std::min(1.0, rep.mAOE / (kPi / 2.0))) + (1.0 - std::min(1.0, rep.mAVE / 1.0));
  rep.nds_like = 0.5 * (rep.mAP + tp_score / 4.0);
  return rep;
}

}  // namespace vedet
