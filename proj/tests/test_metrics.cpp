#include <random>

#include "doctest.h"
#include "vedet/errors.hpp"
#include "vedet/metrics.hpp"

using namespace vedet;

namespace {

Box3D box_at(double x, double y, int cls = 0) {
  Box3D b;
  b.center = Vec3(x, y, 0.0);
  b.dims = Vec3(1.0, 2.0, 1.5);
  b.class_id = cls;
  return b;
}

}  // namespace

TEST_CASE("a perfect predictor scores one with zero errors") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-15.0, 15.0);
  std::vector<std::vector<Box3D>> gts(20);
  std::vector<std::vector<Detection>> dets(20);
  for (int s = 0; s < 20; ++s) {
    for (int k = 0; k < 3; ++k) {
      Box3D b = box_at(u(rng), u(rng), static_cast<int>(rng() % 3));
      b.yaw = u(rng) / 5.0;
      b.velocity = Vec3(u(rng) / 5.0, 0.0, 0.0);
      gts[s].push_back(b);
      dets[s].push_back({b, 0.9});
    }
  }
  const MetricReport r = evaluate_detections(dets, gts, 3, 0.0);
  CHECK(r.mAP == doctest::Approx(1.0));
  CHECK(r.mATE == 0.0);
  CHECK(r.mASE == doctest::Approx(0.0));
  CHECK(r.mAOE == 0.0);
  CHECK(r.mAVE == 0.0);
  CHECK(r.nds_like == doctest::Approx(1.0));
}

TEST_CASE("no detections give zero AP and unit errors") {
  const std::vector<std::vector<Box3D>> gts{{box_at(1, 1)}, {box_at(2, 2, 1)}};
  const std::vector<std::vector<Detection>> dets(2);
  const MetricReport r = evaluate_detections(dets, gts, 3, 0.0);
  CHECK(r.mAP == 0.0);
  CHECK(r.mATE == 1.0);
  // Unit errors saturate every term except orientation, whose norm is pi/2.
  CHECK(r.nds_like == doctest::Approx(0.5 * (1.0 - 2.0 / kPi) / 4.0));
  CHECK(r.per_class[2].num_gt == 0);
  CHECK_THROWS_AS(evaluate_detections({}, {}, 3, 0.0), Error);
  CHECK_THROWS_AS(evaluate_detections(std::vector<std::vector<Detection>>(1), gts, 3, 0.0), StructuralError);
}

TEST_CASE("hand-computed precision/recall with a duplicate detection") {
  const std::vector<std::vector<Box3D>> gts{{box_at(0, 0), box_at(10, 0)}};
  Box3D d1 = box_at(0.1, 0.0), d2 = box_at(0.2, 0.0), d3 = box_at(10.0, 0.3);
  d3.yaw = 0.2;
  d3.dims = Vec3(1.0, 2.0, 3.0);
  const std::vector<std::vector<Detection>> dets{{{d2, 0.8}, {d3, 0.7}, {d1, 0.9}}};
  const MatchResult m = match_class(dets, gts, 0, 2.0);
  CHECK(m.tp == std::vector<bool>{true, false, true});
  // Precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1; envelope gives 1/2*1 + 1/2*2/3.
  const double ap = 0.5 * 1.0 + 0.5 * (2.0 / 3.0);
  CHECK(average_precision(m.tp, 2) == doctest::Approx(ap).epsilon(1e-15));
  const MetricReport r = evaluate_detections(dets, gts, 3, 0.0);
  for (double a : r.per_class[0].ap) CHECK(a == doctest::Approx(ap));
  CHECK(r.mAP == doctest::Approx(ap));
  CHECK(r.mATE == doctest::Approx(0.2));
  CHECK(r.mASE == doctest::Approx(0.25));
  CHECK(r.mAOE == doctest::Approx(0.1));
  CHECK(r.per_class[0].num_tp == 2);
  CHECK(r.per_class[0].max_recall == 1.0);
  const double tp = (1.0 - 0.2) + (1.0 - 0.25 / 0.5) + (1.0 - 0.1 / (kPi / 2.0)) + 1.0;
  CHECK(r.nds_like == doctest::Approx(0.5 * (ap + tp / 4.0)));
  // The score threshold drops the duplicate and the second hit.
  const MetricReport hi = evaluate_detections(dets, gts, 3, 0.85);
  CHECK(hi.mAP == doctest::Approx(0.5));
}

TEST_CASE("AP and scale error reference values") {
  CHECK(average_precision({}, 3) == 0.0);
  CHECK(average_precision({true, true}, 0) == 0.0);
  CHECK(average_precision({false, true}, 1) == doctest::Approx(0.5));
  CHECK(average_precision({true, false, false, true}, 4) == doctest::Approx(0.25 + 0.25 * 0.5));
  CHECK(scale_error(Vec3(1, 2, 3), Vec3(2, 2, 3)) == doctest::Approx(0.5));
  CHECK(scale_error(Vec3(1, 2, 3), Vec3(1, 2, 3)) == 0.0);
}

TEST_CASE("AP never decreases with a looser distance threshold") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-10.0, 10.0), n(-3.0, 3.0), sc(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::vector<Box3D>> gts(5);
    std::vector<std::vector<Detection>> dets(5);
    for (int s = 0; s < 5; ++s) {
      for (int k = 0; k < 4; ++k) {
        const Box3D g = box_at(u(rng), u(rng));
        gts[s].push_back(g);
        dets[s].push_back({box_at(g.center.x() + n(rng), g.center.y() + n(rng)), sc(rng)});
      }
    }
    const MetricReport r = evaluate_detections(dets, gts, 1, 0.0);
    for (std::size_t t = 1; t < 4; ++t) CHECK(r.per_class[0].ap[t] >= r.per_class[0].ap[t - 1]);
  }
}
