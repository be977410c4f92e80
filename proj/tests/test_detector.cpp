#include <cmath>

#include "doctest.h"
#include "model_fixture.hpp"
#include "oracles.hpp"
#include "vedet/errors.hpp"
#include "vedet/train.hpp"

using namespace vedet;

namespace {

ForwardResult run(ag::Tape& tape, const Detector& model, const LoadedScene& s, const std::vector<Pose>& views = {}) {
  ForwardOptions fo;
  fo.virtual_views = views;
  return model.forward(tape, DetectorInput::from_scene(s.scene, s.images, model.config().two_sweeps), fo);
}

std::vector<Pose> two_views() {
  return {{quat_from_yaw(0.8), Vec3(0.3, -0.5, -0.1)}, {quat_from_yaw(-2.0), Vec3(-0.2, 0.7, 0.0)}};
}

}  // namespace

TEST_CASE("forward shapes and view-major layout") {
  const Detector model(fixture::tiny_model());
  const LoadedScene s = fixture::tiny_scene(4);
  ag::Tape tape;
  const ForwardResult f = run(tape, model, s, two_views());
  REQUIRE(f.layers.size() == 2);
  CHECK(f.num_points == 6);
  CHECK(f.num_views == 3);
  CHECK(f.views[0] == Pose::identity());
  for (const LayerOutput& l : f.layers) {
    CHECK(l.cls_logits.rows() == 6);
    CHECK(l.cls_logits.cols() == 3);
    CHECK(l.box.rows() == 18);
    CHECK(l.box.cols() == kBoxCode);
    CHECK(l.box.value().allFinite());
  }
  const LayerPrediction p = model.predict(f, 1);
  REQUIRE(p.boxes.size() == 18);
  CHECK(p.boxes[7].point == 1);
  CHECK(p.boxes[7].view == 1);
}

TEST_CASE("zero center offsets decode to the query point in every view") {
  Detector model(fixture::tiny_model());
  model.parameters().find("head.reg.fc3.weight")->value.setZero();
  model.parameters().find("head.reg.fc3.bias")->value.setZero();
  const LoadedScene s = fixture::tiny_scene(5);
  ag::Tape tape;
  const auto views = two_views();
  const ForwardResult f = run(tape, model, s, views);
  const nn::Mat& logits = model.query_points().logits->value;
  const ObjectRange& r = model.config().range;
  const LayerPrediction p = model.predict(f, 1);
  for (const DecodedPrediction& d : p.boxes) {
    Vec3 q;
    for (int k = 0; k < 3; ++k) q[k] = r.min[k] + r.span()[k] / (1.0 + std::exp(-logits(d.point, k)));
    const Vec3 expect = d.view == 0 ? q : oracle::to_frame(f.views[static_cast<std::size_t>(d.view)], q);
    CHECK((d.box.center - expect).norm() < 1e-6);
    CHECK((d.box.dims - Vec3::Ones()).norm() < 1e-12);
    CHECK(d.box.yaw == 0.0);
  }
}

TEST_CASE("yaw decodes from its cosine and sine pair") {
  const ObjectRange r;
  for (double yaw : {-3.0, -1.2, 0.0, 0.5, 3.1}) {
    Box3D b;
    b.center = Vec3(1, 2, 0.5);
    b.dims = Vec3(1.5, 4.0, 1.6);
    b.yaw = yaw;
    b.velocity = Vec3(0.5, -1.0, 0.0);
    b.class_id = 2;
    Eigen::Matrix<double, kBoxCode, 1> code = encode_box(b, r);
    CHECK(code[6] == doctest::Approx(std::cos(yaw)));
    CHECK(code[7] == doctest::Approx(std::sin(yaw)));
    code.segment<2>(6) *= 3.0;  // unnormalized pairs decode to the same angle
    const Box3D d = decode_box(code, r, 2);
    CHECK(std::abs(oracle::wrap(d.yaw - yaw)) < 1e-12);
    CHECK((d.center - b.center).norm() < 1e-12);
    CHECK((d.dims - b.dims).norm() < 1e-12);
    CHECK(d.class_id == 2);
  }
}

TEST_CASE("one head set serves every view") {
  const Detector model(fixture::tiny_model());
  int cls = 0, reg = 0;
  for (const nn::Parameter* p : model.parameters().all()) {
    cls += p->name.rfind("head.cls", 0) == 0;
    reg += p->name.rfind("head.reg", 0) == 0;
  }
  CHECK(cls == 2);
  CHECK(reg == 6);
  // Identical decoder rows give identical outputs in every view slot.
  ag::Tape t2;
  const nn::Var q = t2.constant(nn::Mat::Random(3, 8));
  QueryBatch qb;
  qb.num_points = 3;
  qb.num_views = 1;
  qb.base_logits = t2.constant(nn::Mat::Zero(3, 3));
  const LayerOutput a = model.heads(t2, q, qb);
  const std::vector<nn::Var> twice{q, q};
  QueryBatch qb2 = qb;
  qb2.num_views = 2;
  qb2.base_logits = t2.constant(nn::Mat::Zero(6, 3));
  const LayerOutput b = model.heads(t2, ag::concat_rows(twice), qb2);
  CHECK((b.box.value().topRows(3) - a.box.value()).norm() < 1e-12);
  CHECK((b.box.value().bottomRows(3) - a.box.value()).norm() < 1e-12);
}

TEST_CASE("permuting query points permutes the outputs") {
  Detector a(fixture::tiny_model());
  Detector b(fixture::tiny_model());
  const std::vector<int> perm{3, 0, 5, 1, 4, 2};
  const nn::Mat& la = a.query_points().logits->value;
  nn::Mat& lb = b.query_points().logits->value;
  for (int j = 0; j < 6; ++j) lb.row(j) = la.row(perm[static_cast<std::size_t>(j)]);
  const LoadedScene s = fixture::tiny_scene(7);
  ag::Tape ta, tb;
  const ForwardResult fa = run(ta, a, s, two_views());
  const ForwardResult fb = run(tb, b, s, two_views());
  for (int v = 0; v < 3; ++v) {
    for (int j = 0; j < 6; ++j) {
      const auto ra = fa.layers[1].box.value().row(v * 6 + perm[static_cast<std::size_t>(j)]);
      const auto rb = fb.layers[1].box.value().row(v * 6 + j);
      CHECK((ra - rb).norm() < 1e-10);
    }
  }
  for (int j = 0; j < 6; ++j) {
    CHECK((fa.layers[1].cls_logits.value().row(perm[static_cast<std::size_t>(j)]) -
           fb.layers[1].cls_logits.value().row(j)).norm() < 1e-10);
  }
}

TEST_CASE("black images still give finite predictions") {
  const Detector model(fixture::tiny_model());
  LoadedScene s = fixture::tiny_scene(8);
  for (Image& img : s.images.current) std::fill(img.data.begin(), img.data.end(), 0);
  for (Image& img : s.images.previous) std::fill(img.data.begin(), img.data.end(), 0);
  ag::Tape tape;
  const ForwardResult f = run(tape, model, s);
  CHECK(f.layers.back().box.value().allFinite());
  CHECK(f.layers.back().cls_logits.value().allFinite());
}

TEST_CASE("previous-sweep tokens use ego-compensated cameras") {
  const Detector model(fixture::tiny_model());
  const LoadedScene s = fixture::tiny_scene(9);
  ag::Tape tape;
  std::vector<const Image*> cur, prev;
  for (const Image& i : s.images.current) cur.push_back(&i);
  for (const Image& i : s.images.previous) prev.push_back(&i);
  const nn::Var fc = model.extract_features(tape, cur);
  const nn::Var fp = model.extract_features(tape, prev);
  CHECK(fc.rows() == 8);
  CHECK(fc.cols() == 2 * 4 * 4);
  const TokenBatch both = model.concat_sweeps(tape, fc, s.scene.rig, &fp, s.scene.rig, s.scene.ego_motion);
  CHECK(both.tokens.rows() == 64);
  CHECK(both.encodings.rows() == 64);
  std::vector<Camera> moved = s.scene.rig;
  for (Camera& c : moved) c.pose = pose_compose(s.scene.ego_motion, c.pose);
  const TokenBatch manual = model.concat_sweeps(tape, fp, moved, nullptr, {}, Pose::identity());
  CHECK((both.encodings.value().bottomRows(32) - manual.encodings.value()).norm() < 1e-12);
  CHECK((both.tokens.value().bottomRows(32) - manual.tokens.value()).norm() == 0.0);
  const TokenBatch single = model.concat_sweeps(tape, fc, s.scene.rig, nullptr, {}, Pose::identity());
  CHECK((both.encodings.value().topRows(32) - single.encodings.value()).norm() == 0.0);

  ModelConfig one = fixture::tiny_model();
  one.two_sweeps = false;
  const Detector m1(one);
  ag::Tape t1;
  CHECK(run(t1, m1, s).layers.size() == 2);
  LoadedScene no_prev = s;
  no_prev.images.previous.clear();
  ag::Tape t2;
  CHECK_THROWS_AS(run(t2, model, no_prev), StructuralError);
}

TEST_CASE("inference never constructs virtual views") {
  const Detector model(fixture::tiny_model());
  const LoadedScene s = fixture::tiny_scene(10);
  const long before = model.virtual_view_passes();
  const auto dets = detect(model, s);
  CHECK(dets.size() == 6);
  CHECK(model.virtual_view_passes() == before);
  ag::Tape tape;
  run(tape, model, s, two_views());
  CHECK(model.virtual_view_passes() == before + 1);
}

TEST_CASE("per-view self-attention keeps global outputs independent of virtual views") {
  ModelConfig m = fixture::tiny_model();
  m.decoder.per_view_self_attention = true;
  const Detector model(m);
  const LoadedScene s = fixture::tiny_scene(12);
  ag::Tape ta, tb;
  const ForwardResult alone = run(ta, model, s);
  const ForwardResult with = run(tb, model, s, two_views());
  for (std::size_t l = 0; l < alone.layers.size(); ++l) {
    CHECK((with.layers[l].box.value().topRows(6) - alone.layers[l].box.value()).norm() < 1e-12);
    CHECK((with.layers[l].cls_logits.value() - alone.layers[l].cls_logits.value()).norm() < 1e-12);
  }
  const Detector shared(fixture::tiny_model());
  ag::Tape tc, td;
  const ForwardResult a2 = run(tc, shared, s);
  const ForwardResult w2 = run(td, shared, s, two_views());
  CHECK((w2.layers[1].box.value().topRows(6) - a2.layers[1].box.value()).norm() > 1e-6);
}

TEST_CASE("loss gradients match finite differences through the whole model") {
  Detector model(fixture::tiny_model(3));
  fixture::jitter_biases(model.parameters(), 4);
  const LoadedScene s = fixture::tiny_scene(11);
  LossOptions opts;
  const fixture::GradCheck g =
      fixture::finite_difference(model, s, two_views(), opts, fixture::gradcheck_tensors(), 2, 1e-4, 5);
  CHECK(g.checked >= 20);
  CHECK(g.worst <= 1e-3);
}

TEST_CASE("bad model configurations are rejected") {
  ModelConfig m = fixture::tiny_model();
  m.decoder.num_heads = 3;
  CHECK_THROWS_AS(Detector{m}, ConfigError);
  m = fixture::tiny_model();
  m.decoder.num_layers = 0;
  CHECK_THROWS_AS(Detector{m}, ConfigError);
  const Detector model(fixture::tiny_model());
  SimConfig big = fixture::tiny_sim();
  big.rig.image_height = big.rig.image_width = 18;
  big.rig.alpha = 0.5;
  const Scene sc = generate_scene(big, 1);
  const SceneImages imgs = render(sc);
  ag::Tape tape;
  CHECK_THROWS_AS(model.forward(tape, DetectorInput::from_scene(sc, imgs, true), {}), ConfigError);
}
