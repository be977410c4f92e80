// Acceptance checks. Prints one PASS/FAIL line per criterion.
//
// Usage: vedet_acceptance [criterion ...]
// VEDET_ACCEPTANCE_WORK names a work directory that is kept between runs;
// finished ablation runs in it are reused.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "augment_oracle.hpp"
#include "micro_instance.hpp"
#include "model_fixture.hpp"
#include "oracles.hpp"
#include "vedet/config.hpp"
#include "vedet/experiment.hpp"
#include "vedet/hungarian.hpp"
#include "vedet/loss.hpp"
#include "vedet/train.hpp"

namespace fs = std::filesystem;
using namespace vedet;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

fs::path source_dir() { return VEDET_SOURCE_DIR; }

fs::path work_dir() {
  if (const char* w = std::getenv("VEDET_ACCEPTANCE_WORK")) return w;
  return fs::path(VEDET_BINARY_DIR) / "acceptance_work";
}

bool keep_work() { return std::getenv("VEDET_ACCEPTANCE_WORK") != nullptr; }

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(VEDET_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// 1. Rays are unit length and project back onto their pixels.
Outcome geometry_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double worst_norm = 0.0, worst_px = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Camera c = oracle::random_camera(rng);
    const int u = static_cast<int>(rng() % static_cast<unsigned>(c.feature_width()));
    const int v = static_cast<int>(rng() % static_cast<unsigned>(c.feature_height()));
    const Vec3 r = compute_ray(c, u, v);
    worst_norm = std::max(worst_norm, std::abs(r.norm() - 1.0));
    for (double s : {0.5, 5.0, 50.0}) {
      const Vec3 p = c.center() + s * r;
      worst_px = std::max(worst_px, (project_point(c, p).pixel - Vec2(u / c.alpha, v / c.alpha)).norm());
      worst_px = std::max(worst_px, (oracle::project(c, p) - Vec2(u / c.alpha, v / c.alpha)).norm());
    }
  }
  const double t = seconds_since(t0);
  return {worst_norm <= 1e-12 && worst_px <= 1e-6 && t < 5.0,
          "1000 pairs, max |norm-1| " + fmt(worst_norm) + ", max px err " + fmt(worst_px) + ", " + fmt(t) + " s"};
}

// 2. Hungarian cost equals brute force.
double brute_force(const Eigen::MatrixXd& c) {
  std::vector<int> rows(static_cast<std::size_t>(c.rows()));
  std::iota(rows.begin(), rows.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (Eigen::Index m = 0; m < c.cols(); ++m) s += c(rows[static_cast<std::size_t>(m)], m);
    best = std::min(best, s);
  } while (std::next_permutation(rows.begin(), rows.end()));
  return best;
}

Outcome hungarian_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> cols_d(1, 6), cost_d(0, 50);
  std::uniform_real_distribution<double> real_d(-5.0, 5.0);
  int mismatches = 0;
  for (int i = 0; i < 500; ++i) {
    const int cols = cols_d(rng);
    const int rows = std::uniform_int_distribution<int>(cols, 6)(rng);
    Eigen::MatrixXd c(rows, cols);
    // Integer costs make every sum exact; the other half uses dyadic reals.
    for (Eigen::Index k = 0; k < c.size(); ++k) {
      c.data()[k] = i % 2 == 0 ? cost_d(rng) : std::round(real_d(rng) * 1024.0) / 1024.0;
    }
    const Assignment a = hungarian(c);
    double recomputed = 0.0;
    std::set<int> used;
    for (std::size_t m = 0; m < a.row_of_col.size(); ++m) {
      recomputed += c(a.row_of_col[m], static_cast<Eigen::Index>(m));
      used.insert(a.row_of_col[m]);
    }
    const double best = brute_force(c);
    if (a.cost != best || recomputed != best || used.size() != static_cast<std::size_t>(cols)) ++mismatches;
  }
  const double t = seconds_since(t0);
  return {mismatches == 0 && t < 10.0, "500 matrices, " + std::to_string(mismatches) + " mismatches, " + fmt(t) + " s"};
}

// 3. Loss equals the scalar oracle; perfect boxes give zero regression.
Outcome loss_oracle() {
  oracle::LossParams p;
  p.code_weights = {8, 8, 8, 1, 1, 1, 1, 1, 0.2, 0.2, 0.2};
  const micro::Instance in = micro::make(42, 2, 3, 4, 2);
  ag::Tape tape;
  LossOptions opts;
  opts.weights = micro::to_weights(p);
  const LossResult r = detection_loss(micro::forward(tape, in), in.gt, in.range, opts);
  const oracle::OracleResult o = micro::oracle_loss(in, p);
  const double diff = std::abs(r.total.scalar() - o.total);

  micro::Instance perfect = in;
  for (auto& L : perfect.layers) {
    for (std::size_t m = 0; m < in.gt.size(); ++m) {
      const GtSuperBox g = build_gt_super_box(in.gt[m], in.views, in.range);
      for (std::size_t v = 0; v < in.views.size(); ++v) {
        for (int k = 0; k < kBoxCode; ++k) L.box[v][m][k] = g.codes(static_cast<Eigen::Index>(v), k);
      }
      L.logits[m][in.gt[m].class_id] = 8.0;
    }
  }
  ag::Tape tape2;
  const LossResult pr = detection_loss(micro::forward(tape2, perfect), perfect.gt, perfect.range, opts);
  double reg = 0.0;
  for (const LayerLoss& l : pr.layers) reg += std::abs(l.reg);
  return {diff < 1e-12 && reg == 0.0,
          "|loss - oracle| " + fmt(diff) + " (loss " + fmt(o.total, 10) + "), perfect reg " + fmt(reg)};
}

// 4. Analytic gradients match central differences on a 2-camera desk model.
Outcome gradient_check() {
  const auto t0 = Clock::now();
  const ExperimentConfig cfg =
      load_config({source_dir() / "configs" / "desk.ini"}, {"sim.num_cameras=2", "sim.hfov_deg=120"});
  Detector model(cfg.model);
  fixture::jitter_biases(model.parameters(), 4);
  const Scene s = generate_scene(cfg.sim, 11);
  const LoadedScene scene{s, render(s)};
  LossOptions opts;
  opts.weights = cfg.loss.weights;
  const std::vector<Pose> views = sample_virtual_views(5, cfg.loss.view_ranges, 2);
  std::vector<std::string> tensors = fixture::gradcheck_tensors();
  for (std::string& n : tensors) {
    if (n == "backbone.1.weight") n = "backbone.2.weight";
    if (n == "decoder.1.self_attn.v.weight") n = "decoder.2.self_attn.v.weight";
    if (n == "decoder.1.ffn1.weight") n = "decoder.2.ffn1.weight";
  }
  const fixture::GradCheck g = fixture::finite_difference(model, scene, views, opts, tensors, 2, 1e-4, 5);
  const double t = seconds_since(t0);
  return {g.checked >= 20 && g.worst <= 1e-3 && t < 120.0,
          std::to_string(g.checked) + " parameters over " + std::to_string(tensors.size()) +
              " tensors, worst rel err " + fmt(g.worst) + ", " + fmt(t) + " s"};
}

// 5. GT super boxes map back to the global box; joint matching shares one
// point per GT across views.
Outcome super_box_consistency() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const ObjectRange range;
  ViewSamplingRanges vr;
  double worst = 0.0;
  for (int i = 0; i < 500; ++i) {
    Box3D b;
    b.center = Vec3(40.0 * u(rng) - 20.0, 40.0 * u(rng) - 20.0, 2.0 * u(rng) - 1.0);
    b.dims = Vec3(0.5 + 3.0 * u(rng), 0.5 + 5.0 * u(rng), 0.5 + 2.0 * u(rng));
    b.yaw = 6.2 * u(rng) - 3.1;
    b.velocity = Vec3(6.0 * u(rng) - 3.0, 6.0 * u(rng) - 3.0, 0.0);
    b.class_id = i % 3;
    std::vector<Pose> views{Pose::identity()};
    for (const Pose& p : sample_virtual_views(static_cast<std::uint64_t>(i), vr, 4)) views.push_back(p);
    const GtSuperBox g = build_gt_super_box(b, views, range);
    for (std::size_t v = 0; v < views.size(); ++v) {
      const Box3D local = decode_box(g.codes.row(static_cast<Eigen::Index>(v)).transpose(), range, b.class_id);
      const Box3D back = transform_box_to_view(local, pose_inverse(views[v]));
      worst = std::max(worst, (back.center - b.center).norm());
      worst = std::max(worst, (back.dims - b.dims).norm());
      worst = std::max(worst, std::abs(oracle::wrap(back.yaw - b.yaw)));
      worst = std::max(worst, (back.velocity - b.velocity).norm());
    }
  }
  int structural = 0, instances = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const micro::Instance in = micro::make(seed, 2, 3, 6, 2);
    ag::Tape tape;
    LossOptions opts;
    const LossResult r = detection_loss(micro::forward(tape, in), in.gt, in.range, opts);
    for (const LayerLoss& l : r.layers) {
      ++instances;
      for (const auto& view : l.point_of_gt) structural += view != l.point_of_gt[0];
    }
  }
  return {worst < 1e-9 && structural == 0,
          "500 boxes x 5 views, worst " + fmt(worst) + "; " + std::to_string(instances) +
              " joint matchings, " + std::to_string(structural) + " split across views"};
}

// 6. Augmented cameras still project box corners onto the augmented pixels.
Outcome augmentation_consistency() {
  SimConfig cfg;
  cfg.rig.image_height = cfg.rig.image_width = 64;
  const Scene s = generate_scene(cfg, 12);
  const SceneImages imgs = render(s);
  std::vector<std::pair<std::string, AugmentationConfig>> ops(5);
  ops[0].first = "resize";
  ops[0].second.resize_min = ops[0].second.resize_max = 1.25;
  ops[1].first = "crop";
  ops[1].second.crop_height = 48;
  ops[1].second.crop_width = 40;
  ops[2].first = "flip";
  ops[2].second.hflip_prob = 1.0;
  ops[3].first = "rotation";
  ops[3].second.rot_min = ops[3].second.rot_max = 0.35;
  ops[4].first = "scaling";
  ops[4].second.scale_min = ops[4].second.scale_max = 1.05;
  std::string detail;
  bool pass = true;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const double e = oracle::corner_error(s, augment(s, imgs, ops[i].second, i + 1));
    pass = pass && e < 0.5;
    detail += ops[i].first + " " + fmt(e) + " px, ";
  }
  AugmentationConfig a;
  a.resize_min = 0.9;
  a.resize_max = 1.1;
  a.crop_height = 48;
  a.crop_width = 48;
  a.hflip_prob = 0.5;
  a.rot_min = -0.3925;
  a.rot_max = 0.3925;
  a.scale_min = 0.95;
  a.scale_max = 1.05;
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const Scene si = generate_scene(cfg, 500 + i);
    worst = std::max(worst, oracle::corner_error(si, augment(si, render(si), a, i)));
  }
  pass = pass && worst < 0.5;
  return {pass, detail + "100 compositions " + fmt(worst) + " px"};
}

// 7. A desk model overfits one scene.
Outcome overfit() {
  const auto t0 = Clock::now();
  const ExperimentConfig cfg = load_config({source_dir() / "configs" / "desk.ini"},
                                           {"train.epochs=1", "train.iters_per_epoch=200", "train.warmup_iters=10",
                                            "train.lr_init=2e-3", "train.lr_final=2e-5"});
  const Scene s = generate_scene(cfg.sim, 3);
  Dataset data;
  data.scenes.push_back({s, render(s)});
  Trainer trainer(cfg, data);
  auto global_reg = [&]() {
    ag::Tape tape;
    ForwardOptions fo;
    const ForwardResult f = trainer.model().forward(
        tape, DetectorInput::from_scene(s, data.scenes[0].images, cfg.model.two_sweeps), fo);
    LossOptions opts;
    opts.weights = cfg.loss.weights;
    double reg = 0.0;
    for (const LayerLoss& l : detection_loss(f, s.boxes, cfg.model.range, opts).layers) reg += l.reg;
    return reg;
  };
  const double reg0 = global_reg();
  while (trainer.iteration() < trainer.total_iters()) trainer.step();
  const double reg1 = global_reg();
  const MetricReport m = evaluate_model(trainer.model(), data, cfg.eval.score_threshold);
  double ap2 = 0.0;
  int classes = 0;
  for (const ClassMetrics& c : m.per_class) {
    if (c.num_gt == 0) continue;
    ap2 += c.ap[2];
    ++classes;
  }
  ap2 /= std::max(1, classes);
  const double t = seconds_since(t0);
  const double ratio = reg1 / reg0;
  return {ratio < 0.05 && ap2 == 1.0 && t < 300.0,
          "reg " + fmt(reg0) + " -> " + fmt(reg1) + " (" + fmt(100.0 * ratio) + "%), AP@2m " + fmt(ap2, 4) + " over " +
              std::to_string(s.boxes.size()) + " objects, " + fmt(t) + " s"};
}

// 8-10 share one ablation run.
struct Ablation {
  bool ok = false;
  std::string error;
  std::map<std::string, double> train_seconds;  // summed over seeds
  std::map<std::string, CellSummary> cells;
  fs::path report;
};

const Ablation& ablation() {
  static const Ablation result = [] {
    Ablation a;
    const fs::path work = work_dir();
    if (!keep_work()) fs::remove_all(work);
    fs::create_directories(work);
    const fs::path runs = work / "ablation";
    a.report = work / "report";
    std::string args = "ablate --matrix " + (source_dir() / "configs" / "ablation_desk.ini").string() + " --out " +
                       runs.string();
    if (keep_work() && fs::exists(runs)) args += " --resume";
    if (run_cli(args, work / "ablate.log") != 0) {
      a.error = "ablate failed, see " + (work / "ablate.log").string();
      return a;
    }
    const CsvTable timing = read_csv(runs / "timing.csv");
    for (std::size_t r = 0; r < timing.rows.size(); ++r) {
      a.train_seconds[timing.rows[r].at(0)] += timing.number(r, "seconds");
    }
    if (run_cli("report --runs " + runs.string() + " --out " + a.report.string(), work / "report.log") != 0) {
      a.error = "report failed, see " + (work / "report.log").string();
      return a;
    }
    for (const CellSummary& c : summarize_ablation(runs)) a.cells[c.name] = c;
    for (const char* name : {"V0", "V2", "V2_indep", "qry2M"}) {
      if (!a.cells.count(name) || a.cells[name].seeds.size() != 3) {
        a.error = std::string("cell ") + name + " missing or incomplete";
        return a;
      }
    }
    a.ok = true;
    return a;
  }();
  return result;
}

std::string cell_text(const CellSummary& c) {
  return c.name + " mAP " + fmt(c.mAP, 4) + " (sd " + fmt(c.mAP_std, 2) + ") mATE " + fmt(c.mATE, 4);
}

Outcome ve_trend() {
  const Ablation& a = ablation();
  if (!a.ok) return {false, a.error};
  const CellSummary& v0 = a.cells.at("V0");
  const CellSummary& v2 = a.cells.at("V2");
  const double t = a.train_seconds.at("V0") + a.train_seconds.at("V2");
  return {v2.mAP > v0.mAP && v2.mATE < v0.mATE && t <= 3600.0,
          cell_text(v2) + " vs " + cell_text(v0) + ", 3 seeds, " + fmt(t / 60.0) + " min training"};
}

Outcome joint_match_trend() {
  const Ablation& a = ablation();
  if (!a.ok) return {false, a.error};
  const CellSummary& j = a.cells.at("V2");
  const CellSummary& i = a.cells.at("V2_indep");
  return {j.mAP > i.mAP, cell_text(j) + " vs " + cell_text(i) + ", 3 seeds"};
}

Outcome extra_query_trend() {
  const Ablation& a = ablation();
  if (!a.ok) return {false, a.error};
  const CellSummary& v2 = a.cells.at("V2");
  const CellSummary& q = a.cells.at("qry2M");
  const fs::path curves = a.report / "curves.csv";
  const std::string text = slurp(curves);
  const bool curves_ok = fs::exists(a.report / "curves.svg") && text.find("V2") != std::string::npos &&
                         text.find("V0") != std::string::npos && text.find("qry2M") != std::string::npos;
  const double q_final = q.curve.empty() ? q.mAP : q.curve.back().mAP;
  const double v_final = v2.curve.empty() ? v2.mAP : v2.curve.back().mAP;
  std::string early;
  if (!q.curve.empty() && !v2.curve.empty()) {
    early = ", epoch 1 mAP " + fmt(q.curve.front().mAP, 4) + " vs " + fmt(v2.curve.front().mAP, 4);
  }
  return {q_final <= v_final && curves_ok,
          "final-epoch mAP qry2M " + fmt(q_final, 4) + " vs V2 " + fmt(v_final, 4) + early +
              (curves_ok ? ", curves in " + a.report.string() : ", curves missing")};
}

// 11. Reruns reproduce metric files; scenes and checkpoints round-trip.
Outcome determinism() {
  const fs::path work = work_dir() / "determinism";
  fs::remove_all(work);
  fs::create_directories(work);
  const std::string cfg = "--config " + (source_dir() / "configs" / "desk.ini").string() +
                          " --set train.epochs=2 --set train.iters_per_epoch=20 --set sim.train_seeds=0:20"
                          " --set sim.val_seeds=1000000:1000010 --set eval.epoch_val_scenes=10";
  std::string detail;
  bool pass = true;
  for (const char* run : {"a", "b"}) {
    if (run_cli("train " + cfg + " --out " + (work / run).string(), work / (std::string(run) + ".log")) != 0) {
      return {false, std::string("train run ") + run + " failed"};
    }
  }
  int csvs = 0;
  for (const auto& e : fs::directory_iterator(work / "a")) {
    if (e.path().extension() != ".csv") continue;
    ++csvs;
    if (slurp(e.path()) != slurp(work / "b" / e.path().filename())) {
      pass = false;
      detail += e.path().filename().string() + " differs; ";
    }
  }
  pass = pass && csvs >= 3;
  detail += std::to_string(csvs) + " csv files compared";
  const bool ckpt_bytes = slurp(work / "a" / "checkpoint.bin") == slurp(work / "b" / "checkpoint.bin");

  const Checkpoint ck = read_checkpoint(work / "a" / "checkpoint.bin");
  write_checkpoint(work / "ckpt_copy.bin", ck);
  const bool ckpt_rt = read_checkpoint(work / "ckpt_copy.bin") == ck &&
                       slurp(work / "ckpt_copy.bin") == slurp(work / "a" / "checkpoint.bin");

  const ExperimentConfig c = load_config({source_dir() / "configs" / "desk.ini"}, {});
  int scene_fail = 0;
  for (std::uint64_t seed : {0ULL, 7ULL, 123456ULL}) {
    const Scene s = generate_scene(c.sim, seed);
    const SceneImages imgs = render(s);
    const fs::path d1 = work / ("scene_" + std::to_string(seed)), d2 = d1.string() + "_again";
    write_scene_dir(d1, s, imgs);
    const LoadedScene back = read_scene_dir(d1);
    write_scene_dir(d2, back.scene, back.images);
    bool same = back.scene == s && back.images == imgs;
    for (const auto& e : fs::directory_iterator(d1)) same = same && slurp(e.path()) == slurp(d2 / e.path().filename());
    scene_fail += !same;
  }
  pass = pass && ckpt_bytes && ckpt_rt && scene_fail == 0;
  detail += ", checkpoints " + std::string(ckpt_bytes ? "identical" : "differ") + ", checkpoint round trip " +
            (ckpt_rt ? "exact" : "inexact") + ", scene round trips " + std::to_string(3 - scene_fail) + "/3 exact";
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"geometry oracle", geometry_oracle},
      {"hungarian vs brute force", hungarian_oracle},
      {"loss vs scalar oracle", loss_oracle},
      {"gradient check", gradient_check},
      {"super-box consistency", super_box_consistency},
      {"augmentation consistency", augmentation_consistency},
      {"overfit one scene", overfit},
      {"virtual views improve mAP and mATE", ve_trend},
      {"joint beats independent matching", joint_match_trend},
      {"extra queries without VE do not beat VE", extra_query_trend},
      {"determinism and round trips", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
