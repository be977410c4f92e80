#include "vedet/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <mutex>
#include <thread>

#include "vedet/errors.hpp"

namespace vedet {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Runs fn(i) for i in [0, n) on the configured number of threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(num_workers()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex mu;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      try {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = splitmix(seed);
  for (std::uint64_t p : parts) h = splitmix(h ^ splitmix(p + 0x632be59bd9b4e019ULL));
  return h;
}

int num_workers() {
  const char* env = std::getenv("VEDET_NUM_WORKERS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1 || n > 256) throw ConfigError("VEDET_NUM_WORKERS must be an integer in [1, 256]");
  return static_cast<int>(n);
}

Dataset generate_dataset(const SimConfig& sim, SeedRange seeds) {
  Dataset d;
  d.scenes.resize(seeds.size());
  parallel_for(d.scenes.size(), [&](std::size_t i) {
    LoadedScene& s = d.scenes[i];
    s.scene = generate_scene(sim, seeds.begin + i);
    s.images = render(s.scene);
  });
  return d;
}

void write_dataset(const std::filesystem::path& dir, const SimConfig& sim, SeedRange seeds) {
  std::filesystem::create_directories(dir);
  parallel_for(seeds.size(), [&](std::size_t i) {
    const std::uint64_t seed = seeds.begin + i;
    const Scene scene = generate_scene(sim, seed);
    write_scene_dir(dir / scene_id(seed), scene, render(scene));
  });
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("dataset directory not found: " + dir.string());
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  Dataset d;
  d.scenes.resize(dirs.size());
  parallel_for(dirs.size(), [&](std::size_t i) { d.scenes[i] = read_scene_dir(dirs[i]); });
  return d;
}

std::vector<Detection> detect(const Detector& model, const LoadedScene& scene) {
  ag::Tape tape;
  const ForwardResult fwd =
      model.forward(tape, DetectorInput::from_scene(scene.scene, scene.images, model.config().two_sweeps), {});
  const LayerPrediction pred = model.predict(fwd, static_cast<int>(fwd.layers.size()) - 1);
  std::vector<Detection> out;
  for (const DecodedPrediction& p : pred.boxes) {
    if (p.view != 0) continue;
    out.push_back({p.box, pred.scores(p.point, p.box.class_id)});
  }
  return out;
}

MetricReport evaluate_model(const Detector& model, const Dataset& data, double score_threshold, std::size_t limit) {
  const std::size_t n = limit == 0 ? data.scenes.size() : std::min(limit, data.scenes.size());
  if (n == 0) throw Error("evaluate: empty split");
  std::vector<std::vector<Detection>> dets(n);
  std::vector<std::vector<Box3D>> gts(n);
  parallel_for(n, [&](std::size_t i) {
    dets[i] = detect(model, data.scenes[i]);
    gts[i] = data.scenes[i].scene.boxes;
  });
  return evaluate_detections(dets, gts, model.config().num_classes, score_threshold);
}

Trainer::Trainer(const ExperimentConfig& cfg, const Dataset& train) : cfg_(cfg), train_(&train) {
  if (train.scenes.empty()) throw Error("train: empty training split");
  cfg_.finalize();
  model_ = std::make_unique<Detector>(cfg_.model);
  opt_ = std::make_unique<AdamW>(model_->parameters(), cfg_.train.adamw);
  const long n = static_cast<long>(train.scenes.size());
  const long b = cfg_.train.batch_size;
  iters_per_epoch_ = cfg_.train.iters_per_epoch > 0 ? cfg_.train.iters_per_epoch : (n + b - 1) / b;
}

LossResult Trainer::sample_loss(ag::Tape& tape, const LoadedScene& sample, std::uint64_t view_seed) const {
  ForwardOptions fo;
  LossOptions lo;
  lo.weights = cfg_.loss.weights;
  lo.mode = cfg_.ablation.joint_match ? MatchMode::kJoint : MatchMode::kIndependent;
  if (cfg_.model.extra_query_sets > 0) {
    fo.use_extra_queries = true;
    lo.gt_copies = 1 + cfg_.model.extra_query_sets;
  } else {
    fo.virtual_views = sample_virtual_views(view_seed, cfg_.loss.view_ranges, cfg_.loss.virtual_views);
  }
  const ForwardResult fwd =
      model_->forward(tape, DetectorInput::from_scene(sample.scene, sample.images, cfg_.model.two_sweeps), fo);
  return detection_loss(fwd, sample.scene.boxes, cfg_.model.range, lo);
}

StepLog Trainer::step() {
  const long it = iter_;
  const long epoch = it / iters_per_epoch_;
  const long pos = it % iters_per_epoch_;
  const std::size_t n = train_->scenes.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 shuffle_rng(mix_seed(cfg_.train.seed, {0, static_cast<std::uint64_t>(epoch)}));
  std::shuffle(perm.begin(), perm.end(), shuffle_rng);

  StepLog log;
  log.iter = it;
  log.lr = lr_at(it, total_iters(), cfg_.train.schedule);
  model_->parameters().zero_grad();
  const double inv_batch = 1.0 / cfg_.train.batch_size;
  for (int b = 0; b < cfg_.train.batch_size; ++b) {
    const std::size_t idx = perm[static_cast<std::size_t>(pos * cfg_.train.batch_size + b) % n];
    const auto key = [&](std::uint64_t stream) {
      return mix_seed(cfg_.train.seed, {stream, static_cast<std::uint64_t>(it), static_cast<std::uint64_t>(b)});
    };
    const LoadedScene& raw = train_->scenes[idx];
    const AugmentResult aug = augment(raw.scene, raw.images, cfg_.train.augment, key(1));
    const LoadedScene sample{aug.scene, aug.images};
    ag::Tape tape;
    std::mt19937_64 drop_rng(key(3));
    tape.rng = &drop_rng;
    tape.training = true;
    const LossResult loss = sample_loss(tape, sample, key(2));
    if (!std::isfinite(loss.total.scalar())) {
      throw TrainingError("non-finite loss at iteration " + std::to_string(it) + " (scene seed " +
                          std::to_string(raw.scene.seed) + ")");
    }
    tape.backward(ag::scale(loss.total, inv_batch));
    log.loss += loss.total.scalar() * inv_batch;
    if (log.layers.empty()) log.layers.resize(loss.layers.size());
    for (std::size_t l = 0; l < loss.layers.size(); ++l) {
      log.layers[l].total += loss.layers[l].total * inv_batch;
      log.layers[l].cls += loss.layers[l].cls * inv_batch;
      log.layers[l].reg += loss.layers[l].reg * inv_batch;
      log.loss_cls += loss.layers[l].cls * inv_batch;
      log.loss_reg += loss.layers[l].reg * inv_batch;
    }
  }
  log.grad_norm = opt_->step(log.lr);
  ++iter_;
  return log;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  store_to_checkpoint(model_->parameters(), c);
  for (auto& [k, m] : opt_->state()) c.tensors[k] = m;
  c.meta["iteration"] = iter_;
  c.meta["optimizer_steps"] = opt_->steps();
  return c;
}

void Trainer::restore(const Checkpoint& ckpt) {
  checkpoint_to_store(ckpt, model_->parameters());
  const auto it = ckpt.meta.find("iteration");
  const auto st = ckpt.meta.find("optimizer_steps");
  if (it == ckpt.meta.end() || st == ckpt.meta.end()) throw ParseError("checkpoint: missing training state");
  opt_->load_state(ckpt.tensors, static_cast<long>(st->second));
  iter_ = static_cast<long>(it->second);
}

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = {"epoch", "iters",  "lr",   "loss", "loss_cls", "loss_reg", "mAP",
                                                "mATE",  "mASE",   "mAOE", "mAVE", "nds_like"};
  return cols;
}

std::string metrics_row(const EpochLog& e) {
  return std::to_string(e.epoch) + "," + std::to_string(e.iters) + "," + fmt(e.lr) + "," + fmt(e.loss) + "," +
         fmt(e.loss_cls) + "," + fmt(e.loss_reg) + "," + fmt(e.val.mAP) + "," + fmt(e.val.mATE) + "," +
         fmt(e.val.mASE) + "," + fmt(e.val.mAOE) + "," + fmt(e.val.mAVE) + "," + fmt(e.val.nds_like);
}

TrainResult train(const ExperimentConfig& cfg_in, const Dataset& train_set, const Dataset& val,
                  const TrainOptions& opts) {
  ExperimentConfig cfg = cfg_in;
  cfg.finalize();
  Trainer trainer(cfg, train_set);
  EpochLog acc;
  long in_epoch = 0;
  if (opts.resume) {
    Checkpoint ck = *opts.resume;
    auto it = ck.tensors.find("log.epoch_acc");
    if (it != ck.tensors.end()) {
      if (it->second.size() != 4) throw ParseError("checkpoint: log.epoch_acc must hold 4 values");
      acc.loss = it->second(0);
      acc.loss_cls = it->second(1);
      acc.loss_reg = it->second(2);
      in_epoch = static_cast<long>(it->second(3));
      ck.tensors.erase(it);
    }
    trainer.restore(ck);
  }
  auto snapshot = [&] {
    Checkpoint ck = trainer.checkpoint();
    nn::Mat a(1, 4);
    a << acc.loss, acc.loss_cls, acc.loss_reg, static_cast<double>(in_epoch);
    ck.tensors["log.epoch_acc"] = a;
    return ck;
  };

  std::ofstream metrics, losses;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    std::ofstream(opts.out_dir / "config.ini") << dump_config(cfg);
    const bool fresh = !opts.resume;
    const auto mode = fresh ? std::ios::out | std::ios::trunc : std::ios::out | std::ios::app;
    metrics.open(opts.out_dir / "metrics.csv", mode);
    losses.open(opts.out_dir / "losses.csv", mode);
    if (!metrics || !losses) throw Error("cannot write logs in " + opts.out_dir.string());
    if (fresh) {
      for (std::size_t i = 0; i < metrics_columns().size(); ++i) metrics << (i ? "," : "") << metrics_columns()[i];
      metrics << "\n";
      losses << "iter,lr,layer,loss,loss_cls,loss_reg\n";
    }
  }

  TrainResult res;
  const long total = trainer.total_iters();
  const long stop = opts.stop_after > 0 ? std::min(total, opts.stop_after) : total;
  while (trainer.iteration() < stop) {
    const StepLog s = trainer.step();
    if (losses.is_open()) {
      for (std::size_t l = 0; l < s.layers.size(); ++l) {
        losses << s.iter << "," << fmt(s.lr) << "," << l << "," << fmt(s.layers[l].total) << ","
               << fmt(s.layers[l].cls) << "," << fmt(s.layers[l].reg) << "\n";
      }
    }
    if (opts.on_step) opts.on_step(s);
    res.steps.push_back(s);
    acc.loss += s.loss;
    acc.loss_cls += s.loss_cls;
    acc.loss_reg += s.loss_reg;
    acc.lr = s.lr;
    ++in_epoch;
    if (trainer.iteration() % trainer.iters_per_epoch() == 0) {
      acc.epoch = static_cast<int>(trainer.iteration() / trainer.iters_per_epoch());
      acc.iters = trainer.iteration();
      acc.loss /= static_cast<double>(in_epoch);
      acc.loss_cls /= static_cast<double>(in_epoch);
      acc.loss_reg /= static_cast<double>(in_epoch);
      acc.val = evaluate_model(trainer.model(), val, cfg.eval.score_threshold,
                               static_cast<std::size_t>(cfg.eval.epoch_val_scenes));
      if (metrics.is_open()) {
        metrics << metrics_row(acc) << "\n";
        metrics.flush();
        losses.flush();
      }
      if (opts.on_epoch) opts.on_epoch(acc);
      res.epochs.push_back(acc);
      acc = EpochLog{};
      in_epoch = 0;
      if (metrics.is_open()) write_checkpoint(opts.out_dir / "checkpoint.bin", snapshot());
    }
  }
  res.checkpoint = snapshot();
  res.finished = trainer.iteration() >= total;
  if (!opts.out_dir.empty()) write_checkpoint(opts.out_dir / "checkpoint.bin", res.checkpoint);
  return res;
}

}  // namespace vedet
