#include <spawn.h>
#include <sys/wait.h>
#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "vedet/config.hpp"
#include "vedet/errors.hpp"
#include "vedet/experiment.hpp"
#include "vedet/train.hpp"

extern char** environ;

namespace fs = std::filesystem;
using namespace vedet;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

// Missing input files and refused overwrites.
class UsageError : public Error {
 public:
  using Error::Error;
};

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void require_dir(const fs::path& p, const std::string& what) {
  if (!fs::is_directory(p)) throw UsageError(what + " not found: " + p.string());
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw UsageError(what + " not found: " + p.string());
}

std::vector<fs::path> to_paths(const std::vector<std::string>& v) {
  std::vector<fs::path> out;
  for (const std::string& s : v) {
    require_file(s, "config file");
    out.emplace_back(s);
  }
  return out;
}

ExperimentConfig resolve(const std::vector<std::string>& configs, const std::vector<std::string>& sets) {
  ExperimentConfig cfg = load_config(to_paths(configs), sets);
  cfg.finalize();
  return cfg;
}

void write_snapshot(const fs::path& dir, const ExperimentConfig& cfg) {
  fs::create_directories(dir);
  std::ofstream out(dir / "config.ini");
  out << dump_config(cfg);
  if (!out) throw Error("cannot write " + (dir / "config.ini").string());
}

bool has_scene_dirs(const fs::path& dir) {
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && fs::exists(e.path() / "meta.json")) return true;
  }
  return false;
}

// A scene directory, or a generated dataset root holding the named split.
fs::path split_dir(const fs::path& data, const std::string& split) {
  require_dir(data, "data directory");
  if (has_scene_dirs(data)) return data;
  const fs::path sub = data / split;
  require_dir(sub, "data split '" + split + "'");
  return sub;
}

std::string report_line(const MetricReport& r) {
  return "mAP=" + fixed(r.mAP, 3) + " mATE=" + fixed(r.mATE, 3) + " mASE=" + fixed(r.mASE, 3) +
         " mAOE=" + fixed(r.mAOE, 3) + " mAVE=" + fixed(r.mAVE, 3) + " nds_like=" + fixed(r.nds_like, 3);
}

void write_report_csv(const fs::path& path, const MetricReport& r) {
  std::ofstream out(path);
  for (std::size_t i = 0; i < report_columns().size(); ++i) out << (i ? "," : "") << report_columns()[i];
  out << "\n" << report_row(r) << "\n";
  if (!out) throw Error("cannot write " + path.string());
}

// gen-data ------------------------------------------------------------------

struct GenArgs {
  std::vector<std::string> configs, sets;
  std::string out, seed_range, split = "all";
  bool force = false;
};

int cmd_gen_data(const GenArgs& a) {
  const ExperimentConfig cfg = resolve(a.configs, a.sets);
  const fs::path out(a.out);
  if (fs::exists(out) && !fs::is_empty(out) && !a.force) {
    throw UsageError("output directory " + out.string() + " is not empty (use --force to rewrite)");
  }
  if (!a.seed_range.empty()) {
    const SeedRange r = parse_seed_range(a.seed_range);
    write_dataset(out, cfg.sim, r);
    std::cout << "wrote " << r.size() << " scenes to " << out.string() << "\n";
  } else {
    if (a.split == "all" || a.split == "train") write_dataset(out / "train", cfg.sim, cfg.train_seeds);
    if (a.split == "all" || a.split == "val") write_dataset(out / "val", cfg.sim, cfg.val_seeds);
    std::cout << "wrote split '" << a.split << "' to " << out.string() << "\n";
  }
  write_snapshot(out, cfg);
  return 0;
}

// train ---------------------------------------------------------------------

struct TrainArgs {
  std::vector<std::string> configs, sets;
  std::string data, out;
  bool resume = false;
  long stop_after = 0;
};

int cmd_train(const TrainArgs& a) {
  const ExperimentConfig cfg = resolve(a.configs, a.sets);
  const fs::path out(a.out);
  Dataset train_set, val_set;
  if (a.data.empty()) {
    train_set = generate_dataset(cfg.sim, cfg.train_seeds);
    val_set = generate_dataset(cfg.sim, cfg.val_seeds);
  } else {
    require_dir(a.data, "data directory");
    train_set = load_dataset(split_dir(a.data, "train"));
    val_set = load_dataset(split_dir(a.data, "val"));
  }
  if (train_set.scenes.empty() || val_set.scenes.empty()) throw UsageError("empty train or val split");
  TrainOptions opts;
  opts.out_dir = out;
  opts.stop_after = a.stop_after;
  if (a.resume) {
    require_file(out / "checkpoint.bin", "checkpoint");
    opts.resume = read_checkpoint(out / "checkpoint.bin");
  }
  const auto t0 = std::chrono::steady_clock::now();
  opts.on_epoch = [&](const EpochLog& e) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "epoch " << e.epoch << " iters " << e.iters << " loss " << fixed(e.loss, 4) << " "
              << report_line(e.val) << " t=" << fixed(secs, 1) << "s" << std::endl;
  };
  const TrainResult res = train(cfg, train_set, val_set, opts);
  if (res.finished) {
    Detector model(cfg.model);
    checkpoint_to_store(res.checkpoint, model.parameters());
    const MetricReport r = evaluate_model(model, val_set, cfg.eval.score_threshold);
    write_report_csv(out / "final.csv", r);
    std::cout << "final " << report_line(r) << std::endl;
  }
  return 0;
}

// eval ----------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, predictions, data, out, dump, split = "val";
  std::vector<std::string> configs, sets;
  double threshold = -1.0;
};

int cmd_eval(const EvalArgs& a) {
  if (a.ckpt.empty() == a.predictions.empty()) throw UsageError("give exactly one of --ckpt and --predictions");
  std::vector<std::string> configs = a.configs;
  if (configs.empty() && !a.ckpt.empty()) {
    const fs::path snap = fs::path(a.ckpt).parent_path() / "config.ini";
    if (fs::exists(snap)) configs.push_back(snap.string());
  }
  const ExperimentConfig cfg = resolve(configs, a.sets);
  const double thr = a.threshold >= 0.0 ? a.threshold : cfg.eval.score_threshold;
  const Dataset data = load_dataset(split_dir(a.data, a.split));
  if (data.scenes.empty()) throw UsageError("no scenes in " + a.data);
  MetricReport r;
  if (!a.ckpt.empty()) {
    require_file(a.ckpt, "checkpoint");
    Detector model(cfg.model);
    checkpoint_to_store(read_checkpoint(a.ckpt), model.parameters());
    r = evaluate_model(model, data, thr);
    if (!a.dump.empty()) {
      PredictionSet preds;
      for (const LoadedScene& s : data.scenes) preds[scene_id(s.scene.seed)] = detect(model, s);
      write_predictions(a.dump, preds);
    }
  } else {
    require_file(a.predictions, "predictions file");
    r = evaluate_predictions(read_predictions(a.predictions), data, cfg.sim.num_classes, thr);
  }
  std::cout << report_line(r) << "\n";
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const ClassMetrics& c = r.per_class[k];
    if (c.num_gt == 0) continue;
    std::cout << "class " << k << " gt=" << c.num_gt;
    for (std::size_t t = 0; t < kDistanceThresholds.size(); ++t) {
      std::cout << " AP@" << kDistanceThresholds[t] << "=" << fixed(c.ap[t], 3);
    }
    std::cout << "\n";
  }
  if (!a.out.empty()) {
    write_snapshot(a.out, cfg);
    write_report_csv(fs::path(a.out) / "eval.csv", r);
  }
  return 0;
}

// ablate --------------------------------------------------------------------

int spawn_and_wait(const std::vector<std::string>& args, const fs::path& log) {
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_adddup2(&actions, STDOUT_FILENO, STDERR_FILENO);
  std::vector<char*> argv;
  for (const std::string& s : args) argv.push_back(const_cast<char*>(s.c_str()));
  argv.push_back(nullptr);
  pid_t pid = 0;
  const int rc = posix_spawn(&pid, args[0].c_str(), &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) throw Error("cannot start " + args[0]);
  int status = 0;
  if (waitpid(pid, &status, 0) < 0) throw Error("waitpid failed");
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128;
}

struct AblateArgs {
  std::string matrix, out, data;
  bool resume = false;
};

int cmd_ablate(const AblateArgs& a, const std::string& self) {
  const AblationMatrix m = parse_ablation_matrix(a.matrix);
  const fs::path out(a.out);
  fs::create_directories(out);
  fs::copy_file(a.matrix, out / "matrix.ini", fs::copy_options::overwrite_existing);

  // All cells share one dataset.
  std::string sim_section;
  for (const AblationCell& c : m.cells) {
    std::vector<std::string> ov = m.overrides;
    ov.insert(ov.end(), c.overrides.begin(), c.overrides.end());
    ExperimentConfig cfg = load_config(m.configs, ov);
    cfg.finalize();
    const std::string dump = dump_config(cfg);
    const std::string sim = dump.substr(0, dump.find("[model]"));
    if (!sim_section.empty() && sim != sim_section) throw ConfigError("matrix: cells must share the [sim] section");
    sim_section = sim;
  }
  fs::path data(a.data);
  if (a.data.empty()) {
    data = out / "data";
    if (!fs::exists(data / "config.ini")) {
      ExperimentConfig base = load_config(m.configs, m.overrides);
      base.finalize();
      write_dataset(data / "train", base.sim, base.train_seeds);
      write_dataset(data / "val", base.sim, base.val_seeds);
      write_snapshot(data, base);
    }
  } else {
    require_dir(data, "data directory");
  }

  std::ofstream table(out / "table.csv");
  std::ofstream timing(out / "timing.csv");
  table << "cell,seed";
  for (const std::string& c : report_columns()) table << "," << c;
  table << "\n";
  timing << "cell,seed,seconds\n";
  std::ostringstream txt;
  txt << std::left << std::setw(16) << "cell" << std::setw(8) << "seed" << std::setw(10) << "mAP" << std::setw(10)
      << "nds_like" << "mATE\n";
  for (const AblationCell& c : m.cells) {
    for (std::uint64_t seed : m.seeds) {
      const fs::path dir = run_dir(out, c.name, seed);
      if (!(a.resume && fs::exists(dir / "final.csv"))) {
        fs::remove_all(dir);
        fs::create_directories(dir);
        std::vector<std::string> args = {self, "train"};
        for (const fs::path& p : m.configs) args.insert(args.end(), {"--config", fs::absolute(p).string()});
        std::vector<std::string> ov = m.overrides;
        ov.insert(ov.end(), c.overrides.begin(), c.overrides.end());
        for (const std::string& s : seed_overrides(seed)) ov.push_back(s);
        for (const std::string& s : ov) args.insert(args.end(), {"--set", s});
        args.insert(args.end(), {"--data", fs::absolute(data).string(), "--out", fs::absolute(dir).string()});
        std::cout << "run " << c.name << " seed " << seed << " ... " << std::flush;
        const auto t0 = std::chrono::steady_clock::now();
        const int rc = spawn_and_wait(args, dir / "train.log");
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (rc != 0) {
          std::cout << "failed (exit " << rc << ", see " << (dir / "train.log").string() << ")" << std::endl;
          throw TrainingError("ablation run " + c.name + "/seed" + std::to_string(seed) + " failed");
        }
        std::ofstream(dir / "seconds.txt") << fixed(secs, 1) << "\n";
        std::cout << fixed(secs, 1) << "s" << std::endl;
      }
      std::string secs = "nan";
      std::ifstream(dir / "seconds.txt") >> secs;
      timing << c.name << "," << seed << "," << secs << "\n";
      timing.flush();
      const CsvTable fin = read_csv(dir / "final.csv");
      table << c.name << "," << seed;
      for (const std::string& col : report_columns()) table << "," << fin.rows.at(0).at(static_cast<std::size_t>(fin.column(col)));
      table << "\n";
      table.flush();
      txt << std::left << std::setw(16) << c.name << std::setw(8) << seed << std::setw(10)
          << fixed(fin.number(0, "mAP"), 4) << std::setw(10) << fixed(fin.number(0, "nds_like"), 4)
          << fixed(fin.number(0, "mATE"), 4) << "\n";
    }
  }
  std::ofstream(out / "table.txt") << txt.str();
  std::cout << txt.str();
  return 0;
}

// report --------------------------------------------------------------------

int cmd_report(const std::string& runs, const std::string& out, const std::string& cells) {
  require_dir(runs, "runs directory");
  require_file(fs::path(runs) / "table.csv", "ablation table");
  std::vector<std::string> filter;
  std::stringstream ss(cells);
  for (std::string s; std::getline(ss, s, ',');) {
    if (!s.empty()) filter.push_back(s);
  }
  const std::vector<CellSummary> summary = summarize_ablation(runs, filter);
  write_report(summary, out);
  std::ifstream txt(fs::path(out) / "ablation.txt");
  std::cout << txt.rdbuf();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view 3D detection with viewpoint-equivariant queries"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate and render a synthetic dataset");
  g->add_option("--config", gen.configs, "Config files, applied in order");
  g->add_option("--set", gen.sets, "section.key=value overrides");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed-range", gen.seed_range, "A:B; writes these seeds directly into --out");
  g->add_option("--split", gen.split, "Split to write without --seed-range")
      ->check(CLI::IsMember({"all", "train", "val"}));
  g->add_flag("--force", gen.force, "Rewrite into a non-empty directory");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a detector");
  t->add_option("--config", tr.configs, "Config files, applied in order");
  t->add_option("--set", tr.sets, "section.key=value overrides");
  t->add_option("--data", tr.data, "Dataset root with train/ and val/ (generated in memory when omitted)");
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_flag("--resume", tr.resume, "Continue from <out>/checkpoint.bin");
  t->add_option("--stop-after", tr.stop_after, "Stop after this many iterations in total");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint or a predictions file");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint; its directory's config.ini is the default config");
  e->add_option("--predictions", ev.predictions, "Predictions JSON to score instead of a model");
  e->add_option("--data", ev.data, "Scene directory or dataset root")->required();
  e->add_option("--split", ev.split, "Split used when --data is a dataset root");
  e->add_option("--config", ev.configs, "Config files, applied in order");
  e->add_option("--set", ev.sets, "section.key=value overrides");
  e->add_option("--threshold", ev.threshold, "Score threshold (default from config)");
  e->add_option("--out", ev.out, "Write eval.csv and the resolved config here");
  e->add_option("--dump-predictions", ev.dump, "Write the model's detections as JSON");

  AblateArgs ab;
  auto* b = app.add_subcommand("ablate", "Run every cell and seed of an ablation matrix");
  b->add_option("--matrix", ab.matrix, "Matrix INI file")->required();
  b->add_option("--out", ab.out, "Output directory")->required();
  b->add_option("--data", ab.data, "Dataset root (generated under --out when omitted)");
  b->add_flag("--resume", ab.resume, "Keep runs that already have final.csv");

  std::string runs, report_out, cells;
  auto* r = app.add_subcommand("report", "Plot per-epoch curves and the ablation table");
  r->add_option("--runs", runs, "Ablation output directory")->required();
  r->add_option("--out", report_out, "Report directory")->required();
  r->add_option("--cells", cells, "Comma list of cells to include (default all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : kExitUsage;
  }
  try {
    if (g->parsed()) return cmd_gen_data(gen);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_eval(ev);
    if (b->parsed()) return cmd_ablate(ab, fs::read_symlink("/proc/self/exe").string());
    if (r->parsed()) return cmd_report(runs, report_out, cells);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
