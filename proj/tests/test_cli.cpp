#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <string>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result cli(const std::string& args) {
  const std::string cmd = std::string(VEDET_CLI_PATH) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  Result r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p) != nullptr) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path fixture(const std::string& name) { return fs::path(VEDET_SOURCE_DIR) / "tests" / "fixtures" / name; }

fs::path fresh(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("vedet_test_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string tiny() { return "--config " + fixture("tiny.ini").string(); }

}  // namespace

TEST_CASE("gen-data is byte-reproducible and refuses to clobber") {
  const auto a = fresh("gen_a"), b = fresh("gen_b");
  REQUIRE(cli("gen-data " + tiny() + " --seed-range 0:3 --out " + a.string()).code == 0);
  REQUIRE(cli("gen-data " + tiny() + " --seed-range 0:3 --out " + b.string()).code == 0);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    CHECK(slurp(e.path()) == slurp(b / fs::relative(e.path(), a)));
    ++files;
  }
  CHECK(files == 3 * 5 + 1);
  CHECK(fs::exists(a / "000002" / "cam1_t-1.ppm"));
  CHECK(cli("gen-data " + tiny() + " --seed-range 0:3 --out " + a.string()).code == 2);
  CHECK(cli("gen-data " + tiny() + " --seed-range 0:3 --force --out " + a.string()).code == 0);
}

TEST_CASE("oracle predictions score a perfect mAP") {
  const auto data = fresh("oracle");
  REQUIRE(cli("gen-data " + tiny() + " --seed-range 100:104 --out " + data.string()).code == 0);
  nlohmann::json preds;
  preds["schema_version"] = 1;
  preds["scenes"] = nlohmann::json::object();
  for (const auto& e : fs::directory_iterator(data)) {
    if (!e.is_directory()) continue;
    const nlohmann::json meta = nlohmann::json::parse(slurp(e.path() / "meta.json"));
    nlohmann::json arr = nlohmann::json::array();
    for (nlohmann::json b : meta["boxes"]) {
      b["score"] = 0.9;
      arr.push_back(b);
    }
    preds["scenes"][e.path().filename().string()] = arr;
  }
  std::ofstream(data / "oracle.json") << preds.dump();
  const Result r = cli("eval " + tiny() + " --predictions " + (data / "oracle.json").string() + " --data " + data.string());
  CHECK(r.code == 0);
  CHECK(r.out.find("mAP=1.000") != std::string::npos);
  CHECK(r.out.find("mATE=0.000") != std::string::npos);

  nlohmann::json empty = preds;
  empty["scenes"] = nlohmann::json::object();
  std::ofstream(data / "empty.json") << empty.dump();
  CHECK(cli("eval " + tiny() + " --predictions " + (data / "empty.json").string() + " --data " + data.string())
            .out.find("mAP=0.000") != std::string::npos);
  std::ofstream(data / "v9.json") << R"({"schema_version": 9, "scenes": {}})";
  CHECK(cli("eval " + tiny() + " --predictions " + (data / "v9.json").string() + " --data " + data.string()).code == 2);
}

TEST_CASE("train, resume and eval through the command line") {
  const auto run = fresh("train");
  const Result first = cli("train " + tiny() + " --out " + run.string() + " --stop-after 4");
  REQUIRE(first.code == 0);
  CHECK(!fs::exists(run / "final.csv"));
  const Result rest = cli("train " + tiny() + " --out " + run.string() + " --resume");
  REQUIRE(rest.code == 0);
  CHECK(rest.out.find("final mAP=") != std::string::npos);
  CHECK(fs::exists(run / "final.csv"));

  const auto whole = fresh("train_whole");
  REQUIRE(cli("train " + tiny() + " --out " + whole.string()).code == 0);
  CHECK(slurp(run / "metrics.csv") == slurp(whole / "metrics.csv"));
  CHECK(slurp(run / "checkpoint.bin") == slurp(whole / "checkpoint.bin"));
  CHECK(slurp(run / "final.csv") == slurp(whole / "final.csv"));

  const auto data = fresh("train_data");
  REQUIRE(cli("gen-data " + tiny() + " --seed-range 100:104 --out " + data.string()).code == 0);
  const Result ev = cli("eval --ckpt " + (run / "checkpoint.bin").string() + " --data " + data.string() +
                        " --dump-predictions " + (data / "p.json").string());
  REQUIRE(ev.code == 0);
  CHECK(std::regex_search(ev.out, std::regex("mAP=[0-9]\\.[0-9]{3}")));
  const Result again = cli("eval " + tiny() + " --predictions " + (data / "p.json").string() + " --data " + data.string());
  CHECK(again.out.substr(0, again.out.find('\n')) == ev.out.substr(0, ev.out.find('\n')));
}

TEST_CASE("usage and input errors exit with status 2") {
  CHECK(cli("--help").code == 0);
  CHECK(cli("frobnicate").code != 0);
  CHECK(cli("train " + tiny()).code == 2);
  const Result unknown = cli("train " + tiny() + " --set model.widht=3 --out " + fresh("bad").string());
  CHECK(unknown.code == 2);
  CHECK(unknown.out.find("model.widht") != std::string::npos);
  CHECK(cli("eval --ckpt /nonexistent/ckpt.bin --data /tmp " + tiny()).code == 2);
  CHECK(cli("eval --data /tmp " + tiny()).code == 2);
  CHECK(cli("train --config /nonexistent.ini --out " + fresh("bad2").string()).code == 2);
}

TEST_CASE("ablate and report produce tables and curves") {
  const auto out = fresh("ablate");
  const Result r = cli("ablate --matrix " + fixture("tiny_matrix.ini").string() + " --out " + out.string());
  REQUIRE(r.code == 0);
  const std::string table = slurp(out / "table.csv");
  CHECK(table.rfind("cell,seed,mAP", 0) == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 5);
  CHECK(fs::exists(out / "runs" / "V2" / "seed1" / "metrics.csv"));
  const Result again = cli("ablate --matrix " + fixture("tiny_matrix.ini").string() + " --out " + out.string() + " --resume");
  CHECK(again.code == 0);
  CHECK(slurp(out / "table.csv") == table);
  const auto rep = fresh("report");
  REQUIRE(cli("report --runs " + out.string() + " --out " + rep.string()).code == 0);
  for (const char* f : {"curves.csv", "curves.svg", "ablation.csv", "ablation.txt", "ablation.svg"}) {
    CHECK(fs::file_size(rep / f) > 0);
  }
  const std::string curves = slurp(rep / "curves.csv");
  CHECK(curves.find("V0") != std::string::npos);
  CHECK(curves.find("V2") != std::string::npos);
}
