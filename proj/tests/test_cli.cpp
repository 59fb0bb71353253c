// End-to-end checks of the command-line surface: exit codes, file outputs,
// manifest hashes, config file and environment seed handling. Drives the
// built binary named by the HYPERIPC_CLI environment variable.

#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hyperipc/data.hpp"
#include "hyperipc/trainer.hpp"

namespace fs = std::filesystem;
using namespace hyperipc;

namespace {

std::string cli() {
  const char* p = std::getenv("HYPERIPC_CLI");
  REQUIRE(p != nullptr);
  return p;
}

struct RunOut {
  int exit_code;
  std::string out;
};

RunOut run(const std::string& args, const std::string& envs = "") {
  const std::string out_file = "cli_out.txt";
  const std::string cmd = envs + " \"" + cli() + "\" " + args + " > " + out_file + " 2>&1";
  int rc = std::system(cmd.c_str());
  std::ifstream is(out_file);
  std::stringstream ss;
  ss << is.rdbuf();
  return RunOut{WEXITSTATUS(rc), ss.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path dir;
  TempDir() : dir(fs::temp_directory_path() / ("hyperipc_cli_test_" + std::to_string(::getpid()))) {
    fs::create_directories(dir);
  }
  ~TempDir() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("check-geometry exit codes and fault injection", "[cli]") {
  RunOut ok = run("check-geometry --samples 300 --seed 5");
  CHECK(ok.exit_code == 0);
  CHECK(ok.out.find("all checks passed") != std::string::npos);
  // the report lists at least 7 distinct invariant families
  int pass_lines = 0;
  std::istringstream lines(ok.out);
  std::string line;
  while (std::getline(lines, line)) pass_lines += line.find("PASS") != std::string::npos;
  CHECK(pass_lines >= 7);

  RunOut bad = run("check-geometry --samples 300 --inject-fault");
  CHECK(bad.exit_code == 1);
  CHECK(bad.out.find("FAILED identity") != std::string::npos);
  CHECK(bad.out.find("(-x) (+) x") != std::string::npos);  // names the broken law
}

TEST_CASE("unknown command is a usage error", "[cli]") {
  CHECK(run("definitely-not-a-command").exit_code == 2);
  CHECK(run("pretrain").exit_code == 2);  // missing required options
}

TEST_CASE("gen-data writes dataset, index, and manifest", "[cli]") {
  TempDir tmp;
  const std::string out = tmp / "ds.bin";
  RunOut r = run("gen-data --depth 2 --branching 2 --per-leaf 4 --points 64 --seed 3 --out " + out);
  REQUIRE(r.exit_code == 0);

  uint64_t mh = 0;
  Dataset ds = load_dataset(out, &mh);
  CHECK(ds.samples.size() == 8);
  CHECK(ds.spec.points_per_cloud == 64);

  auto manifest = nlohmann::json::parse(slurp(out + ".manifest.json"));
  CHECK(manifest["command"] == "gen-data");
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", (unsigned long long)mh);
  CHECK(manifest["config_hash"] == std::string(hex));  // data references its manifest

  std::ifstream idx(out + ".txt");
  std::string line;
  size_t lines = 0;
  while (std::getline(idx, line)) ++lines;
  CHECK(lines == ds.samples.size() + ds.prototypes.size());

  // same command twice: bitwise-identical dataset
  const std::string out2 = tmp / "ds2.bin";
  run("gen-data --depth 2 --branching 2 --per-leaf 4 --points 64 --seed 3 --out " + out2);
  CHECK(slurp(out) == slurp(out2));
}

TEST_CASE("HYPERIPC_SEED acts as the default seed", "[cli]") {
  TempDir tmp;
  const std::string a = tmp / "env.bin";
  const std::string b = tmp / "flag.bin";
  run("gen-data --depth 2 --branching 2 --per-leaf 3 --points 64 --out " + a,
      "HYPERIPC_SEED=77");
  run("gen-data --depth 2 --branching 2 --per-leaf 3 --points 64 --seed 77 --out " + b);
  Dataset da = load_dataset(a), db = load_dataset(b);
  REQUIRE(da.samples.size() == db.samples.size());
  CHECK(da.seed == 77);
  for (size_t i = 0; i < da.samples.size(); ++i)
    CHECK(da.samples[i].cloud.pts == db.samples[i].cloud.pts);
}

TEST_CASE("config file feeds defaults below flags", "[cli]") {
  TempDir tmp;
  const std::string cfg = tmp / "run.cfg";
  {
    std::ofstream os(cfg);
    os << "[gen-data]\n"
          "depth=2\n"
          "branching=2\n"
          "per-leaf=3\n"
          "points=64\n"
          "seed=9\n";
  }
  const std::string out = tmp / "cfg.bin";
  RunOut r = run("--config " + cfg + " gen-data --out " + out + " --per-leaf 5");
  REQUIRE(r.exit_code == 0);
  Dataset ds = load_dataset(out);
  CHECK(ds.spec.depth == 2);               // from the config file
  CHECK(ds.spec.samples_per_leaf == 5);    // flag wins over the file
  CHECK(ds.seed == 9);
}

TEST_CASE("pretrain, probe, fewshot, plot round-trip", "[cli][slow]") {
  TempDir tmp;
  const std::string data = tmp / "train.bin";
  REQUIRE(run("gen-data --depth 2 --branching 3 --per-leaf 14 --points 64 --seed 2 --out " + data)
              .exit_code == 0);

  const std::string ck = tmp / "ck.bin";
  RunOut tr = run("pretrain --data " + data + " --out " + ck +
                  " --epochs 2 --batch 8 --seed 4 --threads 2 --ball-dim 2");
  REQUIRE(tr.exit_code == 0);
  CHECK(tr.out.find("epoch   2") != std::string::npos);

  Checkpoint loaded = load_checkpoint(ck);
  CHECK(loaded.epoch == 2);
  CHECK(loaded.cfg.widths.ball_dim == 2);

  // training log: header + one record per epoch
  std::ifstream log(ck + ".log.jsonl");
  std::string line;
  std::getline(log, line);
  auto header = nlohmann::json::parse(line);
  CHECK(header["type"] == "header");
  int epochs = 0;
  while (std::getline(log, line)) {
    auto rec = nlohmann::json::parse(line);
    CHECK(rec["type"] == "epoch");
    CHECK(rec.contains("intra"));
    CHECK(rec.contains("cross"));
    CHECK(rec.contains("dho"));
    CHECK(rec.contains("total"));
    ++epochs;
  }
  CHECK(epochs == 2);

  RunOut pr = run("probe --ckpt " + ck + " --data " + data + " --seed 1 --out " + (tmp / "probe.jsonl"));
  CHECK(pr.exit_code == 0);
  CHECK(pr.out.find("probe accuracy") != std::string::npos);
  auto prec = nlohmann::json::parse(slurp(tmp / "probe.jsonl"));
  CHECK(prec["accuracy"].get<double>() >= 0.0);

  RunOut fsr = run("fewshot --ckpt " + ck + " --data " + data +
                   " --n 2 --m 5 --tasks 3 --seed 6 --out " + (tmp / "fs.jsonl"));
  CHECK(fsr.exit_code == 0);
  auto frec = nlohmann::json::parse(slurp(tmp / "fs.jsonl"));
  CHECK(frec["tasks"] == 3);
  CHECK(frec["task_accuracies"].size() == 3);

  RunOut pl = run("plot --ckpt2d " + ck + " --data " + data + " --out " + (tmp / "disk.svg"));
  CHECK(pl.exit_code == 0);
  const std::string svg = slurp(tmp / "disk.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("legend") != std::string::npos);
}

TEST_CASE("pretrain abort on divergence exits 3", "[cli][slow]") {
  TempDir tmp;
  const std::string data = tmp / "t.bin";
  run("gen-data --depth 2 --branching 2 --per-leaf 3 --points 64 --seed 2 --out " + data);
  RunOut r = run("pretrain --data " + data + " --out " + (tmp / "c.bin") +
                 " --epochs 3 --batch 4 --point-lr 1e14");
  CHECK(r.exit_code == 3);
  CHECK(r.out.find("non-finite") != std::string::npos);
}
