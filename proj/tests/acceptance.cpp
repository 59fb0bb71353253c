// Acceptance suite: runs every exit criterion at its stated tolerance and
// prints one PASS/FAIL line per criterion. Exits nonzero if any fail.
//
//  1. geometry exactness        (gyrogroup identities, 10k points, < 10 s)
//  2. small-curvature limit     (c = 1e-12, 1000 pairs, rel err < 1e-6)
//  3. gradient fidelity         (all primitives + losses < 1e-4, < 60 s)
//  4. loss oracles              (brute-force termwise match to 1e-10; log(N-1))
//  5. midpoint contraction      (1000 equal-norm pairs, 100%)
//  6. training sanity           (>= 30% loss drop over 30 epochs, finite)
//  7. objective ablation        (joint vs intra/cross/random probes)
//  8. curvature sweep           (no divergence, accuracy spread < 0.15)
//  9. few-shot protocol         (5w10s / 10w20s, pretrained - random >= 0.10)
// 10. hierarchy capture         (level-radius spearman >= 0.5, above random)
// 11. determinism               (two reproduce --threads 1 runs bit-identical)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hyperipc/checks.hpp"
#include "hyperipc/eval.hpp"

namespace fs = std::filesystem;
using namespace hyperipc;

namespace {

struct Criterion {
  int id;
  std::string name;
  bool pass;
  std::string detail;
  double seconds;
};

std::vector<Criterion> g_results;

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

void report(int id, const std::string& name, bool pass, const std::string& detail,
            double seconds) {
  g_results.push_back({id, name, pass, detail, seconds});
  std::printf("[%s] criterion %2d: %-26s %s  (%.1f s)\n", pass ? "PASS" : "FAIL", id,
              name.c_str(), detail.c_str(), seconds);
  std::fflush(stdout);
}

// Independent termwise oracle for criterion 4: literal evaluation of the
// contrastive loss with the arcosh metric form of the distance.
double oracle_distance(const BallPoint& x, const BallPoint& y) {
  const double c = x.c();
  double d2 = 0.0;
  for (size_t i = 0; i < x.coords.size(); ++i) {
    const double d = x.coords[i] - y.coords[i];
    d2 += d * d;
  }
  return std::acosh(1.0 + 2.0 * c * d2 /
                              ((1.0 - c * x.norm2()) * (1.0 - c * y.norm2()))) /
         std::sqrt(c);
}

double oracle_symmetric(const std::vector<BallPoint>& z1,
                        const std::vector<BallPoint>& z2, double tau) {
  const size_t n = z1.size();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double den1 = 0.0, den2 = 0.0;
    for (size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      den1 += std::exp(-oracle_distance(z1[i], z2[k]) / tau);
      den2 += std::exp(-oracle_distance(z2[i], z1[k]) / tau);
    }
    acc += -std::log(std::exp(-oracle_distance(z1[i], z2[i]) / tau) / den1);
    acc += -std::log(std::exp(-oracle_distance(z2[i], z1[i]) / tau) / den2);
  }
  return acc / (2.0 * double(n));
}

constexpr uint64_t kSeed = 20240901;
constexpr int kThreads = 4;

void criterion_1_and_2() {
  Timer t;
  auto results = run_geometry_checks(kSeed, 10000, 1000);
  auto find = [&](const std::string& prefix) -> const CheckResult& {
    for (const auto& r : results)
      if (r.name.rfind(prefix, 0) == 0) return r;
    throw std::logic_error("missing check family " + prefix);
  };
  const char* families[] = {"mobius_add: x (+) 0 = x", "mobius_add: (-x) (+) x = 0",
                            "gyrogroup left cancellation", "distance symmetry",
                            "distance self", "exp/log round-trip"};
  bool ok = true;
  double worst = 0.0;
  for (const char* f : families) {
    const CheckResult& r = find(f);
    ok &= r.max_err <= 1e-8;
    worst = std::max(worst, r.max_err);
  }
  const double elapsed = t.seconds();
  ok &= elapsed < 10.0;
  char buf[128];
  std::snprintf(buf, sizeof buf, "max err %.2e over 10000 pts", worst);
  report(1, "geometry exactness", ok, buf, elapsed);

  const CheckResult& lim = find("small-curvature limit");
  std::snprintf(buf, sizeof buf, "rel err %.2e over %d pairs", lim.max_err, lim.samples);
  report(2, "small-curvature limit", lim.max_err < 1e-6, buf, elapsed);
}

void criterion_3() {
  Timer t;
  GradientReport rep = run_grad_checks(kSeed, 8, {2, 16});
  bool ok = true;
  for (const auto& r : rep.rows) ok &= r.max_rel_err < 1e-4;
  const double elapsed = t.seconds();
  ok &= elapsed < 60.0;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu checks, worst rel err %.2e", rep.rows.size(),
                rep.max_rel_err());
  report(3, "gradient fidelity", ok, buf, elapsed);
}

void criterion_4() {
  Timer t;
  Rng rng(hash64(kSeed, 4));
  const Curvature c(0.1);
  std::vector<BallPoint> z1, z2;
  for (int i = 0; i < 8; ++i) {
    z1.push_back(detail::sample_ball(rng, 4, c, 0.7));
    z2.push_back(detail::sample_ball(rng, 4, c, 0.7));
  }
  const double lib = hyp_infonce_symmetric(z1, z2, 0.2);
  const double orc = oracle_symmetric(z1, z2, 0.2);
  bool ok = std::abs(lib - orc) <= 1e-10;

  // coincident batch: exactly log(N-1) in each direction
  std::vector<BallPoint> same(8, z1[0]);
  const double expect = std::log(7.0);
  ok &= hyp_infonce_directional(same, same, 0.2) == expect;
  ok &= hyp_infonce_directional(same, same, 0.7) == expect;
  char buf[128];
  std::snprintf(buf, sizeof buf, "oracle gap %.2e, uniform == log(7)", std::abs(lib - orc));
  report(4, "loss oracles", ok, buf, t.seconds());
}

void criterion_5() {
  Timer t;
  Rng rng(hash64(kSeed, 5));
  int violations = 0;
  for (int i = 0; i < 1000; ++i) {
    const Curvature c(i % 2 == 0 ? 0.1 : 1.0);
    const int dim = 2 + int(rng.index(3));
    const double r = rng.uniform(0.05, 0.8) / c.sqrt_c();
    Vec u(size_t(dim), 0.0), v(size_t(dim), 0.0);
    double cosang = 1.0, nu = 0.0, nv = 0.0;
    do {
      nu = nv = 0.0;
      double uv = 0.0;
      for (int j = 0; j < dim; ++j) {
        u[size_t(j)] = rng.normal();
        v[size_t(j)] = rng.normal();
        nu += u[size_t(j)] * u[size_t(j)];
        nv += v[size_t(j)] * v[size_t(j)];
        uv += u[size_t(j)] * v[size_t(j)];
      }
      cosang = uv / std::sqrt(nu * nv);
    } while (std::abs(cosang) > 0.999);
    for (int j = 0; j < dim; ++j) {
      u[size_t(j)] *= r / std::sqrt(nu);
      v[size_t(j)] *= r / std::sqrt(nv);
    }
    if (gyromidpoint(BallPoint{u, c}, BallPoint{v, c}).norm() >= r) ++violations;
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "%d/1000 violations", violations);
  report(5, "midpoint contraction", violations == 0, buf, t.seconds());
}

// shared state for criteria 6-10
struct BenchmarkRuns {
  Dataset bench, transfer;
  std::map<std::string, Checkpoint> ckpts;  // key: mode_c_seed
  Checkpoint rand_ck;
  std::map<std::string, double> probe_acc;

  static std::string key(const std::string& mode, double c, uint64_t seed) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s_c%.2f_s%llu", mode.c_str(), c,
                  (unsigned long long)seed);
    return buf;
  }
};

double probe_of(BenchmarkRuns& B, const Checkpoint& ck) {
  EmbedOptions eo;
  eo.threads = kThreads;
  EmbeddingTable t = embed_dataset(ck, B.bench, eo);
  return linear_probe(t, hash64(kSeed, 0x70u), 0.7).accuracy;
}

void criterion_6_to_10(BenchmarkRuns& B) {
  // --- criterion 6: training sanity on the standard benchmark ---------------
  Timer t6;
  B.bench = gen_dataset(benchmark_spec(), kSeed);
  B.transfer = gen_dataset(benchmark_spec(40, 256, 4), hash64(kSeed, 0x7472u));

  bool ok6 = true;
  std::string detail6;
  {
    TrainConfig cfg = benchmark_config(kSeed, 30, kThreads);
    Checkpoint ck = train(cfg, B.bench);
    B.ckpts[BenchmarkRuns::key("joint", 0.1, kSeed)] = ck;
    const double e1 = ck.history.front().total, e30 = ck.history.back().total;
    for (const LossBreakdown& b : ck.history)
      ok6 &= std::isfinite(b.intra) && std::isfinite(b.cross) && std::isfinite(b.dho) &&
             std::isfinite(b.total);
    const double drop = 1.0 - e30 / e1;
    ok6 &= drop >= 0.30;
    const double elapsed = t6.seconds();
    ok6 &= elapsed < 600.0;
    char buf[160];
    std::snprintf(buf, sizeof buf, "loss %.3f -> %.3f (drop %.0f%%)", e1, e30,
                  100.0 * drop);
    detail6 = buf;
    report(6, "training sanity", ok6, detail6, elapsed);
  }

  // --- criterion 7: objective ablation over 3 seeds --------------------------
  Timer t7;
  {
    for (const std::string mode : {"joint", "intra", "cross"})
      for (uint64_t s = 0; s < 3; ++s) {
        const std::string key = BenchmarkRuns::key(mode, 0.1, kSeed + s);
        if (!B.ckpts.count(key)) {
          TrainConfig cfg = benchmark_config(kSeed + s, 30, kThreads);
          cfg.mode = objective_from_string(mode);
          B.ckpts[key] = train(cfg, B.bench);
        }
        B.probe_acc[key] = probe_of(B, B.ckpts.at(key));
      }
    B.rand_ck.cfg = benchmark_config(kSeed, 30, kThreads);
    B.rand_ck.params = init_params(kSeed, B.rand_ck.cfg.widths);
    B.rand_ck.opt.init(B.rand_ck.params);
    const double rand_acc = probe_of(B, B.rand_ck);
    B.probe_acc["rand"] = rand_acc;

    auto mean_of = [&](const std::string& mode) {
      double acc = 0.0;
      for (uint64_t s = 0; s < 3; ++s)
        acc += B.probe_acc.at(BenchmarkRuns::key(mode, 0.1, kSeed + s));
      return acc / 3.0;
    };
    const double mj = mean_of("joint"), mi = mean_of("intra"), mc = mean_of("cross");
    const bool ok = mj >= mi - 0.01 && mj >= mc - 0.01 && mj >= rand_acc + 0.15;
    char buf[200];
    std::snprintf(buf, sizeof buf, "probe joint %.3f intra %.3f cross %.3f rand %.3f",
                  mj, mi, mc, rand_acc);
    report(7, "objective ablation", ok, buf, t7.seconds());
  }

  // --- criterion 8: curvature sweep ------------------------------------------
  Timer t8;
  {
    bool ok = true;
    double lo = 1e300, hi = -1e300;
    std::string spread;
    for (double c : {0.01, 0.1, 0.3, 0.5, 1.0}) {
      const std::string key = BenchmarkRuns::key("joint", c, kSeed);
      if (!B.ckpts.count(key)) {
        TrainConfig cfg = benchmark_config(kSeed, 30, kThreads);
        cfg.curvature = c;
        try {
          B.ckpts[key] = train(cfg, B.bench);
        } catch (const TrainAbort&) {
          ok = false;  // divergence counts as failure
          continue;
        }
        B.probe_acc[key] = probe_of(B, B.ckpts.at(key));
      } else if (!B.probe_acc.count(key)) {
        B.probe_acc[key] = probe_of(B, B.ckpts.at(key));
      }
      for (const LossBreakdown& b : B.ckpts.at(key).history)
        ok &= std::isfinite(b.total);
      const double acc = B.probe_acc.at(key);
      lo = std::min(lo, acc);
      hi = std::max(hi, acc);
      char buf[48];
      std::snprintf(buf, sizeof buf, " c=%.2f:%.3f", c, acc);
      spread += buf;
    }
    ok &= (hi - lo) < 0.15;
    char buf[240];
    std::snprintf(buf, sizeof buf, "spread %.3f |%s", hi - lo, spread.c_str());
    report(8, "curvature sweep", ok, buf, t8.seconds());
  }

  // --- criterion 9: few-shot protocol on the transfer set --------------------
  Timer t9;
  {
    EmbedOptions eo;
    eo.threads = kThreads;
    EmbeddingTable tj =
        embed_dataset(B.ckpts.at(BenchmarkRuns::key("joint", 0.1, kSeed)), B.transfer, eo);
    EmbeddingTable tr = embed_dataset(B.rand_ck, B.transfer, eo);
    FewShotResult j5 = fewshot_eval(tj, 5, 10, 10, hash64(kSeed, 0x66u));
    FewShotResult r5 = fewshot_eval(tr, 5, 10, 10, hash64(kSeed, 0x66u));
    FewShotResult j10 = fewshot_eval(tj, 10, 20, 10, hash64(kSeed, 0x67u));
    FewShotResult r10 = fewshot_eval(tr, 10, 20, 10, hash64(kSeed, 0x67u));
    bool ok = j5.tasks == 10 && j10.tasks == 10 && (j5.mean - r5.mean) >= 0.10;
    char buf[240];
    std::snprintf(buf, sizeof buf,
                  "5w10s %.3f+/-%.3f vs rand %.3f+/-%.3f; 10w20s %.3f+/-%.3f vs %.3f+/-%.3f",
                  j5.mean, j5.stddev, r5.mean, r5.stddev, j10.mean, j10.stddev, r10.mean,
                  r10.stddev);
    report(9, "few-shot protocol", ok, buf, t9.seconds());
  }

  // --- criterion 10: hierarchy capture ----------------------------------------
  Timer t10;
  {
    EmbedOptions eo;
    eo.threads = kThreads;
    EmbeddingTable tj =
        embed_dataset(B.ckpts.at(BenchmarkRuns::key("joint", 0.1, kSeed)), B.bench, eo);
    EmbeddingTable tr = embed_dataset(B.rand_ck, B.bench, eo);
    const double cj = level_radius_correlation(tj, true);
    const double cr = level_radius_correlation(tr, true);
    const bool ok = cj >= 0.5 && cj > cr;
    char buf[128];
    std::snprintf(buf, sizeof buf, "spearman joint %.3f vs rand %.3f", cj, cr);
    report(10, "hierarchy capture", ok, buf, t10.seconds());
  }
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void criterion_11() {
  Timer t;
  const char* cli = std::getenv("HYPERIPC_CLI");
  if (!cli) {
    report(11, "determinism", false, "HYPERIPC_CLI not set", 0.0);
    return;
  }
  // a reduced-scale reproduce exercises every pipeline stage; determinism is
  // scale-independent
  const fs::path base = fs::temp_directory_path() / "hyperipc_acceptance_repro";
  fs::remove_all(base);
  const std::string common = std::string("\"") + cli +
                             "\" reproduce --threads 1 --seed 11 --epochs 3 --per-leaf 6 "
                             "--points 64 --seeds 1 --tasks 3 --out ";
  bool ok = true;
  for (int run = 0; run < 2; ++run) {
    const std::string cmd =
        common + (base / ("run" + std::to_string(run))).string() + " > /dev/null 2>&1";
    ok &= std::system(cmd.c_str()) == 0;
  }
  int compared = 0;
  std::string first_diff;
  if (ok) {
    for (const auto& entry : fs::directory_iterator(base / "run0")) {
      const std::string name = entry.path().filename().string();
      if (name == "manifest.json") continue;  // carries wall-clock duration
      ++compared;
      if (slurp(entry.path()) != slurp(base / "run1" / name)) {
        ok = false;
        if (first_diff.empty()) first_diff = name;
      }
    }
    ok &= compared > 5;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d artifacts bit-identical%s%s", compared,
                first_diff.empty() ? "" : "; first diff: ", first_diff.c_str());
  report(11, "determinism", ok, buf, t.seconds());
  fs::remove_all(base);
}

}  // namespace

int main() {
  std::printf("hyperipc acceptance suite (seed %llu, %d worker threads)\n",
              (unsigned long long)kSeed, kThreads);
  std::printf("note: embedding-optimization gradient checks run with the level weights\n"
              "      differentiated so the finite-difference oracle measures the same\n"
              "      function; the detached-weights training mode is checked against a\n"
              "      frozen-weight oracle in the same table.\n\n");
  Timer total;
  criterion_1_and_2();
  criterion_3();
  criterion_4();
  criterion_5();
  BenchmarkRuns B;
  criterion_6_to_10(B);
  criterion_11();

  int failed = 0;
  for (const Criterion& c : g_results) failed += !c.pass;
  std::printf("\n%zu criteria checked, %d failed, %.1f s total\n", g_results.size(),
              failed, total.seconds());
  return failed == 0 ? 0 : 1;
}
