// hyperipc: hyperbolic image-and-pointcloud contrastive learning toolkit.
//
// Subcommands cover the full workflow: synthetic data generation, geometry and
// gradient self-checks, two-branch pretraining, linear probing, few-shot
// evaluation, Poincare-disk plotting, and a one-command benchmark reproduction.
//
// Exit codes: 0 success, 1 check failure, 2 usage error, 3 runtime abort.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hyperipc/checks.hpp"
#include "hyperipc/eval.hpp"
#include "hyperipc/manifest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hyperipc;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

void print_check_table(const std::vector<CheckResult>& results) {
  std::printf("%-52s %9s %12s %10s  %s\n", "check", "samples", "max_err", "tol", "status");
  for (const CheckResult& r : results)
    std::printf("%-52s %9d %12.3e %10.0e  %s\n", r.name.c_str(), r.samples, r.max_err,
                r.tol, r.pass() ? "PASS" : "FAIL");
}

void print_grad_table(const GradientReport& rep, double tol) {
  std::printf("%-58s %8s %12s  %s\n", "gradient check (central differences, step 1e-5)",
              "params", "max_rel_err", "status");
  for (const auto& r : rep.rows)
    std::printf("%-58s %8d %12.3e  %s\n", r.name.c_str(), r.params, r.max_rel_err,
                r.max_rel_err < tol ? "PASS" : "FAIL");
}

int cmd_check_geometry(bool with_grad, bool with_losses, uint64_t seed, int samples,
                       bool inject_fault) {
  detail::g_flip_mobius_sign = inject_fault;
  bool ok = true;

  auto geo = run_geometry_checks(seed, samples);
  print_check_table(geo);
  for (const auto& r : geo)
    if (!r.pass()) {
      ok = false;
      std::printf("FAILED identity: %s (max_err %.3e > tol %.0e)\n", r.name.c_str(),
                  r.max_err, r.tol);
    }

  if (with_grad) {
    GradientReport rep = run_grad_checks(seed);
    std::printf("\n");
    print_grad_table(rep, 1e-4);
    if (rep.max_rel_err() >= 1e-4) ok = false;
  }
  if (with_losses) {
    auto losses = run_loss_checks(seed);
    std::printf("\n");
    print_check_table(losses);
    for (const auto& r : losses)
      if (!r.pass()) ok = false;
  }
  std::printf("\n%s\n", ok ? "all checks passed" : "CHECK FAILURE");
  return ok ? 0 : 1;
}

void write_epoch_log(const std::string& path, uint64_t manifest_hash,
                     const std::vector<LossBreakdown>& history) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open log file " + path);
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", (unsigned long long)manifest_hash);
  os << json{{"type", "header"}, {"manifest", hex}}.dump() << "\n";
  for (size_t e = 0; e < history.size(); ++e) {
    const LossBreakdown& b = history[e];
    os << json{{"type", "epoch"}, {"epoch", e + 1},   {"intra", b.intra},
               {"cross", b.cross}, {"dho", b.dho},     {"total", b.total}}
              .dump()
       << "\n";
  }
}

struct PretrainArgs {
  std::string data, out;
  std::string mode = "joint";
  std::string neg_bank = "cross";
  TrainConfig cfg;
  bool freeze_image = false;
};

Checkpoint run_pretrain(PretrainArgs& a, RunManifest& man) {
  Dataset ds = load_dataset(a.data);
  a.cfg.mode = objective_from_string(a.mode);
  a.cfg.neg_bank = negative_bank_from_string(a.neg_bank);
  a.cfg.image_backprop = !a.freeze_image;
  a.cfg.validate();

  man.set("data", a.data);
  man.set("mode", a.mode);
  man.set("neg_bank", a.neg_bank);
  man.set("curvature", a.cfg.curvature);
  man.set("tau", a.cfg.tau);
  man.set("lambda", a.cfg.lambda);
  man.set("epochs", a.cfg.epochs);
  man.set("batch", a.cfg.batch_size);
  man.set("seed", a.cfg.seed);
  man.set("ball_dim", a.cfg.widths.ball_dim);
  man.set("image_backprop", a.cfg.image_backprop);
  man.set("image_augment", a.cfg.image_augment);
  const uint64_t h = man.hash();

  TrainHooks hooks;
  hooks.on_epoch = [](int e, const LossBreakdown& b) {
    std::printf("epoch %3d  intra %.4f  cross %.4f  dho %.6f  total %.4f\n", e + 1,
                b.intra, b.cross, b.dho, b.total);
  };
  hooks.on_checkpoint = [&](const Checkpoint& ck) { save_checkpoint(a.out, ck, h); };

  Checkpoint ck = train(a.cfg, ds, hooks);
  write_epoch_log(a.out + ".log.jsonl", h, ck.history);
  man.artifacts = {a.out, a.out + ".log.jsonl"};
  return ck;
}

// ---------------------------------------------------------------------------
// reproduce: the standard desk-scale benchmark, mirroring the shapes of the
// reference tables (linear probe, few-shot, curvature sweep, objective
// ablation) plus the 2-D disk plot.

struct ReproduceArgs {
  std::string out_dir;
  uint64_t seed = 1;
  int epochs = 30;
  int per_leaf = 40;
  int points = 256;
  int n_train_seeds = 3;
  int tasks = 10;
  int threads = 0;
  std::vector<double> curvatures = {0.01, 0.1, 0.3, 0.5, 1.0};
};

struct RunRow {
  std::string mode;
  double curvature;
  uint64_t seed;
  double probe_acc = 0.0;
  double corr = 0.0;
  double final_total = 0.0;
};

int cmd_reproduce(const ReproduceArgs& ra) {
  Timer timer;
  fs::create_directories(ra.out_dir);
  RunManifest man;
  man.command = "reproduce";
  man.set("seed", ra.seed);
  man.set("epochs", ra.epochs);
  man.set("per_leaf", ra.per_leaf);
  man.set("points", ra.points);
  man.set("train_seeds", ra.n_train_seeds);
  man.set("tasks", ra.tasks);
  {
    std::string cs;
    for (double c : ra.curvatures) cs += (cs.empty() ? "" : ",") + std::to_string(c);
    man.set("curvatures", cs);
  }
  const uint64_t h = man.hash();
  auto outp = [&](const std::string& name) { return (fs::path(ra.out_dir) / name).string(); };

  // datasets: 9-class pretraining benchmark + 16-class transfer set for few-shot
  Dataset bench = gen_dataset(benchmark_spec(ra.per_leaf, ra.points), ra.seed);
  save_dataset(outp("benchmark.bin"), bench, h);
  write_dataset_index(outp("benchmark.txt"), bench);

  Dataset transfer = gen_dataset(benchmark_spec(ra.per_leaf, ra.points, 4),
                                 hash64(ra.seed, 0x7472616eu));
  save_dataset(outp("transfer.bin"), transfer, h);

  TrainConfig base = benchmark_config(ra.seed, ra.epochs, ra.threads, ra.points);

  std::ofstream records(outp("records.jsonl"));
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", (unsigned long long)h);
  records << json{{"type", "header"}, {"manifest", hex}}.dump() << "\n";

  std::vector<RunRow> rows;
  auto run_one = [&](const std::string& mode, double curv, uint64_t seed) -> RunRow {
    TrainConfig cfg = base;
    cfg.mode = objective_from_string(mode);
    cfg.curvature = curv;
    cfg.seed = seed;
    std::printf("[reproduce] pretrain mode=%s c=%.2f seed=%llu\n", mode.c_str(), curv,
                (unsigned long long)seed);
    std::fflush(stdout);
    Checkpoint ck = train(cfg, bench);
    char name[128];
    std::snprintf(name, sizeof name, "ckpt_%s_c%.2f_s%llu.bin", mode.c_str(), curv,
                  (unsigned long long)seed);
    save_checkpoint(outp(name), ck, h);
    write_epoch_log(outp(std::string(name) + ".log.jsonl"), h, ck.history);

    EmbedOptions eo;
    eo.threads = ra.threads;
    EmbeddingTable table = embed_dataset(ck, bench, eo);
    RunRow row;
    row.mode = mode;
    row.curvature = curv;
    row.seed = seed;
    row.probe_acc = linear_probe(table, hash64(ra.seed, 0x70726f62u), 0.7).accuracy;
    row.corr = level_radius_correlation(table, true);
    row.final_total = ck.history.back().total;
    records << json{{"type", "run"},     {"mode", mode},          {"curvature", curv},
                    {"seed", seed},      {"probe_acc", row.probe_acc},
                    {"corr", row.corr},  {"final_total", row.final_total}}
                   .dump()
            << "\n";
    return row;
  };

  // objective ablation at the reference curvature
  const double ref_c = 0.1;
  for (const std::string& mode : {"joint", "intra", "cross"})
    for (int s = 0; s < ra.n_train_seeds; ++s)
      rows.push_back(run_one(mode, ref_c, ra.seed + uint64_t(s)));
  // curvature sweep, joint objective
  for (double c : ra.curvatures)
    if (c != ref_c) rows.push_back(run_one("joint", c, ra.seed));

  // random-init baseline
  TrainConfig rand_cfg = base;
  rand_cfg.seed = ra.seed;
  Checkpoint rand_ck;
  rand_ck.cfg = rand_cfg;
  rand_ck.params = init_params(rand_cfg.seed, rand_cfg.widths);
  rand_ck.opt.init(rand_ck.params);
  save_checkpoint(outp("ckpt_rand.bin"), rand_ck, h);
  EmbedOptions eo;
  eo.threads = ra.threads;
  EmbeddingTable rand_bench = embed_dataset(rand_ck, bench, eo);
  const double rand_probe = linear_probe(rand_bench, hash64(ra.seed, 0x70726f62u), 0.7).accuracy;
  const double rand_corr = level_radius_correlation(rand_bench, true);
  records << json{{"type", "run"}, {"mode", "rand"}, {"curvature", ref_c},
                  {"seed", ra.seed}, {"probe_acc", rand_probe}, {"corr", rand_corr}}
                 .dump()
          << "\n";

  // few-shot on the transfer set: pretrained joint (first seed) vs random init
  Checkpoint joint_ck = load_checkpoint(outp([&] {
    char name[128];
    std::snprintf(name, sizeof name, "ckpt_%s_c%.2f_s%llu.bin", "joint", ref_c,
                  (unsigned long long)ra.seed);
    return std::string(name);
  }()));
  EmbeddingTable t_joint = embed_dataset(joint_ck, transfer, eo);
  EmbeddingTable t_rand = embed_dataset(rand_ck, transfer, eo);
  struct FsRow {
    std::string name;
    FewShotResult r;
  };
  std::vector<FsRow> fs_rows;
  for (auto [n, m] : std::vector<std::pair<int, int>>{{5, 10}, {10, 20}}) {
    fs_rows.push_back({"joint", fewshot_eval(t_joint, n, m, ra.tasks, hash64(ra.seed, 0x6673u))});
    fs_rows.push_back({"rand", fewshot_eval(t_rand, n, m, ra.tasks, hash64(ra.seed, 0x6673u))});
  }
  for (const FsRow& fr : fs_rows)
    records << json{{"type", "fewshot"}, {"encoder", fr.name},   {"n_way", fr.r.n_way},
                    {"m_shot", fr.r.m_shot}, {"tasks", fr.r.tasks}, {"mean", fr.r.mean},
                    {"std", fr.r.stddev}}
                   .dump()
            << "\n";

  // native 2-D pretraining for the disk plot
  TrainConfig cfg2d = base;
  cfg2d.widths.ball_dim = 2;
  cfg2d.seed = ra.seed;
  std::printf("[reproduce] pretrain 2-D disk run\n");
  std::fflush(stdout);
  Checkpoint ck2d = train(cfg2d, bench);
  save_checkpoint(outp("ckpt2d.bin"), ck2d, h);
  plot_disk(embed_dataset(ck2d, bench, eo), outp("disk.svg"), h,
            "mode=joint c=0.1 ball_dim=2");

  // summary table
  std::ofstream sum(outp("summary.txt"));
  sum << "hyperipc reproduce summary (manifest " << hex << ")\n\n";
  sum << "== pretraining runs: linear probe / level-radius correlation ==\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-8s %10s %6s %12s %10s %12s\n", "mode", "curvature",
                "seed", "probe_acc", "corr", "final_loss");
  sum << line;
  for (const RunRow& r : rows) {
    std::snprintf(line, sizeof line, "%-8s %10.2f %6llu %12.4f %10.4f %12.4f\n",
                  r.mode.c_str(), r.curvature, (unsigned long long)(r.seed - ra.seed),
                  r.probe_acc, r.corr, r.final_total);
    sum << line;
  }
  std::snprintf(line, sizeof line, "%-8s %10.2f %6d %12.4f %10.4f %12s\n", "rand", ref_c,
                0, rand_probe, rand_corr, "-");
  sum << line;

  sum << "\n== objective ablation (mean probe accuracy over seeds, c = 0.1) ==\n";
  for (const std::string& mode : {"joint", "intra", "cross"}) {
    double acc = 0.0;
    int cnt = 0;
    for (const RunRow& r : rows)
      if (r.mode == mode && r.curvature == ref_c) acc += r.probe_acc, ++cnt;
    std::snprintf(line, sizeof line, "%-8s %.4f (n=%d)\n", mode.c_str(), acc / cnt, cnt);
    sum << line;
  }
  std::snprintf(line, sizeof line, "%-8s %.4f (n=1)\n", "rand", rand_probe);
  sum << line;

  sum << "\n== curvature sweep (joint, first seed) ==\n";
  for (double c : ra.curvatures) {
    for (const RunRow& r : rows)
      if (r.mode == "joint" && r.curvature == c && r.seed == ra.seed) {
        std::snprintf(line, sizeof line, "c=%-6.2f probe_acc %.4f\n", c, r.probe_acc);
        sum << line;
      }
  }

  sum << "\n== few-shot on the 16-class transfer set ==\n";
  for (const FsRow& fr : fs_rows) {
    std::snprintf(line, sizeof line, "%-6s %2d-way %2d-shot: %.4f +/- %.4f (%d tasks)\n",
                  fr.name.c_str(), fr.r.n_way, fr.r.m_shot, fr.r.mean, fr.r.stddev,
                  fr.r.tasks);
    sum << line;
  }
  sum.close();

  man.artifacts = {outp("benchmark.bin"), outp("transfer.bin"), outp("records.jsonl"),
                   outp("summary.txt"), outp("disk.svg")};
  man.duration_s = timer.seconds();
  man.write(outp("manifest.json"));
  std::printf("[reproduce] done in %.1f s; summary at %s\n", man.duration_s,
              outp("summary.txt").c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hyperipc: hyperbolic image-and-pointcloud contrastive learning toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "config file (key=value lines; flags take precedence)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic hierarchical dataset");
  HierarchySpec spec;
  uint64_t gen_seed = 1;
  std::string gen_out = "dataset.bin";
  gen->add_option("--depth", spec.depth, "tree depth (levels)")->capture_default_str();
  gen->add_option("--branching", spec.branching, "children per internal node")
      ->capture_default_str();
  gen->add_option("--per-leaf", spec.samples_per_leaf, "samples per leaf class")
      ->capture_default_str();
  gen->add_option("--points", spec.points_per_cloud, "points per cloud")->capture_default_str();
  gen->add_option("--protos", spec.protos_per_internal, "clouds per internal node")
      ->capture_default_str();
  gen->add_option("--seed", gen_seed, "generation seed")
      ->envname("HYPERIPC_SEED")
      ->capture_default_str();
  gen->add_option("--out", gen_out, "output file")->capture_default_str();

  // check-geometry
  auto* chk = app.add_subcommand("check-geometry", "run the geometry invariant suite");
  bool with_grad = false, with_losses = false, inject_fault = false;
  uint64_t chk_seed = 1;
  int chk_samples = 10000;
  chk->add_flag("--grad", with_grad, "also run the finite-difference gradient suite");
  chk->add_flag("--losses", with_losses, "also run the loss identity suite");
  chk->add_flag("--inject-fault", inject_fault,
                "flip a sign inside mobius_add (harness self-test)");
  chk->add_option("--seed", chk_seed)->envname("HYPERIPC_SEED")->capture_default_str();
  chk->add_option("--samples", chk_samples, "samples per invariant family")
      ->capture_default_str();

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "two-branch contrastive pretraining");
  PretrainArgs pa;
  pre->add_option("--data", pa.data, "dataset file")->required();
  pre->add_option("--out", pa.out, "checkpoint output")->required();
  pre->add_option("--mode", pa.mode, "objective: joint|intra|cross")->capture_default_str();
  pre->add_option("--curvature", pa.cfg.curvature)->capture_default_str();
  pre->add_option("--tau", pa.cfg.tau)->capture_default_str();
  pre->add_option("--lambda", pa.cfg.lambda)->capture_default_str();
  pre->add_option("--epochs", pa.cfg.epochs)->capture_default_str();
  pre->add_option("--batch", pa.cfg.batch_size)->capture_default_str();
  pre->add_option("--seed", pa.cfg.seed)->envname("HYPERIPC_SEED")->capture_default_str();
  pre->add_option("--threads", pa.cfg.threads, "worker threads (1 = bitwise reproducible)")
      ->capture_default_str();
  pre->add_option("--ball-dim", pa.cfg.widths.ball_dim)->capture_default_str();
  pre->add_option("--point-lr", pa.cfg.point_lr)->capture_default_str();
  pre->add_option("--point-wd", pa.cfg.point_wd)->capture_default_str();
  pre->add_option("--image-lr", pa.cfg.image_lr)->capture_default_str();
  pre->add_option("--image-wd", pa.cfg.image_wd)->capture_default_str();
  pre->add_option("--neg-bank", pa.neg_bank, "negative bank: cross|cross-incl|both")
      ->capture_default_str();
  pre->add_option("--checkpoint-every", pa.cfg.checkpoint_every)->capture_default_str();
  pre->add_flag("--freeze-image", pa.freeze_image, "disable image-branch updates");
  pre->add_flag("--image-augment", pa.cfg.image_augment, "flip/shift the rasterized view");
  pre->add_flag("--dho-full-diff", [&pa](size_t) { pa.cfg.dho_detach_weights = false; },
                "differentiate through the level weights in the embedding-optimization loss");

  // probe
  auto* prb = app.add_subcommand("probe", "linear probe on frozen features");
  std::string prb_ckpt, prb_data, prb_out;
  uint64_t prb_seed = 1;
  double train_frac = 0.7;
  prb->add_option("--ckpt", prb_ckpt)->required();
  prb->add_option("--data", prb_data)->required();
  prb->add_option("--seed", prb_seed)->envname("HYPERIPC_SEED")->capture_default_str();
  prb->add_option("--train-frac", train_frac)->capture_default_str();
  prb->add_option("--out", prb_out, "optional JSONL results file");

  // fewshot
  auto* fsc = app.add_subcommand("fewshot", "n-way m-shot episodic evaluation");
  std::string fs_ckpt, fs_data, fs_out;
  int n_way = 5, m_shot = 10, tasks = 10;
  uint64_t fs_seed = 1;
  fsc->add_option("--ckpt", fs_ckpt)->required();
  fsc->add_option("--data", fs_data)->required();
  fsc->add_option("--n", n_way, "ways")->capture_default_str();
  fsc->add_option("--m", m_shot, "shots")->capture_default_str();
  fsc->add_option("--tasks", tasks)->capture_default_str();
  fsc->add_option("--seed", fs_seed)->envname("HYPERIPC_SEED")->capture_default_str();
  fsc->add_option("--out", fs_out, "optional JSONL results file");

  // plot
  auto* plt = app.add_subcommand("plot", "Poincare disk SVG from a 2-D checkpoint");
  std::string plt_ckpt, plt_data, plt_out = "disk.svg";
  plt->add_option("--ckpt2d", plt_ckpt)->required();
  plt->add_option("--data", plt_data)->required();
  plt->add_option("--out", plt_out)->capture_default_str();

  // reproduce
  auto* rep = app.add_subcommand("reproduce", "run the desk-scale benchmark end to end");
  ReproduceArgs ra;
  rep->add_option("--out", ra.out_dir, "output directory")->required();
  rep->add_option("--seed", ra.seed)->envname("HYPERIPC_SEED")->capture_default_str();
  rep->add_option("--epochs", ra.epochs)->capture_default_str();
  rep->add_option("--per-leaf", ra.per_leaf)->capture_default_str();
  rep->add_option("--points", ra.points)->capture_default_str();
  rep->add_option("--seeds", ra.n_train_seeds, "number of training seeds")
      ->capture_default_str();
  rep->add_option("--tasks", ra.tasks)->capture_default_str();
  rep->add_option("--threads", ra.threads, "worker threads (1 = bitwise reproducible)")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    Timer timer;
    if (gen->parsed()) {
      RunManifest man;
      man.command = "gen-data";
      man.set("depth", spec.depth);
      man.set("branching", spec.branching);
      man.set("per_leaf", spec.samples_per_leaf);
      man.set("points", spec.points_per_cloud);
      man.set("protos", spec.protos_per_internal);
      man.set("seed", gen_seed);
      Dataset ds = gen_dataset(spec, gen_seed);
      save_dataset(gen_out, ds, man.hash());
      write_dataset_index(gen_out + ".txt", ds);
      man.artifacts = {gen_out, gen_out + ".txt"};
      man.duration_s = timer.seconds();
      man.write(gen_out + ".manifest.json");
      std::printf("wrote %s: %zu leaf samples (%d classes), %zu prototype clouds\n",
                  gen_out.c_str(), ds.samples.size(), ds.spec.leaf_count(),
                  ds.prototypes.size());
      return 0;
    }
    if (chk->parsed())
      return cmd_check_geometry(with_grad, with_losses, chk_seed, chk_samples, inject_fault);
    if (pre->parsed()) {
      RunManifest man;
      man.command = "pretrain";
      Checkpoint ck = run_pretrain(pa, man);
      man.duration_s = timer.seconds();
      man.write(pa.out + ".manifest.json");
      std::printf("final loss: total %.4f over %d epochs -> %s\n",
                  ck.history.back().total, ck.epoch, pa.out.c_str());
      return 0;
    }
    if (prb->parsed()) {
      Checkpoint ck = load_checkpoint(prb_ckpt);
      Dataset ds = load_dataset(prb_data);
      EmbeddingTable table = embed_dataset(ck, ds);
      ProbeResult res = linear_probe(table, prb_seed, train_frac);
      double corr = level_radius_correlation(table, true);
      RunManifest man;
      man.command = "probe";
      man.set("ckpt", prb_ckpt);
      man.set("data", prb_data);
      man.set("seed", prb_seed);
      man.set("train_frac", train_frac);
      std::printf("probe accuracy %.4f   level-radius spearman %.4f\n", res.accuracy, corr);
      if (!prb_out.empty()) {
        std::ofstream os(prb_out);
        os << json{{"type", "probe"},       {"manifest", man.hash_hex()},
                   {"accuracy", res.accuracy}, {"level_radius_spearman", corr},
                   {"train_frac", train_frac}, {"seed", prb_seed}}
                  .dump()
           << "\n";
        man.artifacts = {prb_out};
      }
      man.duration_s = timer.seconds();
      man.write((prb_out.empty() ? prb_ckpt + ".probe" : prb_out) + ".manifest.json");
      return 0;
    }
    if (fsc->parsed()) {
      Checkpoint ck = load_checkpoint(fs_ckpt);
      Dataset ds = load_dataset(fs_data);
      EmbeddingTable table = embed_dataset(ck, ds);
      FewShotResult r = fewshot_eval(table, n_way, m_shot, tasks, fs_seed);
      RunManifest man;
      man.command = "fewshot";
      man.set("ckpt", fs_ckpt);
      man.set("data", fs_data);
      man.set("n", n_way);
      man.set("m", m_shot);
      man.set("tasks", tasks);
      man.set("seed", fs_seed);
      man.set("query_cap", 20);
      std::printf("%d-way %d-shot over %d tasks: %.4f +/- %.4f\n", r.n_way, r.m_shot,
                  r.tasks, r.mean, r.stddev);
      if (!fs_out.empty()) {
        std::ofstream os(fs_out);
        json task_accs = json::array();
        for (double a : r.accuracies) task_accs.push_back(a);
        os << json{{"type", "fewshot"}, {"manifest", man.hash_hex()}, {"n_way", r.n_way},
                   {"m_shot", r.m_shot}, {"tasks", r.tasks},          {"mean", r.mean},
                   {"std", r.stddev},    {"task_accuracies", task_accs}}
                  .dump()
           << "\n";
        man.artifacts = {fs_out};
      }
      man.duration_s = timer.seconds();
      man.write((fs_out.empty() ? fs_ckpt + ".fewshot" : fs_out) + ".manifest.json");
      return 0;
    }
    if (plt->parsed()) {
      Checkpoint ck = load_checkpoint(plt_ckpt);
      Dataset ds = load_dataset(plt_data);
      RunManifest man;
      man.command = "plot";
      man.set("ckpt2d", plt_ckpt);
      man.set("data", plt_data);
      man.set("out", plt_out);
      plot_disk(embed_dataset(ck, ds), plt_out, man.hash(),
                "curvature=" + std::to_string(ck.cfg.curvature));
      man.artifacts = {plt_out};
      man.duration_s = timer.seconds();
      man.write(plt_out + ".manifest.json");
      std::printf("wrote %s\n", plt_out.c_str());
      return 0;
    }
    if (rep->parsed()) return cmd_reproduce(ra);
  } catch (const TrainAbort& e) {
    std::fprintf(stderr, "aborted: %s (checkpoint saved)\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 2;
}
