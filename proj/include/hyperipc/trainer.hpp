#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyperipc/data.hpp"
#include "hyperipc/losses.hpp"

namespace hyperipc {

enum class Objective { Joint, Intra, Cross };

inline const char* to_string(Objective m) {
  switch (m) {
    case Objective::Joint: return "joint";
    case Objective::Intra: return "intra";
    case Objective::Cross: return "cross";
  }
  return "?";
}
inline Objective objective_from_string(const std::string& s) {
  if (s == "joint") return Objective::Joint;
  if (s == "intra") return Objective::Intra;
  if (s == "cross") return Objective::Cross;
  throw std::invalid_argument("unknown objective mode: " + s);
}

struct TrainConfig {
  double curvature = 0.1;
  double tau = 0.2;
  double lambda = 0.01;
  int epochs = 100;
  int batch_size = 32;
  double point_lr = 1e-3, point_wd = 1e-4;
  double image_lr = 3e-5, image_wd = 0.01;
  bool image_backprop = true;
  bool image_augment = false;
  bool dho_detach_weights = true;
  NegativeBank neg_bank = NegativeBank::CrossExcl;
  Objective mode = Objective::Joint;
  uint64_t seed = 1;
  Widths widths;
  AugmentConfig aug;
  int threads = 1;
  int checkpoint_every = 0;  // epochs; 0 = only at the end

  void validate() const {
    Curvature check(curvature);
    (void)check;
    if (!(tau > 0.0)) throw std::invalid_argument("TrainConfig: tau > 0 required");
    if (!(lambda >= 0.0)) throw std::invalid_argument("TrainConfig: lambda >= 0 required");
    if (batch_size < 2) throw std::invalid_argument("TrainConfig: batch_size >= 2 required");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs >= 1 required");
  }
};

// Adaptive-moment estimation with decoupled weight decay.
struct AdamState {
  Vec m, v;
  uint64_t t = 0;

  void init(size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    t = 0;
  }
};

struct OptimizerState {
  AdamState point_enc, head_point, image_enc, head_image;

  void init(const EncoderParams& p) {
    point_enc.init(p.point_enc.size());
    head_point.init(p.head_point.size());
    image_enc.init(p.image_enc.size());
    head_image.init(p.head_image.size());
  }
};

namespace detail {

inline void adam_update(Vec& param, const Vec& grad, AdamState& st, double lr, double wd,
                        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  st.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, double(st.t));
  const double bc2 = 1.0 - std::pow(beta2, double(st.t));
  for (size_t i = 0; i < param.size(); ++i) {
    st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * grad[i];
    st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    param[i] -= lr * wd * param[i];
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace detail

struct Checkpoint {
  TrainConfig cfg;
  EncoderParams params;
  OptimizerState opt;
  int epoch = 0;
  std::vector<LossBreakdown> history;  // per-epoch means
};

// Raised when a loss term goes non-finite; the trainer saves state first.
struct TrainAbort : std::runtime_error {
  std::string term;
  explicit TrainAbort(const std::string& t)
      : std::runtime_error("non-finite loss in term '" + t + "'"), term(t) {}
};

namespace detail {

struct SampleTape {
  Tape tape;
  int z1 = -1, z2 = -1, zimg = -1;
  PointBranchIds pids{};
  ImageBranchIds iids{};
  int cloud1 = -1, cloud2 = -1, img = -1;
};

// Accumulate one tape leaf's gradient into a flat group buffer.
inline void collect(const Tape& t, int leaf_id, Vec& dst, size_t offset) {
  auto g = t.grad(leaf_id);
  for (size_t i = 0; i < g.size(); ++i) dst[offset + i] += g[i];
}

inline void collect_point_branch(const Tape& t, const PointBranchIds& ids,
                                 const Widths& w, Vec& g_enc, Vec& g_head) {
  PointLayout L(w);
  HeadLayout H(w);
  collect(t, ids.W1, g_enc, L.W1.off);
  collect(t, ids.b1, g_enc, L.b1.off);
  collect(t, ids.W2, g_enc, L.W2.off);
  collect(t, ids.b2, g_enc, L.b2.off);
  collect(t, ids.W3, g_enc, L.W3.off);
  collect(t, ids.b3, g_enc, L.b3.off);
  collect(t, ids.P1, g_head, H.P1.off);
  collect(t, ids.q1, g_head, H.q1.off);
  collect(t, ids.P2, g_head, H.P2.off);
  collect(t, ids.q2, g_head, H.q2.off);
}

inline void collect_image_branch(const Tape& t, const ImageBranchIds& ids,
                                 const Widths& w, Vec& g_enc, Vec& g_head) {
  ImageLayout L(w);
  HeadLayout H(w);
  collect(t, ids.V1, g_enc, L.V1.off);
  collect(t, ids.c1, g_enc, L.c1.off);
  collect(t, ids.V2, g_enc, L.V2.off);
  collect(t, ids.c2, g_enc, L.c2.off);
  collect(t, ids.P1, g_head, H.P1.off);
  collect(t, ids.q1, g_head, H.q1.off);
  collect(t, ids.P2, g_head, H.P2.off);
  collect(t, ids.q2, g_head, H.q2.off);
}

}  // namespace detail

// One optimization step over a batch: augment twice, encode both views through
// the shared point branch, rasterize and encode one random view, differentiate
// the selected objective, update per-branch.
inline LossBreakdown train_step(EncoderParams& params, OptimizerState& opt,
                                std::span<const Sample* const> batch,
                                const TrainConfig& cfg, int epoch) {
  if (batch.size() < 2) throw std::invalid_argument("train_step: batch_size >= 2 required");
  const Curvature c(cfg.curvature);
  const size_t n = batch.size();
  const bool update_image = cfg.image_backprop && cfg.mode != Objective::Intra;

  std::vector<detail::SampleTape> tapes(n);
  parallel_for(n, cfg.threads, [&](size_t lo, size_t hi) {
    for (size_t s = lo; s < hi; ++s) {
      const Sample& smp = *batch[s];
      const uint64_t id = uint64_t(smp.id);
      PointCloud c1 = augment(smp.cloud, cfg.aug, hash64(cfg.seed, id, uint64_t(epoch), 0));
      PointCloud c2 = augment(smp.cloud, cfg.aug, hash64(cfg.seed, id, uint64_t(epoch), 1));
      Rng view_rng(hash64(cfg.seed, id, uint64_t(epoch), 2));
      const double az = view_rng.uniform(0.0, 6.283185307179586);
      const double el = view_rng.uniform(-1.5707963267948966, 1.5707963267948966);
      ViewImage img = rasterize(smp.cloud, az, el, cfg.widths.img_side, cfg.widths.img_side);
      if (cfg.image_augment)
        img = augment_image(img, hash64(cfg.seed, id, uint64_t(epoch), 4));

      detail::SampleTape& st = tapes[s];
      Tape& t = st.tape;
      st.pids = bind_point_branch(t, params);
      st.iids = bind_image_branch(t, params);
      st.cloud1 = t.leaf(point_features(c1), c1.n, kPointFeat);
      st.cloud2 = t.leaf(point_features(c2), c2.n, kPointFeat);
      st.img = t.leaf(img.px, 1, int(img.px.size()));
      st.z1 = t_project_and_lift(t, st.pids, t_encode_points(t, st.pids, st.cloud1), c);
      st.z2 = t_project_and_lift(t, st.pids, t_encode_points(t, st.pids, st.cloud2), c);
      st.zimg = t_project_and_lift(t, st.iids, t_encode_image(t, st.iids, st.img), c);
    }
  });

  // Loss graph over the batch embeddings (leaves mirror the subtape outputs).
  Tape lt;
  std::vector<int> z1(n), z2(n), zi(n);
  for (size_t s = 0; s < n; ++s) {
    z1[s] = lt.leaf(tapes[s].tape.value(tapes[s].z1));
    z2[s] = lt.leaf(tapes[s].tape.value(tapes[s].z2));
    zi[s] = lt.leaf(tapes[s].tape.value(tapes[s].zimg));
  }
  TapeLossIds loss = t_total_loss(lt, z1, z2, zi, c, cfg.tau, cfg.lambda, cfg.neg_bank,
                                  cfg.dho_detach_weights);
  LossBreakdown b;
  b.intra = lt.scalar(loss.intra);
  b.cross = lt.scalar(loss.cross);
  b.dho = lt.scalar(loss.dho);
  b.total = lt.scalar(loss.total);
  b.tau = cfg.tau;
  b.lambda = cfg.lambda;

  const int objective_node = cfg.mode == Objective::Joint   ? loss.total
                             : cfg.mode == Objective::Intra ? loss.intra
                                                            : loss.cross;
  lt.backward(objective_node);

  parallel_for(n, cfg.threads, [&](size_t lo, size_t hi) {
    for (size_t s = lo; s < hi; ++s) {
      detail::SampleTape& st = tapes[s];
      std::pair<int, std::span<const double>> seeds[3] = {
          {st.z1, lt.grad(z1[s])}, {st.z2, lt.grad(z2[s])}, {st.zimg, lt.grad(zi[s])}};
      st.tape.backward_seeded(seeds);
    }
  });

  // Fixed sample-index order keeps the reduction deterministic for any
  // thread count.
  Vec g_point(params.point_enc.size(), 0.0), g_hpoint(params.head_point.size(), 0.0);
  Vec g_image(params.image_enc.size(), 0.0), g_himage(params.head_image.size(), 0.0);
  for (size_t s = 0; s < n; ++s) {
    detail::collect_point_branch(tapes[s].tape, tapes[s].pids, params.w, g_point, g_hpoint);
    if (update_image)
      detail::collect_image_branch(tapes[s].tape, tapes[s].iids, params.w, g_image, g_himage);
  }

  detail::adam_update(params.point_enc, g_point, opt.point_enc, cfg.point_lr, cfg.point_wd);
  detail::adam_update(params.head_point, g_hpoint, opt.head_point, cfg.point_lr, cfg.point_wd);
  if (update_image) {
    detail::adam_update(params.image_enc, g_image, opt.image_enc, cfg.image_lr, cfg.image_wd);
    detail::adam_update(params.head_image, g_himage, opt.head_image, cfg.image_lr,
                        cfg.image_wd);
  }
  return b;
}

struct TrainHooks {
  std::function<void(int, const LossBreakdown&)> on_epoch;
  std::function<void(const Checkpoint&)> on_checkpoint;
};

inline Checkpoint train(const TrainConfig& cfg, const Dataset& ds,
                        const TrainHooks& hooks = {},
                        const Checkpoint* resume_from = nullptr) {
  cfg.validate();
  if (ds.samples.empty()) throw std::invalid_argument("train: dataset is empty");

  Checkpoint ck;
  ck.cfg = cfg;
  if (resume_from) {
    ck = *resume_from;
    ck.cfg = cfg;
  } else {
    ck.params = init_params(cfg.seed, cfg.widths);
    ck.opt.init(ck.params);
    ck.epoch = 0;
  }

  std::vector<int> order(ds.samples.size());
  for (int e = ck.epoch; e < cfg.epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(hash64(cfg.seed, 0x73687566u, uint64_t(e)));
    shuffle_rng.shuffle(order);

    LossBreakdown mean;
    int steps = 0;
    for (size_t at = 0; at < order.size(); at += size_t(cfg.batch_size)) {
      const size_t take = std::min(size_t(cfg.batch_size), order.size() - at);
      if (take < 2) break;  // drop undersized tail
      std::vector<const Sample*> batch(take);
      for (size_t i = 0; i < take; ++i) batch[i] = &ds.samples[size_t(order[at + i])];
      LossBreakdown b = train_step(ck.params, ck.opt, batch, cfg, e);
      if (!std::isfinite(b.intra) || !std::isfinite(b.cross) || !std::isfinite(b.dho)) {
        ck.epoch = e;
        if (hooks.on_checkpoint) hooks.on_checkpoint(ck);
        throw TrainAbort(!std::isfinite(b.intra)  ? "intra"
                         : !std::isfinite(b.cross) ? "cross"
                                                   : "dho");
      }
      mean.intra += b.intra;
      mean.cross += b.cross;
      mean.dho += b.dho;
      mean.total += b.total;
      ++steps;
    }
    mean.intra /= steps;
    mean.cross /= steps;
    mean.dho /= steps;
    mean.total /= steps;
    mean.tau = cfg.tau;
    mean.lambda = cfg.lambda;
    ck.history.push_back(mean);
    ck.epoch = e + 1;
    if (hooks.on_epoch) hooks.on_epoch(e, mean);
    if (hooks.on_checkpoint && cfg.checkpoint_every > 0 &&
        (e + 1) % cfg.checkpoint_every == 0 && e + 1 < cfg.epochs)
      hooks.on_checkpoint(ck);
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(ck);
  return ck;
}

// --- desk-scale reference benchmark -----------------------------------------------

// Data shape of the standard synthetic benchmark: 3 levels, branching 3,
// 40 clouds per leaf class, 256 points per cloud.
inline HierarchySpec benchmark_spec(int per_leaf = 40, int points = 256,
                                    int branching = 3) {
  HierarchySpec s;
  s.depth = 3;
  s.branching = branching;
  s.samples_per_leaf = per_leaf;
  s.points_per_cloud = points;
  return s;
}

// Training recipe for that benchmark: the reference hyperparameters
// (c = 0.1, tau = 0.2, lambda = 0.01) plus optimizer and view settings sized
// for a desk-scale run. Each view subsamples half the stored points so the
// two augmentations share class-level structure but not per-point
// fingerprints; the small batch trades negatives for optimization steps
// within the fixed epoch budget.
inline TrainConfig benchmark_config(uint64_t seed, int epochs = 30, int threads = 1,
                                    int points = 256) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.seed = seed;
  cfg.threads = threads;
  cfg.batch_size = 4;
  cfg.aug.target_points = points / 2;
  return cfg;
}

// --- checkpoint serialization ---------------------------------------------------

namespace detail {

inline void put_train_config(std::ostream& os, const TrainConfig& c) {
  bio::put_f64(os, c.curvature);
  bio::put_f64(os, c.tau);
  bio::put_f64(os, c.lambda);
  bio::put_u32(os, uint32_t(c.epochs));
  bio::put_u32(os, uint32_t(c.batch_size));
  bio::put_f64(os, c.point_lr);
  bio::put_f64(os, c.point_wd);
  bio::put_f64(os, c.image_lr);
  bio::put_f64(os, c.image_wd);
  bio::put_u32(os, c.image_backprop ? 1 : 0);
  bio::put_u32(os, c.image_augment ? 1 : 0);
  bio::put_u32(os, c.dho_detach_weights ? 1 : 0);
  bio::put_u32(os, uint32_t(c.neg_bank));
  bio::put_u32(os, uint32_t(c.mode));
  bio::put_u64(os, c.seed);
  bio::put_u32(os, uint32_t(c.widths.point_h1));
  bio::put_u32(os, uint32_t(c.widths.point_h2));
  bio::put_u32(os, uint32_t(c.widths.feat));
  bio::put_u32(os, uint32_t(c.widths.img_side));
  bio::put_u32(os, uint32_t(c.widths.img_h));
  bio::put_u32(os, uint32_t(c.widths.head_h));
  bio::put_u32(os, uint32_t(c.widths.ball_dim));
  bio::put_f64(os, c.aug.rot_max_rad);
  bio::put_f64(os, c.aug.scale_lo);
  bio::put_f64(os, c.aug.scale_hi);
  bio::put_f64(os, c.aug.trans);
  bio::put_f64(os, c.aug.jitter_sigma);
  bio::put_f64(os, c.aug.jitter_clip);
  bio::put_u32(os, uint32_t(c.aug.target_points));
}

inline TrainConfig get_train_config(std::istream& is) {
  TrainConfig c;
  c.curvature = bio::get_f64(is);
  c.tau = bio::get_f64(is);
  c.lambda = bio::get_f64(is);
  c.epochs = int(bio::get_u32(is));
  c.batch_size = int(bio::get_u32(is));
  c.point_lr = bio::get_f64(is);
  c.point_wd = bio::get_f64(is);
  c.image_lr = bio::get_f64(is);
  c.image_wd = bio::get_f64(is);
  c.image_backprop = bio::get_u32(is) != 0;
  c.image_augment = bio::get_u32(is) != 0;
  c.dho_detach_weights = bio::get_u32(is) != 0;
  c.neg_bank = NegativeBank(bio::get_u32(is));
  c.mode = Objective(bio::get_u32(is));
  c.seed = bio::get_u64(is);
  c.widths.point_h1 = int(bio::get_u32(is));
  c.widths.point_h2 = int(bio::get_u32(is));
  c.widths.feat = int(bio::get_u32(is));
  c.widths.img_side = int(bio::get_u32(is));
  c.widths.img_h = int(bio::get_u32(is));
  c.widths.head_h = int(bio::get_u32(is));
  c.widths.ball_dim = int(bio::get_u32(is));
  c.aug.rot_max_rad = bio::get_f64(is);
  c.aug.scale_lo = bio::get_f64(is);
  c.aug.scale_hi = bio::get_f64(is);
  c.aug.trans = bio::get_f64(is);
  c.aug.jitter_sigma = bio::get_f64(is);
  c.aug.jitter_clip = bio::get_f64(is);
  c.aug.target_points = int(bio::get_u32(is));
  return c;
}

inline void put_adam(std::ostream& os, const AdamState& a) {
  bio::put_u64(os, a.t);
  bio::put_vec(os, a.m);
  bio::put_vec(os, a.v);
}
inline AdamState get_adam(std::istream& is) {
  AdamState a;
  a.t = bio::get_u64(is);
  a.m = bio::get_vec(is);
  a.v = bio::get_vec(is);
  return a;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck,
                            uint64_t manifest_hash) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os.write("HIPCKPT1", 8);
  bio::put_u32(os, 1);
  bio::put_u64(os, manifest_hash);
  detail::put_train_config(os, ck.cfg);
  bio::put_u32(os, uint32_t(ck.epoch));
  save_params(os, ck.params);
  detail::put_adam(os, ck.opt.point_enc);
  detail::put_adam(os, ck.opt.head_point);
  detail::put_adam(os, ck.opt.image_enc);
  detail::put_adam(os, ck.opt.head_image);
  bio::put_u32(os, uint32_t(ck.history.size()));
  for (const LossBreakdown& b : ck.history) {
    bio::put_f64(os, b.intra);
    bio::put_f64(os, b.cross);
    bio::put_f64(os, b.dho);
    bio::put_f64(os, b.total);
  }
}

inline Checkpoint load_checkpoint(const std::string& path, uint64_t* manifest_hash = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != "HIPCKPT1")
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  if (bio::get_u32(is) != 1) throw std::runtime_error("load_checkpoint: unsupported version");
  uint64_t mh = bio::get_u64(is);
  if (manifest_hash) *manifest_hash = mh;
  Checkpoint ck;
  ck.cfg = detail::get_train_config(is);
  ck.epoch = int(bio::get_u32(is));
  ck.params = load_params(is);
  ck.opt.point_enc = detail::get_adam(is);
  ck.opt.head_point = detail::get_adam(is);
  ck.opt.image_enc = detail::get_adam(is);
  ck.opt.head_image = detail::get_adam(is);
  uint32_t nh = bio::get_u32(is);
  ck.history.resize(nh);
  for (LossBreakdown& b : ck.history) {
    b.intra = bio::get_f64(is);
    b.cross = bio::get_f64(is);
    b.dho = bio::get_f64(is);
    b.total = bio::get_f64(is);
    b.tau = ck.cfg.tau;
    b.lambda = ck.cfg.lambda;
  }
  return ck;
}

}  // namespace hyperipc
