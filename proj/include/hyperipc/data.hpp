#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyperipc/encoders.hpp"

namespace hyperipc {

// Shape-prototype tree: the root is a parametric surface sampling, each child
// perturbs its parent by a level-scaled deformation, leaves emit noisy clouds.
struct HierarchySpec {
  int depth = 3;
  int branching = 3;
  int samples_per_leaf = 40;
  int points_per_cloud = 256;
  Vec level_deform = {0.45, 0.20};  // deformation scale applied at level 1..depth-1
  double leaf_jitter = 0.008;
  double sample_rot_deg = 180.0;  // per-sample pose baked into stored clouds
  int protos_per_internal = 8;   // eval-level clouds emitted per internal node
  int proto_points = 768;

  int leaf_count() const {
    int n = 1;
    for (int l = 1; l < depth; ++l) n *= branching;
    return n;
  }
  void validate() const {
    if (depth < 2) throw std::invalid_argument("HierarchySpec: depth >= 2 required");
    if (branching < 2) throw std::invalid_argument("HierarchySpec: branching >= 2 required");
    if (samples_per_leaf < 1 || points_per_cloud < 8)
      throw std::invalid_argument("HierarchySpec: invalid sample sizes");
    if (int(level_deform.size()) < depth - 1)
      throw std::invalid_argument("HierarchySpec: need a deformation scale per level");
  }
};

struct Sample {
  int id = 0;
  int label = -1;              // leaf class, -1 for internal-node prototype rows
  int level = 0;               // node depth in the tree, root = 0
  std::vector<int> path;       // node ids, root -> node
  PointCloud cloud;
};

struct Dataset {
  HierarchySpec spec;
  uint64_t seed = 0;
  std::vector<Sample> samples;     // leaf-level training samples
  std::vector<Sample> prototypes;  // internal-node clouds for level metrics
};

namespace detail {

inline void center_and_scale(Vec& pts, double target_rms = 0.8) {
  const size_t n = pts.size() / 3;
  double cx = 0, cy = 0, cz = 0;
  for (size_t i = 0; i < n; ++i) {
    cx += pts[3 * i];
    cy += pts[3 * i + 1];
    cz += pts[3 * i + 2];
  }
  cx /= double(n);
  cy /= double(n);
  cz /= double(n);
  double r2 = 0;
  for (size_t i = 0; i < n; ++i) {
    pts[3 * i] -= cx;
    pts[3 * i + 1] -= cy;
    pts[3 * i + 2] -= cz;
    r2 += pts[3 * i] * pts[3 * i] + pts[3 * i + 1] * pts[3 * i + 1] +
          pts[3 * i + 2] * pts[3 * i + 2];
  }
  double rms = std::sqrt(r2 / double(n));
  if (rms > 1e-12) {
    double s = target_rms / rms;
    for (double& v : pts) v *= s;
  }
}

inline std::array<double, 9> rotation_matrix(double ax, double ay, double az, double angle) {
  const double n = std::sqrt(ax * ax + ay * ay + az * az);
  if (n < 1e-12) return {1, 0, 0, 0, 1, 0, 0, 0, 1};
  ax /= n;
  ay /= n;
  az /= n;
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  return {t * ax * ax + c,      t * ax * ay - s * az, t * ax * az + s * ay,
          t * ax * ay + s * az, t * ay * ay + c,      t * ay * az - s * ax,
          t * ax * az - s * ay, t * ay * az + s * ax, t * az * az + c};
}

inline void apply_rotation(Vec& pts, const std::array<double, 9>& R) {
  for (size_t i = 0; i < pts.size(); i += 3) {
    const double x = pts[i], y = pts[i + 1], z = pts[i + 2];
    pts[i] = R[0] * x + R[1] * y + R[2] * z;
    pts[i + 1] = R[3] * x + R[4] * y + R[5] * z;
    pts[i + 2] = R[6] * x + R[7] * y + R[8] * z;
  }
}

// One root prototype: a random mix of sphere / box / cylinder surface samples.
inline Vec root_prototype(Rng& rng, int n_points) {
  struct Prim {
    int type;  // 0 sphere, 1 box, 2 cylinder
    double cx, cy, cz, sx, sy, sz;
  };
  std::vector<Prim> prims;
  std::vector<double> cum;
  double total = 0.0;
  for (int k = 0; k < 3; ++k) {
    Prim p;
    p.type = int(rng.index(3));
    p.cx = rng.uniform(-0.4, 0.4);
    p.cy = rng.uniform(-0.4, 0.4);
    p.cz = rng.uniform(-0.4, 0.4);
    p.sx = rng.uniform(0.25, 0.6);
    p.sy = rng.uniform(0.25, 0.6);
    p.sz = rng.uniform(0.25, 0.6);
    prims.push_back(p);
    total += rng.uniform(0.5, 1.5);
    cum.push_back(total);
  }
  Vec pts(size_t(n_points) * 3);
  for (int i = 0; i < n_points; ++i) {
    const double pick = rng.uniform(0.0, total);
    const Prim& p = prims[size_t(std::lower_bound(cum.begin(), cum.end(), pick) - cum.begin())];
    double x = 0, y = 0, z = 0;
    switch (p.type) {
      case 0: {  // sphere surface
        double nx = rng.normal(), ny = rng.normal(), nz = rng.normal();
        double nn = std::sqrt(nx * nx + ny * ny + nz * nz) + 1e-12;
        x = nx / nn;
        y = ny / nn;
        z = nz / nn;
        break;
      }
      case 1: {  // box surface: pick a face, uniform within it
        int face = int(rng.index(6));
        double u = rng.uniform(-1.0, 1.0), v = rng.uniform(-1.0, 1.0);
        double w = (face % 2 == 0) ? 1.0 : -1.0;
        if (face / 2 == 0) x = w, y = u, z = v;
        else if (face / 2 == 1) x = u, y = w, z = v;
        else x = u, y = v, z = w;
        break;
      }
      default: {  // cylinder: side or caps
        if (rng.uniform01() < 0.7) {
          double a = rng.uniform(0.0, 6.283185307179586);
          x = std::cos(a);
          y = std::sin(a);
          z = rng.uniform(-1.0, 1.0);
        } else {
          double a = rng.uniform(0.0, 6.283185307179586);
          double r = std::sqrt(rng.uniform01());
          x = r * std::cos(a);
          y = r * std::sin(a);
          z = rng.uniform01() < 0.5 ? -1.0 : 1.0;
        }
        break;
      }
    }
    pts[3 * i] = p.cx + p.sx * x;
    pts[3 * i + 1] = p.cy + p.sy * y;
    pts[3 * i + 2] = p.cz + p.sz * z;
  }
  center_and_scale(pts);
  return pts;
}

// Child = parent under a random radial warp (the dominant component: a
// rotation-invariant profile signature that survives arbitrary object pose)
// plus a milder linear map and directional sinusoidal warp for geometric
// diversity. None of these lie in the augmentation group.
inline Vec deform(const Vec& parent, Rng& rng, double scale) {
  double rw_amp[3], rw_freq[3], rw_phase[3];
  for (int k = 0; k < 3; ++k) {
    rw_amp[k] = rng.uniform(0.4, 1.0) * scale;
    rw_freq[k] = rng.uniform(2.0, 7.0);
    rw_phase[k] = rng.uniform(0.0, 6.283185307179586);
  }
  double A[9];
  for (double& a : A) a = rng.normal(0.0, 0.2) * scale;
  double freq[9], phase[3], amp[3];
  for (int k = 0; k < 3; ++k) {
    for (int j = 0; j < 3; ++j) freq[3 * k + j] = rng.uniform(1.5, 3.5);
    phase[k] = rng.uniform(0.0, 6.283185307179586);
    amp[k] = rng.uniform(0.2, 0.5) * scale;
  }
  Vec out(parent.size());
  for (size_t i = 0; i < parent.size(); i += 3) {
    const double x = parent[i], y = parent[i + 1], z = parent[i + 2];
    const double r = std::sqrt(x * x + y * y + z * z);
    double radial = 0.0;
    for (int k = 0; k < 3; ++k)
      radial += rw_amp[k] * std::sin(rw_freq[k] * r + rw_phase[k]);
    const double rs = 1.0 + radial / 3.0;
    const double px = rs * x, py = rs * y, pz = rs * z;
    out[i] = px + A[0] * px + A[1] * py + A[2] * pz +
             amp[0] * std::sin(freq[0] * px + freq[1] * py + freq[2] * pz + phase[0]);
    out[i + 1] = py + A[3] * px + A[4] * py + A[5] * pz +
                 amp[1] * std::sin(freq[3] * px + freq[4] * py + freq[5] * pz + phase[1]);
    out[i + 2] = pz + A[6] * px + A[7] * py + A[8] * pz +
                 amp[2] * std::sin(freq[6] * px + freq[7] * py + freq[8] * pz + phase[2]);
  }
  center_and_scale(out);
  return out;
}

// Draw one cloud from a prototype: subsample, small pose wobble, jitter.
inline PointCloud emit_cloud(const Vec& proto, const HierarchySpec& spec, Rng& rng) {
  const int np = int(proto.size() / 3);
  const int m = spec.points_per_cloud;
  std::vector<int> idx(np);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < std::min(m, np); ++i)
    std::swap(idx[i], idx[i + int(rng.index(size_t(np - i)))]);
  PointCloud cloud;
  cloud.n = m;
  cloud.pts.resize(size_t(m) * 3);
  for (int i = 0; i < m; ++i) {
    const int src = idx[i % np];
    cloud.pts[3 * i] = proto[3 * src];
    cloud.pts[3 * i + 1] = proto[3 * src + 1];
    cloud.pts[3 * i + 2] = proto[3 * src + 2];
  }
  const double max_rad = spec.sample_rot_deg * 0.017453292519943295;
  auto R = rotation_matrix(rng.normal(), rng.normal(), rng.normal(),
                           rng.uniform(-max_rad, max_rad));
  apply_rotation(cloud.pts, R);
  for (double& v : cloud.pts) v += rng.normal(0.0, spec.leaf_jitter);
  return cloud;
}

}  // namespace detail

inline Dataset gen_dataset(const HierarchySpec& spec, uint64_t seed) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.seed = seed;

  struct NodeProto {
    int id;
    int level;
    std::vector<int> path;
    Vec pts;
  };
  std::vector<NodeProto> level_nodes, next_level;
  int next_id = 0;

  Rng root_rng(hash64(seed, 0x726f6f74u));
  NodeProto root{next_id++, 0, {0}, detail::root_prototype(root_rng, spec.proto_points)};
  level_nodes.push_back(root);

  int sample_id = 0;
  for (int level = 0; level < spec.depth; ++level) {
    const bool is_leaf_level = (level == spec.depth - 1);
    for (const NodeProto& node : level_nodes) {
      if (is_leaf_level) {
        const int label = node.id - (next_id - int(level_nodes.size()));  // dense 0..L-1
        for (int s = 0; s < spec.samples_per_leaf; ++s) {
          Rng rng(hash64(seed, uint64_t(node.id), uint64_t(s), 0x6c656166u));
          Sample smp;
          smp.id = sample_id++;
          smp.label = label;
          smp.level = level;
          smp.path = node.path;
          smp.cloud = detail::emit_cloud(node.pts, spec, rng);
          ds.samples.push_back(std::move(smp));
        }
      } else {
        for (int s = 0; s < spec.protos_per_internal; ++s) {
          Rng rng(hash64(seed, uint64_t(node.id), uint64_t(s), 0x70726f74u));
          Sample smp;
          smp.id = -1;  // assigned after leaf samples
          smp.label = -1;
          smp.level = level;
          smp.path = node.path;
          smp.cloud = detail::emit_cloud(node.pts, spec, rng);
          ds.prototypes.push_back(std::move(smp));
        }
        for (int b = 0; b < spec.branching; ++b) {
          Rng rng(hash64(seed, uint64_t(node.id), uint64_t(b), 0x6368696cu));
          NodeProto child;
          child.id = next_id++;
          child.level = level + 1;
          child.path = node.path;
          child.path.push_back(child.id);
          child.pts = detail::deform(node.pts, rng, spec.level_deform[size_t(level)]);
          next_level.push_back(std::move(child));
        }
      }
    }
    level_nodes = std::move(next_level);
    next_level.clear();
  }
  for (Sample& p : ds.prototypes) p.id = sample_id++;
  return ds;
}

// --- augmentation --------------------------------------------------------------

struct AugmentConfig {
  double rot_max_rad = 3.141592653589793;  // full turn range: +/- pi
  double scale_lo = 0.8, scale_hi = 1.25;
  double trans = 0.2;
  double jitter_sigma = 0.01, jitter_clip = 0.05;
  int target_points = 256;  // subsample when larger; 0 disables

  static AugmentConfig zeroed() {
    return AugmentConfig{0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0};
  }
};

// Rotation, isotropic scale, translation, clipped jitter, then subsampling,
// in that order. Deterministic in (cloud, cfg, seed).
inline PointCloud augment(const PointCloud& cloud, const AugmentConfig& cfg, uint64_t seed) {
  Rng rng(hash64(seed, 0x61756721u));
  PointCloud out = cloud;
  auto R = detail::rotation_matrix(rng.normal(), rng.normal(), rng.normal(),
                                   rng.uniform(-cfg.rot_max_rad, cfg.rot_max_rad));
  detail::apply_rotation(out.pts, R);
  const double s = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  double t[3] = {rng.uniform(-cfg.trans, cfg.trans), rng.uniform(-cfg.trans, cfg.trans),
                 rng.uniform(-cfg.trans, cfg.trans)};
  for (size_t i = 0; i < out.pts.size(); i += 3) {
    out.pts[i] = s * out.pts[i] + t[0];
    out.pts[i + 1] = s * out.pts[i + 1] + t[1];
    out.pts[i + 2] = s * out.pts[i + 2] + t[2];
  }
  if (cfg.jitter_sigma > 0.0)
    for (double& v : out.pts)
      v += std::clamp(rng.normal(0.0, cfg.jitter_sigma), -cfg.jitter_clip, cfg.jitter_clip);
  if (cfg.target_points > 0 && out.n > cfg.target_points) {
    std::vector<int> idx(out.n);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < cfg.target_points; ++i)
      std::swap(idx[i], idx[i + int(rng.index(size_t(out.n - i)))]);
    PointCloud sub;
    sub.n = cfg.target_points;
    sub.pts.resize(size_t(cfg.target_points) * 3);
    for (int i = 0; i < cfg.target_points; ++i) {
      sub.pts[3 * i] = out.pts[3 * size_t(idx[i])];
      sub.pts[3 * i + 1] = out.pts[3 * size_t(idx[i]) + 1];
      sub.pts[3 * i + 2] = out.pts[3 * size_t(idx[i]) + 2];
    }
    return sub;
  }
  return out;
}

// --- rasterizer ------------------------------------------------------------------

// Orthographic projection into an H x W grid over the fixed window [-2, 2]^2.
// Occupied cells get 0.1 + 0.9 * normalized nearness of the closest point, so
// values stay in (0, 1]; empty cells are exactly 0.
inline ViewImage rasterize(const PointCloud& cloud, double azimuth, double elevation,
                           int H = 32, int W = 32) {
  ViewImage img;
  img.h = H;
  img.w = W;
  img.px.assign(size_t(H) * W, 0.0);
  Vec pts = cloud.pts;
  detail::apply_rotation(pts, detail::rotation_matrix(0, 0, 1, azimuth));
  detail::apply_rotation(pts, detail::rotation_matrix(1, 0, 0, elevation));
  double zmin = 1e300, zmax = -1e300;
  for (size_t i = 0; i < pts.size(); i += 3) {
    zmin = std::min(zmin, pts[i + 2]);
    zmax = std::max(zmax, pts[i + 2]);
  }
  const double zrange = zmax - zmin;
  std::vector<double> best(size_t(H) * W, -1e300);
  for (size_t i = 0; i < pts.size(); i += 3) {
    const int col = int((pts[i] + 2.0) / 4.0 * W);
    const int row = int((pts[i + 1] + 2.0) / 4.0 * H);
    if (col < 0 || col >= W || row < 0 || row >= H) continue;
    double& b = best[size_t(row) * W + col];
    if (pts[i + 2] > b) b = pts[i + 2];  // larger z = nearer the viewer
  }
  for (size_t j = 0; j < best.size(); ++j) {
    if (best[j] == -1e300) continue;
    const double nearness = zrange > 1e-12 ? (best[j] - zmin) / zrange : 1.0;
    img.px[j] = 0.1 + 0.9 * nearness;
  }
  return img;
}

// Optional image-side augmentation: horizontal flip plus a small integer
// shift with zero fill. Off by default in training.
inline ViewImage augment_image(const ViewImage& img, uint64_t seed, int max_shift = 2) {
  Rng rng(hash64(seed, 0x696d6721u));
  const bool flip = rng.uniform01() < 0.5;
  const int dx = int(rng.index(size_t(2 * max_shift + 1))) - max_shift;
  const int dy = int(rng.index(size_t(2 * max_shift + 1))) - max_shift;
  ViewImage out;
  out.h = img.h;
  out.w = img.w;
  out.px.assign(img.px.size(), 0.0);
  for (int r = 0; r < img.h; ++r)
    for (int col = 0; col < img.w; ++col) {
      int sr = r - dy, sc = col - dx;
      if (sr < 0 || sr >= img.h || sc < 0 || sc >= img.w) continue;
      if (flip) sc = img.w - 1 - sc;
      out.px[size_t(r) * img.w + col] = img.px[size_t(sr) * img.w + sc];
    }
  return out;
}

// --- chamfer (hierarchy-signal utility) --------------------------------------------

inline double chamfer(const PointCloud& a, const PointCloud& b) {
  auto one_way = [](const PointCloud& p, const PointCloud& q) {
    double acc = 0.0;
    for (int i = 0; i < p.n; ++i) {
      double best = 1e300;
      const double px = p.pts[3 * i], py = p.pts[3 * i + 1], pz = p.pts[3 * i + 2];
      for (int j = 0; j < q.n; ++j) {
        const double dx = px - q.pts[3 * j], dy = py - q.pts[3 * j + 1],
                     dz = pz - q.pts[3 * j + 2];
        best = std::min(best, dx * dx + dy * dy + dz * dz);
      }
      acc += best;
    }
    return acc / double(p.n);
  };
  return one_way(a, b) + one_way(b, a);
}

// --- serialization -------------------------------------------------------------------

namespace detail {

inline void put_sample(std::ostream& os, const Sample& s) {
  bio::put_u32(os, uint32_t(s.id));
  bio::put_u32(os, uint32_t(int32_t(s.label)));
  bio::put_u32(os, uint32_t(s.level));
  bio::put_u32(os, uint32_t(s.path.size()));
  for (int p : s.path) bio::put_u32(os, uint32_t(p));
  bio::put_u32(os, uint32_t(s.cloud.n));
  for (double v : s.cloud.pts) bio::put_f64(os, v);
}

inline Sample get_sample(std::istream& is) {
  Sample s;
  s.id = int(bio::get_u32(is));
  s.label = int(int32_t(bio::get_u32(is)));
  s.level = int(bio::get_u32(is));
  s.path.resize(bio::get_u32(is));
  for (int& p : s.path) p = int(bio::get_u32(is));
  s.cloud.n = int(bio::get_u32(is));
  s.cloud.pts.resize(size_t(s.cloud.n) * 3);
  for (double& v : s.cloud.pts) v = bio::get_f64(is);
  return s;
}

}  // namespace detail

inline void save_dataset(const std::string& path, const Dataset& ds,
                         uint64_t manifest_hash) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_dataset: cannot open " + path);
  os.write("HIPCDAT1", 8);
  bio::put_u32(os, 1);
  bio::put_u64(os, manifest_hash);
  bio::put_u64(os, ds.seed);
  bio::put_u32(os, uint32_t(ds.spec.depth));
  bio::put_u32(os, uint32_t(ds.spec.branching));
  bio::put_u32(os, uint32_t(ds.spec.samples_per_leaf));
  bio::put_u32(os, uint32_t(ds.spec.points_per_cloud));
  bio::put_u32(os, uint32_t(ds.spec.protos_per_internal));
  bio::put_u32(os, uint32_t(ds.spec.proto_points));
  bio::put_f64(os, ds.spec.leaf_jitter);
  bio::put_f64(os, ds.spec.sample_rot_deg);
  bio::put_vec(os, ds.spec.level_deform);
  bio::put_u32(os, uint32_t(ds.samples.size()));
  bio::put_u32(os, uint32_t(ds.prototypes.size()));
  for (const Sample& s : ds.samples) detail::put_sample(os, s);
  for (const Sample& s : ds.prototypes) detail::put_sample(os, s);
}

inline Dataset load_dataset(const std::string& path, uint64_t* manifest_hash = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_dataset: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != "HIPCDAT1")
    throw std::runtime_error("load_dataset: bad magic in " + path);
  if (bio::get_u32(is) != 1) throw std::runtime_error("load_dataset: unsupported version");
  uint64_t mh = bio::get_u64(is);
  if (manifest_hash) *manifest_hash = mh;
  Dataset ds;
  ds.seed = bio::get_u64(is);
  ds.spec.depth = int(bio::get_u32(is));
  ds.spec.branching = int(bio::get_u32(is));
  ds.spec.samples_per_leaf = int(bio::get_u32(is));
  ds.spec.points_per_cloud = int(bio::get_u32(is));
  ds.spec.protos_per_internal = int(bio::get_u32(is));
  ds.spec.proto_points = int(bio::get_u32(is));
  ds.spec.leaf_jitter = bio::get_f64(is);
  ds.spec.sample_rot_deg = bio::get_f64(is);
  ds.spec.level_deform = bio::get_vec(is);
  uint32_t ns = bio::get_u32(is), np = bio::get_u32(is);
  ds.samples.reserve(ns);
  ds.prototypes.reserve(np);
  for (uint32_t i = 0; i < ns; ++i) ds.samples.push_back(detail::get_sample(is));
  for (uint32_t i = 0; i < np; ++i) ds.prototypes.push_back(detail::get_sample(is));
  return ds;
}

// One line per sample: id, label, path.
inline void write_dataset_index(const std::string& path, const Dataset& ds) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_dataset_index: cannot open " + path);
  auto line = [&os](const Sample& s) {
    os << s.id << ' ' << s.label << ' ';
    for (size_t i = 0; i < s.path.size(); ++i) os << (i ? "/" : "") << s.path[i];
    os << '\n';
  };
  for (const Sample& s : ds.samples) line(s);
  for (const Sample& s : ds.prototypes) line(s);
}

}  // namespace hyperipc
