#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyperipc/trainer.hpp"

namespace hyperipc {

struct EmbeddingRow {
  int id = 0;
  int label = -1;
  int level = 0;
  std::vector<int> path;
  Vec feat;        // frozen pre-head point feature
  Vec ball;        // lifted point-branch embedding
};

struct EmbeddingTable {
  double curvature = 0.1;
  int feat_dim = 0, ball_dim = 0;
  std::vector<EmbeddingRow> rows;

  BallPoint ball_point(size_t i) const {
    return BallPoint{rows[i].ball, Curvature(curvature)};
  }
};

struct EmbedOptions {
  bool augment = false;
  uint64_t augment_seed = 0;
  bool include_prototypes = true;
  int threads = 1;
};

// Deterministic frozen forward pass over the dataset; records both the
// Euclidean pre-head feature and the ball embedding.
inline EmbeddingTable embed_dataset(const EncoderParams& params, double curvature,
                                    const Dataset& ds, const AugmentConfig& aug,
                                    const EmbedOptions& opt = {}) {
  EmbeddingTable table;
  table.curvature = curvature;
  table.feat_dim = params.w.feat;
  table.ball_dim = params.w.ball_dim;
  const Curvature c(curvature);

  std::vector<const Sample*> all;
  for (const Sample& s : ds.samples) all.push_back(&s);
  if (opt.include_prototypes)
    for (const Sample& s : ds.prototypes) all.push_back(&s);

  table.rows.resize(all.size());
  parallel_for(all.size(), opt.threads, [&](size_t lo, size_t hi) {
    for (size_t i = lo; i < hi; ++i) {
      const Sample& s = *all[i];
      PointCloud cloud = s.cloud;
      if (opt.augment)
        cloud = augment(cloud, aug, hash64(opt.augment_seed, uint64_t(s.id), 0, 3));
      EmbeddingRow& row = table.rows[i];
      row.id = s.id;
      row.label = s.label;
      row.level = s.level;
      row.path = s.path;
      row.feat = encode_points(params, cloud);
      row.ball = project_and_lift(params.head_point, params.w, row.feat, c).coords;
    }
  });
  return table;
}

inline EmbeddingTable embed_dataset(const Checkpoint& ck, const Dataset& ds,
                                    const EmbedOptions& opt = {}) {
  return embed_dataset(ck.params, ck.cfg.curvature, ds, ck.cfg.aug, opt);
}

// --- linear probe -----------------------------------------------------------

struct ProbeOptions {
  int iters = 4000;  // the 1/L step is conservative; convergence needs room
  double reg = 1e-3;
};

struct ProbeResult {
  double accuracy = 0.0;
  Vec loss_trace;  // penalized objective per descent step
};

namespace detail {

// One-vs-rest squared-hinge probe on standardized features, full-batch
// gradient descent with the fixed 1/L step; strictly deterministic.
struct LinearProbe {
  int classes = 0, dim = 0;
  Vec W;         // classes x (dim + 1), bias last
  Vec mu, sigma;

  Vec standardized(std::span<const double> x) const {
    Vec out(size_t(dim) + 1);
    for (int j = 0; j < dim; ++j) out[size_t(j)] = (x[size_t(j)] - mu[size_t(j)]) / sigma[size_t(j)];
    out[size_t(dim)] = 1.0;
    return out;
  }

  int predict(std::span<const double> feat) const {
    Vec x = standardized(feat);
    int best = 0;
    double best_s = -1e300;
    for (int c = 0; c < classes; ++c) {
      double s = 0.0;
      for (int j = 0; j <= dim; ++j) s += W[size_t(c) * (dim + 1) + j] * x[size_t(j)];
      if (s > best_s) best_s = s, best = c;
    }
    return best;
  }
};

inline LinearProbe fit_probe(const std::vector<const Vec*>& feats,
                             const std::vector<int>& labels, int classes,
                             const ProbeOptions& opt, Vec* trace = nullptr) {
  const int n = int(feats.size());
  const int d = int(feats[0]->size());
  LinearProbe probe;
  probe.classes = classes;
  probe.dim = d;
  probe.mu.assign(d, 0.0);
  probe.sigma.assign(d, 1.0);
  for (const Vec* f : feats)
    for (int j = 0; j < d; ++j) probe.mu[size_t(j)] += (*f)[size_t(j)];
  for (double& m : probe.mu) m /= n;
  for (const Vec* f : feats)
    for (int j = 0; j < d; ++j) {
      const double dev = (*f)[size_t(j)] - probe.mu[size_t(j)];
      probe.sigma[size_t(j)] += dev * dev;  // seeded at 1 to guard flat dims
    }
  for (double& s : probe.sigma) s = std::sqrt((s - 1.0) / std::max(1, n - 1)) + 1e-8;

  std::vector<Vec> X(n);
  double max_x2 = 0.0;
  for (int i = 0; i < n; ++i) {
    X[size_t(i)] = probe.standardized(*feats[size_t(i)]);
    double s = 0.0;
    for (double v : X[size_t(i)]) s += v * v;
    max_x2 = std::max(max_x2, s);
  }
  // squared hinge is 2-smooth per sample; 1/L guarantees monotone descent
  const double L = 2.0 * max_x2 + 2.0 * opt.reg;
  const double step = 1.0 / L;
  const int wd = d + 1;
  probe.W.assign(size_t(classes) * wd, 0.0);
  Vec grad(probe.W.size());

  for (int it = 0; it < opt.iters; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double obj = 0.0;
    for (int i = 0; i < n; ++i) {
      const Vec& x = X[size_t(i)];
      for (int c = 0; c < classes; ++c) {
        const double y = labels[size_t(i)] == c ? 1.0 : -1.0;
        double m = 0.0;
        for (int j = 0; j < wd; ++j) m += probe.W[size_t(c) * wd + j] * x[size_t(j)];
        const double viol = 1.0 - y * m;
        if (viol > 0.0) {
          obj += viol * viol / n;
          const double g = -2.0 * y * viol / n;
          for (int j = 0; j < wd; ++j) grad[size_t(c) * wd + j] += g * x[size_t(j)];
        }
      }
    }
    for (int c = 0; c < classes; ++c)
      for (int j = 0; j < d; ++j) {  // penalty excludes the bias column
        const double w = probe.W[size_t(c) * wd + j];
        obj += opt.reg * w * w;
        grad[size_t(c) * wd + j] += 2.0 * opt.reg * w;
      }
    if (trace) trace->push_back(obj);
    for (size_t j = 0; j < probe.W.size(); ++j) probe.W[j] -= step * grad[j];
  }
  return probe;
}

}  // namespace detail

// Hold-out accuracy of the probe on frozen Euclidean features (leaf rows only).
inline ProbeResult linear_probe(const EmbeddingTable& table, uint64_t split_seed,
                                double train_frac = 0.7, const ProbeOptions& opt = {}) {
  std::vector<const EmbeddingRow*> rows;
  for (const EmbeddingRow& r : table.rows)
    if (r.label >= 0) rows.push_back(&r);
  if (rows.size() < 4) throw std::invalid_argument("linear_probe: too few labeled rows");

  int classes = 0;
  for (const EmbeddingRow* r : rows) classes = std::max(classes, r->label + 1);
  if (classes < 2) throw std::invalid_argument("linear_probe: >= 2 classes required");

  std::vector<size_t> order(rows.size());
  std::iota(order.begin(), order.end(), size_t(0));
  Rng rng(hash64(split_seed, 0x70726f62u));
  rng.shuffle(order);
  const size_t n_train = std::max<size_t>(1, size_t(std::llround(train_frac * double(rows.size()))));
  if (n_train >= rows.size()) throw std::invalid_argument("linear_probe: empty held-out fold");

  std::vector<const Vec*> feats;
  std::vector<int> labels;
  std::set<int> seen;
  for (size_t i = 0; i < n_train; ++i) {
    feats.push_back(&rows[order[i]]->feat);
    labels.push_back(rows[order[i]]->label);
    seen.insert(rows[order[i]]->label);
  }
  if (int(seen.size()) != classes)
    throw std::runtime_error("linear_probe: degenerate split (a class is absent from the training fold)");

  ProbeResult res;
  detail::LinearProbe probe = detail::fit_probe(feats, labels, classes, opt, &res.loss_trace);
  size_t hit = 0;
  for (size_t i = n_train; i < rows.size(); ++i)
    if (probe.predict(rows[order[i]]->feat) == rows[order[i]]->label) ++hit;
  res.accuracy = double(hit) / double(rows.size() - n_train);
  return res;
}

// --- few-shot protocol --------------------------------------------------------

struct FewShotResult {
  int n_way = 0, m_shot = 0, tasks = 0;
  Vec accuracies;
  double mean = 0.0, stddev = 0.0;
};

inline FewShotResult fewshot_eval(const EmbeddingTable& table, int n_way, int m_shot,
                                  int tasks, uint64_t seed, int query_cap = 20,
                                  const ProbeOptions& opt = {}) {
  if (n_way < 2) throw std::invalid_argument("fewshot_eval: n_way >= 2 required");
  if (m_shot < 1 || tasks < 1) throw std::invalid_argument("fewshot_eval: bad m/tasks");

  std::map<int, std::vector<const EmbeddingRow*>> by_class;
  for (const EmbeddingRow& r : table.rows)
    if (r.label >= 0) by_class[r.label].push_back(&r);
  std::vector<int> eligible;
  for (const auto& [label, rows] : by_class)
    if (int(rows.size()) >= m_shot + 1) eligible.push_back(label);
  if (int(eligible.size()) < n_way)
    throw std::invalid_argument("fewshot_eval: not enough classes with m_shot+1 samples");

  FewShotResult res;
  res.n_way = n_way;
  res.m_shot = m_shot;
  res.tasks = tasks;
  for (int t = 0; t < tasks; ++t) {
    Rng rng(hash64(seed, uint64_t(t), 0x66657773u));
    std::vector<int> classes = eligible;
    rng.shuffle(classes);
    classes.resize(size_t(n_way));

    std::vector<const Vec*> sup_x;
    std::vector<int> sup_y;
    std::vector<std::pair<const Vec*, int>> queries;
    for (int ci = 0; ci < n_way; ++ci) {
      std::vector<const EmbeddingRow*> rows = by_class[classes[size_t(ci)]];
      rng.shuffle(rows);
      for (int k = 0; k < m_shot; ++k) {
        sup_x.push_back(&rows[size_t(k)]->feat);
        sup_y.push_back(ci);
      }
      const int nq = std::min(query_cap, int(rows.size()) - m_shot);
      for (int k = 0; k < nq; ++k)
        queries.emplace_back(&rows[size_t(m_shot + k)]->feat, ci);
    }
    if (queries.empty()) throw std::invalid_argument("fewshot_eval: no query samples left");

    detail::LinearProbe probe = detail::fit_probe(sup_x, sup_y, n_way, opt);
    size_t hit = 0;
    for (const auto& [x, y] : queries)
      if (probe.predict(*x) == y) ++hit;
    res.accuracies.push_back(double(hit) / double(queries.size()));
  }
  double mean = 0.0;
  for (double a : res.accuracies) mean += a;
  mean /= double(tasks);
  double var = 0.0;
  for (double a : res.accuracies) var += (a - mean) * (a - mean);
  res.mean = mean;
  res.stddev = tasks > 1 ? std::sqrt(var / double(tasks - 1)) : 0.0;
  return res;
}

// --- hierarchy metrics ------------------------------------------------------------

// Spearman rank correlation with average ranks on ties.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("spearman: need two equal-length series, n >= 2");
  auto ranks = [](std::span<const double> v) {
    const size_t n = v.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t(0));
    std::sort(idx.begin(), idx.end(), [&](size_t x, size_t y) { return v[x] < v[y]; });
    Vec r(n);
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = (double(i) + double(j)) / 2.0 + 1.0;
      for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  Vec ra = ranks(a), rb = ranks(b);
  double ma = 0, mb = 0;
  for (size_t i = 0; i < ra.size(); ++i) ma += ra[i], mb += rb[i];
  ma /= double(ra.size());
  mb /= double(rb.size());
  double sab = 0, saa = 0, sbb = 0;
  for (size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0)
    throw std::invalid_argument("spearman: constant input series");
  return sab / std::sqrt(saa * sbb);
}

// Correlation between tree level and (optionally root-aligned) hyperbolic
// distance to the origin.
inline double level_radius_correlation(const EmbeddingTable& table, bool aligned = true) {
  if (table.rows.size() < 2)
    throw std::invalid_argument("level_radius_correlation: too few rows");
  std::set<int> levels;
  for (const EmbeddingRow& r : table.rows) levels.insert(r.level);
  if (levels.size() < 2)
    throw std::invalid_argument("level_radius_correlation: need >= 2 levels");

  const Curvature c(table.curvature);
  std::vector<BallPoint> pts;
  pts.reserve(table.rows.size());
  for (size_t i = 0; i < table.rows.size(); ++i) pts.push_back(table.ball_point(i));

  Vec lev(table.rows.size()), rad(table.rows.size());
  BallPoint center = aligned ? root_node(pts) : origin(table.ball_dim, c);
  const BallPoint ncenter = neg(center);
  for (size_t i = 0; i < pts.size(); ++i) {
    lev[i] = double(table.rows[i].level);
    rad[i] = hyp_distance_to_origin(mobius_add(pts[i], ncenter));
  }
  return spearman(lev, rad);
}

// --- Poincare disk plot ---------------------------------------------------------------

// Canvas position of a ball point: the disk boundary 1/sqrt(c) maps onto the
// drawn circle of radius R.
inline std::pair<double, double> disk_xy(std::span<const double> coords, double c,
                                         double R, double cx, double cy) {
  const double sc = std::sqrt(c);
  return {cx + coords[0] * sc * R, cy - coords[1] * sc * R};
}

inline void plot_disk(const EmbeddingTable& table, const std::string& path,
                      uint64_t manifest_hash, const std::string& config_echo) {
  if (table.ball_dim != 2)
    throw std::invalid_argument("plot_disk: 2-D ball embeddings required");
  static const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52",
                                   "#8172b3", "#937860", "#da8bc3", "#8c8c8c",
                                   "#ccb974", "#64b5cd", "#2f4b7c", "#ff7c43"};
  constexpr int kPaletteSize = 12;
  const double R = 240, cx = 280, cy = 280;

  std::set<int> labels;
  for (const EmbeddingRow& r : table.rows) labels.insert(r.label);

  std::ofstream os(path);
  if (!os) throw std::runtime_error("plot_disk: cannot open " + path);
  char buf[256];
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"760\" height=\"560\" "
        "viewBox=\"0 0 760 560\">\n";
  std::snprintf(buf, sizeof buf, "  <desc>hyperipc disk plot; manifest=%016llx; %s</desc>\n",
                (unsigned long long)manifest_hash, config_echo.c_str());
  os << buf;
  os << "  <rect width=\"760\" height=\"560\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf,
                "  <circle cx=\"%.2f\" cy=\"%.2f\" r=\"%.2f\" fill=\"none\" "
                "stroke=\"#333333\" stroke-width=\"1.5\"/>\n",
                cx, cy, R);
  os << buf;
  for (const EmbeddingRow& r : table.rows) {
    auto [x, y] = disk_xy(r.ball, table.curvature, R, cx, cy);
    const char* color = r.label >= 0 ? kPalette[r.label % kPaletteSize] : "#222222";
    std::snprintf(buf, sizeof buf,
                  "  <circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\" "
                  "fill-opacity=\"0.8\"/>\n",
                  x, y, color);
    os << buf;
  }
  double ly = 40;
  os << "  <text x=\"560\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">legend</text>\n";
  for (int label : labels) {
    const char* color = label >= 0 ? kPalette[label % kPaletteSize] : "#222222";
    std::string name = label >= 0 ? "class " + std::to_string(label) : "internal-node proto";
    std::snprintf(buf, sizeof buf,
                  "  <circle cx=\"566\" cy=\"%.1f\" r=\"4\" fill=\"%s\"/>"
                  "<text x=\"578\" y=\"%.1f\" font-family=\"sans-serif\" "
                  "font-size=\"12\">%s</text>\n",
                  ly, color, ly + 4, name.c_str());
    os << buf;
    ly += 18;
  }
  os << "</svg>\n";
}

}  // namespace hyperipc
