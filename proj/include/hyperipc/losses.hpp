#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyperipc/grad.hpp"

namespace hyperipc {

// Which embeddings an anchor's denominator ranges over. The default follows
// the literal index set of the contrastive loss (the other samples' opposite-
// view embeddings, k != i), which makes the uniform-distance batch come out
// at exactly log(N-1). The alternatives are kept selectable for comparison.
enum class NegativeBank {
  CrossExcl,  // opposite view, own sample excluded (N-1 terms)
  CrossIncl,  // opposite view, positive included (N terms)
  BothViews,  // both views, anchor itself excluded (2N-1 terms)
};

inline const char* to_string(NegativeBank b) {
  switch (b) {
    case NegativeBank::CrossExcl: return "cross";
    case NegativeBank::CrossIncl: return "cross-incl";
    case NegativeBank::BothViews: return "both";
  }
  return "?";
}
inline NegativeBank negative_bank_from_string(const std::string& s) {
  if (s == "cross") return NegativeBank::CrossExcl;
  if (s == "cross-incl") return NegativeBank::CrossIncl;
  if (s == "both") return NegativeBank::BothViews;
  throw std::invalid_argument("unknown negative bank: " + s);
}

struct Batch {
  std::vector<BallPoint> z_hyp1, z_hyp2, z_img;
  std::vector<int> ids;

  size_t size() const { return z_hyp1.size(); }
  void validate() const {
    if (z_hyp1.size() < 2) throw std::invalid_argument("Batch: N >= 2 required");
    if (z_hyp2.size() != z_hyp1.size() || z_img.size() != z_hyp1.size())
      throw std::invalid_argument("Batch: view lists must share length");
    for (size_t i = 0; i < z_hyp1.size(); ++i) {
      if (!(z_hyp1[i].curvature == z_hyp2[i].curvature) ||
          !(z_hyp1[i].curvature == z_img[i].curvature))
        throw std::invalid_argument("Batch: curvature mismatch across views");
    }
  }
};

struct LossBreakdown {
  double intra = 0.0, cross = 0.0, dho = 0.0, total = 0.0;
  double tau = 0.0, lambda = 0.0;
};

namespace detail {

inline double logsumexp(std::span<const double> v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace detail

// Mean over anchors of  D(a_i, p_i)/tau + log sum_k exp(-D(a_i, bank_k)/tau).
inline double hyp_infonce_directional(std::span<const BallPoint> anchors,
                                      std::span<const BallPoint> positives,
                                      double tau,
                                      NegativeBank bank = NegativeBank::CrossExcl) {
  const size_t n = anchors.size();
  if (n != positives.size())
    throw std::invalid_argument("hyp_infonce_directional: length mismatch");
  if (n < 2)
    throw std::invalid_argument("hyp_infonce_directional: N >= 2 required (no negatives exist)");
  if (!(tau > 0.0)) throw std::invalid_argument("hyp_infonce_directional: tau > 0 required");

  double acc = 0.0;
  std::vector<double> scores;
  for (size_t i = 0; i < n; ++i) {
    scores.clear();
    const double d_pos = hyp_distance(anchors[i], positives[i]);
    for (size_t k = 0; k < n; ++k) {
      if (k == i && bank == NegativeBank::CrossExcl) continue;
      scores.push_back(-hyp_distance(anchors[i], positives[k]) / tau);
    }
    if (bank == NegativeBank::BothViews)
      for (size_t k = 0; k < n; ++k)
        if (k != i) scores.push_back(-hyp_distance(anchors[i], anchors[k]) / tau);
    acc += d_pos / tau + detail::logsumexp(scores);
  }
  return acc / double(n);
}

// (1/2N) sum_i [ l(z1_i, z2_i) + l(z2_i, z1_i) ]
inline double hyp_infonce_symmetric(std::span<const BallPoint> z1,
                                    std::span<const BallPoint> z2, double tau,
                                    NegativeBank bank = NegativeBank::CrossExcl) {
  return 0.5 * (hyp_infonce_directional(z1, z2, tau, bank) +
                hyp_infonce_directional(z2, z1, tau, bank));
}

inline std::vector<BallPoint> midpoints(std::span<const BallPoint> z1,
                                        std::span<const BallPoint> z2) {
  if (z1.size() != z2.size()) throw std::invalid_argument("midpoints: length mismatch");
  std::vector<BallPoint> out;
  out.reserve(z1.size());
  for (size_t i = 0; i < z1.size(); ++i) out.push_back(gyromidpoint(z1[i], z2[i]));
  return out;
}

// The embedding center, read as the root of the batch's subtrees.
inline BallPoint root_node(std::span<const BallPoint> z) { return gyromidpoint(z); }

// z_bar_i = z_i (+) (-z_c)
inline std::vector<BallPoint> root_align(std::span<const BallPoint> z,
                                         const BallPoint& z_c) {
  std::vector<BallPoint> out;
  out.reserve(z.size());
  const BallPoint nzc = neg(z_c);
  for (const BallPoint& p : z) out.push_back(mobius_add(p, nzc));
  return out;
}

// z_hdo = (1/N) sum_i sigma(D(z_i, o)) * D(z_i, o)
inline double hdo_score(std::span<const BallPoint> z_bar) {
  if (z_bar.empty()) throw std::invalid_argument("hdo_score: empty input");
  double acc = 0.0;
  for (const BallPoint& z : z_bar) {
    const double d = hyp_distance_to_origin(z);
    acc += detail::sigmoid(d) * d;
  }
  return acc / double(z_bar.size());
}

// L_dho = sigma(-z_hdo), in (0, 1)
inline double dho_loss(std::span<const BallPoint> z_bar) {
  return detail::sigmoid(-hdo_score(z_bar));
}

inline LossBreakdown total_loss(const Batch& batch, double tau, double lambda,
                                NegativeBank bank = NegativeBank::CrossExcl) {
  batch.validate();
  if (!(lambda >= 0.0)) throw std::invalid_argument("total_loss: lambda >= 0 required");
  LossBreakdown b;
  b.tau = tau;
  b.lambda = lambda;
  b.intra = hyp_infonce_symmetric(batch.z_hyp1, batch.z_hyp2, tau, bank);
  const std::vector<BallPoint> mids = midpoints(batch.z_hyp1, batch.z_hyp2);
  b.cross = hyp_infonce_symmetric(mids, batch.z_img, tau, bank);
  const BallPoint z_c = root_node(mids);
  b.dho = dho_loss(root_align(mids, z_c));
  b.total = (b.intra + b.cross) + lambda * b.dho;
  return b;
}

// --- tape versions -----------------------------------------------------------

struct TapeLossIds {
  int intra = -1, cross = -1, dho = -1, total = -1;
};

namespace detail {

// Distance matrix D[i*n + k] = D_hyp(a_i, b_k) as tape nodes.
inline std::vector<int> t_distance_matrix(Tape& t, std::span<const int> a,
                                          std::span<const int> b, Curvature c) {
  const size_t n = a.size();
  std::vector<int> d(n * n);
  for (size_t i = 0; i < n; ++i)
    for (size_t k = 0; k < n; ++k) d[i * n + k] = t_hyp_distance(t, a[i], b[k], c);
  return d;
}

// Symmetric same-bank matrix (only the upper triangle is emitted).
inline std::vector<int> t_self_distance_matrix(Tape& t, std::span<const int> a,
                                               Curvature c) {
  const size_t n = a.size();
  std::vector<int> d(n * n, -1);
  for (size_t i = 0; i < n; ++i)
    for (size_t k = i + 1; k < n; ++k) {
      int id = t_hyp_distance(t, a[i], a[k], c);
      d[i * n + k] = id;
      d[k * n + i] = id;
    }
  return d;
}

// One direction of the InfoNCE loss from precomputed distance nodes.
// cross[i*n+k] = D(anchor_i, bank_k); self is the anchor-view matrix (used by
// the both-views bank only).
inline int t_infonce_direction(Tape& t, const std::vector<int>& cross,
                               const std::vector<int>* self, size_t n, double tau,
                               NegativeBank bank) {
  std::vector<int> terms, scores;
  terms.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    scores.clear();
    for (size_t k = 0; k < n; ++k) {
      if (k == i && bank == NegativeBank::CrossExcl) continue;
      scores.push_back(t.aff_scalar(cross[i * n + k], -1.0 / tau, 0.0));
    }
    if (bank == NegativeBank::BothViews) {
      for (size_t k = 0; k < n; ++k)
        if (k != i) scores.push_back(t.aff_scalar((*self)[i * n + k], -1.0 / tau, 0.0));
    }
    int lse = t.log_sum_exp(t.stack(scores));
    terms.push_back(t.add(t.aff_scalar(cross[i * n + i], 1.0 / tau, 0.0), lse));
  }
  return t.mean(t.stack(terms));
}

}  // namespace detail

inline int t_hyp_infonce_symmetric(Tape& t, std::span<const int> z1,
                                   std::span<const int> z2, Curvature c, double tau,
                                   NegativeBank bank) {
  const size_t n = z1.size();
  if (n != z2.size() || n < 2)
    throw std::invalid_argument("t_hyp_infonce_symmetric: need matched lists, N >= 2");
  std::vector<int> d12 = detail::t_distance_matrix(t, z1, z2, c);
  std::vector<int> d11, d22;
  if (bank == NegativeBank::BothViews) {
    d11 = detail::t_self_distance_matrix(t, z1, c);
    d22 = detail::t_self_distance_matrix(t, z2, c);
  }
  // direction 2 reuses the same matrix transposed (the distance is symmetric)
  std::vector<int> d21(n * n);
  for (size_t i = 0; i < n; ++i)
    for (size_t k = 0; k < n; ++k) d21[i * n + k] = d12[k * n + i];
  int dir1 = detail::t_infonce_direction(t, d12, &d11, n, tau, bank);
  int dir2 = detail::t_infonce_direction(t, d21, &d22, n, tau, bank);
  return t.aff_scalar(t.add(dir1, dir2), 0.5, 0.0);
}

// Emits the full objective; z1/z2/zimg are ball-point nodes of one batch.
// With detach_weights the level weights sigma(D(z_bar_i, o)) enter as numeric
// constants, so no gradient flows through them.
inline TapeLossIds t_total_loss(Tape& t, std::span<const int> z1,
                                std::span<const int> z2, std::span<const int> zimg,
                                Curvature c, double tau, double lambda,
                                NegativeBank bank = NegativeBank::CrossExcl,
                                bool detach_weights = true) {
  const size_t n = z1.size();
  TapeLossIds ids;
  ids.intra = t_hyp_infonce_symmetric(t, z1, z2, c, tau, bank);

  std::vector<int> mids(n);
  for (size_t i = 0; i < n; ++i) {
    const int pair[2] = {z1[i], z2[i]};
    mids[i] = t_gyromidpoint(t, pair, c);
  }
  ids.cross = t_hyp_infonce_symmetric(t, mids, zimg, c, tau, bank);

  int zc = t_gyromidpoint(t, mids, c);
  int nzc = t.neg(zc);
  std::vector<int> weighted;
  weighted.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    int zbar = t_mobius_add(t, mids[i], nzc, c);
    int d = t_hyp_distance_to_origin(t, zbar, c);
    if (detach_weights) {
      weighted.push_back(t.aff_scalar(d, detail::sigmoid(t.scalar(d)), 0.0));
    } else {
      weighted.push_back(t.mul(t.sigmoid(d), d));
    }
  }
  int z_hdo = t.mean(t.stack(weighted));
  ids.dho = t.sigmoid(t.neg(z_hdo));
  ids.total = t.add(t.add(ids.intra, ids.cross), t.aff_scalar(ids.dho, lambda, 0.0));
  return ids;
}

}  // namespace hyperipc
