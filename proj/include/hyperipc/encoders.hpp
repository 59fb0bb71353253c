#pragma once

#include <cmath>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "hyperipc/grad.hpp"

namespace hyperipc {

// Row-major M x 3 point set; row order carries no meaning.
struct PointCloud {
  int n = 0;
  Vec pts;  // n * 3

  void validate() const {
    if (n < 8) throw std::invalid_argument("PointCloud: at least 8 points required");
    if (pts.size() != size_t(n) * 3) throw std::invalid_argument("PointCloud: shape mismatch");
    for (double v : pts)
      if (!std::isfinite(v)) throw std::invalid_argument("PointCloud: non-finite coordinate");
  }
};

// Rasterized occupancy/depth grid with entries in [0, 1].
struct ViewImage {
  int h = 0, w = 0;
  Vec px;  // h * w
};

struct Widths {
  int point_h1 = 48, point_h2 = 48, feat = 64;
  int img_side = 32, img_h = 64;
  int head_h = 64, ball_dim = 32;

  int img_in() const { return img_side * img_side; }
  bool operator==(const Widths&) const = default;
};

// Per-point input featurization: raw coordinates plus the point radius. The
// radius channel is rotation invariant, which is what lets radial shape
// profiles emerge within the step budget of a desk-scale run.
inline constexpr int kPointFeat = 4;

inline Vec point_features(const PointCloud& cloud) {
  Vec out(size_t(cloud.n) * kPointFeat);
  for (int i = 0; i < cloud.n; ++i) {
    const double x = cloud.pts[3 * size_t(i)], y = cloud.pts[3 * size_t(i) + 1],
                 z = cloud.pts[3 * size_t(i) + 2];
    out[kPointFeat * size_t(i)] = x;
    out[kPointFeat * size_t(i) + 1] = y;
    out[kPointFeat * size_t(i) + 2] = z;
    out[kPointFeat * size_t(i) + 3] = std::sqrt(x * x + y * y + z * z);
  }
  return out;
}

// Flat parameter vectors, one per group; layout per group is fixed by Widths.
struct EncoderParams {
  Widths w;
  Vec point_enc, image_enc, head_point, head_image;
};

namespace detail {

struct MatSpan {
  size_t off;
  int rows, cols;
  size_t size() const { return size_t(rows) * cols; }
};

// [W1 h1 x kPointFeat][b1][W2 h2xh1][b2][W3 feat x h2][b3]
struct PointLayout {
  MatSpan W1, b1, W2, b2, W3, b3;
  size_t total;
  explicit PointLayout(const Widths& w) {
    size_t o = 0;
    auto next = [&o](int r, int c) {
      MatSpan m{o, r, c};
      o += m.size();
      return m;
    };
    W1 = next(w.point_h1, kPointFeat);
    b1 = next(1, w.point_h1);
    W2 = next(w.point_h2, w.point_h1);
    b2 = next(1, w.point_h2);
    W3 = next(w.feat, 2 * w.point_h2);  // [max-pool || mean-pool] channels
    b3 = next(1, w.feat);
    total = o;
  }
};

// [V1 img_h x in][c1][V2 feat x img_h][c2]
struct ImageLayout {
  MatSpan V1, c1, V2, c2;
  size_t total;
  explicit ImageLayout(const Widths& w) {
    size_t o = 0;
    auto next = [&o](int r, int c) {
      MatSpan m{o, r, c};
      o += m.size();
      return m;
    };
    V1 = next(w.img_h, w.img_in());
    c1 = next(1, w.img_h);
    V2 = next(w.feat, w.img_h);
    c2 = next(1, w.feat);
    total = o;
  }
};

// [P1 head_h x feat][q1][P2 ball x head_h][q2]
struct HeadLayout {
  MatSpan P1, q1, P2, q2;
  size_t total;
  explicit HeadLayout(const Widths& w) {
    size_t o = 0;
    auto next = [&o](int r, int c) {
      MatSpan m{o, r, c};
      o += m.size();
      return m;
    };
    P1 = next(w.head_h, w.feat);
    q1 = next(1, w.head_h);
    P2 = next(w.ball_dim, w.head_h);
    q2 = next(1, w.ball_dim);
    total = o;
  }
};

inline std::span<const double> slice(const Vec& v, MatSpan m) {
  return {v.data() + m.off, m.size()};
}

// Same accumulation order as the tape's Affine forward, so the plain path and
// the recorded path agree bit-for-bit.
inline void affine_fwd(std::span<const double> W, std::span<const double> b,
                       std::span<const double> X, int M, int I, int O, double* Y) {
  for (int m = 0; m < M; ++m)
    for (int o = 0; o < O; ++o) {
      double s = b[o];
      const double* wr = W.data() + size_t(o) * I;
      const double* xr = X.data() + size_t(m) * I;
      for (int i = 0; i < I; ++i) s += wr[i] * xr[i];
      Y[size_t(m) * O + o] = s;
    }
}

}  // namespace detail

// Deterministic init: weights uniform in +/- 1/sqrt(fan_in), biases zero.
inline EncoderParams init_params(uint64_t seed, const Widths& w = Widths{}) {
  EncoderParams p;
  p.w = w;
  detail::PointLayout pl(w);
  detail::ImageLayout il(w);
  detail::HeadLayout hl(w);
  p.point_enc.assign(pl.total, 0.0);
  p.image_enc.assign(il.total, 0.0);
  p.head_point.assign(hl.total, 0.0);
  p.head_image.assign(hl.total, 0.0);
  Rng rng(hash64(seed, 0x70617261u));
  auto fill = [&rng](Vec& dst, detail::MatSpan m) {
    const double bound = 1.0 / std::sqrt(double(m.cols));
    for (size_t i = 0; i < m.size(); ++i) dst[m.off + i] = rng.uniform(-bound, bound);
  };
  fill(p.point_enc, pl.W1);
  fill(p.point_enc, pl.W2);
  fill(p.point_enc, pl.W3);
  fill(p.image_enc, il.V1);
  fill(p.image_enc, il.V2);
  fill(p.head_point, hl.P1);
  fill(p.head_point, hl.P2);
  fill(p.head_image, hl.P1);
  fill(p.head_image, hl.P2);
  return p;
}

namespace detail {

// Shared stack over an already-featurized M x kPointFeat matrix.
inline Vec encode_from_features(const EncoderParams& p, const Vec& feats, int M) {
  const Widths& w = p.w;
  PointLayout L(w);
  Vec h1(size_t(M) * w.point_h1), h2(size_t(M) * w.point_h2);
  affine_fwd(slice(p.point_enc, L.W1), slice(p.point_enc, L.b1), feats, M, kPointFeat,
             w.point_h1, h1.data());
  for (double& v : h1) v = softplus0(v);
  affine_fwd(slice(p.point_enc, L.W2), slice(p.point_enc, L.b2), h1, M, w.point_h1,
             w.point_h2, h2.data());
  for (double& v : h2) v = softplus0(v);
  // coordinate-wise max pool plus mean-pool channels: max senses radial
  // support, mean senses density
  Vec pooled(size_t(w.point_h2) * 2);
  for (int j = 0; j < w.point_h2; ++j) {
    double best = h2[size_t(j)];
    double sum = 0.0;
    for (int m = 0; m < M; ++m) {
      const double v = h2[size_t(m) * w.point_h2 + j];
      best = std::max(best, v);
      sum += v;
    }
    pooled[size_t(j)] = best;
    pooled[size_t(w.point_h2) + j] = sum / double(M);
  }
  Vec f(size_t(w.feat));
  affine_fwd(slice(p.point_enc, L.W3), slice(p.point_enc, L.b3), pooled, 1,
             2 * w.point_h2, w.feat, f.data());
  return f;
}

}  // namespace detail

// Per-point MLP, coordinate-wise max pool over points, then a linear layer.
// Permutation invariant by construction.
inline Vec encode_points(const EncoderParams& p, const PointCloud& cloud) {
  cloud.validate();
  return detail::encode_from_features(p, point_features(cloud), cloud.n);
}

// Flatten, then two affine+nonlinearity layers.
inline Vec encode_image(const EncoderParams& p, const ViewImage& img) {
  const Widths& w = p.w;
  if (img.h * img.w != w.img_in() || int(img.px.size()) != img.h * img.w)
    throw std::invalid_argument("encode_image: image shape mismatch");
  detail::ImageLayout L(w);
  Vec h(w.img_h);
  detail::affine_fwd(detail::slice(p.image_enc, L.V1), detail::slice(p.image_enc, L.c1),
                     img.px, 1, w.img_in(), w.img_h, h.data());
  for (double& v : h) v = detail::softplus0(v);
  Vec f(w.feat);
  detail::affine_fwd(detail::slice(p.image_enc, L.V2), detail::slice(p.image_enc, L.c2),
                     h, 1, w.img_h, w.feat, f.data());
  for (double& v : f) v = detail::softplus0(v);
  return f;
}

// Two-layer head producing a tangent vector at the origin, lifted onto the
// ball with the exponential map and re-projected.
inline BallPoint project_and_lift(const Vec& head_params, const Widths& w,
                                  const Vec& feat, Curvature c) {
  if (int(feat.size()) != w.feat)
    throw std::invalid_argument("project_and_lift: feature width mismatch");
  detail::HeadLayout L(w);
  Vec h(w.head_h);
  detail::affine_fwd(detail::slice(head_params, L.P1), detail::slice(head_params, L.q1),
                     feat, 1, w.feat, w.head_h, h.data());
  for (double& v : h) v = detail::softplus0(v);
  Vec t(w.ball_dim);
  detail::affine_fwd(detail::slice(head_params, L.P2), detail::slice(head_params, L.q2),
                     h, 1, w.head_h, w.ball_dim, t.data());
  // exp map at the origin: tanh(sqrt(c)||t||) * t / (sqrt(c)||t||)
  double n = 0.0;
  for (double v : t) n += v * v;
  n = std::sqrt(n);
  const double sc = c.sqrt_c();
  if (n > 1e-300) {
    const double coef = std::tanh(sc * n) / (sc * n);
    for (double& v : t) v *= coef;
  }
  return project_to_ball(std::move(t), c);
}

// --- tape paths --------------------------------------------------------------

struct PointBranchIds {
  int W1, b1, W2, b2, W3, b3;  // encoder leaves
  int P1, q1, P2, q2;          // head leaves
};
struct ImageBranchIds {
  int V1, c1, V2, c2;
  int P1, q1, P2, q2;
};

inline PointBranchIds bind_point_branch(Tape& t, const EncoderParams& p) {
  detail::PointLayout L(p.w);
  detail::HeadLayout H(p.w);
  auto lf = [&t](const Vec& v, detail::MatSpan m) {
    return t.leaf({v.data() + m.off, m.size()}, m.rows, m.cols);
  };
  return PointBranchIds{
      lf(p.point_enc, L.W1), lf(p.point_enc, L.b1), lf(p.point_enc, L.W2),
      lf(p.point_enc, L.b2), lf(p.point_enc, L.W3), lf(p.point_enc, L.b3),
      lf(p.head_point, H.P1), lf(p.head_point, H.q1), lf(p.head_point, H.P2),
      lf(p.head_point, H.q2)};
}

inline ImageBranchIds bind_image_branch(Tape& t, const EncoderParams& p) {
  detail::ImageLayout L(p.w);
  detail::HeadLayout H(p.w);
  auto lf = [&t](const Vec& v, detail::MatSpan m) {
    return t.leaf({v.data() + m.off, m.size()}, m.rows, m.cols);
  };
  return ImageBranchIds{
      lf(p.image_enc, L.V1), lf(p.image_enc, L.c1), lf(p.image_enc, L.V2),
      lf(p.image_enc, L.c2), lf(p.head_image, H.P1), lf(p.head_image, H.q1),
      lf(p.head_image, H.P2), lf(p.head_image, H.q2)};
}

// cloud leaf -> pre-head feature node
inline int t_encode_points(Tape& t, const PointBranchIds& ids, int cloud_node) {
  int h1 = t.softplus(t.affine(ids.W1, ids.b1, cloud_node));
  int h2 = t.softplus(t.affine(ids.W2, ids.b2, h1));
  int pooled = t.concat2(t.max_pool(h2), t.mean_pool(h2));
  return t.affine(ids.W3, ids.b3, pooled);
}

inline int t_encode_image(Tape& t, const ImageBranchIds& ids, int img_node) {
  int h = t.softplus(t.affine(ids.V1, ids.c1, img_node));
  return t.softplus(t.affine(ids.V2, ids.c2, h));
}

template <typename BranchIds>
inline int t_project_and_lift(Tape& t, const BranchIds& ids, int feat_node, Curvature c) {
  int h = t.softplus(t.affine(ids.P1, ids.q1, feat_node));
  int tang = t.affine(ids.P2, ids.q2, h);
  return t_exp_map_origin(t, tang, c);
}

// --- parameter group serialization --------------------------------------------

inline void save_params(std::ostream& os, const EncoderParams& p) {
  os.write("HIPCPAR1", 8);
  bio::put_u32(os, 1);  // version
  bio::put_u32(os, uint32_t(p.w.point_h1));
  bio::put_u32(os, uint32_t(p.w.point_h2));
  bio::put_u32(os, uint32_t(p.w.feat));
  bio::put_u32(os, uint32_t(p.w.img_side));
  bio::put_u32(os, uint32_t(p.w.img_h));
  bio::put_u32(os, uint32_t(p.w.head_h));
  bio::put_u32(os, uint32_t(p.w.ball_dim));
  bio::put_vec(os, p.point_enc);
  bio::put_vec(os, p.image_enc);
  bio::put_vec(os, p.head_point);
  bio::put_vec(os, p.head_image);
}

inline EncoderParams load_params(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != "HIPCPAR1")
    throw std::runtime_error("load_params: bad magic");
  if (bio::get_u32(is) != 1) throw std::runtime_error("load_params: unsupported version");
  EncoderParams p;
  p.w.point_h1 = int(bio::get_u32(is));
  p.w.point_h2 = int(bio::get_u32(is));
  p.w.feat = int(bio::get_u32(is));
  p.w.img_side = int(bio::get_u32(is));
  p.w.img_h = int(bio::get_u32(is));
  p.w.head_h = int(bio::get_u32(is));
  p.w.ball_dim = int(bio::get_u32(is));
  p.point_enc = bio::get_vec(is);
  p.image_enc = bio::get_vec(is);
  p.head_point = bio::get_vec(is);
  p.head_image = bio::get_vec(is);
  detail::PointLayout pl(p.w);
  detail::ImageLayout il(p.w);
  detail::HeadLayout hl(p.w);
  if (p.point_enc.size() != pl.total || p.image_enc.size() != il.total ||
      p.head_point.size() != hl.total || p.head_image.size() != hl.total)
    throw std::runtime_error("load_params: group size inconsistent with shape metadata");
  return p;
}

}  // namespace hyperipc
