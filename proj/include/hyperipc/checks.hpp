#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hyperipc/encoders.hpp"
#include "hyperipc/losses.hpp"

namespace hyperipc {

struct CheckResult {
  std::string name;
  int samples = 0;
  double max_err = 0.0;
  double tol = 0.0;
  bool pass() const { return max_err <= tol; }
};

namespace detail {

inline BallPoint sample_ball(Rng& rng, int dim, Curvature c, double max_frac = 0.8) {
  Vec v(dim);
  double n2 = 0.0;
  for (double& x : v) {
    x = rng.normal();
    n2 += x * x;
  }
  const double n = std::sqrt(n2) + 1e-300;
  const double r = rng.uniform(0.0, max_frac) / c.sqrt_c();
  for (double& x : v) x *= r / n;
  return BallPoint{std::move(v), c};
}

inline double norm_diff(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace detail

// The geometry invariant families. Every family reports its worst error over
// `n` seeded samples, split across 2-D and 8-D balls at c in {0.1, 1.0}.
inline std::vector<CheckResult> run_geometry_checks(uint64_t seed, int n = 10000,
                                                    int limit_pairs = 1000) {
  std::vector<CheckResult> out;
  const double curvatures[2] = {0.1, 1.0};
  const int dims[2] = {2, 8};

  auto family = [&](const std::string& name, double tol,
                    const std::function<double(Rng&, int, Curvature)>& err_fn) {
    CheckResult r;
    r.name = name;
    r.tol = tol;
    r.samples = n;
    Rng rng(hash64(seed, hash64_bytes(name.data(), name.size())));
    for (int i = 0; i < n; ++i) {
      const Curvature c(curvatures[i % 2]);
      const int dim = dims[(i / 2) % 2];
      r.max_err = std::max(r.max_err, err_fn(rng, dim, c));
    }
    out.push_back(r);
  };

  family("mobius_add: x (+) 0 = x", 1e-8, [](Rng& rng, int dim, Curvature c) {
    BallPoint x = detail::sample_ball(rng, dim, c);
    return detail::norm_diff(mobius_add(x, origin(dim, c)).coords, x.coords);
  });
  family("mobius_add: (-x) (+) x = 0", 1e-8, [](Rng& rng, int dim, Curvature c) {
    BallPoint x = detail::sample_ball(rng, dim, c);
    return mobius_add(neg(x), x).norm();
  });
  family("gyrogroup left cancellation", 1e-8, [](Rng& rng, int dim, Curvature c) {
    BallPoint x = detail::sample_ball(rng, dim, c);
    BallPoint y = detail::sample_ball(rng, dim, c);
    return detail::norm_diff(mobius_add(neg(x), mobius_add(x, y)).coords, y.coords);
  });
  family("distance symmetry", 1e-12, [](Rng& rng, int dim, Curvature c) {
    BallPoint x = detail::sample_ball(rng, dim, c);
    BallPoint y = detail::sample_ball(rng, dim, c);
    return std::abs(hyp_distance(x, y) - hyp_distance(y, x));
  });
  family("distance self d(x,x) = 0", 1e-8, [](Rng& rng, int dim, Curvature c) {
    BallPoint x = detail::sample_ball(rng, dim, c);
    return hyp_distance(x, x);
  });
  family("triangle inequality", 1e-9, [](Rng& rng, int dim, Curvature c) {
    BallPoint x = detail::sample_ball(rng, dim, c);
    BallPoint y = detail::sample_ball(rng, dim, c);
    BallPoint z = detail::sample_ball(rng, dim, c);
    return std::max(0.0, hyp_distance(x, z) - hyp_distance(x, y) - hyp_distance(y, z));
  });
  family("exp/log round-trip", 1e-8, [](Rng& rng, int dim, Curvature c) {
    BallPoint x = detail::sample_ball(rng, dim, c);
    Vec v(size_t(dim), 0.0);
    double n2 = 0.0;
    for (double& t : v) {
      t = rng.normal();
      n2 += t * t;
    }
    // the endpoint sits at distance lambda*||v|| from x; keep it well inside
    // the clamp radius so the geodesic is representable
    const double budget =
        ((2.0 / c.sqrt_c()) * std::atanh(1.0 - 1e-3) - hyp_distance_to_origin(x)) /
        conformal_factor(x);
    const double r = rng.uniform(0.0, std::min(3.0, budget)) / (std::sqrt(n2) + 1e-300);
    for (double& t : v) t *= r;
    Vec back = log_map(x, exp_map(x, v));
    return detail::norm_diff(back, v);
  });
  family("gyromidpoint equidistance", 1e-6, [](Rng& rng, int dim, Curvature c) {
    BallPoint x = detail::sample_ball(rng, dim, c);
    BallPoint y = detail::sample_ball(rng, dim, c);
    BallPoint m = gyromidpoint(x, y);
    return std::abs(hyp_distance(m, x) - hyp_distance(m, y));
  });
  family("scalar gyromul round-trip (2x then x/2)", 1e-9, [](Rng& rng, int dim, Curvature c) {
    BallPoint x = detail::sample_ball(rng, dim, c);
    return detail::norm_diff(mobius_scalar_mul(0.5, mobius_scalar_mul(2.0, x)).coords,
                             x.coords);
  });
  family("midpoint contraction toward origin", 1e-12, [](Rng& rng, int dim, Curvature c) {
    // equal-norm non-collinear pair: the midpoint must be strictly inside
    const double r = rng.uniform(0.05, 0.8) / c.sqrt_c();
    Vec u(dim), v(dim);
    double cosang = 1.0;
    do {
      double nu = 0, nv = 0, uv = 0;
      for (int i = 0; i < dim; ++i) {
        u[size_t(i)] = rng.normal();
        v[size_t(i)] = rng.normal();
      }
      for (int i = 0; i < dim; ++i) {
        nu += u[size_t(i)] * u[size_t(i)];
        nv += v[size_t(i)] * v[size_t(i)];
        uv += u[size_t(i)] * v[size_t(i)];
      }
      nu = std::sqrt(nu);
      nv = std::sqrt(nv);
      cosang = uv / (nu * nv);
      for (int i = 0; i < dim; ++i) {
        u[size_t(i)] *= r / nu;
        v[size_t(i)] *= r / nv;
      }
    } while (std::abs(cosang) > 0.999);
    BallPoint m = gyromidpoint(BallPoint{u, c}, BallPoint{v, c});
    return m.norm() >= r ? std::max(1e-9, m.norm() - r) : 0.0;
  });
  family("ball invariant of op outputs", 1e-12, [](Rng& rng, int dim, Curvature c) {
    BallPoint x = detail::sample_ball(rng, dim, c, 0.9999);
    BallPoint y = detail::sample_ball(rng, dim, c, 0.9999);
    const double cap = (1.0 - kBallEps) * (1.0 - kBallEps);
    double worst = 0.0;
    for (const BallPoint& z :
         {mobius_add(x, y), mobius_scalar_mul(1.7, x), gyromidpoint(x, y),
          exp_map(x, Vec(size_t(dim), 0.9))})
      worst = std::max(worst, z.c() * z.norm2() - cap);
    return std::max(0.0, worst);
  });

  {
    // c -> 0 limit: D_hyp approaches 2 * euclidean distance
    CheckResult r;
    r.name = "small-curvature limit (c=1e-12)";
    r.tol = 1e-6;
    r.samples = limit_pairs;
    Rng rng(hash64(seed, 0x6c696d69u));
    const Curvature c(1e-12);
    for (int i = 0; i < limit_pairs; ++i) {
      const int dim = dims[i % 2];
      Vec a(dim), b(dim);
      for (double& t : a) t = rng.uniform(-1.0, 1.0);
      for (double& t : b) t = rng.uniform(-1.0, 1.0);
      double e2 = 2.0 * detail::norm_diff(a, b);
      if (e2 < 1e-6) continue;
      double d = hyp_distance(BallPoint{a, c}, BallPoint{b, c});
      r.max_err = std::max(r.max_err, std::abs(d - e2) / e2);
    }
    out.push_back(r);
  }
  return out;
}

// --- gradient fidelity -----------------------------------------------------------

// Finite-difference validation of every registered primitive and of the three
// losses, on batches of `batch` points in each of `dims`. FD evaluates the
// plain (non-tape) forward path, so the two implementations cross-check.
inline GradientReport run_grad_checks(uint64_t seed, int batch = 8,
                                      std::vector<int> dims = {2, 16},
                                      double step = 1e-5) {
  GradientReport rep;
  rep.step = step;
  Rng rng(hash64(seed, 0x67726164u));

  auto check = [&](const std::string& name, const Vec& point,
                   const std::function<double(const Vec&)>& plain_f,
                   const std::function<void(Tape&, std::vector<int>&)>& build) {
    // analytic gradient: leaves in tape order must mirror `point` layout
    Tape t;
    std::vector<int> leaves;
    build(t, leaves);
    Vec analytic;
    for (int id : leaves) {
      auto g = t.grad(id);
      analytic.insert(analytic.end(), g.begin(), g.end());
    }
    if (analytic.size() != point.size())
      throw std::logic_error("run_grad_checks: leaf/point layout mismatch for " + name);
    rep.rows.push_back(finite_diff_check(name, plain_f, point, analytic, step));
  };

  for (int dim : dims) {
    const Curvature c(dim == 2 ? 1.0 : 0.1);
    const std::string sfx = " [" + std::to_string(dim) + "-D]";
    Vec w(size_t(dim), 0.0);
    for (double& x : w) x = rng.uniform(-1.0, 1.0);

    BallPoint bx = detail::sample_ball(rng, dim, c, 0.7);
    BallPoint by = detail::sample_ball(rng, dim, c, 0.7);
    Vec xy = bx.coords;
    xy.insert(xy.end(), by.coords.begin(), by.coords.end());

    check("conformal_factor" + sfx, bx.coords,
          [&](const Vec& p) { return conformal_factor(BallPoint{p, c}); },
          [&](Tape& t, std::vector<int>& leaves) {
            int x = t.leaf(bx.coords);
            leaves = {x};
            t.backward(t_conformal(t, x, c));
          });

    check("mobius_add" + sfx, xy,
          [&](const Vec& p) {
            BallPoint a{Vec(p.begin(), p.begin() + dim), c};
            BallPoint b{Vec(p.begin() + dim, p.end()), c};
            return dot(mobius_add(a, b).coords, w);
          },
          [&](Tape& t, std::vector<int>& leaves) {
            int x = t.leaf(bx.coords), y = t.leaf(by.coords);
            leaves = {x, y};
            t.backward(t.dot(t_mobius_add(t, x, y, c), t.constant(w)));
          });

    check("mobius_scalar_mul(r=0.65)" + sfx, bx.coords,
          [&](const Vec& p) {
            return dot(mobius_scalar_mul(0.65, BallPoint{p, c}).coords, w);
          },
          [&](Tape& t, std::vector<int>& leaves) {
            int x = t.leaf(bx.coords);
            leaves = {x};
            t.backward(t.dot(t_mobius_scalar_mul(t, 0.65, x, c), t.constant(w)));
          });

    check("hyp_distance" + sfx, xy,
          [&](const Vec& p) {
            BallPoint a{Vec(p.begin(), p.begin() + dim), c};
            BallPoint b{Vec(p.begin() + dim, p.end()), c};
            return hyp_distance(a, b);
          },
          [&](Tape& t, std::vector<int>& leaves) {
            int x = t.leaf(bx.coords), y = t.leaf(by.coords);
            leaves = {x, y};
            t.backward(t_hyp_distance(t, x, y, c));
          });

    {
      Vec v(size_t(dim), 0.0);
      for (double& x : v) x = rng.uniform(-0.6, 0.6);
      Vec xv = bx.coords;
      xv.insert(xv.end(), v.begin(), v.end());
      check("exp_map" + sfx, xv,
            [&](const Vec& p) {
              BallPoint a{Vec(p.begin(), p.begin() + dim), c};
              TangentVector t2(p.begin() + dim, p.end());
              return dot(exp_map(a, t2).coords, w);
            },
            [&](Tape& t, std::vector<int>& leaves) {
              int x = t.leaf(bx.coords), tv = t.leaf(v);
              leaves = {x, tv};
              t.backward(t.dot(t_exp_map(t, x, tv, c), t.constant(w)));
            });
    }

    {
      std::vector<BallPoint> pts;
      Vec flat;
      for (int i = 0; i < 4; ++i) {
        pts.push_back(detail::sample_ball(rng, dim, c, 0.7));
        flat.insert(flat.end(), pts.back().coords.begin(), pts.back().coords.end());
      }
      check("gyromidpoint(4 points)" + sfx, flat,
            [&](const Vec& p) {
              std::vector<BallPoint> q;
              for (int i = 0; i < 4; ++i)
                q.push_back(BallPoint{Vec(p.begin() + i * dim, p.begin() + (i + 1) * dim), c});
              return dot(gyromidpoint(q).coords, w);
            },
            [&](Tape& t, std::vector<int>& leaves) {
              for (int i = 0; i < 4; ++i) leaves.push_back(t.leaf(pts[size_t(i)].coords));
              t.backward(t.dot(t_gyromidpoint(t, leaves, c), t.constant(w)));
            });
    }
  }

  // encoder primitives
  {
    const int M = 5, I = 4, O = 3;
    Vec W(size_t(O) * I, 0.0), B(size_t(O), 0.0), X(size_t(M) * I, 0.0), wy(size_t(M) * O, 0.0);
    for (double& x : W) x = rng.uniform(-1.0, 1.0);
    for (double& x : B) x = rng.uniform(-1.0, 1.0);
    for (double& x : X) x = rng.uniform(-1.0, 1.0);
    for (double& x : wy) x = rng.uniform(-1.0, 1.0);
    Vec all = W;
    all.insert(all.end(), B.begin(), B.end());
    all.insert(all.end(), X.begin(), X.end());
    check("affine (encoder primitive)", all,
          [&](const Vec& p) {
            Vec y(size_t(M) * O, 0.0);
            detail::affine_fwd({p.data(), size_t(O) * I},
                               {p.data() + size_t(O) * I, size_t(O)},
                               {p.data() + size_t(O) * I + O, size_t(M) * I}, M, I, O,
                               y.data());
            return dot(y, wy);
          },
          [&](Tape& t, std::vector<int>& leaves) {
            int tw = t.leaf(W, O, I), tb = t.leaf(B, 1, O), tx = t.leaf(X, M, I);
            leaves = {tw, tb, tx};
            t.backward(t.dot(t.affine(tw, tb, tx), t.constant(wy, M, O)));
          });

    check("max_pool (encoder primitive)", X,
          [&](const Vec& p) {
            Vec pool(size_t(I), 0.0);
            for (int j = 0; j < I; ++j) {
              double best = p[size_t(j)];
              for (int m = 1; m < M; ++m)
                best = std::max(best, p[size_t(m) * I + j]);
              pool[size_t(j)] = best;
            }
            return dot(pool, {wy.data(), size_t(I)});
          },
          [&](Tape& t, std::vector<int>& leaves) {
            int tx = t.leaf(X, M, I);
            leaves = {tx};
            t.backward(
                t.dot(t.max_pool(tx), t.constant({wy.data(), size_t(I)}, 1, I)));
          });

    check("mean_pool (encoder primitive)", X,
          [&](const Vec& p) {
            Vec pool(size_t(I), 0.0);
            for (int j = 0; j < I; ++j) {
              double s = 0.0;
              for (int m = 0; m < M; ++m) s += p[size_t(m) * I + j];
              pool[size_t(j)] = s / M;
            }
            return dot(pool, {wy.data(), size_t(I)});
          },
          [&](Tape& t, std::vector<int>& leaves) {
            int tx = t.leaf(X, M, I);
            leaves = {tx};
            t.backward(
                t.dot(t.mean_pool(tx), t.constant({wy.data(), size_t(I)}, 1, I)));
          });
  }
  {
    Vec v(6), w6(6);
    for (double& x : v) x = rng.uniform(-2.0, 2.0);
    for (double& x : w6) x = rng.uniform(-1.0, 1.0);
    check("softplus (pointwise nonlinearity)", v,
          [&](const Vec& p) {
            double s = 0.0;
            for (size_t i = 0; i < p.size(); ++i) s += w6[i] * detail::softplus0(p[i]);
            return s;
          },
          [&](Tape& t, std::vector<int>& leaves) {
            int tv = t.leaf(v);
            leaves = {tv};
            t.backward(t.dot(t.softplus(tv), t.constant(w6)));
          });
    check("sigmoid", v,
          [&](const Vec& p) {
            double s = 0.0;
            for (size_t i = 0; i < p.size(); ++i) s += w6[i] * detail::sigmoid(p[i]);
            return s;
          },
          [&](Tape& t, std::vector<int>& leaves) {
            int tv = t.leaf(v);
            leaves = {tv};
            t.backward(t.dot(t.sigmoid(tv), t.constant(w6)));
          });
    check("log_sum_exp (softmax-style reduction)", v,
          [&](const Vec& p) { return detail::logsumexp(p); },
          [&](Tape& t, std::vector<int>& leaves) {
            int tv = t.leaf(v);
            leaves = {tv};
            t.backward(t.log_sum_exp(tv));
          });
  }

  // the three losses, batch of `batch` points per view
  for (int dim : dims) {
    const Curvature c(dim == 2 ? 1.0 : 0.1);
    const std::string sfx = " [batch " + std::to_string(batch) + ", " +
                            std::to_string(dim) + "-D]";
    auto make_batch = [&](int count) {
      std::vector<BallPoint> pts;
      Vec flat;
      for (int i = 0; i < count; ++i) {
        pts.push_back(detail::sample_ball(rng, dim, c, 0.7));
        flat.insert(flat.end(), pts.back().coords.begin(), pts.back().coords.end());
      }
      return std::make_pair(pts, flat);
    };
    auto unflatten = [&](const Vec& p, int count) {
      std::vector<BallPoint> q;
      for (int i = 0; i < count; ++i)
        q.push_back(BallPoint{Vec(p.begin() + i * dim, p.begin() + (i + 1) * dim), c});
      return q;
    };

    {
      auto [z1, f1] = make_batch(batch);
      auto [z2, f2] = make_batch(batch);
      Vec flat = f1;
      flat.insert(flat.end(), f2.begin(), f2.end());
      check("hyp_infonce_symmetric" + sfx, flat,
            [&, batch](const Vec& p) {
              auto a = unflatten(Vec(p.begin(), p.begin() + batch * dim), batch);
              auto b = unflatten(Vec(p.begin() + batch * dim, p.end()), batch);
              return hyp_infonce_symmetric(a, b, 0.2);
            },
            [&](Tape& t, std::vector<int>& leaves) {
              std::vector<int> a, b;
              for (const auto& z : z1) a.push_back(t.leaf(z.coords));
              for (const auto& z : z2) b.push_back(t.leaf(z.coords));
              leaves = a;
              leaves.insert(leaves.end(), b.begin(), b.end());
              t.backward(t_hyp_infonce_symmetric(t, a, b, c, 0.2, NegativeBank::CrossExcl));
            });
    }
    {
      // Eq. 8/9 with the level weights differentiated (full derivative, so the
      // FD oracle and the tape compute the same mathematical function)
      auto [zb, fb] = make_batch(batch);
      check("dho_loss (full diff)" + sfx, fb,
            [&, batch](const Vec& p) { return dho_loss(unflatten(p, batch)); },
            [&](Tape& t, std::vector<int>& leaves) {
              std::vector<int> terms;
              for (const auto& z : zb) {
                int id = t.leaf(z.coords);
                leaves.push_back(id);
                int d = t_hyp_distance_to_origin(t, id, c);
                terms.push_back(t.mul(t.sigmoid(d), d));
              }
              t.backward(t.sigmoid(t.neg(t.mean(t.stack(terms)))));
            });

      // detached-weights mode against a frozen-weight oracle
      Vec w0(size_t(batch), 0.0);
      for (int i = 0; i < batch; ++i)
        w0[size_t(i)] = detail::sigmoid(hyp_distance_to_origin(zb[size_t(i)]));
      check("dho_loss (detached weights vs frozen-w oracle)" + sfx, fb,
            [&, batch](const Vec& p) {
              auto q = unflatten(p, batch);
              double acc = 0.0;
              for (int i = 0; i < batch; ++i)
                acc += w0[size_t(i)] * hyp_distance_to_origin(q[size_t(i)]);
              return detail::sigmoid(-acc / batch);
            },
            [&](Tape& t, std::vector<int>& leaves) {
              std::vector<int> terms;
              for (int i = 0; i < batch; ++i) {
                int id = t.leaf(zb[size_t(i)].coords);
                leaves.push_back(id);
                int d = t_hyp_distance_to_origin(t, id, c);
                terms.push_back(t.aff_scalar(d, w0[size_t(i)], 0.0));
              }
              t.backward(t.sigmoid(t.neg(t.mean(t.stack(terms)))));
            });
    }
    {
      auto [z1, f1] = make_batch(batch);
      auto [z2, f2] = make_batch(batch);
      auto [zi, fi] = make_batch(batch);
      Vec flat = f1;
      flat.insert(flat.end(), f2.begin(), f2.end());
      flat.insert(flat.end(), fi.begin(), fi.end());
      check("total_loss (full diff)" + sfx, flat,
            [&, batch](const Vec& p) {
              Batch b;
              b.z_hyp1 = unflatten(Vec(p.begin(), p.begin() + batch * dim), batch);
              b.z_hyp2 = unflatten(
                  Vec(p.begin() + batch * dim, p.begin() + 2 * batch * dim), batch);
              b.z_img = unflatten(Vec(p.begin() + 2 * batch * dim, p.end()), batch);
              return total_loss(b, 0.2, 0.01).total;
            },
            [&](Tape& t, std::vector<int>& leaves) {
              std::vector<int> a, b, i3;
              for (const auto& z : z1) a.push_back(t.leaf(z.coords));
              for (const auto& z : z2) b.push_back(t.leaf(z.coords));
              for (const auto& z : zi) i3.push_back(t.leaf(z.coords));
              leaves = a;
              leaves.insert(leaves.end(), b.begin(), b.end());
              leaves.insert(leaves.end(), i3.begin(), i3.end());
              t.backward(t_total_loss(t, a, b, i3, c, 0.2, 0.01,
                                      NegativeBank::CrossExcl, false)
                             .total);
            });
    }
  }

  // end-to-end through the encoders on a reduced shape
  {
    Widths w;
    w.point_h1 = 6;
    w.point_h2 = 6;
    w.feat = 6;
    w.img_side = 4;
    w.img_h = 6;
    w.head_h = 6;
    w.ball_dim = 3;
    const Curvature c(0.5);
    EncoderParams params = init_params(hash64(seed, 0xe2e0u), w);
    PointCloud cloud;
    cloud.n = 8;
    cloud.pts.resize(24);
    for (double& x : cloud.pts) x = rng.uniform(-1.0, 1.0);
    BallPoint target = detail::sample_ball(rng, 3, c, 0.5);

    const Vec cloud_feats = point_features(cloud);
    const long nf = long(cloud_feats.size());
    Vec flat = cloud_feats;
    flat.insert(flat.end(), params.point_enc.begin(), params.point_enc.end());
    flat.insert(flat.end(), params.head_point.begin(), params.head_point.end());
    check("point branch end-to-end (cloud+params -> distance)", flat,
          [&](const Vec& p) {
            Vec feats(p.begin(), p.begin() + nf);
            EncoderParams q = params;
            q.point_enc.assign(p.begin() + nf, p.begin() + nf + long(params.point_enc.size()));
            q.head_point.assign(p.begin() + nf + long(params.point_enc.size()), p.end());
            BallPoint z = project_and_lift(q.head_point, q.w,
                                           detail::encode_from_features(q, feats, 8), c);
            return hyp_distance(z, target);
          },
          [&](Tape& t, std::vector<int>& leaves) {
            PointBranchIds ids = bind_point_branch(t, params);
            int cl = t.leaf(cloud_feats, 8, kPointFeat);
            leaves = {cl,     ids.W1, ids.b1, ids.W2, ids.b2, ids.W3,
                      ids.b3, ids.P1, ids.q1, ids.P2, ids.q2};
            int z = t_project_and_lift(t, ids, t_encode_points(t, ids, cl), c);
            t.backward(t_hyp_distance(t, z, t.constant(target.coords), c));
          });

    ViewImage img;
    img.h = img.w = 4;
    img.px.resize(16);
    for (double& x : img.px) x = rng.uniform01();
    Vec flat2 = img.px;
    flat2.insert(flat2.end(), params.image_enc.begin(), params.image_enc.end());
    flat2.insert(flat2.end(), params.head_image.begin(), params.head_image.end());
    check("image branch end-to-end (image+params -> distance)", flat2,
          [&](const Vec& p) {
            ViewImage im;
            im.h = im.w = 4;
            im.px.assign(p.begin(), p.begin() + 16);
            EncoderParams q = params;
            q.image_enc.assign(p.begin() + 16, p.begin() + 16 + long(params.image_enc.size()));
            q.head_image.assign(p.begin() + 16 + long(params.image_enc.size()), p.end());
            BallPoint z = project_and_lift(q.head_image, q.w, encode_image(q, im), c);
            return hyp_distance(z, target);
          },
          [&](Tape& t, std::vector<int>& leaves) {
            ImageBranchIds ids = bind_image_branch(t, params);
            int im = t.leaf(img.px, 1, 16);
            leaves = {im,     ids.V1, ids.c1, ids.V2, ids.c2,
                      ids.P1, ids.q1, ids.P2, ids.q2};
            int z = t_project_and_lift(t, ids, t_encode_image(t, ids, im), c);
            t.backward(t_hyp_distance(t, z, t.constant(target.coords), c));
          });
  }

  return rep;
}

// --- loss identities ---------------------------------------------------------------

inline std::vector<CheckResult> run_loss_checks(uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(hash64(seed, 0x6c6f7373u));
  const Curvature c(0.5);
  const int N = 8, dim = 4;
  const double tau = 0.2;

  auto push = [&out](const std::string& name, double err, double tol, int samples = 1) {
    out.push_back(CheckResult{name, samples, err, tol});
  };

  std::vector<BallPoint> z1, z2, zi;
  for (int i = 0; i < N; ++i) {
    z1.push_back(detail::sample_ball(rng, dim, c, 0.7));
    z2.push_back(detail::sample_ball(rng, dim, c, 0.7));
    zi.push_back(detail::sample_ball(rng, dim, c, 0.7));
  }

  push("symmetry: L(Z1,Z2) == L(Z2,Z1) exactly",
       std::abs(hyp_infonce_symmetric(z1, z2, tau) - hyp_infonce_symmetric(z2, z1, tau)),
       0.0);

  {
    // coincident batch: every pairwise distance equal, so each direction
    // collapses to log(N-1)
    std::vector<BallPoint> same(size_t(N), z1[0]);
    const double expect = std::log(double(N - 1));
    push("uniform-distance batch == log(N-1) per direction",
         std::abs(hyp_infonce_directional(same, same, tau) - expect), 0.0);
  }
  {
    Batch b;
    b.z_hyp1 = z1;
    b.z_hyp2 = z2;
    b.z_img = zi;
    LossBreakdown br = total_loss(b, tau, 0.01);
    push("decomposition: total == (intra + cross) + lambda*dho",
         std::abs(br.total - ((br.intra + br.cross) + 0.01 * br.dho)), 0.0);
    push("dho in (0, 1)",
         (br.dho > 0.0 && br.dho < 1.0) ? 0.0 : 1.0, 0.0);
    LossBreakdown b0 = total_loss(b, tau, 0.0);
    push("lambda = 0: total == intra + cross",
         std::abs(b0.total - (b0.intra + b0.cross)), 0.0);
  }
  {
    // plain vs tape forward agreement
    Tape t;
    std::vector<int> a, b2, i3;
    for (const auto& z : z1) a.push_back(t.leaf(z.coords));
    for (const auto& z : z2) b2.push_back(t.leaf(z.coords));
    for (const auto& z : zi) i3.push_back(t.leaf(z.coords));
    TapeLossIds ids = t_total_loss(t, a, b2, i3, c, tau, 0.01);
    Batch b;
    b.z_hyp1 = z1;
    b.z_hyp2 = z2;
    b.z_img = zi;
    LossBreakdown br = total_loss(b, tau, 0.01);
    double err = std::max({std::abs(t.scalar(ids.intra) - br.intra),
                           std::abs(t.scalar(ids.cross) - br.cross),
                           std::abs(t.scalar(ids.dho) - br.dho),
                           std::abs(t.scalar(ids.total) - br.total)});
    push("plain vs tape loss agreement", err, 1e-12);
  }
  {
    // shrinking the positive distance strictly decreases the anchor's term
    double prev = 1e300;
    bool mono = true;
    for (double s : {0.9, 0.6, 0.3, 0.05}) {
      std::vector<BallPoint> zp = z2;
      Vec mixed(size_t(dim), 0.0);
      for (int j = 0; j < dim; ++j)
        mixed[size_t(j)] = z1[0].coords[size_t(j)] * (1.0 - s) + z2[0].coords[size_t(j)] * s;
      zp[0] = project_to_ball(mixed, c);
      double v = hyp_infonce_directional(z1, zp, tau);
      if (v >= prev) mono = false;
      prev = v;
    }
    push("positive-pair monotonicity", mono ? 0.0 : 1.0, 0.0);
  }
  {
    // equal-norm midpoints move toward the origin
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
      const double r = rng.uniform(0.05, 0.8) / c.sqrt_c();
      Vec u(dim), v(dim);
      for (double& x : u) x = rng.normal();
      for (double& x : v) x = rng.normal();
      double nu = 0, nv = 0;
      for (int j = 0; j < dim; ++j) nu += u[size_t(j)] * u[size_t(j)], nv += v[size_t(j)] * v[size_t(j)];
      for (int j = 0; j < dim; ++j) {
        u[size_t(j)] *= r / std::sqrt(nu);
        v[size_t(j)] *= r / std::sqrt(nv);
      }
      auto mids = midpoints(std::vector<BallPoint>{BallPoint{u, c}},
                            std::vector<BallPoint>{BallPoint{v, c}});
      worst = std::max(worst, mids[0].norm() - r);
    }
    push("midpoint norm below common input norm", std::max(0.0, worst), 0.0, 200);
  }
  {
    // Approximate re-centering after root alignment. The midpoint does not
    // commute with Mobius translation, so the residual is nonzero; empirically
    // it stays under 0.05/sqrt(c) for batches within half the ball radius
    // (it grows to ~0.15/sqrt(c) at 0.8 of the radius).
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<BallPoint> zs;
      for (int i = 0; i < N; ++i) zs.push_back(detail::sample_ball(rng, dim, c, 0.5));
      BallPoint zc = root_node(zs);
      BallPoint re = root_node(root_align(zs, zc));
      worst = std::max(worst, re.norm());
    }
    push("root_align re-centering residual < 0.05/sqrt(c)", worst, 0.05 / c.sqrt_c(), 50);
  }
  {
    // frozen oracle constants: sigma(1)*1 and sigma(-sigma(1))
    BallPoint p = origin(2, Curvature(1.0));
    p.coords[0] = std::tanh(0.5);  // distance to origin exactly 1
    std::vector<BallPoint> single{p};
    push("hdo_score of one point at distance 1 == sigma(1)",
         std::abs(hdo_score(single) - 0.7310585786300049), 1e-12);
    push("dho_loss composition == sigma(-sigma(1))",
         std::abs(dho_loss(single) - 0.3249624726231763), 1e-12);
  }
  return out;
}

}  // namespace hyperipc
