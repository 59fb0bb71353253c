#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>

#include "hyperipc/common.hpp"

namespace hyperipc {

// Radial safety margin: every ball-valued operation re-projects its result so
// that sqrt(c)*||x|| <= 1 - kBallEps. The distance formula diverges at the
// boundary, so arctanh arguments are additionally capped at kAtanhClamp.
inline constexpr double kBallEps = 1e-5;
inline constexpr double kAtanhClamp = 1.0 - 1e-12;

namespace detail {
// Test hook: flips the sign of the inner-product term in mobius_add so the
// self-check harness can prove it catches a broken identity.
inline bool g_flip_mobius_sign = false;
}  // namespace detail

struct Curvature {
  double value;
  explicit Curvature(double v) : value(v) {
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::domain_error("Curvature must be a positive finite real");
  }
  double sqrt_c() const { return std::sqrt(value); }
  // open-ball radius 1/sqrt(c)
  double ball_radius() const { return 1.0 / std::sqrt(value); }
  friend bool operator==(const Curvature& a, const Curvature& b) {
    return a.value == b.value;
  }
};

using TangentVector = Vec;

struct BallPoint {
  Vec coords;
  Curvature curvature;

  int dim() const { return int(coords.size()); }
  double c() const { return curvature.value; }

  double norm2() const {
    double s = 0.0;
    for (double v : coords) s += v * v;
    return s;
  }
  double norm() const { return std::sqrt(norm2()); }

  bool in_ball() const { return c() * norm2() < 1.0; }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline BallPoint origin(int dim, Curvature c) { return BallPoint{Vec(dim, 0.0), c}; }

// Rescales a raw vector into the closed sub-ball of radius (1-eps)/sqrt(c);
// interior vectors pass through untouched.
inline BallPoint project_to_ball(Vec raw, Curvature c) {
  double n2 = 0.0;
  for (double v : raw) {
    if (!std::isfinite(v)) throw std::domain_error("project_to_ball: non-finite input");
    n2 += v * v;
  }
  double max_norm = (1.0 - kBallEps) / c.sqrt_c();
  double n = std::sqrt(n2);
  if (n > max_norm) {
    double s = max_norm / n;
    for (double& v : raw) v *= s;
  }
  return BallPoint{std::move(raw), c};
}

namespace detail {
inline void check_pair(const BallPoint& x, const BallPoint& y, const char* who) {
  if (!(x.curvature == y.curvature))
    throw std::domain_error(std::string(who) + ": curvature mismatch");
  if (x.dim() != y.dim())
    throw std::domain_error(std::string(who) + ": dimension mismatch");
}
inline double clamped_atanh(double u) { return std::atanh(std::min(u, kAtanhClamp)); }
}  // namespace detail

// lambda_c^x = 2 / (1 - c*||x||^2)
inline double conformal_factor(const BallPoint& x) {
  double d = 1.0 - x.c() * x.norm2();
  if (!(d > 0.0)) throw std::domain_error("conformal_factor: point outside the ball");
  return 2.0 / d;
}

inline BallPoint mobius_add(const BallPoint& x, const BallPoint& y) {
  detail::check_pair(x, y, "mobius_add");
  const double c = x.c();
  double xy = dot(x.coords, y.coords);
  if (detail::g_flip_mobius_sign) xy = -xy;
  const double x2 = x.norm2(), y2 = y.norm2();
  const double ax = 1.0 + 2.0 * c * xy + c * y2;
  const double ay = 1.0 - c * x2;
  const double den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
  Vec out(x.coords.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = (ax * x.coords[i] + ay * y.coords[i]) / den;
  return project_to_ball(std::move(out), x.curvature);
}

inline BallPoint neg(const BallPoint& x) {
  Vec out(x.coords);
  for (double& v : out) v = -v;
  return BallPoint{std::move(out), x.curvature};
}

// r (x) x = tanh(r * arctanh(sqrt(c)||x||)) * x / (sqrt(c)||x||)
inline BallPoint mobius_scalar_mul(double r, const BallPoint& x) {
  const double sc = x.curvature.sqrt_c();
  const double n = x.norm();
  const double u = sc * n;
  if (u < 1e-15) {
    // limit coefficient is r; r*0 stays at the origin
    Vec out(x.coords);
    for (double& v : out) v *= r;
    return project_to_ball(std::move(out), x.curvature);
  }
  const double t = std::tanh(r * detail::clamped_atanh(u));
  const double coef = t / u;
  Vec out(x.coords);
  for (double& v : out) v *= coef;
  return project_to_ball(std::move(out), x.curvature);
}

// D_hyp(x, y) = (2/sqrt(c)) * arctanh(sqrt(c) * ||(-x) (+) y||)
inline double hyp_distance(const BallPoint& x, const BallPoint& y) {
  detail::check_pair(x, y, "hyp_distance");
  const double sc = x.curvature.sqrt_c();
  const double u = sc * mobius_add(neg(x), y).norm();
  if (u >= 1.0)
    throw std::domain_error("hyp_distance: arctanh argument reached 1 (ball invariant violated upstream)");
  return (2.0 / sc) * detail::clamped_atanh(u);
}

inline double hyp_distance_to_origin(const BallPoint& x) {
  const double sc = x.curvature.sqrt_c();
  return (2.0 / sc) * detail::clamped_atanh(std::min(sc * x.norm(), kAtanhClamp));
}

// exp_x(v) = x (+) ( tanh(sqrt(c) * lambda_x ||v|| / 2) * v / (sqrt(c)||v||) )
inline BallPoint exp_map(const BallPoint& x, const TangentVector& v) {
  if (v.size() != x.coords.size())
    throw std::domain_error("exp_map: tangent dimension mismatch");
  double n2 = 0.0;
  for (double t : v) {
    if (!std::isfinite(t)) throw std::domain_error("exp_map: non-finite tangent");
    n2 += t * t;
  }
  const double n = std::sqrt(n2);
  if (n < 1e-300) return x;
  const double sc = x.curvature.sqrt_c();
  const double lam = conformal_factor(x);
  const double coef = std::tanh(sc * lam * n / 2.0) / (sc * n);
  Vec arg(v.size());
  for (size_t i = 0; i < v.size(); ++i) arg[i] = coef * v[i];
  return mobius_add(x, project_to_ball(std::move(arg), x.curvature));
}

// Inverse of exp_map: log_x(y) = (2/(sqrt(c)*lambda_x)) * arctanh(sqrt(c)||w||) * w/||w||,
// with w = (-x) (+) y.
inline TangentVector log_map(const BallPoint& x, const BallPoint& y) {
  detail::check_pair(x, y, "log_map");
  BallPoint w = mobius_add(neg(x), y);
  const double n = w.norm();
  if (n < 1e-300) return TangentVector(x.coords.size(), 0.0);
  const double sc = x.curvature.sqrt_c();
  const double lam = conformal_factor(x);
  const double coef = (2.0 / (sc * lam)) * detail::clamped_atanh(sc * n) / n;
  TangentVector out(w.coords);
  for (double& t : out) t *= coef;
  return out;
}

// Conformal-factor-weighted aggregate followed by Mobius scalar mul by 1/2:
//   m = (1/2) (x) [ sum_i lambda_i z_i / sum_i (lambda_i - 1) ]
inline BallPoint gyromidpoint(std::span<const BallPoint> points) {
  if (points.empty()) throw std::domain_error("gyromidpoint: empty input");
  const Curvature c = points[0].curvature;
  const size_t d = points[0].coords.size();
  Vec num(d, 0.0);
  double den = 0.0;
  for (const BallPoint& z : points) {
    detail::check_pair(points[0], z, "gyromidpoint");
    const double lam = conformal_factor(z);
    for (size_t i = 0; i < d; ++i) num[i] += lam * z.coords[i];
    den += lam - 1.0;
  }
  for (double& v : num) v /= den;
  return mobius_scalar_mul(0.5, project_to_ball(std::move(num), c));
}

inline BallPoint gyromidpoint(const BallPoint& a, const BallPoint& b) {
  const BallPoint pts[2] = {a, b};
  return gyromidpoint(std::span<const BallPoint>(pts, 2));
}

}  // namespace hyperipc
