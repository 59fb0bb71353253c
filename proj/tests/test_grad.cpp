// Tape engine: trivial stationary points, elementary adjoint rules against
// central finite differences, replay determinism, linearity.

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "hyperipc/checks.hpp"
#include "hyperipc/grad.hpp"

using namespace hyperipc;

TEST_CASE("zero gradient at the minimum of squared distance", "[grad]") {
  const Curvature c(1.0);
  Vec x0 = {0.31, -0.17};
  Tape t;
  int x = t.leaf(x0);
  int d = t_hyp_distance(t, x, t.constant(x0), c);
  t.backward(t.mul(d, d));
  for (double g : t.grad(x)) CHECK(std::abs(g) < 1e-6);
}

TEST_CASE("zero gradient of ||exp_0(v)||^2 at v = 0", "[grad]") {
  const Curvature c(0.5);
  Tape t;
  int v = t.leaf(Vec{0.0, 0.0, 0.0});
  int z = t_exp_map_origin(t, v, c);
  t.backward(t.dot(z, z));
  for (double g : t.grad(v)) CHECK(g == 0.0);
}

TEST_CASE("composite loss through the geometry chain matches finite differences",
          "[grad]") {
  // a made-up scalar pushing data through add, scalar mul, exp map, distance
  Rng rng(99);
  const Curvature c(0.7);
  BallPoint a = detail::sample_ball(rng, 3, c, 0.6);
  BallPoint b = detail::sample_ball(rng, 3, c, 0.6);
  Vec v = {0.2, -0.1, 0.3};

  auto plain = [&](const Vec& p) {
    BallPoint pa{Vec(p.begin(), p.begin() + 3), c};
    BallPoint pb{Vec(p.begin() + 3, p.begin() + 6), c};
    TangentVector pv(p.begin() + 6, p.end());
    BallPoint m = mobius_add(pa, mobius_scalar_mul(0.8, pb));
    BallPoint e = exp_map(m, pv);
    double d = hyp_distance(e, pa);
    return d * d + conformal_factor(m);
  };
  Vec point = a.coords;
  point.insert(point.end(), b.coords.begin(), b.coords.end());
  point.insert(point.end(), v.begin(), v.end());

  Tape t;
  int ta = t.leaf(a.coords), tb = t.leaf(b.coords), tv = t.leaf(v);
  int m = t_mobius_add(t, ta, t_mobius_scalar_mul(t, 0.8, tb, c), c);
  int e = t_exp_map(t, m, tv, c);
  int d = t_hyp_distance(t, e, ta, c);
  t.backward(t.add(t.mul(d, d), t_conformal(t, m, c)));

  Vec analytic;
  for (int id : {ta, tb, tv}) {
    auto g = t.grad(id);
    analytic.insert(analytic.end(), g.begin(), g.end());
  }
  auto row = finite_diff_check("composite", plain, point, analytic, 1e-5);
  CHECK(row.max_rel_err < 1e-4);
}

TEST_CASE("gradient of a sum equals the sum of gradients", "[grad]") {
  Rng rng(3);
  const Curvature c(1.0);
  BallPoint a = detail::sample_ball(rng, 4, c, 0.6);
  BallPoint b = detail::sample_ball(rng, 4, c, 0.6);

  auto grad_of = [&](bool first, bool second) {
    Tape t;
    int x = t.leaf(a.coords);
    int y = t.constant(b.coords);
    int loss = -1;
    if (first) loss = t_hyp_distance(t, x, y, c);
    if (second) {
      int l2 = t_conformal(t, x, c);
      loss = loss < 0 ? l2 : t.add(loss, l2);
    }
    t.backward(loss);
    auto g = t.grad(x);
    return Vec(g.begin(), g.end());
  };
  Vec g1 = grad_of(true, false), g2 = grad_of(false, true), gs = grad_of(true, true);
  for (size_t i = 0; i < g1.size(); ++i)
    CHECK_THAT(gs[i], Catch::Matchers::WithinRel(g1[i] + g2[i], 1e-12));
}

TEST_CASE("replay reproduces the recorded forward bit-for-bit", "[grad]") {
  Rng rng(17);
  const Curvature c(0.5);
  Tape t;
  std::vector<int> zs;
  for (int i = 0; i < 6; ++i) zs.push_back(t.leaf(detail::sample_ball(rng, 3, c, 0.7).coords));
  int mid = t_gyromidpoint(t, zs, c);
  int d = t_hyp_distance(t, mid, zs[0], c);
  t.backward(d);
  CHECK(t.replay_matches());

  // identical gradients on a second backward pass
  Vec g1(t.grad(zs[0]).begin(), t.grad(zs[0]).end());
  t.backward(d);
  Vec g2(t.grad(zs[0]).begin(), t.grad(zs[0]).end());
  CHECK(g1 == g2);
}

TEST_CASE("backward demands a scalar loss node", "[grad]") {
  Tape t;
  int v = t.leaf(Vec{1.0, 2.0});
  CHECK_THROWS_AS(t.backward(v), std::logic_error);
}

TEST_CASE("finite_diff_check on a quadratic is exact to roundoff", "[grad]") {
  // f(x) = sum i * x_i^2; central differences are exact for quadratics
  Vec point = {0.4, -1.2, 2.5};
  auto f = [](const Vec& p) {
    double s = 0.0;
    for (size_t i = 0; i < p.size(); ++i) s += double(i + 1) * p[i] * p[i];
    return s;
  };
  Vec analytic = {2.0 * 1 * 0.4, 2.0 * 2 * -1.2, 2.0 * 3 * 2.5};
  auto row = finite_diff_check("quadratic", f, point, analytic, 1e-5);
  CHECK(row.max_rel_err < 1e-9);
}

TEST_CASE("full primitive and loss sweep stays under 1e-4", "[grad][checks]") {
  GradientReport rep = run_grad_checks(1234);
  CHECK(rep.rows.size() >= 20);
  for (const auto& r : rep.rows) {
    INFO(r.name << " rel err " << r.max_rel_err);
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("clamp saturation stops gradients at the boundary seam", "[grad]") {
  const Curvature c(1.0);
  Tape t;
  Vec far = {5.0, 0.0};
  int x = t.leaf(far);
  int z = t.clamp_norm(x, 1.0 - kBallEps);
  // radial direction is annihilated by the projection jacobian
  t.backward(t.dot(z, t.constant(Vec{1.0, 0.0})));
  CHECK(std::abs(t.grad(x)[0]) < 1e-12);
  // tangential direction still flows
  t.backward(t.dot(z, t.constant(Vec{0.0, 1.0})));
  CHECK(std::abs(t.grad(x)[1]) > 1e-3);
}
