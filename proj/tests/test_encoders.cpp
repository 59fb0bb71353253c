// Point-set and view-image encoders plus the projection-head lift.

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <sstream>

#include "hyperipc/checks.hpp"
#include "hyperipc/encoders.hpp"

using namespace hyperipc;

namespace {

PointCloud random_cloud(Rng& rng, int n) {
  PointCloud c;
  c.n = n;
  c.pts.resize(size_t(n) * 3);
  for (double& v : c.pts) v = rng.uniform(-1.0, 1.0);
  return c;
}

Widths tiny_widths() {
  Widths w;
  w.point_h1 = 8;
  w.point_h2 = 8;
  w.feat = 8;
  w.img_side = 8;
  w.img_h = 8;
  w.head_h = 8;
  w.ball_dim = 4;
  return w;
}

}  // namespace

TEST_CASE("encode_points is exactly permutation invariant", "[encoders]") {
  Rng rng(1);
  EncoderParams p = init_params(7, tiny_widths());
  PointCloud cloud = random_cloud(rng, 32);
  Vec base = encode_points(p, cloud);

  PointCloud shuffled = cloud;
  std::vector<int> order(size_t(cloud.n));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  for (int i = 0; i < cloud.n; ++i)
    for (int k = 0; k < 3; ++k)
      shuffled.pts[size_t(i) * 3 + k] = cloud.pts[size_t(order[size_t(i)]) * 3 + k];
  CHECK(encode_points(p, shuffled) == base);  // bit-for-bit
}

TEST_CASE("duplicated clouds pool to the same feature", "[encoders]") {
  Rng rng(2);
  EncoderParams p = init_params(3, tiny_widths());
  PointCloud cloud = random_cloud(rng, 16);
  PointCloud doubled;
  doubled.n = 32;
  doubled.pts = cloud.pts;
  doubled.pts.insert(doubled.pts.end(), cloud.pts.begin(), cloud.pts.end());
  CHECK(encode_points(p, doubled) == encode_points(p, cloud));
}

TEST_CASE("zero parameters give a zero point feature", "[encoders]") {
  EncoderParams p = init_params(1, tiny_widths());
  std::fill(p.point_enc.begin(), p.point_enc.end(), 0.0);
  Rng rng(3);
  Vec f = encode_points(p, random_cloud(rng, 12));
  for (double v : f) CHECK(v == 0.0);
}

TEST_CASE("zero image with zero biases gives a zero feature", "[encoders]") {
  Widths w = tiny_widths();
  EncoderParams p = init_params(5, w);  // biases are zero-initialized
  ViewImage img;
  img.h = img.w = w.img_side;
  img.px.assign(size_t(w.img_in()), 0.0);
  for (double v : encode_image(p, img)) CHECK(v == 0.0);
}

TEST_CASE("image encoding is deterministic and shape-checked", "[encoders]") {
  Widths w = tiny_widths();
  EncoderParams p = init_params(6, w);
  Rng rng(9);
  ViewImage img;
  img.h = img.w = w.img_side;
  img.px.resize(size_t(w.img_in()));
  for (double& v : img.px) v = rng.uniform01();
  CHECK(encode_image(p, img) == encode_image(p, img));

  ViewImage bad;
  bad.h = bad.w = w.img_side + 1;
  bad.px.assign(size_t(bad.h) * bad.w, 0.0);
  CHECK_THROWS_AS(encode_image(p, bad), std::invalid_argument);
}

TEST_CASE("cloud validation", "[encoders]") {
  EncoderParams p = init_params(1, tiny_widths());
  PointCloud too_small;
  too_small.n = 4;
  too_small.pts.assign(12, 0.1);
  CHECK_THROWS_AS(encode_points(p, too_small), std::invalid_argument);
  PointCloud bad_shape;
  bad_shape.n = 8;
  bad_shape.pts.assign(10, 0.1);
  CHECK_THROWS_AS(encode_points(p, bad_shape), std::invalid_argument);
}

TEST_CASE("project_and_lift maps tangent norm to tanh radius", "[encoders]") {
  Widths w = tiny_widths();
  EncoderParams p = init_params(11, w);
  Rng rng(13);
  const Curvature c(0.4);
  for (int trial = 0; trial < 20; ++trial) {
    Vec feat(size_t(w.feat));
    for (double& v : feat) v = rng.uniform(-1.0, 1.0);
    BallPoint z = project_and_lift(p.head_point, w, feat, c);
    CHECK(z.in_ball());
    CHECK(z.c() * z.norm2() <= (1.0 - kBallEps) * (1.0 - kBallEps) + 1e-14);

    // recompute the head's tangent output and compare the closed-form radius
    detail::HeadLayout L(w);
    Vec h(size_t(w.head_h)), t(size_t(w.ball_dim));
    detail::affine_fwd(detail::slice(p.head_point, L.P1), detail::slice(p.head_point, L.q1),
                       feat, 1, w.feat, w.head_h, h.data());
    for (double& v : h) v = detail::softplus0(v);
    detail::affine_fwd(detail::slice(p.head_point, L.P2), detail::slice(p.head_point, L.q2),
                       h, 1, w.head_h, w.ball_dim, t.data());
    double tn = 0.0;
    for (double v : t) tn += v * v;
    tn = std::sqrt(tn);
    CHECK_THAT(z.norm(),
               Catch::Matchers::WithinAbs(std::tanh(c.sqrt_c() * tn) / c.sqrt_c(), 1e-10));
  }
  // zero head output lands at the origin
  std::fill(p.head_point.begin(), p.head_point.end(), 0.0);
  Vec feat(size_t(w.feat), 0.3);
  CHECK(project_and_lift(p.head_point, w, feat, c).norm() == 0.0);
}

TEST_CASE("init_params is seed-deterministic and seed-sensitive", "[encoders]") {
  EncoderParams a = init_params(42);
  EncoderParams b = init_params(42);
  CHECK(a.point_enc == b.point_enc);
  CHECK(a.image_enc == b.image_enc);
  CHECK(a.head_point == b.head_point);
  CHECK(a.head_image == b.head_image);
  EncoderParams d = init_params(43);
  CHECK(a.point_enc != d.point_enc);
}

TEST_CASE("initialized forward pass keeps ball radii moderate", "[encoders]") {
  Rng rng(17);
  for (double cv : {0.1, 1.0}) {
    const Curvature c(cv);
    for (uint64_t seed = 0; seed < 8; ++seed) {
      EncoderParams p = init_params(seed);  // default widths
      PointCloud cloud = random_cloud(rng, 64);
      BallPoint z = project_and_lift(p.head_point, p.w, encode_points(p, cloud), c);
      CHECK(z.norm() < 0.9 / c.sqrt_c());
    }
  }
}

TEST_CASE("tape and plain encoder paths agree bit-for-bit", "[encoders]") {
  Rng rng(23);
  Widths w = tiny_widths();
  EncoderParams p = init_params(29, w);
  PointCloud cloud = random_cloud(rng, 20);
  Vec plain = encode_points(p, cloud);

  Tape t;
  PointBranchIds ids = bind_point_branch(t, p);
  int feat = t_encode_points(t, ids, t.leaf(point_features(cloud), cloud.n, kPointFeat));
  auto taped = t.value(feat);
  CHECK(Vec(taped.begin(), taped.end()) == plain);

  ViewImage img;
  img.h = img.w = w.img_side;
  img.px.resize(size_t(w.img_in()));
  for (double& v : img.px) v = rng.uniform01();
  Vec plain_img = encode_image(p, img);
  Tape t2;
  ImageBranchIds iids = bind_image_branch(t2, p);
  auto taped_img = t2.value(t_encode_image(t2, iids, t2.leaf(img.px, 1, int(img.px.size()))));
  CHECK(Vec(taped_img.begin(), taped_img.end()) == plain_img);
}

TEST_CASE("parameter group serialization round-trips", "[encoders]") {
  EncoderParams p = init_params(99, tiny_widths());
  std::stringstream ss;
  save_params(ss, p);
  EncoderParams q = load_params(ss);
  CHECK(q.w == p.w);
  CHECK(q.point_enc == p.point_enc);
  CHECK(q.image_enc == p.image_enc);
  CHECK(q.head_point == p.head_point);
  CHECK(q.head_image == p.head_image);
}
