#include <catch2/catch.hpp>

#include "oracles.hpp"
#include "splatfuse/geom.hpp"
#include "splatfuse/rng.hpp"

using namespace splatfuse;

namespace {

double max_abs_diff(const RigidTransform& t, const oracle::Mat4& m) {
  double worst = 0.0;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      worst = std::max(worst, std::abs(t.rotation(r, c) - m[4 * r + c]));
    }
  }
  worst = std::max(worst, std::abs(t.translation.x - m[3]));
  worst = std::max(worst, std::abs(t.translation.y - m[7]));
  worst = std::max(worst, std::abs(t.translation.z - m[11]));
  return worst;
}

Twist random_twist(Rng& rng, double max_angle) {
  const Vec3 axis = oracle::random_unit(rng);
  const double angle = rng.uniform(0.0, max_angle);
  return {{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)},
          axis * angle};
}

}  // namespace

TEST_CASE("se3_exp basic cases", "[geom]") {
  SECTION("zero twist maps to identity") {
    const RigidTransform t = se3_exp(Twist::zero());
    CHECK(max_abs_diff(t, oracle::mat4_identity()) < 1e-15);
  }
  SECTION("pure translation") {
    const RigidTransform t = se3_exp({{1, 2, 3}, {0, 0, 0}});
    CHECK(is_rotation(t.rotation, 1e-12));
    CHECK(t.translation.x == Approx(1.0).margin(1e-12));
    CHECK(t.translation.y == Approx(2.0).margin(1e-12));
    CHECK(t.translation.z == Approx(3.0).margin(1e-12));
    CHECK(rotation_angle_between(t.rotation, Mat3::identity()) < 1e-12);
  }
  SECTION("quarter turn about z maps x axis to y axis") {
    const RigidTransform t = se3_exp({{0, 0, 0}, {0, 0, M_PI / 2}});
    const Vec3 p = t.apply({1, 0, 0});
    CHECK(p.x == Approx(0.0).margin(1e-12));
    CHECK(p.y == Approx(1.0).margin(1e-12));
    CHECK(p.z == Approx(0.0).margin(1e-12));
    CHECK((t.translation - Vec3{0, 0, 0}).norm() < 1e-15);
  }
}

TEST_CASE("se3_exp matches brute-force matrix exponential", "[geom]") {
  Rng rng(41);
  for (int k = 0; k < 200; ++k) {
    const Twist xi = random_twist(rng, 3.0);
    const RigidTransform t = se3_exp(xi);
    const oracle::Mat4 ref = oracle::se3_exp_bruteforce(xi);
    CHECK(max_abs_diff(t, ref) < 1e-10);
  }
}

TEST_CASE("se3_log round trips", "[geom]") {
  SECTION("identity gives zero twist") {
    const Twist xi = se3_log(RigidTransform::identity());
    CHECK(xi.rho.norm() < 1e-15);
    CHECK(xi.omega.norm() < 1e-15);
  }
  SECTION("constructed twist recovered") {
    const Twist xi{{0.1, -0.2, 0.3}, {0.2, 0.0, 0.0}};
    const Twist back = se3_log(se3_exp(xi));
    for (int i = 0; i < 6; ++i) CHECK(back[i] == Approx(xi[i]).margin(1e-9));
  }
  SECTION("random transform with angle 3.0 verified by re-exponentiation") {
    Rng rng(17);
    const Vec3 axis = oracle::random_unit(rng);
    const RigidTransform t{so3_exp(axis * 3.0), {0.4, -1.2, 0.7}};
    const Twist xi = se3_log(t);
    const RigidTransform back = se3_exp(xi);
    CHECK(rotation_angle_between(back.rotation, t.rotation) < 1e-9);
    CHECK((back.translation - t.translation).norm() < 1e-9);
  }
  SECTION("angle near pi is rejected") {
    const RigidTransform t{so3_exp(Vec3{1, 0, 0} * (M_PI - 1e-8)), {}};
    CHECK_THROWS_AS(se3_log(t), AngleNearPiError);
  }
}

TEST_CASE("exp/log property over 1000 random twists", "[geom]") {
  Rng rng(7);
  for (int k = 0; k < 1000; ++k) {
    const Twist xi = random_twist(rng, 3.0);
    const RigidTransform t = se3_exp(xi);
    CHECK(is_rotation(t.rotation, 1e-9));
    const Twist back = se3_log(t);
    for (int i = 0; i < 6; ++i) {
      REQUIRE(std::abs(back[i] - xi[i]) < 1e-9);
    }
  }
}

TEST_CASE("compose, inverse, transform_point", "[geom]") {
  Rng rng(23);
  SECTION("inverse of identity is identity") {
    const RigidTransform t = inverse(RigidTransform::identity());
    CHECK(max_abs_diff(t, oracle::mat4_identity()) < 1e-15);
  }
  SECTION("pure translation moves the origin") {
    RigidTransform t;
    t.translation = {1, 0, 0};
    const Vec3 p = transform_point(t, {0, 0, 0});
    CHECK(p.x == Approx(1.0));
    CHECK(p.y == Approx(0.0));
  }
  SECTION("compose equals pointwise application on 100 random points") {
    const RigidTransform a = se3_exp(random_twist(rng, 2.0));
    const RigidTransform b = se3_exp(random_twist(rng, 2.0));
    const RigidTransform ab = compose(a, b);
    for (int k = 0; k < 100; ++k) {
      const Vec3 p{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
      const Vec3 direct = ab.apply(p);
      const Vec3 chained = a.apply(b.apply(p));
      CHECK((direct - chained).norm() < 1e-12);
    }
  }
  SECTION("T composed with its inverse is identity") {
    for (int k = 0; k < 50; ++k) {
      const RigidTransform t = se3_exp(random_twist(rng, 2.5));
      const RigidTransform id = compose(t, inverse(t));
      CHECK(max_abs_diff(id, oracle::mat4_identity()) < 1e-9);
    }
  }
  SECTION("compose is associative") {
    for (int k = 0; k < 50; ++k) {
      const RigidTransform a = se3_exp(random_twist(rng, 2.0));
      const RigidTransform b = se3_exp(random_twist(rng, 2.0));
      const RigidTransform c = se3_exp(random_twist(rng, 2.0));
      const RigidTransform l = compose(compose(a, b), c);
      const RigidTransform r = compose(a, compose(b, c));
      CHECK(rotation_angle_between(l.rotation, r.rotation) < 1e-9);
      CHECK((l.translation - r.translation).norm() < 1e-9);
    }
  }
}

TEST_CASE("pinhole projection", "[geom]") {
  Camera cam;
  cam.fx = cam.fy = 100.0;
  cam.cx = cam.cy = 50.0;
  cam.width = cam.height = 100;

  SECTION("point on the optical axis lands on the principal point") {
    const auto p = project(cam, {0, 0, 1});
    REQUIRE(p.has_value());
    CHECK(p->u == Approx(50.0));
    CHECK(p->v == Approx(50.0));
    CHECK(p->depth == Approx(1.0));
  }
  SECTION("analytic pinhole") {
    const auto p = project(cam, {0.5, 0, 1});
    REQUIRE(p.has_value());
    CHECK(p->u == Approx(100.0));
    CHECK(p->v == Approx(50.0));
    CHECK(p->depth == Approx(1.0));
  }
  SECTION("point behind the camera is rejected") {
    CHECK_FALSE(project(cam, {0, 0, -1.0}).has_value());
    CHECK_FALSE(project(cam, {0, 0, 0.0}).has_value());
  }
}

TEST_CASE("pixel rays", "[geom]") {
  Camera cam = make_look_at_camera({2.0, 1.0, 1.5}, {0, 0, 0}, 120.0, 120.0, 64.0,
                                   64.0, 128, 128);

  SECTION("ray origin is the camera center for all pixels") {
    const Vec3 center = cam.center();
    for (int u : {0, 64, 127}) {
      for (int v : {0, 64, 127}) {
        const Ray ray = pixel_ray(cam, u, v);
        CHECK((ray.origin - center).norm() < 1e-12);
      }
    }
  }
  SECTION("re-projection returns the pixel center") {
    Rng rng(3);
    for (int k = 0; k < 50; ++k) {
      const int u = rng.uniform_int(0, 127);
      const int v = rng.uniform_int(0, 127);
      const Ray ray = pixel_ray(cam, u, v);
      for (double t : {0.5, 1.0, 4.0}) {
        const auto p = project(cam, ray.origin + ray.direction * t);
        REQUIRE(p.has_value());
        CHECK(p->u == Approx(u + 0.5).margin(1e-6));
        CHECK(p->v == Approx(v + 0.5).margin(1e-6));
      }
    }
  }
  SECTION("center pixel looks along the optical axis") {
    Camera simple;
    simple.fx = simple.fy = 100.0;
    simple.cx = simple.cy = 50.0;
    simple.width = simple.height = 100;
    // principal point is the corner of pixel (50, 50); use a half-pixel
    // offset principal point so a pixel center lies exactly on the axis
    simple.cx = simple.cy = 50.5;
    const Ray ray = pixel_ray(simple, 50, 50);
    CHECK(ray.direction.x == Approx(0.0).margin(1e-12));
    CHECK(ray.direction.y == Approx(0.0).margin(1e-12));
    CHECK(ray.direction.z == Approx(1.0).margin(1e-12));
  }
  SECTION("out-of-bounds pixels are rejected") {
    CHECK_THROWS_AS(pixel_ray(cam, -1, 0), std::out_of_range);
    CHECK_THROWS_AS(pixel_ray(cam, 0, 128), std::out_of_range);
  }
}

TEST_CASE("4x4 serialization round trip", "[geom]") {
  Rng rng(91);
  const RigidTransform t = se3_exp(random_twist(rng, 2.0));
  const auto m = to_matrix4(t);
  const RigidTransform back = rigid_from_matrix4(m);
  CHECK(rotation_angle_between(back.rotation, t.rotation) < 1e-12);
  CHECK((back.translation - t.translation).norm() < 1e-12);

  auto bad = m;
  bad[0] = 2.0;
  CHECK_THROWS_AS(rigid_from_matrix4(bad), ParseError);
}
