#include <doctest.h>

#include <cmath>
#include <numbers>

#include "falcon/geometry.hpp"
#include "falcon/rng.hpp"

using namespace falcon;
using std::numbers::pi;

namespace {

Quat random_quat(Rng& rng) {
  Quat q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return q.normalized();
}

Pose random_pose(Rng& rng) {
  return Pose(random_quat(rng), Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)));
}

}  // namespace

TEST_CASE("project: worked pixel example") {
  // fx = 100, cx = 128: u = 100 * 0.5 / 2 + 128 = 153 (hand computed).
  const Intrinsics k{100, 100, 128, 128, 256, 256};
  const auto uv = project(Vec3(0.5, -0.2, 2.0), k);
  REQUIRE(uv);
  CHECK(uv->x() == doctest::Approx(153.0).epsilon(1e-12));
  CHECK(uv->y() == doctest::Approx(118.0).epsilon(1e-12));
}

TEST_CASE("project: behind the camera and on the principal axis") {
  const Intrinsics k = Intrinsics::centered(64, 48, 1.0);
  CHECK_FALSE(project(Vec3(0, 0, -1), k));
  CHECK_FALSE(project(Vec3(0, 0, 0), k));
  const auto c = project(Vec3(0, 0, 3), k);
  REQUIRE(c);
  CHECK(c->x() == doctest::Approx(31.5));
  CHECK(c->y() == doctest::Approx(23.5));
}

TEST_CASE("back_project inverts project") {
  Rng rng(3);
  const Intrinsics k = Intrinsics::centered(320, 240, 0.9);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 5));
    const auto uv = project(p, k);
    REQUIRE(uv);
    CHECK((back_project(*uv, p.z(), k) - p).norm() < 1e-12);
  }
}

TEST_CASE("compose: two quarter turns about z") {
  const Pose a(rot_z(pi / 2), Vec3(1, 0, 0));
  const Pose b(rot_z(pi / 2), Vec3(0, 1, 0));
  const Pose c = compose(a, b);
  // R = rotZ(pi); t = Ra * tb + ta = (-1, 0, 0) + (1, 0, 0).
  CHECK(geodesic_angle(c.rotation(), rot_z(pi)) < 1e-12);
  CHECK((c.translation() - Vec3(0, 0, 0)).norm() < 1e-12);
  const Vec3 p(0.3, -0.7, 2.0);
  CHECK((c.apply(p) - a.apply(b.apply(p))).norm() < 1e-12);
}

TEST_CASE("inverse and relative_pose") {
  Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    const Pose a = random_pose(rng), b = random_pose(rng);
    const Pose id = compose(a, inverse(a));
    CHECK(geodesic_angle(id.rotation(), Quat::Identity()) < 1e-9);
    CHECK(id.translation().norm() < 1e-12);
    const Pose rel = relative_pose(a, b);
    const Vec3 p(rng.normal(), rng.normal(), rng.normal());
    CHECK((a.apply(rel.apply(p)) - b.apply(p)).norm() < 1e-10);
  }
}

TEST_CASE("geodesic_angle: sign invariance and known angles") {
  CHECK(geodesic_angle(rot_x(0.3), rot_x(0.3)) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(geodesic_angle(rot_x(0.0), rot_x(0.5)) == doctest::Approx(0.5));
  const Quat q = rot_y(1.2);
  const Quat neg(-q.w(), -q.x(), -q.y(), -q.z());
  CHECK(geodesic_angle(q, neg) < 1e-7);
  CHECK(geodesic_angle(Quat::Identity(), rot_z(pi)) == doctest::Approx(pi));
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const double a = geodesic_angle(random_quat(rng), random_quat(rng));
    CHECK(a >= 0.0);
    CHECK(a <= pi + 1e-12);
  }
}

TEST_CASE("exp/log round trip and retract") {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    Vec3 w(rng.normal(), rng.normal(), rng.normal());
    w *= rng.uniform(0.0, 3.0) / std::max(w.norm(), 1e-9);
    CHECK((log_so3(exp_so3(w)) - w).norm() < 1e-9);
  }
  CHECK(log_so3(Quat::Identity()).norm() < 1e-15);
  const Pose p(rot_y(0.4), Vec3(1, 2, 3));
  Vec6 d;
  d << 0, 0, 0.1, 0.5, 0, 0;
  const Pose r = retract(p, d);
  CHECK(geodesic_angle(r.rotation(), rot_z(0.1) * rot_y(0.4)) < 1e-12);
  CHECK((r.translation() - (rot_z(0.1) * Vec3(1, 2, 3) + Vec3(0.5, 0, 0))).norm() < 1e-12);
}

TEST_CASE("look_at: optical axis points at the target") {
  const Pose cam = look_at(Vec3(3, 0, 0), Vec3::Zero(), Vec3::UnitZ());
  const Vec3 z = cam.rotation_matrix().col(2);
  CHECK((z - Vec3(-1, 0, 0)).norm() < 1e-12);
  // Origin lands on the principal point.
  const Intrinsics k = Intrinsics::centered(64, 64, 1.0);
  const auto uv = project(relative_pose(cam, Pose::identity()).translation(), k);
  REQUIRE(uv);
  CHECK(uv->x() == doctest::Approx(k.cx));
  CHECK(uv->y() == doctest::Approx(k.cy));
  // y points down: world +z projects above the center.
  const auto up = project(inverse(cam).apply(Vec3(0, 0, 0.5)), k);
  REQUIRE(up);
  CHECK(up->y() < k.cy);
  CHECK(cam.rotation_matrix().determinant() == doctest::Approx(1.0));
}

TEST_CASE("intrinsics validation and resizing") {
  CHECK_THROWS(Intrinsics{0, 1, 0, 0, 10, 10}.validate());
  CHECK_THROWS(Intrinsics{1, 1, 0, 0, 0, 10}.validate());
  const Intrinsics k = Intrinsics::centered(256, 256, 1.0);
  const Intrinsics s = k.resized(64, 64);
  CHECK(s.fx == doctest::Approx(64.0));
  CHECK(s.cx == doctest::Approx(31.5));
  // A point projects to the same relative position.
  const Vec3 p(0.2, 0.1, 1.5);
  CHECK((project(p, k)->x() + 0.5) / 256.0 == doctest::Approx((project(p, s)->x() + 0.5) / 64.0));
}

TEST_CASE("pose keeps a unit quaternion") {
  const Pose p(Quat(2, 0, 0, 0), Vec3::Zero());
  CHECK(p.rotation().norm() == doctest::Approx(1.0));
}
