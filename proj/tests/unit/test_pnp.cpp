#include <doctest.h>

#include <algorithm>
#include <numbers>

#include "falcon/pnp.hpp"
#include "falcon/rng.hpp"

using namespace falcon;

namespace {

Quat random_rotation(Rng& rng) {
  Quat q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return q.normalized();
}

std::vector<Correspondence> project_all(const std::vector<Vec3>& pts, const Pose& pose, const Intrinsics& k) {
  std::vector<Correspondence> c;
  for (const Vec3& p : pts) {
    const Vec3 cp = pose.apply(p);
    c.push_back({p, Vec2(k.fx * cp.x() / cp.z() + k.cx, k.fy * cp.y() / cp.z() + k.cy), 0.0});
  }
  return c;
}

LabeledFrame frame_at(double distance, const Vec3& dir, std::uint64_t seed) {
  LabeledFrame f;
  f.camera = look_at(distance * dir.normalized(), Vec3::Zero(), Vec3::UnitZ());
  f.pose_label = inverse(f.camera);
  f.intrinsics = Intrinsics::centered(256, 256, 1.0);
  f.in_view = true;
  f.seed = seed;
  return f;
}

}  // namespace

TEST_CASE("keypoints follow greedy farthest-point sampling") {
  const SplatAsset car = generate_archetype(Archetype::car, 0);
  const auto kp = select_keypoints(car, 8);
  REQUIRE(kp.size() == 8);
  CHECK(kp == select_keypoints(car, 8));
  // Start: splat closest to the centroid (origin of the canonical frame).
  double best = 1e9;
  for (const auto& s : car.splats()) best = std::min(best, s.center.norm());
  CHECK(kp[0].norm() == doctest::Approx(best));
  for (std::size_t i = 1; i < kp.size(); ++i) {
    auto min_dist = [&](const Vec3& p) {
      double d = 1e9;
      for (std::size_t j = 0; j < i; ++j) d = std::min(d, (p - kp[j]).norm());
      return d;
    };
    const double chosen = min_dist(kp[i]);
    CHECK(chosen > 0);
    for (const auto& s : car.splats()) CHECK(min_dist(s.center) <= chosen + 1e-12);
  }
}

TEST_CASE("keypoint count edge cases") {
  std::vector<Splat> six;
  for (int i = 0; i < 6; ++i) {
    Splat s;
    s.center = Vec3(i, i * i, i % 2);
    six.push_back(s);
  }
  const SplatAsset a = SplatAsset::from_splats("six", six);
  auto kp = select_keypoints(a, 6);
  CHECK(kp.size() == 6);
  for (const auto& s : a.splats()) CHECK(std::find(kp.begin(), kp.end(), s.center) != kp.end());
  six.pop_back();
  CHECK_THROWS_AS(select_keypoints(SplatAsset::from_splats("five", six), 6), TooFewSplats);
  CHECK_THROWS(select_keypoints(a, 5));
}

TEST_CASE("noise-free recovery on random poses and point sets") {
  Rng rng(1);
  const Intrinsics k = Intrinsics::centered(256, 256, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Vec3> pts;
    for (int i = 0; i < 8; ++i) pts.emplace_back(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    const Pose gt(random_rotation(rng), Vec3(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(2.0, 5.0)));
    const PnpResult r = solve_pnp(project_all(pts, gt, k), k);
    CAPTURE(trial);
    CHECK(geodesic_angle(r.pose.rotation(), gt.rotation()) < 1e-6);
    CHECK((r.pose.translation() - gt.translation()).norm() / gt.translation().norm() < 1e-8);
    CHECK(r.rms < 1e-6);
    CHECK(r.converged);
    CHECK(r.pose.rotation_matrix().determinant() == doctest::Approx(1.0));
    CHECK(r.iterations <= 50);
  }
}

TEST_CASE("degenerate configurations") {
  const Intrinsics k = Intrinsics::centered(256, 256, 1.0);
  const Pose gt(rot_x(0.3), Vec3(0, 0, 3));
  std::vector<Vec3> planar, line;
  for (int i = 0; i < 8; ++i) {
    planar.emplace_back(0.1 * i, 0.05 * i * i - 0.3, 0.0);
    line.emplace_back(0.1 * i, 0.2 * i, -0.1 * i);
  }
  CHECK_THROWS_AS(solve_pnp(project_all(planar, gt, k), k), DegenerateConfiguration);
  CHECK_THROWS_AS(solve_pnp(project_all(line, gt, k), k), DegenerateConfiguration);
  std::vector<Vec3> five(planar.begin(), planar.begin() + 5);
  five[0].z() = 0.3;
  CHECK_THROWS(solve_pnp(project_all(five, gt, k), k));
}

TEST_CASE("click noise: median error at 2.5x size and its growth with sigma") {
  const SplatAsset car = generate_archetype(Archetype::car, 0);
  const auto kp = select_keypoints(car, 8);
  Rng rng(9);
  std::vector<LabeledFrame> frames;
  while (frames.size() < 100) {
    const Vec3 dir(rng.normal(), rng.normal(), rng.normal());
    if (std::abs(dir.normalized().z()) > 0.95) continue;  // look_at needs a non-vertical view
    frames.push_back(frame_at(2.5 * car.object_size(), dir, rng.next_u64()));
  }
  auto median_error = [&](double sigma) {
    std::vector<double> errs;
    for (const auto& f : frames) {
      PnpResult r;
      try {
        r = pnp_estimate_frame(f, kp, sigma);
      } catch (const NoConvergence& e) {
        r = e.best();
      } catch (const Error&) {
        errs.push_back(std::numbers::pi);
        continue;
      }
      errs.push_back(geodesic_angle(r.pose.rotation(), f.pose_label.rotation()));
    }
    std::nth_element(errs.begin(), errs.begin() + 50, errs.end());
    return errs[50];
  };
  const double m0 = median_error(0.0), m1 = median_error(1.0), m2 = median_error(2.0), m4 = median_error(4.0);
  MESSAGE("median rad: s0 " << m0 << " s1 " << m1 << " s2 " << m2 << " s4 " << m4);
  CHECK(m0 < 1e-6);
  CHECK(m2 < 0.15);
  CHECK(m1 < m2);
  CHECK(m2 < m4);
}

TEST_CASE("simulated clicks") {
  const SplatAsset car = generate_archetype(Archetype::car, 0);
  const auto kp = select_keypoints(car, 8);
  LabeledFrame f = frame_at(2.5 * car.object_size(), Vec3(1, 0.5, 0.4), 42);
  const auto a = simulate_clicks(f, kp, 2.0), b = simulate_clicks(f, kp, 2.0);
  REQUIRE(a.size() == 8);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].pixel == b[i].pixel);
    CHECK(a[i].noise_sigma == 2.0);
    CHECK(a[i].pixel.x() >= 0);
    CHECK(a[i].pixel.x() <= 255);
  }
  // Scale multiplies the object points.
  f.scale = 1.2;
  const auto s = simulate_clicks(f, kp, 0.0);
  CHECK(s[3].object_point.isApprox(1.2 * kp[3]));

  f.in_view = false;
  CHECK_THROWS_AS(pnp_estimate_frame(f, kp), NotVisible);
  // Camera facing away: nothing projects.
  LabeledFrame away = frame_at(2.5, Vec3(1, 0, 0), 1);
  away.pose_label = Pose(rot_y(std::numbers::pi) * away.pose_label.rotation(), Vec3(0, 0, -3));
  CHECK_THROWS_AS(pnp_estimate_frame(away, kp), NotVisible);
}
