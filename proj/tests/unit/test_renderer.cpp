#include <doctest.h>

#include <chrono>
#include <numbers>

#include "falcon/renderer.hpp"
#include "falcon/rng.hpp"

using namespace falcon;

namespace {

// Two tiny splats far off to the sides keep the centroid at the origin and
// give the asset a nonzero extent; the camera never sees them.
std::vector<Splat> far_pair() {
  Splat a;
  a.center = Vec3(1000, 0, 0);
  a.scales = Vec3::Constant(0.01);
  Splat b = a;
  b.center = Vec3(-1000, 0, 0);
  return {a, b};
}

SplatAsset single(const Vec3& color, double opacity) {
  Splat s;
  s.scales = Vec3::Constant(0.05);
  s.color = color;
  s.opacity = opacity;
  std::vector<Splat> v = far_pair();
  v.push_back(s);
  return SplatAsset::from_splats("one", std::move(v));
}

SplatAsset far_background() { return SplatAsset::from_splats("bg", far_pair()); }

// Camera at (0, 0, -2) looking at the origin along +z.
Pose front_camera() { return Pose(Quat::Identity(), Vec3(0, 0, -2)); }

Image random_image(int w, int h, int c, std::uint64_t seed) {
  Rng rng(seed);
  Image img(w, h, c);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("single splat at the optical axis") {
  const Intrinsics k{100, 100, 15, 15, 31, 31};
  const Scene scene = composite(far_background(), single(Vec3(1, 0, 0), 1.0), Pose::identity(), 1.0);
  const RenderOutput out = render(scene, front_camera(), k);
  // Gaussian peak exp(0) = 1 at the center pixel.
  CHECK(out.fg_alpha.at(15, 15, 0) == doctest::Approx(1.0));
  CHECK(out.mask.at(15, 15, 0) == 1.0f);
  CHECK(out.rgb.at(15, 15, 0) == doctest::Approx(1.0));
  CHECK(out.rgb.at(15, 15, 1) == doctest::Approx(0.0));
  // Far from the footprint nothing is drawn: empty pixels stay black.
  CHECK(out.rgb.at(0, 0, 0) == 0.0f);
  CHECK(out.fg_alpha.at(0, 0, 0) == 0.0f);
}

TEST_CASE("lighting scales the center pixel and clamps") {
  const Intrinsics k{100, 100, 15, 15, 31, 31};
  const Scene scene = composite(far_background(), single(Vec3(0.6, 0.5, 0.2), 1.0), Pose::identity(), 1.0);
  Lighting l;
  l.gain = 1.5;
  l.tint = Vec3(1.2, 0.8, 1.0);
  const RenderOutput out = render(scene, front_camera(), k, l);
  CHECK(out.rgb.at(15, 15, 0) == doctest::Approx(1.0));  // 0.6 * 1.2 * 1.5 = 1.08, clamped
  CHECK(out.rgb.at(15, 15, 1) == doctest::Approx(0.6).epsilon(1e-6));
  CHECK(out.rgb.at(15, 15, 2) == doctest::Approx(0.3).epsilon(1e-6));
}

TEST_CASE("empty scene gives an all-zero mask") {
  const Scene scene = composite(generate_environment(0));
  const Pose cam = look_at(Vec3(1.5, 0.3, 0.2), Vec3::Zero(), Vec3::UnitZ());
  const RenderOutput out = render(scene, cam, Intrinsics::centered(64, 64, 1.0));
  CHECK(count_foreground(out.mask) == 0);
  for (float v : out.fg_alpha.data) CHECK(v == 0.0f);
}

TEST_CASE("object outside the frustum gives an empty mask") {
  const Scene scene = composite(generate_environment(1), generate_archetype(Archetype::car, 0), Pose::identity(), 1.0);
  // Looking directly away from the object.
  const Pose cam = look_at(Vec3(1.5, 0, 0), Vec3(3, 0, 0), Vec3::UnitZ());
  CHECK(count_foreground(render(scene, cam, Intrinsics::centered(64, 64, 1.0)).mask) == 0);
}

TEST_CASE("mask agrees with fg_alpha threshold and rendering is deterministic") {
  const Scene scene = composite(generate_environment(0), generate_archetype(Archetype::quadrotor, 0), Pose::identity(), 1.0);
  const Pose cam = look_at(Vec3(1.2, 0.4, 0.5), Vec3::Zero(), Vec3::UnitZ());
  const Intrinsics k = Intrinsics::centered(96, 80, 1.0);
  const RenderOutput a = render(scene, cam, k), b = render(scene, cam, k);
  CHECK(a.rgb == b.rgb);
  CHECK(a.fg_alpha == b.fg_alpha);
  CHECK(count_foreground(a.mask) > 25);
  for (std::size_t i = 0; i < a.mask.data.size(); ++i) CHECK((a.mask.data[i] == 1.0f) == (a.fg_alpha.data[i] > 0.5f));
  for (float v : a.rgb.data) CHECK((v >= 0.0f && v <= 1.0f));
}

TEST_CASE("principal point shift translates the mask") {
  const Scene scene = composite(far_background(), generate_archetype(Archetype::car, 0), Pose::identity(), 1.0);
  const Pose cam = look_at(Vec3(1.5, 0.5, 0.5), Vec3::Zero(), Vec3::UnitZ());
  Intrinsics k = Intrinsics::centered(96, 96, 1.0);
  const RenderOutput a = render(scene, cam, k);
  k.cx += 5;
  const RenderOutput b = render(scene, cam, k);
  auto centroid_x = [](const Image& m) {
    double s = 0, n = 0;
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x)
        if (m.at(x, y, 0) > 0.5f) s += x, n += 1;
    return s / n;
  };
  CHECK(centroid_x(b.mask) - centroid_x(a.mask) == doctest::Approx(5.0).epsilon(0.02));
}

TEST_CASE("lamp renders match under rotation about its axis") {
  const SplatAsset lamp = generate_archetype(Archetype::lamp, 0);
  const SplatAsset bg = far_background();
  const Pose cam = look_at(Vec3(1.6, 0.0, 0.6), Vec3::Zero(), Vec3::UnitZ());
  const Intrinsics k = Intrinsics::centered(128, 128, 1.0);
  const Image ref = render(composite(bg, lamp, Pose::identity(), 1.0), cam, k).rgb;
  for (int i = 1; i <= 10; ++i) {
    const double yaw = i * 2.0 * std::numbers::pi / 10.0;
    const Image rot = render(composite(bg, lamp, Pose(rot_z(yaw), Vec3::Zero()), 1.0), cam, k).rgb;
    CHECK(ssim(ref, rot) >= 0.95);
  }
}

TEST_CASE("render time for a 256x256 frame with about 4k splats") {
  const Scene scene = composite(generate_environment(0), generate_archetype(Archetype::car, 0), Pose::identity(), 1.0);
  REQUIRE(scene.splats.size() > 4000);
  const Pose cam = look_at(Vec3(1.2, 0.4, 0.5), Vec3::Zero(), Vec3::UnitZ());
  const Intrinsics k = Intrinsics::centered(256, 256, 1.0);
  render(scene, cam, k);
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 5; ++i) render(scene, cam, k);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / 5;
  MESSAGE("render ms: " << ms);
  CHECK(ms <= 100.0);
}

TEST_CASE("ssim closed forms") {
  const Image x = random_image(32, 24, 3, 1);
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-9));
  const Image y = random_image(32, 24, 3, 2);
  CHECK(ssim(x, y) == ssim(y, x));
  Image zeros(16, 16, 1), ones(16, 16, 1);
  std::fill(ones.data.begin(), ones.data.end(), 1.0f);
  const double c1 = 1e-4;
  // Zero variances: (2*0*1 + C1)/(0 + 1 + C1) * (C2/C2).
  CHECK(std::abs(ssim(zeros, ones) - c1 / (1 + c1)) < 1e-8);
  CHECK_THROWS_AS(ssim(x, random_image(31, 24, 3, 3)), DimensionMismatch);
  CHECK_THROWS_AS(ssim(Image(8, 8, 1), Image(8, 8, 1)), DimensionMismatch);
}

TEST_CASE("ssim matches a direct per-window evaluation") {
  // Independent evaluation of the same definition, window by window.
  const Image a = random_image(14, 13, 1, 5), b = random_image(14, 13, 1, 6);
  double w[11];
  double ws = 0;
  for (int i = 0; i < 11; ++i) ws += (w[i] = std::exp(-0.5 * (i - 5) * (i - 5) / (1.5 * 1.5)));
  for (double& v : w) v /= ws;
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  int n = 0;
  for (int y0 = 0; y0 + 11 <= a.height; ++y0)
    for (int x0 = 0; x0 + 11 <= a.width; ++x0) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = 0; dy < 11; ++dy)
        for (int dx = 0; dx < 11; ++dx) {
          const double g = w[dy] * w[dx];
          const double va = a.at(x0 + dx, y0 + dy, 0), vb = b.at(x0 + dx, y0 + dy, 0);
          ma += g * va, mb += g * vb, saa += g * va * va, sbb += g * vb * vb, sab += g * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++n;
    }
  CHECK(ssim(a, b) == doctest::Approx(total / n).epsilon(1e-6));
}
