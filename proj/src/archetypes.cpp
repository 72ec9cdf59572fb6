#include <algorithm>
#include <cmath>
#include <numbers>

#include "falcon/rng.hpp"
#include "falcon/splats.hpp"

namespace falcon {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kTargetSplats = 2000;

Vec3 rgb(double r, double g, double b) { return {r, g, b}; }

/// Surface patch that can be sampled uniformly.
struct Part {
  enum class Kind { box, cylinder, disc } kind;
  Vec3 center;
  Quat rotation = Quat::Identity();
  Vec3 half = Vec3::Zero();  // box half extents; cylinder: (radius, radius, half length)
  Vec3 color;
  bool caps = true;

  double area() const {
    switch (kind) {
      case Kind::box:
        return 8.0 * (half.x() * half.y() + half.y() * half.z() + half.x() * half.z());
      case Kind::cylinder:
        return 2.0 * kPi * half.x() * 2.0 * half.z() + (caps ? 2.0 * kPi * half.x() * half.x() : 0.0);
      case Kind::disc:
        return kPi * half.x() * half.x();
    }
    return 0.0;
  }
};

Part box(Vec3 center, Vec3 size, Vec3 color, Quat rot = Quat::Identity()) {
  return {Part::Kind::box, center, rot, size / 2.0, color};
}

/// Cylinder along the rotated local z axis.
Part cylinder(Vec3 center, double radius, double length, Vec3 color, Quat rot = Quat::Identity(),
              bool caps = true) {
  return {Part::Kind::cylinder, center, rot, Vec3(radius, radius, length / 2.0), color, caps};
}

Vec3 jitter_color(const Vec3& c, Rng& rng, double amount) {
  Vec3 out;
  for (int i = 0; i < 3; ++i) out[i] = std::clamp(c[i] + rng.uniform(-amount, amount), 0.0, 1.0);
  return out;
}

Splat surface_splat(const Vec3& p, const Vec3& normal, double spacing, const Vec3& color, Rng& rng) {
  Splat s;
  s.center = p;
  s.orientation = Quat::FromTwoVectors(Vec3::UnitZ(), normal.normalized());
  const double t = 0.7 * spacing;
  s.scales = Vec3(t, t, 0.25 * t);
  s.color = jitter_color(color, rng, 0.04);
  s.opacity = rng.uniform(0.85, 1.0);
  return s;
}

void sample_part(const Part& part, int count, double spacing, Rng& rng, std::vector<Splat>& out) {
  for (int i = 0; i < count; ++i) {
    Vec3 p, n;
    switch (part.kind) {
      case Part::Kind::box: {
        const Vec3& h = part.half;
        const double areas[3] = {h.y() * h.z(), h.x() * h.z(), h.x() * h.y()};
        double pick = rng.uniform() * (areas[0] + areas[1] + areas[2]);
        int axis = pick < areas[0] ? 0 : (pick < areas[0] + areas[1] ? 1 : 2);
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        for (int a = 0; a < 3; ++a) p[a] = rng.uniform(-h[a], h[a]);
        p[axis] = sign * h[axis];
        n = Vec3::Zero();
        n[axis] = sign;
        break;
      }
      case Part::Kind::cylinder: {
        const double r = part.half.x();
        const double hl = part.half.z();
        const double side = 2.0 * kPi * r * 2.0 * hl;
        const double cap = part.caps ? kPi * r * r : 0.0;
        const double pick = rng.uniform() * (side + 2.0 * cap);
        const double phi = rng.uniform(0.0, 2.0 * kPi);
        if (pick < side) {
          p = Vec3(r * std::cos(phi), r * std::sin(phi), rng.uniform(-hl, hl));
          n = Vec3(std::cos(phi), std::sin(phi), 0.0);
        } else {
          const double rr = r * std::sqrt(rng.uniform());
          const double sign = pick < side + cap ? 1.0 : -1.0;
          p = Vec3(rr * std::cos(phi), rr * std::sin(phi), sign * hl);
          n = Vec3(0, 0, sign);
        }
        break;
      }
      case Part::Kind::disc: {
        const double rr = part.half.x() * std::sqrt(rng.uniform());
        const double phi = rng.uniform(0.0, 2.0 * kPi);
        p = Vec3(rr * std::cos(phi), rr * std::sin(phi), 0.0);
        n = Vec3::UnitZ();
        break;
      }
    }
    out.push_back(surface_splat(part.center + part.rotation * p, part.rotation * n, spacing,
                                part.color, rng));
  }
}

std::vector<Splat> sample_parts(const std::vector<Part>& parts, int target, Rng& rng) {
  double total = 0.0;
  for (const auto& p : parts) total += p.area();
  std::vector<Splat> out;
  out.reserve(target + parts.size());
  double carried = 0.0;
  for (const auto& p : parts) {
    // Largest-remainder style rounding keeps the total at `target`.
    const double exact = target * p.area() / total + carried;
    const int n = std::max(4, static_cast<int>(std::lround(exact)));
    carried = exact - n;
    const double spacing = std::sqrt(p.area() / n);
    sample_part(p, n, spacing, rng, out);
  }
  return out;
}

std::vector<Part> car_parts() {
  const Vec3 red = rgb(0.82, 0.12, 0.10);
  const Vec3 glass = rgb(0.45, 0.70, 0.92);
  const Vec3 tyre = rgb(0.08, 0.08, 0.09);
  const Quat wheel_rot = rot_x(kPi / 2);
  std::vector<Part> parts = {
      box({0, 0, 0.09}, {0.40, 0.18, 0.09}, red),
      box({-0.03, 0, 0.175}, {0.20, 0.15, 0.08}, glass),
      box({0.203, 0.055, 0.10}, {0.01, 0.04, 0.03}, rgb(1.0, 0.9, 0.2)),
      box({0.203, -0.055, 0.10}, {0.01, 0.04, 0.03}, rgb(1.0, 0.9, 0.2)),
      box({-0.203, 0.0, 0.10}, {0.01, 0.14, 0.025}, rgb(0.95, 0.95, 0.95)),
  };
  for (double x : {0.13, -0.13})
    for (double y : {0.095, -0.095}) parts.push_back(cylinder({x, y, 0.045}, 0.045, 0.03, tyre, wheel_rot));
  return parts;
}

std::vector<Part> quadrotor_parts() {
  std::vector<Part> parts = {
      box({0, 0, 0.03}, {0.12, 0.10, 0.05}, rgb(0.35, 0.35, 0.38)),
      box({0.07, 0, 0.03}, {0.02, 0.04, 0.03}, rgb(0.15, 0.35, 0.95)),
  };
  for (int i = 0; i < 4; ++i) {
    const double ang = kPi / 4 + i * kPi / 2;
    const Vec3 dir(std::cos(ang), std::sin(ang), 0.0);
    const bool front = dir.x() > 0;
    const Vec3 arm_color = front ? rgb(0.85, 0.15, 0.12) : rgb(0.92, 0.92, 0.92);
    parts.push_back(box(dir * 0.10 + Vec3(0, 0, 0.03), {0.16, 0.02, 0.015}, arm_color, rot_z(ang)));
    const Vec3 rotor_color = front ? rgb(1.0, 0.55, 0.05) : rgb(0.15, 0.75, 0.25);
    parts.push_back(cylinder(dir * 0.18 + Vec3(0, 0, 0.05), 0.065, 0.008, rotor_color));
  }
  parts.push_back(box({0.0, 0.05, -0.005}, {0.08, 0.01, 0.02}, rgb(0.1, 0.1, 0.1)));
  parts.push_back(box({0.0, -0.05, -0.005}, {0.08, 0.01, 0.02}, rgb(0.1, 0.1, 0.1)));
  return parts;
}

std::vector<Part> gate_parts() {
  const Vec3 orange = rgb(0.95, 0.45, 0.08);
  return {
      box({0, 0.28, 0.30}, {0.04, 0.04, 0.60}, orange),
      box({0, -0.28, 0.30}, {0.04, 0.04, 0.60}, rgb(0.92, 0.92, 0.90)),
      box({0, 0, 0.58}, {0.04, 0.52, 0.04}, rgb(0.15, 0.30, 0.85)),
      box({0, 0, 0.02}, {0.04, 0.52, 0.04}, orange),
      box({0.025, 0.0, 0.51}, {0.01, 0.20, 0.08}, rgb(1.0, 0.85, 0.1)),
      box({-0.06, 0.28, 0.01}, {0.16, 0.06, 0.02}, rgb(0.1, 0.1, 0.1)),
      box({-0.06, -0.28, 0.01}, {0.16, 0.06, 0.02}, rgb(0.1, 0.1, 0.1)),
  };
}

std::vector<Part> plane_parts() {
  const Quat along_x = rot_y(kPi / 2);
  return {
      cylinder({0, 0, 0}, 0.035, 0.46, rgb(0.93, 0.93, 0.95), along_x),
      cylinder({0.245, 0, 0}, 0.022, 0.03, rgb(0.85, 0.1, 0.1), along_x),
      box({0.03, 0, 0.0}, {0.11, 0.60, 0.012}, rgb(0.25, 0.40, 0.75)),
      box({-0.20, 0, 0.06}, {0.07, 0.01, 0.10}, rgb(0.85, 0.12, 0.12)),
      box({-0.21, 0, 0.01}, {0.05, 0.20, 0.01}, rgb(0.25, 0.40, 0.75)),
      box({0.12, 0, 0.035}, {0.07, 0.04, 0.02}, rgb(0.2, 0.2, 0.25)),
  };
}

// Lamp: every splat sits on a ring about z with 4k samples per ring, so the
// asset maps onto itself under 90 degree turns and is close to invariant
// under any turn.
struct Ring {
  double radius;
  double z;
  Vec3 normal_rz;  // normal in the (radial, z) plane
  Vec3 color;
};

SplatAsset lamp_asset(std::uint64_t seed) {
  Rng rng(mix_seeds(seed, 0x1a3f));
  std::vector<Ring> rings;
  // (profile) base disc top, base side, pole, shade, top cap.
  auto add_profile = [&](double r0, double z0, double r1, double z1, Vec3 color, int steps) {
    const Vec3 tangent(r1 - r0, 0.0, z1 - z0);
    const Vec3 normal = Vec3(tangent.z(), 0.0, -tangent.x()).normalized();
    for (int i = 0; i < steps; ++i) {
      const double t = (i + 0.5) / steps;
      rings.push_back({r0 + t * (r1 - r0), z0 + t * (z1 - z0), normal, color});
    }
  };
  const Vec3 base = rgb(0.22, 0.22, 0.25);
  const Vec3 pole = rgb(0.75, 0.75, 0.78);
  const Vec3 shade = rgb(0.96, 0.86, 0.55);
  add_profile(0.0, 0.03, 0.11, 0.03, base, 6);     // base top (normal +z)
  add_profile(0.11, 0.0, 0.11, 0.03, base, 2);     // base rim
  add_profile(0.012, 0.03, 0.012, 0.36, pole, 18); // pole
  add_profile(0.13, 0.33, 0.065, 0.52, shade, 14); // shade side
  add_profile(0.0, 0.52, 0.065, 0.52, rgb(0.98, 0.95, 0.8), 4);

  double total_len = 0.0;
  for (const auto& r : rings) total_len += 2.0 * kPi * std::max(r.radius, 0.01);
  std::vector<Splat> splats;
  for (const auto& ring : rings) {
    const double circ = 2.0 * kPi * std::max(ring.radius, 0.01);
    int n = static_cast<int>(std::lround(kTargetSplats * circ / total_len / 4.0)) * 4;
    n = std::max(n, 4);
    const double spacing = circ / n;
    const double phase = rng.uniform(0.0, 2.0 * kPi / n);
    const Vec3 color = jitter_color(ring.color, rng, 0.02);
    for (int k = 0; k < n; ++k) {
      const double phi = phase + 2.0 * kPi * k / n;
      const Vec3 radial(std::cos(phi), std::sin(phi), 0.0);
      Splat s;
      s.center = ring.radius * radial + Vec3(0, 0, ring.z);
      const Vec3 normal = ring.normal_rz.x() * radial + Vec3(0, 0, ring.normal_rz.z());
      s.orientation = Quat::FromTwoVectors(Vec3::UnitZ(), normal.normalized());
      const double t = std::clamp(0.9 * spacing, 0.006, 0.03);
      s.scales = Vec3(t, t, 0.4 * t);
      s.color = color;
      s.opacity = 0.95;
      splats.push_back(s);
    }
  }
  return SplatAsset::from_splats("lamp", std::move(splats), Symmetry::rotational_z);
}

}  // namespace

std::string_view to_string(Archetype a) {
  switch (a) {
    case Archetype::car: return "car";
    case Archetype::quadrotor: return "quadrotor";
    case Archetype::gate: return "gate";
    case Archetype::plane: return "plane";
    case Archetype::lamp: return "lamp";
  }
  return "unknown";
}

std::optional<Archetype> archetype_from_string(std::string_view s) {
  for (Archetype a : kAllArchetypes)
    if (to_string(a) == s) return a;
  return std::nullopt;
}

SplatAsset generate_archetype(Archetype kind, std::uint64_t seed) {
  if (kind == Archetype::lamp) return lamp_asset(seed);
  std::vector<Part> parts;
  switch (kind) {
    case Archetype::car: parts = car_parts(); break;
    case Archetype::quadrotor: parts = quadrotor_parts(); break;
    case Archetype::gate: parts = gate_parts(); break;
    case Archetype::plane: parts = plane_parts(); break;
    case Archetype::lamp: break;
  }
  Rng rng(mix_seeds(seed, static_cast<std::uint64_t>(kind) + 1));
  return SplatAsset::from_splats(std::string(to_string(kind)), sample_parts(parts, kTargetSplats, rng));
}

SplatAsset generate_environment(int id, std::uint64_t seed) {
  if (id < 0 || id >= kEnvironmentCount) throw InvalidArgument("unknown environment id");
  Rng rng(mix_seeds(seed, 0xE17 + static_cast<std::uint64_t>(id)));
  // Closed room centered on the origin; cameras always stay inside it.
  const double half_w = 4.0, half_h = 2.5;
  const double cell = 0.36;
  std::vector<Vec3> palette;
  if (id == 0) {
    palette = {rgb(0.80, 0.72, 0.58), rgb(0.62, 0.42, 0.28), rgb(0.90, 0.86, 0.78),
               rgb(0.30, 0.45, 0.35), rgb(0.75, 0.30, 0.25), rgb(0.45, 0.35, 0.55)};
  } else {
    palette = {rgb(0.55, 0.60, 0.66), rgb(0.25, 0.30, 0.40), rgb(0.80, 0.82, 0.85),
               rgb(0.35, 0.55, 0.30), rgb(0.20, 0.50, 0.65), rgb(0.60, 0.58, 0.30)};
  }
  std::vector<Splat> splats;
  auto face = [&](const Vec3& origin, const Vec3& u_axis, const Vec3& v_axis, double u_len, double v_len,
                  const Vec3& normal, int palette_offset) {
    const int nu = static_cast<int>(std::ceil(u_len / cell));
    const int nv = static_cast<int>(std::ceil(v_len / cell));
    for (int j = 0; j < nv; ++j) {
      for (int i = 0; i < nu; ++i) {
        // Blocky "poster" texture: 3x3-cell patches share a palette entry.
        const std::uint64_t patch = mix_seeds(static_cast<std::uint64_t>(i / 3 + 101 * (j / 3)),
                                              static_cast<std::uint64_t>(palette_offset) + seed);
        const Vec3 base = palette[(patch + palette_offset) % palette.size()];
        Splat s;
        s.center = origin + u_axis * ((i + rng.uniform(0.3, 0.7)) * u_len / nu) +
                   v_axis * ((j + rng.uniform(0.3, 0.7)) * v_len / nv);
        s.orientation = Quat::FromTwoVectors(Vec3::UnitZ(), normal);
        s.scales = Vec3(0.75 * cell, 0.75 * cell, 0.05);
        s.color = jitter_color(base, rng, 0.08);
        s.opacity = 1.0;
        splats.push_back(s);
      }
    }
  };
  const double W = 2 * half_w, H = 2 * half_h;
  face({-half_w, -half_w, -half_h}, Vec3::UnitX(), Vec3::UnitY(), W, W, Vec3::UnitZ(), 0);   // floor
  face({-half_w, -half_w, half_h}, Vec3::UnitX(), Vec3::UnitY(), W, W, -Vec3::UnitZ(), 2);   // ceiling
  face({-half_w, -half_w, -half_h}, Vec3::UnitX(), Vec3::UnitZ(), W, H, Vec3::UnitY(), 1);   // wall y-
  face({-half_w, half_w, -half_h}, Vec3::UnitX(), Vec3::UnitZ(), W, H, -Vec3::UnitY(), 3);   // wall y+
  face({-half_w, -half_w, -half_h}, Vec3::UnitY(), Vec3::UnitZ(), W, H, Vec3::UnitX(), 4);   // wall x-
  face({half_w, -half_w, -half_h}, Vec3::UnitY(), Vec3::UnitZ(), W, H, -Vec3::UnitX(), 5);   // wall x+
  return SplatAsset::from_splats("env" + std::to_string(id), std::move(splats));
}

}  // namespace falcon
