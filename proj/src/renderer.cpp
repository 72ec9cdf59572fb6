#include "falcon/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace falcon {

namespace {

struct Projected {
  double depth;
  std::uint32_t index;
  float u, v;
  // Inverse 2D covariance (conic): q = a dx^2 + 2 b dx dy + c dy^2.
  float a, b, c;
  float r, g, bl;
  float opacity;
  bool foreground;
  int x0, x1, y0, y1;
};

}  // namespace

RenderOutput render(const Scene& scene, const Pose& camera, const Intrinsics& k,
                    const Lighting& lighting, const RenderOptions& opt) {
  k.validate();
  const Pose view = inverse(camera);
  const Mat3 rcw = view.rotation_matrix();
  const Vec3 tcw = view.translation();
  const double cut2 = opt.cutoff_sigma * opt.cutoff_sigma;

  std::vector<Projected> proj;
  proj.reserve(scene.splats.size());
  for (std::size_t i = 0; i < scene.splats.size(); ++i) {
    const Splat& s = scene.splats[i].splat;
    const Vec3 p = rcw * s.center + tcw;
    if (p.z() <= opt.near_plane) continue;
    // Guard band: centers far outside the frustum have unstable Jacobians.
    const double gx = p.x() / p.z() * k.fx, gy = p.y() / p.z() * k.fy;
    if (std::abs(gx) > opt.guard_band * k.width || std::abs(gy) > opt.guard_band * k.height) continue;

    const Mat3 rs = rcw * s.orientation.toRotationMatrix();
    const Mat3 cov = rs * s.scales.array().square().matrix().asDiagonal() * rs.transpose();
    const double iz = 1.0 / p.z();
    Eigen::Matrix<double, 2, 3> j;
    j << k.fx * iz, 0.0, -k.fx * p.x() * iz * iz, 0.0, k.fy * iz, -k.fy * p.y() * iz * iz;
    Eigen::Matrix2d cov2 = j * cov * j.transpose();
    cov2(0, 0) += opt.covariance_blur;
    cov2(1, 1) += opt.covariance_blur;
    const double det = cov2.determinant();
    if (!(det > 0)) continue;

    const double u = k.fx * p.x() * iz + k.cx;
    const double v = k.fy * p.y() * iz + k.cy;
    // Bounding box of the cutoff ellipse.
    const double ru = opt.cutoff_sigma * std::sqrt(cov2(0, 0));
    const double rv = opt.cutoff_sigma * std::sqrt(cov2(1, 1));
    const double fx0 = std::ceil(u - ru), fx1 = std::floor(u + ru);
    const double fy0 = std::ceil(v - rv), fy1 = std::floor(v + rv);
    if (fx1 < 0 || fy1 < 0 || fx0 > k.width - 1 || fy0 > k.height - 1) continue;

    Projected pr;
    pr.depth = p.z();
    pr.index = static_cast<std::uint32_t>(i);
    pr.u = static_cast<float>(u);
    pr.v = static_cast<float>(v);
    pr.a = static_cast<float>(cov2(1, 1) / det);
    pr.b = static_cast<float>(-cov2(0, 1) / det);
    pr.c = static_cast<float>(cov2(0, 0) / det);
    const Vec3 lit = (s.color.array() * lighting.tint.array() * lighting.gain).min(1.0).max(0.0);
    pr.r = static_cast<float>(lit.x());
    pr.g = static_cast<float>(lit.y());
    pr.bl = static_cast<float>(lit.z());
    pr.opacity = static_cast<float>(s.opacity);
    pr.foreground = scene.splats[i].foreground;
    pr.x0 = static_cast<int>(std::max(0.0, fx0));
    pr.x1 = static_cast<int>(std::min<double>(k.width - 1, fx1));
    pr.y0 = static_cast<int>(std::max(0.0, fy0));
    pr.y1 = static_cast<int>(std::min<double>(k.height - 1, fy1));
    proj.push_back(pr);
  }
  std::sort(proj.begin(), proj.end(), [](const Projected& l, const Projected& r) {
    return l.depth != r.depth ? l.depth < r.depth : l.index < r.index;
  });

  const std::size_t npix = static_cast<std::size_t>(k.width) * k.height;
  std::vector<float> trans(npix, 1.0f);
  RenderOutput out{Image(k.width, k.height, 3), Image(k.width, k.height, 1), Image(k.width, k.height, 1)};
  float* rgb = out.rgb.data.data();
  float* fg = out.fg_alpha.data.data();
  const float cutf = static_cast<float>(cut2);
  const float tmin = opt.min_transmittance;

  for (const Projected& s : proj) {
    for (int y = s.y0; y <= s.y1; ++y) {
      const float dy = static_cast<float>(y) - s.v;
      const std::size_t row = static_cast<std::size_t>(y) * k.width;
      for (int x = s.x0; x <= s.x1; ++x) {
        const float dx = static_cast<float>(x) - s.u;
        const float q = s.a * dx * dx + 2.0f * s.b * dx * dy + s.c * dy * dy;
        if (q > cutf) continue;
        const std::size_t p = row + x;
        const float t = trans[p];
        if (t < tmin) continue;
        const float alpha = s.opacity * std::exp(-0.5f * q);
        const float w = alpha * t;
        rgb[3 * p] += w * s.r;
        rgb[3 * p + 1] += w * s.g;
        rgb[3 * p + 2] += w * s.bl;
        if (s.foreground) fg[p] += w;
        trans[p] = t * (1.0f - alpha);
      }
    }
  }
  for (float& v : out.rgb.data) v = std::clamp(v, 0.0f, 1.0f);
  for (std::size_t p = 0; p < npix; ++p) {
    fg[p] = std::clamp(fg[p], 0.0f, 1.0f);
    out.mask.data[p] = fg[p] > opt.mask_threshold ? 1.0f : 0.0f;
  }
  return out;
}

}  // namespace falcon
