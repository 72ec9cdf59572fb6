#pragma once

#include "falcon/geometry.hpp"
#include "falcon/image.hpp"
#include "falcon/splats.hpp"

namespace falcon {

/// Multiplicative lighting applied to splat colors: color * tint * gain,
/// clamped to [0,1]. Geometry and labels are unaffected.
struct Lighting {
  double gain = 1.0;
  Vec3 tint = Vec3::Ones();

  friend bool operator==(const Lighting&, const Lighting&) = default;
};

struct RenderOptions {
  float mask_threshold = 0.5f;
  /// Pixels stop accumulating once transmittance drops below this.
  float min_transmittance = 1e-3f;
  /// Added to the diagonal of every projected 2D covariance (px^2).
  double covariance_blur = 0.3;
  /// Footprint cutoff in standard deviations.
  double cutoff_sigma = 3.0;
  /// Splats closer than this (camera z, meters) are skipped.
  double near_plane = 0.01;
  /// Splats whose centers project further than this many image sizes from
  /// the principal point are culled.
  double guard_band = 1.3;
};

struct RenderOutput {
  Image rgb;       // 3 channels
  Image fg_alpha;  // accumulated foreground opacity
  Image mask;      // fg_alpha > threshold, values {0,1}
};

/// EWA splatting: each Gaussian's camera-space covariance is pushed through
/// the perspective Jacobian at its center; footprints are composited front
/// to back. Empty pixels stay black. Deterministic for identical inputs.
RenderOutput render(const Scene& scene, const Pose& camera, const Intrinsics& k,
                    const Lighting& lighting = {}, const RenderOptions& options = {});

/// Mean local SSIM of the luminance of `a` and `b`: 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, L = 1, over valid window positions.
/// Throws DimensionMismatch if sizes differ.
double ssim(const Image& a, const Image& b);

}  // namespace falcon
