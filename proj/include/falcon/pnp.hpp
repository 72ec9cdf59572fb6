#pragma once

#include <cstdint>
#include <vector>

#include "falcon/datagen.hpp"
#include "falcon/error.hpp"
#include "falcon/geometry.hpp"
#include "falcon/splats.hpp"

namespace falcon {

class TooFewSplats : public Error {
 public:
  explicit TooFewSplats(const std::string& m) : Error("too_few_splats", m) {}
};
class DegenerateConfiguration : public Error {
 public:
  explicit DegenerateConfiguration(const std::string& m) : Error("degenerate_configuration", m) {}
};
class NotVisible : public Error {
 public:
  explicit NotVisible(const std::string& m) : Error("not_visible", m) {}
};

struct Correspondence {
  Vec3 object_point;  // meters, object frame
  Vec2 pixel;
  double noise_sigma = 0.0;
};

struct PnpResult {
  Pose pose;  // object in camera frame
  double rms = 0.0;  // pixels
  int iterations = 0;
  bool converged = false;
};

/// Thrown when refinement runs out of iterations; carries the best iterate.
class NoConvergence : public Error {
 public:
  NoConvergence(const std::string& m, PnpResult best) : Error("no_convergence", m), best_(best) {}
  const PnpResult& best() const { return best_; }

 private:
  PnpResult best_;
};

/// Greedy farthest-point sampling over splat centers, seeded with the splat
/// closest to the centroid.
std::vector<Vec3> select_keypoints(const SplatAsset& asset, std::size_t n);

struct PnpOptions {
  int max_iterations = 50;
  double step_tolerance = 1e-10;
};

/// Normalized DLT, polar projection onto SO(3), then Gauss-Newton on the
/// left tangent with step halving.
PnpResult solve_pnp(const std::vector<Correspondence>& corr, const Intrinsics& k, const PnpOptions& opt = {});

inline constexpr double kDefaultClickNoise = 2.0;  // pixels

/// Simulated manual clicking: projects the (scaled) keypoints through the
/// frame's ground-truth pose, adds Gaussian pixel noise seeded by the frame,
/// clamps to the image, and solves. Keypoints behind the camera or outside
/// the image are skipped.
std::vector<Correspondence> simulate_clicks(const LabeledFrame& frame, const std::vector<Vec3>& keypoints,
                                            double noise_sigma);
PnpResult pnp_estimate_frame(const LabeledFrame& frame, const std::vector<Vec3>& keypoints,
                             double noise_sigma = kDefaultClickNoise);

}  // namespace falcon
