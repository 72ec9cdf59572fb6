#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "falcon/geometry.hpp"
#include "falcon/renderer.hpp"
#include "falcon/splats.hpp"

namespace falcon {

struct RandomizationConfig {
  double radius_min = 1.5;  // multiples of object_size
  double radius_max = 4.0;
  double scale_min = 0.8;
  double scale_max = 1.2;
  double gain_min = 0.5;
  double gain_max = 1.5;
  double tint_min = 0.8;
  double tint_max = 1.2;
  double empty_fraction = 0.1;
  double look_at_jitter = 0.1;  // radians
  double roll_jitter = 0.2;     // radians
  std::vector<std::string> backgrounds = {"env:0", "env:1"};
  int width = 256;
  int height = 256;
  double focal_ratio = 1.0;  // fx = focal_ratio * width
  std::uint64_t seed = 0;

  void validate() const;
  Intrinsics intrinsics() const { return Intrinsics::centered(width, height, focal_ratio); }
};

struct ViewSample {
  Pose camera;  // camera-to-world
  double scale = 1.0;
  Lighting lighting;
  std::size_t background = 0;  // index into cfg.backgrounds
  bool is_empty = false;
};

/// A rendered frame counts as in view when its mask has at least this many
/// pixels and the object origin projects inside the image.
inline constexpr std::size_t kMinInViewPixels = 25;
bool label_in_view(const Image& mask, const Pose& pose_label, const Intrinsics& k);

/// Per-frame seed for frame `index` of a dataset generated with `dataset_seed`.
std::uint64_t frame_seed(std::uint64_t dataset_seed, std::size_t index);

/// Camera on a sphere of radius U(r_min, r_max) * object_size around the
/// origin, uniform direction, looking at the origin with jittered aim and
/// roll. Deterministic given (cfg.seed, seed).
ViewSample sample_view(const RandomizationConfig& cfg, double object_size, std::uint64_t seed);

struct LabeledFrame {
  std::size_t id = 0;
  std::string rgb;   // path relative to the dataset directory
  std::string mask;  // path relative to the dataset directory
  bool in_view = false;
  Pose pose_label;  // object in camera frame
  Pose camera;      // camera-to-world; the object sits at the world origin
  Intrinsics intrinsics;
  double scale = 1.0;
  std::string background;
  Lighting lighting;
  std::uint64_t seed = 0;
};

struct Manifest {
  int version = 1;
  std::string object;  // asset reference, see resolve_asset
  RandomizationConfig config;
  std::vector<LabeledFrame> frames;
};

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";

struct DatasetStats {
  std::size_t frames = 0;
  std::size_t empty = 0;
  std::size_t in_view = 0;
  double seconds = 0.0;
};

using ProgressFn = std::function<void(double fraction)>;

/// Renders `count` auto-labeled frames into `out_dir` (rgb/, mask/,
/// manifest.json). The object sits at the world origin with identity pose.
/// Frames are rendered in parallel; outputs do not depend on scheduling.
DatasetStats generate_dataset(const SplatAsset& object, const std::string& object_ref,
                              const RandomizationConfig& cfg, std::size_t count,
                              const std::filesystem::path& out_dir, const ProgressFn& progress = {});

/// Builds the scene for one frame (object absent for empty frames).
Scene frame_scene(const SplatAsset& object, const SplatAsset& background, const ViewSample& view);

std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const std::string& text);
void save_manifest(const std::filesystem::path& dir, const Manifest& m);
Manifest load_manifest(const std::filesystem::path& dir);

/// A frame with its images loaded.
struct LoadedFrame {
  LabeledFrame label;
  Image rgb;
  Image mask;
};
LoadedFrame load_frame(const std::filesystem::path& dir, const LabeledFrame& f);

}  // namespace falcon
