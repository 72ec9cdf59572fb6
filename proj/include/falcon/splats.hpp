#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "falcon/error.hpp"
#include "falcon/geometry.hpp"

namespace falcon {

/// One anisotropic Gaussian. `scales` are standard deviations in meters.
struct Splat {
  Vec3 center = Vec3::Zero();
  Vec3 scales = Vec3::Constant(0.01);
  Quat orientation = Quat::Identity();
  Vec3 color = Vec3::Constant(0.5);
  double opacity = 1.0;

  void validate() const;
};

enum class Symmetry { none, rotational_z };

std::string_view to_string(Symmetry s);
Symmetry symmetry_from_string(std::string_view s);

class EmptySelection : public Error {
 public:
  explicit EmptySelection(const std::string& m) : Error("empty_selection", m) {}
};

class InvalidAsset : public Error {
 public:
  explicit InvalidAsset(const std::string& m) : Error("invalid_asset", m) {}
};

/// Splats in a canonical frame whose origin is the centroid of the splat
/// centers. `object_size` is the diagonal of the centers' bounding box.
class SplatAsset {
 public:
  SplatAsset() = default;

  /// Re-centers the splats on their centroid and computes object_size.
  static SplatAsset from_splats(std::string name, std::vector<Splat> splats,
                                Symmetry symmetry = Symmetry::none);

  const std::string& name() const { return name_; }
  const std::vector<Splat>& splats() const { return splats_; }
  std::size_t size() const { return splats_.size(); }
  double object_size() const { return object_size_; }
  Symmetry symmetry() const { return symmetry_; }

  /// Axis-aligned bounds of the splat centers.
  Eigen::AlignedBox3d bounds() const;

 private:
  std::string name_;
  std::vector<Splat> splats_;
  double object_size_ = 0.0;
  Symmetry symmetry_ = Symmetry::none;
};

/// Splat in world coordinates with its foreground/background tag.
struct SceneSplat {
  Splat splat;
  bool foreground = false;
};

/// A background asset with an optional object composited into it.
struct Scene {
  std::vector<SceneSplat> splats;
  bool has_object = false;
  Pose object_pose;
  double object_scale = 1.0;
  std::size_t background_count = 0;
  std::size_t object_count = 0;
};

/// Keeps the splats whose centers fall inside `region` and re-centers them.
SplatAsset extract_foreground(const SplatAsset& asset, const Eigen::AlignedBox3d& region,
                              std::string name = "foreground");

/// Background splats stay in world coordinates. Object splats are scaled
/// uniformly (centers and scales) about the object origin, then moved by
/// `pose`.
Scene composite(const SplatAsset& background, const SplatAsset& object, const Pose& pose,
                double scale);
/// Empty-scene variant: background only.
Scene composite(const SplatAsset& background);

/// Transform a canonical-frame point of an object composited with
/// (pose, scale) into world coordinates.
inline Vec3 object_to_world(const Pose& pose, double scale, const Vec3& p) {
  return pose.apply(scale * p);
}

// ---- archetypes and environments ----

enum class Archetype { car, quadrotor, gate, plane, lamp };

inline constexpr Archetype kAllArchetypes[] = {Archetype::car, Archetype::quadrotor, Archetype::gate,
                                               Archetype::plane, Archetype::lamp};

std::string_view to_string(Archetype a);
std::optional<Archetype> archetype_from_string(std::string_view s);

/// Deterministic procedural object of roughly 2000 splats.
SplatAsset generate_archetype(Archetype kind, std::uint64_t seed);

/// Number of built-in background environments.
inline constexpr int kEnvironmentCount = 2;

/// Deterministic room-sized background (ids 0 and 1).
SplatAsset generate_environment(int id, std::uint64_t seed = 0);

/// Resolves an asset reference: "<archetype>:<seed>" (e.g. "car:1"),
/// "env:<id>", or a path to a .splat file.
SplatAsset resolve_asset(const std::string& ref);

// ---- .splat file format ----
//
// "SPLT", u8 version = 1, u32 LE count, then per splat 14 LE float32:
// center xyz, scales xyz, quaternion wxyz, rgb, opacity.
// Sidecar <stem>.json carries {name, object_size, symmetry}.

inline constexpr std::uint8_t kSplatVersion = 1;

std::vector<std::uint8_t> encode_splat(const SplatAsset& asset);
/// Splats are taken as-is (already canonical); metadata comes from the
/// sidecar when provided.
SplatAsset decode_splat(std::span<const std::uint8_t> bytes, const std::string& name,
                        Symmetry symmetry);

void save_splat(const std::filesystem::path& path, const SplatAsset& asset);
SplatAsset load_splat(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& splat_path);

}  // namespace falcon
