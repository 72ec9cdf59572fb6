#include "falcon/splats.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "falcon/image.hpp"

namespace falcon {

void Splat::validate() const {
  if (!center.allFinite()) throw InvalidAsset("splat center is not finite");
  if (!(scales.array() > 0).all()) throw InvalidAsset("splat scales must be positive");
  if (!(opacity > 0 && opacity <= 1)) throw InvalidAsset("splat opacity must be in (0,1]");
  if (!(color.array() >= 0).all() || !(color.array() <= 1).all())
    throw InvalidAsset("splat color must be in [0,1]");
}

std::string_view to_string(Symmetry s) { return s == Symmetry::none ? "none" : "rotational-z"; }

Symmetry symmetry_from_string(std::string_view s) {
  if (s == "none") return Symmetry::none;
  if (s == "rotational-z") return Symmetry::rotational_z;
  throw InvalidAsset("unknown symmetry '" + std::string(s) + "'");
}

SplatAsset SplatAsset::from_splats(std::string name, std::vector<Splat> splats, Symmetry symmetry) {
  if (splats.empty()) throw InvalidAsset("asset '" + name + "' has no splats");
  Vec3 centroid = Vec3::Zero();
  for (const auto& s : splats) {
    s.validate();
    centroid += s.center;
  }
  centroid /= static_cast<double>(splats.size());
  Eigen::AlignedBox3d box;
  for (const auto& s : splats) box.extend(s.center);
  // Already-canonical input (e.g. float32 round trips) is left bit-identical.
  if (centroid.norm() > 1e-6 * box.diagonal().norm()) {
    box.setEmpty();
    for (auto& s : splats) {
      s.center -= centroid;
      box.extend(s.center);
    }
  }
  SplatAsset a;
  a.name_ = std::move(name);
  a.splats_ = std::move(splats);
  a.symmetry_ = symmetry;
  a.object_size_ = box.diagonal().norm();
  if (!(a.object_size_ > 0)) throw InvalidAsset("asset '" + a.name_ + "' has zero extent");
  return a;
}

Eigen::AlignedBox3d SplatAsset::bounds() const {
  Eigen::AlignedBox3d box;
  for (const auto& s : splats_) box.extend(s.center);
  return box;
}

SplatAsset extract_foreground(const SplatAsset& asset, const Eigen::AlignedBox3d& region,
                              std::string name) {
  if (region.isEmpty() || (region.sizes().array() <= 0).any())
    throw InvalidArgument("extract_foreground: degenerate region");
  std::vector<Splat> kept;
  for (const auto& s : asset.splats())
    if (region.contains(s.center)) kept.push_back(s);
  if (kept.empty()) throw EmptySelection("no splat center inside the selection box");
  return SplatAsset::from_splats(std::move(name), std::move(kept), asset.symmetry());
}

Scene composite(const SplatAsset& background) {
  Scene scene;
  scene.splats.reserve(background.size());
  for (const auto& s : background.splats()) scene.splats.push_back({s, false});
  scene.background_count = background.size();
  return scene;
}

Scene composite(const SplatAsset& background, const SplatAsset& object, const Pose& pose,
                double scale) {
  if (!(scale > 0)) throw InvalidArgument("composite: scale must be positive");
  Scene scene = composite(background);
  scene.splats.reserve(background.size() + object.size());
  for (const auto& s : object.splats()) {
    Splat w = s;
    w.center = object_to_world(pose, scale, s.center);
    w.scales = s.scales * scale;
    w.orientation = (pose.rotation() * s.orientation).normalized();
    scene.splats.push_back({w, true});
  }
  scene.has_object = true;
  scene.object_pose = pose;
  scene.object_scale = scale;
  scene.object_count = object.size();
  return scene;
}

// ---- .splat ----

namespace {

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32_le(std::vector<std::uint8_t>& out, double v) {
  put_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

std::uint32_t get_u32_le(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

double get_f32_le(std::span<const std::uint8_t> b, std::size_t at) {
  return std::bit_cast<float>(get_u32_le(b, at));
}

constexpr std::size_t kFloatsPerSplat = 14;
constexpr std::size_t kHeaderBytes = 9;

}  // namespace

std::vector<std::uint8_t> encode_splat(const SplatAsset& asset) {
  std::vector<std::uint8_t> out = {'S', 'P', 'L', 'T', kSplatVersion};
  out.reserve(kHeaderBytes + asset.size() * kFloatsPerSplat * 4);
  put_u32_le(out, static_cast<std::uint32_t>(asset.size()));
  for (const auto& s : asset.splats()) {
    for (int i = 0; i < 3; ++i) put_f32_le(out, s.center[i]);
    for (int i = 0; i < 3; ++i) put_f32_le(out, s.scales[i]);
    put_f32_le(out, s.orientation.w());
    put_f32_le(out, s.orientation.x());
    put_f32_le(out, s.orientation.y());
    put_f32_le(out, s.orientation.z());
    for (int i = 0; i < 3; ++i) put_f32_le(out, s.color[i]);
    put_f32_le(out, s.opacity);
  }
  return out;
}

SplatAsset decode_splat(std::span<const std::uint8_t> bytes, const std::string& name,
                        Symmetry symmetry) {
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), "SPLT", 4) != 0)
    throw InvalidAsset(".splat: bad magic");
  if (bytes[4] != kSplatVersion)
    throw InvalidAsset(".splat: unsupported version " + std::to_string(bytes[4]));
  const std::uint32_t count = get_u32_le(bytes, 5);
  if ((bytes.size() - kHeaderBytes) != static_cast<std::size_t>(count) * kFloatsPerSplat * 4)
    throw InvalidAsset(".splat: size does not match splat count");
  std::vector<Splat> splats(count);
  std::size_t at = kHeaderBytes;
  auto next = [&] {
    const double v = get_f32_le(bytes, at);
    at += 4;
    return v;
  };
  for (auto& s : splats) {
    for (int i = 0; i < 3; ++i) s.center[i] = next();
    for (int i = 0; i < 3; ++i) s.scales[i] = next();
    const double w = next(), x = next(), y = next(), z = next();
    s.orientation = Quat(w, x, y, z);
    if (!(s.orientation.norm() > 0)) throw InvalidAsset(".splat: zero quaternion");
    if (std::abs(s.orientation.norm() - 1.0) > 1e-6) s.orientation.normalize();
    for (int i = 0; i < 3; ++i) s.color[i] = next();
    s.opacity = next();
  }
  return SplatAsset::from_splats(name, std::move(splats), symmetry);
}

std::filesystem::path sidecar_path(const std::filesystem::path& splat_path) {
  auto p = splat_path;
  p.replace_extension(".json");
  return p;
}

void save_splat(const std::filesystem::path& path, const SplatAsset& asset) {
  write_file(path, encode_splat(asset));
  const nlohmann::json meta = {{"name", asset.name()},
                               {"object_size", asset.object_size()},
                               {"symmetry", std::string(to_string(asset.symmetry()))}};
  std::ofstream out(sidecar_path(path));
  if (!out) throw IoError("cannot write " + sidecar_path(path).string());
  out << meta.dump(2) << "\n";
}

SplatAsset load_splat(const std::filesystem::path& path) {
  std::string name = path.stem().string();
  Symmetry symmetry = Symmetry::none;
  const auto side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    std::ifstream in(side);
    const auto meta = nlohmann::json::parse(in, nullptr, false);
    if (meta.is_discarded() || !meta.is_object()) throw InvalidAsset("malformed sidecar " + side.string());
    name = meta.value("name", name);
    symmetry = symmetry_from_string(meta.value("symmetry", std::string("none")));
  }
  return decode_splat(read_file(path), name, symmetry);
}

SplatAsset resolve_asset(const std::string& ref) {
  const auto colon = ref.find(':');
  if (colon != std::string::npos) {
    const std::string head = ref.substr(0, colon);
    const std::string tail = ref.substr(colon + 1);
    std::uint64_t n = 0;
    try {
      std::size_t used = 0;
      n = std::stoull(tail, &used);
      if (used != tail.size()) throw InvalidArgument("");
    } catch (const std::exception&) {
      throw InvalidArgument("bad asset reference '" + ref + "'");
    }
    if (head == "env") {
      if (n >= static_cast<std::uint64_t>(kEnvironmentCount))
        throw InvalidArgument("unknown environment '" + ref + "'");
      return generate_environment(static_cast<int>(n));
    }
    if (auto kind = archetype_from_string(head)) return generate_archetype(*kind, n);
    throw InvalidArgument("unknown archetype in asset reference '" + ref + "'");
  }
  if (!std::filesystem::exists(ref)) throw IoError("asset file not found: " + ref);
  return load_splat(ref);
}

}  // namespace falcon
