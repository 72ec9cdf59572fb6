#include "falcon/datagen.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "falcon/rng.hpp"

namespace falcon {

using nlohmann::json;

void RandomizationConfig::validate() const {
  if (!(radius_min >= 1.0)) throw InvalidArgument("radius_min must be >= 1.0");
  if (!(radius_max >= radius_min)) throw InvalidArgument("radius range is empty");
  if (!(scale_min > 0 && scale_max >= scale_min)) throw InvalidArgument("scale range is invalid");
  if (!(gain_min > 0 && gain_max >= gain_min)) throw InvalidArgument("gain range is invalid");
  if (!(tint_min > 0 && tint_max >= tint_min)) throw InvalidArgument("tint range is invalid");
  if (!(empty_fraction >= 0 && empty_fraction <= 1)) throw InvalidArgument("empty_fraction must be in [0,1]");
  if (!(look_at_jitter >= 0) || !(roll_jitter >= 0)) throw InvalidArgument("jitter must be non-negative");
  if (backgrounds.empty()) throw InvalidArgument("at least one background is required");
  if (width <= 0 || height <= 0) throw InvalidArgument("image size must be positive");
  if (!(focal_ratio > 0)) throw InvalidArgument("focal_ratio must be positive");
}

bool label_in_view(const Image& mask, const Pose& pose_label, const Intrinsics& k) {
  if (count_foreground(mask) < kMinInViewPixels) return false;
  const auto c = project(pose_label.translation(), k);
  return c && c->x() >= -0.5 && c->y() >= -0.5 && c->x() <= k.width - 0.5 && c->y() <= k.height - 0.5;
}

std::uint64_t frame_seed(std::uint64_t dataset_seed, std::size_t index) {
  return mix_seeds(dataset_seed, 0xF00D0000ULL + index);
}

ViewSample sample_view(const RandomizationConfig& cfg, double object_size, std::uint64_t seed) {
  Rng rng(mix_seeds(cfg.seed, seed));
  ViewSample v;
  v.is_empty = rng.uniform() < cfg.empty_fraction;
  const double radius = rng.uniform(cfg.radius_min, cfg.radius_max) * object_size;
  const double cz = rng.uniform(-1.0, 1.0);
  const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double sz = std::sqrt(std::max(0.0, 1.0 - cz * cz));
  const Vec3 dir(sz * std::cos(phi), sz * std::sin(phi), cz);
  const double yaw = rng.uniform(-cfg.look_at_jitter, cfg.look_at_jitter);
  const double pitch = rng.uniform(-cfg.look_at_jitter, cfg.look_at_jitter);
  const double roll = rng.uniform(-cfg.roll_jitter, cfg.roll_jitter);
  v.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  v.lighting.gain = rng.uniform(cfg.gain_min, cfg.gain_max);
  for (int c = 0; c < 3; ++c) v.lighting.tint[c] = rng.uniform(cfg.tint_min, cfg.tint_max);
  v.background = static_cast<std::size_t>(rng.below(cfg.backgrounds.size()));

  const Vec3 eye = radius * dir;
  const Vec3 up = std::abs(dir.z()) > 0.999 ? Vec3::UnitY() : Vec3::UnitZ();
  const Pose aim = look_at(eye, Vec3::Zero(), up);
  // Jitter in the camera frame: yaw about y, pitch about x, roll about z.
  const Quat jitter = rot_y(yaw) * rot_x(pitch) * rot_z(roll);
  v.camera = Pose(aim.rotation() * jitter, eye);
  return v;
}

Scene frame_scene(const SplatAsset& object, const SplatAsset& background, const ViewSample& view) {
  if (view.is_empty) return composite(background);
  return composite(background, object, Pose::identity(), view.scale);
}

namespace {

json pose_json(const Pose& p) {
  const Quat& q = p.rotation();
  const Vec3& t = p.translation();
  return {{"q", {q.w(), q.x(), q.y(), q.z()}}, {"t", {t.x(), t.y(), t.z()}}};
}

Pose pose_from(const json& j) {
  const auto& q = j.at("q");
  const auto& t = j.at("t");
  return Pose(Quat(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(), q.at(3).get<double>()),
              Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()));
}

json intrinsics_json(const Intrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

Intrinsics intrinsics_from(const json& j) {
  Intrinsics k;
  k.fx = j.at("fx");
  k.fy = j.at("fy");
  k.cx = j.at("cx");
  k.cy = j.at("cy");
  k.width = j.at("width");
  k.height = j.at("height");
  return k;
}

json config_json(const RandomizationConfig& c) {
  return {{"radius_range", {c.radius_min, c.radius_max}},
          {"scale_range", {c.scale_min, c.scale_max}},
          {"gain_range", {c.gain_min, c.gain_max}},
          {"tint_range", {c.tint_min, c.tint_max}},
          {"empty_fraction", c.empty_fraction},
          {"look_at_jitter", c.look_at_jitter},
          {"roll_jitter", c.roll_jitter},
          {"backgrounds", c.backgrounds},
          {"width", c.width},
          {"height", c.height},
          {"focal_ratio", c.focal_ratio},
          {"seed", c.seed}};
}

RandomizationConfig config_from(const json& j) {
  RandomizationConfig c;
  c.radius_min = j.at("radius_range").at(0);
  c.radius_max = j.at("radius_range").at(1);
  c.scale_min = j.at("scale_range").at(0);
  c.scale_max = j.at("scale_range").at(1);
  c.gain_min = j.at("gain_range").at(0);
  c.gain_max = j.at("gain_range").at(1);
  c.tint_min = j.at("tint_range").at(0);
  c.tint_max = j.at("tint_range").at(1);
  c.empty_fraction = j.at("empty_fraction");
  c.look_at_jitter = j.at("look_at_jitter");
  c.roll_jitter = j.at("roll_jitter");
  c.backgrounds = j.at("backgrounds").get<std::vector<std::string>>();
  c.width = j.at("width");
  c.height = j.at("height");
  c.focal_ratio = j.at("focal_ratio");
  c.seed = j.at("seed");
  return c;
}

std::string frame_name(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%05zu.%s", i, ext);
  return buf;
}

}  // namespace

std::string manifest_to_json(const Manifest& m) {
  json frames = json::array();
  for (const auto& f : m.frames) {
    frames.push_back({{"id", f.id},
                      {"rgb", f.rgb},
                      {"mask", f.mask},
                      {"in_view", f.in_view},
                      {"pose", pose_json(f.pose_label)},
                      {"camera", pose_json(f.camera)},
                      {"intrinsics", intrinsics_json(f.intrinsics)},
                      {"scale", f.scale},
                      {"background", f.background},
                      {"lighting",
                       {{"gain", f.lighting.gain},
                        {"tint", {f.lighting.tint.x(), f.lighting.tint.y(), f.lighting.tint.z()}}}},
                      {"seed", f.seed}});
  }
  const json doc = {{"version", m.version}, {"object", m.object}, {"config", config_json(m.config)},
                    {"frames", frames}};
  return doc.dump(1) + "\n";
}

Manifest manifest_from_json(const std::string& text) {
  const json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw InvalidArgument("manifest: not a JSON object");
  try {
    Manifest m;
    m.version = doc.at("version");
    if (m.version != kManifestVersion)
      throw InvalidArgument("manifest: unsupported version " + std::to_string(m.version));
    m.object = doc.at("object");
    m.config = config_from(doc.at("config"));
    for (const auto& j : doc.at("frames")) {
      LabeledFrame f;
      f.id = j.at("id");
      f.rgb = j.at("rgb");
      f.mask = j.at("mask");
      f.in_view = j.at("in_view");
      f.pose_label = pose_from(j.at("pose"));
      f.camera = j.contains("camera") ? pose_from(j.at("camera")) : inverse(f.pose_label);
      f.intrinsics = intrinsics_from(j.at("intrinsics"));
      f.scale = j.at("scale");
      f.background = j.at("background");
      f.lighting.gain = j.at("lighting").at("gain");
      const auto& tint = j.at("lighting").at("tint");
      f.lighting.tint = Vec3(tint.at(0), tint.at(1), tint.at(2));
      f.seed = j.at("seed");
      m.frames.push_back(std::move(f));
    }
    return m;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("manifest: ") + e.what());
  }
}

void save_manifest(const std::filesystem::path& dir, const Manifest& m) {
  std::ofstream out(dir / kManifestName, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / kManifestName).string());
  out << manifest_to_json(m);
  if (!out) throw IoError("write failed: " + (dir / kManifestName).string());
}

Manifest load_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifestName, std::ios::binary);
  if (!in) throw IoError("cannot open " + (dir / kManifestName).string());
  std::stringstream ss;
  ss << in.rdbuf();
  return manifest_from_json(ss.str());
}

LoadedFrame load_frame(const std::filesystem::path& dir, const LabeledFrame& f) {
  return {f, read_pnm(dir / f.rgb), read_pnm(dir / f.mask)};
}

DatasetStats generate_dataset(const SplatAsset& object, const std::string& object_ref,
                              const RandomizationConfig& cfg, std::size_t count,
                              const std::filesystem::path& out_dir, const ProgressFn& progress) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "rgb", ec);
  if (!ec) std::filesystem::create_directories(out_dir / "mask", ec);
  if (ec) throw IoError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());

  std::vector<SplatAsset> backgrounds;
  for (const auto& ref : cfg.backgrounds) backgrounds.push_back(resolve_asset(ref));
  const Intrinsics k = cfg.intrinsics();

  Manifest manifest;
  manifest.object = object_ref;
  manifest.config = cfg;
  manifest.frames.resize(count);
  std::vector<std::uint8_t> empty_flags(count, 0);

  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t done = 0;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        LabeledFrame& f = manifest.frames[i];
        f.id = i;
        f.seed = frame_seed(cfg.seed, i);
        const ViewSample view = sample_view(cfg, object.object_size(), f.seed);
        RenderOutput out =
            render(frame_scene(object, backgrounds[view.background], view), view.camera, k, view.lighting);
        f.rgb = "rgb/" + frame_name(i, "ppm");
        f.mask = "mask/" + frame_name(i, "pgm");
        empty_flags[i] = view.is_empty ? 1 : 0;
        f.pose_label = relative_pose(view.camera, Pose::identity());
        f.in_view = !view.is_empty && label_in_view(out.mask, f.pose_label, k);
        // Frames that fail the in-view test carry no object label at all.
        if (!f.in_view) std::fill(out.mask.data.begin(), out.mask.data.end(), 0.0f);
        f.camera = view.camera;
        f.intrinsics = k;
        f.scale = view.scale;
        f.background = cfg.backgrounds[view.background];
        f.lighting = view.lighting;
        write_pnm(out_dir / f.rgb, out.rgb);
        write_pnm(out_dir / f.mask, out.mask);
        std::lock_guard lock(mu);
        ++done;
        if (progress) progress(static_cast<double>(done) / static_cast<double>(count));
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next.store(count);
        return;
      }
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), 16));
  if (n_threads == 1 || count < 2) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  save_manifest(out_dir, manifest);
  DatasetStats stats;
  stats.frames = count;
  for (const auto& f : manifest.frames) {
    stats.in_view += f.in_view ? 1 : 0;
  }
  for (auto e : empty_flags) stats.empty += e;
  stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (progress && count == 0) progress(1.0);
  return stats;
}

}  // namespace falcon
