#include "falcon/perception.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>

#include <json.hpp>

#include "falcon/perception_net.hpp"
#include "falcon/renderer.hpp"
#include "falcon/rng.hpp"

namespace falcon {

using nlohmann::json;

// ---------------------------------------------------------------- model

std::vector<std::pair<std::string, std::vector<int>>> param_layout(const Architecture& a) {
  const auto [c1, c2, c3] = a.encoder;
  const auto [d0, d1, d2] = a.decoder;
  return {
      {"enc1.w", {c1, 3, 3, 3}},       {"enc1.b", {c1}},
      {"enc2.w", {c2, c1, 3, 3}},      {"enc2.b", {c2}},
      {"enc3.w", {c3, c2, 3, 3}},      {"enc3.b", {c3}},
      {"dec0.w", {d0, c3, 3, 3}},      {"dec0.b", {d0}},
      {"dec1.w", {d1, d0 + c2, 3, 3}}, {"dec1.b", {d1}},
      {"dec2.w", {d2, d1 + c1, 3, 3}}, {"dec2.b", {d2}},
      {"dec3.w", {1, d2 + 3, 3, 3}},       {"dec3.b", {1}},
      {"gate.w", {c3, d0, 1, 1}},      {"gate.b", {c3}},
      {"fc1.w", {c3, a.hidden}},       {"fc1.b", {a.hidden}},
      {"fc2.w", {a.hidden, 7}},        {"fc2.b", {7}},
  };
}

const ParamTensor& PerceptionModel::param(const std::string& name) const {
  for (const auto& p : params)
    if (p.name == name) return p;
  throw InvalidArgument("model has no parameter '" + name + "'");
}

ParamTensor& PerceptionModel::param(const std::string& name) {
  return const_cast<ParamTensor&>(static_cast<const PerceptionModel&>(*this).param(name));
}

std::size_t PerceptionModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.data.size();
  return n;
}

namespace {

void validate_arch(const Architecture& a) {
  if (a.input_width <= 0 || a.input_height <= 0 || a.input_width % 8 || a.input_height % 8)
    throw InvalidArgument("architecture: input size must be a positive multiple of 8");
  for (int c : a.encoder)
    if (c <= 0) throw InvalidArgument("architecture: channel widths must be positive");
  for (int c : a.decoder)
    if (c <= 0) throw InvalidArgument("architecture: channel widths must be positive");
  if (a.hidden <= 0 || a.min_mask_area < 0) throw InvalidArgument("architecture: bad head size");
}

Pose pose_from_raw(const std::array<double, 7>& r) {
  Quat q(r[0], r[1], r[2], r[3]);
  if (!(q.norm() > 1e-12)) q = Quat::Identity();
  return Pose(q.normalized(), Vec3(r[4], r[5], r[6]));
}

}  // namespace

PerceptionModel init_model(const Architecture& arch, std::uint64_t seed) {
  validate_arch(arch);
  PerceptionModel m;
  m.arch = arch;
  Rng rng(mix_seeds(seed, 0x5EED));
  for (const auto& [name, shape] : param_layout(arch)) {
    ParamTensor t{name, shape, std::vector<float>(ad::numel(shape), 0.0f)};
    const bool is_weight = name.ends_with(".w");
    if (is_weight) {
      const std::size_t fan_in = shape.size() == 4 ? static_cast<std::size_t>(shape[1]) * shape[2] * shape[3]
                                                   : static_cast<std::size_t>(shape[0]);
      double std = std::sqrt(2.0 / static_cast<double>(fan_in));
      if (name == "fc2.w") std = 0.01;
      for (float& v : t.data) v = static_cast<float>(std * rng.normal());
    }
    if (name == "fc2.b") t.data[0] = 1.0f;  // identity rotation
    if (name == "dec3.b") t.data[0] = -3.0f;  // most pixels are background
    m.params.push_back(std::move(t));
  }
  return m;
}

Image prepare_input(const Image& rgb, const Architecture& arch) {
  if (rgb.channels != 3) throw InvalidArgument("expected a 3-channel image");
  return resize(rgb, arch.input_width, arch.input_height);
}

Image prepare_mask(const Image& mask, const Architecture& arch) {
  if (mask.channels != 1) throw InvalidArgument("expected a single-channel mask");
  if (mask.width == arch.input_width && mask.height == arch.input_height) return mask;
  return threshold(resize(mask, arch.input_width, arch.input_height), 0.5f);
}

namespace {

PerceptionOutput unpack_output(const Architecture& arch, const NetOutputs<float>& net, std::size_t index) {
  PerceptionOutput out;
  const std::size_t plane = static_cast<std::size_t>(arch.input_width) * arch.input_height;
  out.mask_prob = Image(arch.input_width, arch.input_height, 1);
  const auto mv = net.mask.value();
  std::copy(mv.begin() + index * plane, mv.begin() + (index + 1) * plane, out.mask_prob.data.begin());
  const auto rv = net.raw.value();
  for (int i = 0; i < 7; ++i) out.raw[i] = rv[index * 7 + i];
  out.pose = pose_from_raw(out.raw);
  out.mask_area = count_foreground(out.mask_prob);
  out.in_view = out.mask_area >= static_cast<std::size_t>(arch.min_mask_area);
  return out;
}

}  // namespace

PerceptionOutput forward(const PerceptionModel& model, const Image& rgb, const ForwardOptions& opt) {
  if (rgb.width != model.arch.input_width || rgb.height != model.arch.input_height || rgb.channels != 3)
    throw ResolutionMismatch("model expects " + std::to_string(model.arch.input_width) + "x" +
                             std::to_string(model.arch.input_height) + "x3, got " + std::to_string(rgb.width) +
                             "x" + std::to_string(rgb.height) + "x" + std::to_string(rgb.channels));
  const auto params = make_params<float>(model, false);
  const auto net = build_network(params, pack_images<float>({&rgb}), opt);
  return unpack_output(model.arch, net, 0);
}

PerceptionOutput infer(const PerceptionModel& model, const Image& rgb) {
  return forward(model, prepare_input(rgb, model.arch));
}

// ---------------------------------------------------------------- loss

void TrainConfig::validate() const {
  if (stage1_epochs < 0 || stage2_epochs < 0) throw InvalidArgument("epochs must be >= 0");
  if (batch_size <= 0) throw InvalidArgument("batch size must be positive");
  if (!(learning_rate > 0)) throw InvalidArgument("learning rate must be positive");
  if (lambda_seg < 0 || lambda_pose < 0 || lambda_reproj < 0) throw InvalidArgument("loss weights must be >= 0");
  if (reproj_every < 0) throw InvalidArgument("reproj_every must be >= 0");
  if (!(fd_rotation_step > 0 && fd_translation_step > 0)) throw InvalidArgument("finite-difference steps must be positive");
  validate_arch(arch);
}

ReprojectionRenderer::ReprojectionRenderer(SplatAsset object, std::map<std::string, SplatAsset> backgrounds,
                                           Architecture arch)
    : object_(std::move(object)), backgrounds_(std::move(backgrounds)), arch_(arch) {}

ReprojectionRenderer ReprojectionRenderer::for_manifest(const Manifest& m, const Architecture& arch) {
  std::map<std::string, SplatAsset> bgs;
  for (const auto& ref : m.config.backgrounds) bgs.emplace(ref, resolve_asset(ref));
  for (const auto& f : m.frames)
    if (!bgs.contains(f.background)) bgs.emplace(f.background, resolve_asset(f.background));
  return ReprojectionRenderer(resolve_asset(m.object), std::move(bgs), arch);
}

Image ReprojectionRenderer::render(const LabeledFrame& frame, const Pose& object_in_camera) const {
  const auto it = backgrounds_.find(frame.background);
  if (it == backgrounds_.end()) throw InvalidArgument("unknown background '" + frame.background + "'");
  const Pose object_world = compose(frame.camera, object_in_camera);
  const Scene scene = composite(it->second, object_, object_world, frame.scale);
  const RenderOutput out = falcon::render(scene, frame.camera, frame.intrinsics, frame.lighting);
  return prepare_input(out.rgb, arch_);
}

double pose_loss(const Pose& pred, const Pose& gt) {
  return (pred.translation() - gt.translation()).squaredNorm() +
         (1.0 - std::abs(pred.rotation().dot(gt.rotation())));
}

namespace {

// d/d(raw) of pose_loss, through quaternion normalization.
std::array<double, 7> pose_loss_raw_grad(const std::array<double, 7>& raw, const Pose& gt) {
  std::array<double, 7> g{};
  const Eigen::Vector4d r(raw[0], raw[1], raw[2], raw[3]);
  const double norm = std::max(r.norm(), 1e-12);
  const Eigen::Vector4d q = r / norm;
  const Eigen::Vector4d qg(gt.rotation().w(), gt.rotation().x(), gt.rotation().y(), gt.rotation().z());
  const double dot = q.dot(qg);
  const Eigen::Vector4d dq = -(dot >= 0 ? 1.0 : -1.0) * qg;
  const Eigen::Vector4d dr = (dq - q * q.dot(dq)) / norm;
  for (int i = 0; i < 4; ++i) g[i] = dr[i];
  for (int i = 0; i < 3; ++i) g[4 + i] = 2.0 * (raw[4 + i] - gt.translation()[i]);
  return g;
}

double bce(const Image& p, const Image& y) {
  constexpr double eps = 1e-7;
  double s = 0.0;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const double q = std::clamp(static_cast<double>(p.data[i]), eps, 1.0 - eps);
    s -= y.data[i] * std::log(q) + (1.0 - y.data[i]) * std::log(1.0 - q);
  }
  return s / static_cast<double>(p.data.size());
}

}  // namespace

std::array<double, 7> tangent_to_raw_gradient(const std::array<double, 7>& raw, const Vec6& tangent_grad) {
  const Eigen::Vector4d r(raw[0], raw[1], raw[2], raw[3]);
  const double norm = std::max(r.norm(), 1e-12);
  const Quat q(r[0] / norm, r[1] / norm, r[2] / norm, r[3] / norm);
  const Vec3 t(raw[4], raw[5], raw[6]);
  const Vec3 g_omega = tangent_grad.head<3>();
  const Vec3 g_v = tangent_grad.tail<3>();
  // Changing q with t held fixed is the tangent (omega, -omega x t).
  const Vec3 g_rot = g_omega - t.cross(g_v);
  // omega = 2 vec(dq * conj(q)) for a tangent change dq of the unit quaternion.
  Eigen::Vector4d dq;
  for (int k = 0; k < 4; ++k) {
    Eigen::Vector4d e = Eigen::Vector4d::Zero();
    e[k] = 1.0;
    const Quat ek(e[0], e[1], e[2], e[3]);
    const Quat prod = ek * q.conjugate();
    dq[k] = 2.0 * g_rot.dot(prod.vec());
  }
  const Eigen::Vector4d qv(q.w(), q.x(), q.y(), q.z());
  const Eigen::Vector4d dr = (dq - qv * qv.dot(dq)) / norm;
  std::array<double, 7> g{};
  for (int i = 0; i < 4; ++i) g[i] = dr[i];
  for (int i = 0; i < 3; ++i) g[4 + i] = g_v[i];
  return g;
}

LossTerms compute_loss(const PerceptionOutput& out, const LabeledFrame& frame, const Image& rgb,
                       const Image& mask, const ReprojectionRenderer* renderer, const TrainConfig& cfg,
                       bool selected) {
  LossTerms terms;
  terms.seg = bce(out.mask_prob, mask);
  if (frame.in_view) {
    terms.pose = pose_loss(out.pose, frame.pose_label);
    if (selected && renderer) terms.reproj = 1.0 - ssim(renderer->render(frame, out.pose), rgb);
  }
  terms.total = cfg.lambda_seg * terms.seg;
  if (frame.in_view) {
    terms.total += cfg.lambda_pose * terms.pose;
    if (selected && renderer) terms.total += cfg.lambda_reproj * terms.reproj;
  }
  return terms;
}

// ---------------------------------------------------------------- training

double dataset_seg_loss(const PerceptionModel& model, const std::vector<Image>& inputs,
                        const std::vector<Image>& masks) {
  if (inputs.empty()) return 0.0;
  const auto params = make_params<float>(model, false);
  double total = 0.0;
  constexpr std::size_t chunk = 32;
  for (std::size_t i = 0; i < inputs.size(); i += chunk) {
    std::vector<const Image*> xs, ys;
    for (std::size_t j = i; j < std::min(inputs.size(), i + chunk); ++j) {
      xs.push_back(&inputs[j]);
      ys.push_back(&masks[j]);
    }
    const auto net = build_network(params, pack_images<float>(xs));
    total += static_cast<double>(ad::bce_loss(net.mask, pack_masks<float>(ys)).item()) * xs.size();
  }
  return total / static_cast<double>(inputs.size());
}

namespace {

struct AdamState {
  std::vector<double> m, v;
  long step = 0;
};

void adam_update(ParamTensor& p, std::span<const float> grad, AdamState& s, const TrainConfig& cfg) {
  if (s.m.empty()) {
    s.m.assign(p.data.size(), 0.0);
    s.v.assign(p.data.size(), 0.0);
  }
  ++s.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const double g = grad[i];
    s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * g;
    s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = s.m[i] / bc1;
    const double vhat = s.v[i] / bc2;
    p.data[i] = static_cast<float>(p.data[i] - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
  }
}

bool in_stage1_set(const std::string& name) { return name.starts_with("enc") || name.starts_with("dec"); }

}  // namespace

TrainResult train(const std::filesystem::path& dataset_dir, const TrainConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const Manifest manifest = load_manifest(dataset_dir);
  if (manifest.frames.empty()) throw EmptyDataset("dataset has no frames");
  std::size_t in_view = 0;
  for (const auto& f : manifest.frames) in_view += f.in_view ? 1 : 0;
  if (in_view == 0) throw EmptyDataset("dataset has no in-view frames");

  const Architecture& arch = cfg.arch;
  const std::size_t n = manifest.frames.size();
  std::vector<Image> inputs(n), masks(n);
  for (std::size_t i = 0; i < n; ++i) {
    const LoadedFrame lf = load_frame(dataset_dir, manifest.frames[i]);
    inputs[i] = prepare_input(lf.rgb, arch);
    masks[i] = prepare_mask(lf.mask, arch);
  }

  TrainResult result;
  result.model = init_model(arch, cfg.seed);
  PerceptionModel& model = result.model;
  TrainReport& report = result.report;
  report.frames = n;
  report.in_view_frames = in_view;

  // Start the translation head at the mean label translation.
  {
    Vec3 mean_t = Vec3::Zero();
    for (const auto& f : manifest.frames)
      if (f.in_view) mean_t += f.pose_label.translation();
    mean_t /= static_cast<double>(in_view);
    auto& b = model.param("fc2.b");
    for (int i = 0; i < 3; ++i) b.data[4 + i] = static_cast<float>(mean_t[i]);
  }
  report.initial_seg_loss = dataset_seg_loss(model, inputs, masks);
  report.stage1_seg_loss = report.initial_seg_loss;

  std::optional<ReprojectionRenderer> reproj;
  if (cfg.stage2_epochs > 0 && cfg.lambda_reproj > 0 && cfg.reproj_every > 0)
    reproj.emplace(ReprojectionRenderer::for_manifest(manifest, arch));

  std::map<std::string, AdamState> adam;
  const std::size_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = batches_per_epoch * static_cast<std::size_t>(cfg.stage1_epochs + cfg.stage2_epochs);
  std::size_t steps_done = 0;
  std::size_t stage2_counter = 0;

  for (int stage = 1; stage <= 2; ++stage) {
    const int epochs = stage == 1 ? cfg.stage1_epochs : cfg.stage2_epochs;
    for (int epoch = 0; epoch < epochs; ++epoch) {
      const auto t_epoch = std::chrono::steady_clock::now();
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(mix_seeds(cfg.seed, static_cast<std::uint64_t>(stage * 100000 + epoch)));
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

      EpochLog log;
      log.stage = stage;
      log.epoch = epoch;
      for (std::size_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
        const std::size_t b1 = std::min(n, b0 + cfg.batch_size);
        const std::size_t bs = b1 - b0;
        std::vector<const Image*> xs, ys;
        for (std::size_t j = b0; j < b1; ++j) {
          xs.push_back(&inputs[order[j]]);
          ys.push_back(&masks[order[j]]);
        }
        auto params = make_params<float>(model, true);
        const auto net = build_network(params, pack_images<float>(xs));
        const auto seg = ad::bce_loss(net.mask, pack_masks<float>(ys));
        double batch_pose = 0.0, batch_reproj = 0.0;
        ad::Tensor loss = ad::scale(seg, cfg.lambda_seg);

        if (stage == 2) {
          std::vector<float> head_grad(bs * 7, 0.0f);
          const auto raw_all = net.raw.value();
          for (std::size_t j = 0; j < bs; ++j) {
            const LabeledFrame& f = manifest.frames[order[b0 + j]];
            const bool selected = reproj && (stage2_counter++ % static_cast<std::size_t>(cfg.reproj_every) == 0);
            if (!f.in_view) continue;
            std::array<double, 7> raw;
            for (int i = 0; i < 7; ++i) raw[i] = raw_all[j * 7 + i];
            const Pose pred = pose_from_raw(raw);
            batch_pose += pose_loss(pred, f.pose_label);
            std::array<double, 7> g = pose_loss_raw_grad(raw, f.pose_label);
            for (double& v : g) v *= cfg.lambda_pose;
            if (selected) {
              const Image& target = inputs[order[b0 + j]];
              batch_reproj += 1.0 - ssim(reproj->render(f, pred), target);
              ++log.reproj_samples;
              // Central differences of (1 - ssim) on the pose tangent.
              Vec6 tg;
              for (int d = 0; d < 6; ++d) {
                const double h = d < 3 ? cfg.fd_rotation_step : cfg.fd_translation_step * reproj->object_size();
                Vec6 delta = Vec6::Zero();
                delta[d] = h;
                const double lp = 1.0 - ssim(reproj->render(f, retract(pred, delta)), target);
                const double lm = 1.0 - ssim(reproj->render(f, retract(pred, -delta)), target);
                tg[d] = (lp - lm) / (2.0 * h);
              }
              const auto gr = tangent_to_raw_gradient(raw, tg);
              for (int i = 0; i < 7; ++i) g[i] += cfg.lambda_reproj * gr[i];
            }
            for (int i = 0; i < 7; ++i) head_grad[j * 7 + i] = static_cast<float>(g[i] / static_cast<double>(bs));
          }
          // Surrogate whose gradient w.r.t. the head output is head_grad.
          const auto surrogate = ad::sum(ad::mul(net.raw, ad::Tensor::constant({static_cast<int>(bs), 7}, head_grad)));
          loss = ad::add(loss, surrogate);
        }

        ad::backward(loss);
        for (auto& p : model.params) {
          if (stage == 1 && !in_stage1_set(p.name)) continue;
          auto& t = params.at(p.name);
          t.ensure_grad();
          adam_update(p, t.grad(), adam[p.name], cfg);
        }

        const double seg_v = seg.item();
        log.seg += seg_v * static_cast<double>(bs);
        log.pose += batch_pose;
        log.reproj += batch_reproj;
        log.total += cfg.lambda_seg * seg_v * static_cast<double>(bs) + cfg.lambda_pose * batch_pose +
                     cfg.lambda_reproj * batch_reproj;
        ++steps_done;
        if (progress && total_steps > 0) progress(static_cast<double>(steps_done) / static_cast<double>(total_steps));
      }
      log.seg /= static_cast<double>(n);
      log.pose /= static_cast<double>(n);
      log.reproj /= static_cast<double>(n);
      log.total /= static_cast<double>(n);
      log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_epoch).count();
      report.epochs.push_back(log);
    }
    if (stage == 1 && cfg.stage1_epochs > 0) report.stage1_seg_loss = dataset_seg_loss(model, inputs, masks);
  }
  if (progress && total_steps == 0) progress(1.0);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

// ---------------------------------------------------------------- model file

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) throw CorruptModel(std::string("model file truncated in ") + what);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    const auto s = take(4, what);
    return static_cast<std::uint32_t>(s[0]) | (static_cast<std::uint32_t>(s[1]) << 8) |
           (static_cast<std::uint32_t>(s[2]) << 16) | (static_cast<std::uint32_t>(s[3]) << 24);
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

json arch_json(const Architecture& a) {
  return {{"input_width", a.input_width}, {"input_height", a.input_height}, {"encoder", a.encoder},
          {"decoder", a.decoder},         {"hidden", a.hidden},             {"min_mask_area", a.min_mask_area}};
}

}  // namespace

std::vector<std::uint8_t> encode_model(const PerceptionModel& model) {
  json tensors = json::array();
  for (const auto& p : model.params) tensors.push_back({{"name", p.name}, {"shape", p.shape}});
  const std::string desc = json{{"arch", arch_json(model.arch)}, {"tensors", tensors}}.dump();
  std::vector<std::uint8_t> out = {'F', 'A', 'P', 'M', kModelVersion};
  put_u32(out, static_cast<std::uint32_t>(desc.size()));
  out.insert(out.end(), desc.begin(), desc.end());
  for (const auto& p : model.params) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    put_u32(out, static_cast<std::uint32_t>(p.shape.size()));
    for (int d : p.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : p.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

PerceptionModel decode_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), "FAPM", 4) != 0) {
    std::string found;
    for (auto c : magic) found += std::isprint(c) ? static_cast<char>(c) : '?';
    throw CorruptModel("bad model magic '" + found + "' (expected 'FAPM')");
  }
  const std::uint8_t version = r.take(1, "version")[0];
  if (version != kModelVersion)
    throw VersionMismatch("model version " + std::to_string(version) + ", expected " + std::to_string(kModelVersion));
  const std::uint32_t desc_len = r.u32("descriptor length");
  const auto desc_bytes = r.take(desc_len, "descriptor");
  const json desc = json::parse(desc_bytes.begin(), desc_bytes.end(), nullptr, false);
  if (desc.is_discarded() || !desc.is_object()) throw CorruptModel("model descriptor is not valid JSON");

  PerceptionModel m;
  try {
    const auto& a = desc.at("arch");
    m.arch.input_width = a.at("input_width");
    m.arch.input_height = a.at("input_height");
    m.arch.encoder = a.at("encoder").get<std::array<int, 3>>();
    m.arch.decoder = a.at("decoder").get<std::array<int, 3>>();
    m.arch.hidden = a.at("hidden");
    m.arch.min_mask_area = a.at("min_mask_area");
    validate_arch(m.arch);
  } catch (const json::exception& e) {
    throw CorruptModel(std::string("model descriptor: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw CorruptModel(std::string("model descriptor: ") + e.what());
  }
  const auto layout = param_layout(m.arch);
  const auto& tensors = desc.at("tensors");
  if (!tensors.is_array() || tensors.size() != layout.size()) throw CorruptModel("model descriptor: wrong tensor list");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& [name, shape] = layout[i];
    const std::uint32_t name_len = r.u32("tensor name length");
    const auto nb = r.take(name_len, "tensor name");
    const std::string got(nb.begin(), nb.end());
    if (got != name) throw CorruptModel("expected tensor '" + name + "', found '" + got + "'");
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank != shape.size()) throw CorruptModel("tensor '" + name + "' has wrong rank");
    std::vector<int> dims(rank);
    for (auto& d : dims) d = static_cast<int>(r.u32("tensor dims"));
    if (dims != shape) throw CorruptModel("tensor '" + name + "' has wrong shape " + ad::to_string(dims));
    ParamTensor t{name, dims, std::vector<float>(ad::numel(dims))};
    const auto data = r.take(t.data.size() * 4, "tensor data");
    for (std::size_t j = 0; j < t.data.size(); ++j) {
      const std::uint32_t u = static_cast<std::uint32_t>(data[4 * j]) | (static_cast<std::uint32_t>(data[4 * j + 1]) << 8) |
                              (static_cast<std::uint32_t>(data[4 * j + 2]) << 16) |
                              (static_cast<std::uint32_t>(data[4 * j + 3]) << 24);
      t.data[j] = std::bit_cast<float>(u);
    }
    m.params.push_back(std::move(t));
  }
  if (!r.done()) throw CorruptModel("trailing bytes after last tensor");
  return m;
}

void save_model(const std::filesystem::path& path, const PerceptionModel& model) {
  write_file(path, encode_model(model));
}

PerceptionModel load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

}  // namespace falcon
