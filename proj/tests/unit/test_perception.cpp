#include <doctest.h>

#include <filesystem>

#include "falcon/perception.hpp"
#include "falcon/perception_net.hpp"
#include "falcon/rng.hpp"

using namespace falcon;
namespace fs = std::filesystem;

namespace {

Image random_rgb(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image img(w, h, 3);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

Architecture toy_arch() {
  Architecture a;
  a.input_width = a.input_height = 16;
  a.hidden = 12;
  return a;
}

// Small 64x64 dataset shared by several cases.
const fs::path& fixture_dataset() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "falcon_perception_fixture";
    fs::remove_all(d);
    RandomizationConfig c;
    c.width = c.height = 64;
    c.empty_fraction = 0.2;
    c.seed = 3;
    generate_dataset(generate_archetype(Archetype::car, 0), "car:0", c, 20, d);
    return d;
  }();
  return dir;
}

Pose pose_from_raw_oracle(const std::array<double, 7>& r) {
  return Pose(Quat(r[0], r[1], r[2], r[3]).normalized(), Vec3(r[4], r[5], r[6]));
}

}  // namespace

TEST_CASE("output contract on random inputs") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const PerceptionModel m = init_model(Architecture{}, s);
    const PerceptionOutput out = forward(m, random_rgb(64, 64, 100 + s));
    CHECK(std::abs(out.pose.rotation().norm() - 1.0) <= 1e-6);
    CHECK(out.pose.translation().allFinite());
    CHECK(out.mask_prob.width == 64);
    for (float v : out.mask_prob.data) CHECK((v > 0.0f && v < 1.0f));
    CHECK(out.in_view == (out.mask_area >= 25));
  }
  const PerceptionModel m = init_model(Architecture{}, 0);
  CHECK_THROWS_AS(forward(m, random_rgb(32, 32, 1)), ResolutionMismatch);
  CHECK(infer(m, random_rgb(128, 96, 1)).mask_prob.width == 64);
  const Image x = random_rgb(64, 64, 9);
  CHECK(forward(m, x).mask_prob == forward(m, x).mask_prob);
}

TEST_CASE("gate override") {
  const Architecture arch = toy_arch();
  const PerceptionModel m = init_model(arch, 4);
  const auto p = make_params<double>(m, false);
  const Image a = random_rgb(16, 16, 1), b = random_rgb(16, 16, 2);

  SUBCASE("open gate passes pooled encoder features through") {
    const auto net = build_network(p, pack_images<double>({&a}), ForwardOptions{1.0});
    using namespace ad;
    auto conv = [&](const BasicTensor<double>& x, const std::string& n) {
      return conv2d(x, p.at(n + ".w"), p.at(n + ".b"), 2, 1);
    };
    const auto e3 = relu(conv(relu(conv(relu(conv(pack_images<double>({&a}), "enc1")), "enc2")), "enc3"));
    const auto pooled = global_avg_pool(e3);
    for (std::size_t i = 0; i < pooled.numel(); ++i) CHECK(net.pooled.value()[i] == pooled.value()[i]);
  }
  SUBCASE("closed gate makes the pose a function of the biases only") {
    const auto na = build_network(p, pack_images<double>({&a}), ForwardOptions{0.0});
    const auto nb = build_network(p, pack_images<double>({&b}), ForwardOptions{0.0});
    for (double v : na.pooled.value()) CHECK(v == 0.0);
    for (std::size_t i = 0; i < 7; ++i) CHECK(na.raw.value()[i] == nb.raw.value()[i]);
    ForwardOptions closed{0.0};
    CHECK(forward(m, a, closed).raw == forward(m, b, closed).raw);
  }
}

TEST_CASE("full network gradcheck at 16x16 in double") {
  const Architecture arch = toy_arch();
  const PerceptionModel m = init_model(arch, 8);
  auto params = make_params<double>(m, true);
  const Image a = random_rgb(16, 16, 3), b = random_rgb(16, 16, 4);
  Rng rng(5);
  std::vector<double> mask(2 * 16 * 16), target(14);
  for (double& v : mask) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
  for (double& v : target) v = rng.uniform(-1, 1);
  const auto y = ad::BasicTensor<double>::constant({2, 1, 16, 16}, mask);
  const auto tgt = ad::BasicTensor<double>::constant({2, 7}, target);
  auto loss_of = [&](const ParamMap<double>& pm) {
    const auto net = build_network(pm, pack_images<double>({&a, &b}));
    return ad::add(ad::bce_loss(net.mask, y), ad::l2_loss(net.raw, tgt));
  };
  ad::backward(loss_of(params));

  const double eps = 1e-4;
  double worst = 0.0;
  for (auto& [name, t] : params) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto v = t.mutable_value();
    // Every entry of small tensors, an evenly spaced subset of large ones.
    const std::size_t step = std::max<std::size_t>(1, v.size() / 40);
    for (std::size_t i = 0; i < v.size(); i += step) {
      const double orig = v[i];
      v[i] = orig + eps;
      const double fp = loss_of(params).value()[0];
      v[i] = orig - eps;
      const double fm = loss_of(params).value()[0];
      v[i] = orig;
      const double numeric = (fp - fm) / (2 * eps);
      const double err = std::abs(numeric - analytic[i]) / std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
      if (err > worst) {
        worst = err;
        CAPTURE(name);
      }
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("pose loss") {
  const Pose gt(rot_y(0.4), Vec3(0.1, 0.2, 1.5));
  CHECK(pose_loss(gt, gt) == doctest::Approx(0.0));
  // Sign flip of the quaternion is the same rotation.
  const Quat neg(-gt.rotation().w(), -gt.rotation().x(), -gt.rotation().y(), -gt.rotation().z());
  CHECK(pose_loss(Pose(neg, gt.translation()), gt) == doctest::Approx(0.0));
  const Pose pred(rot_y(0.4) * rot_z(0.6), Vec3(0.4, 0.2, 1.5));
  const double expected = 0.09 + (1.0 - std::cos(0.3));
  CHECK(pose_loss(pred, gt) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("tangent-to-raw chain rule matches finite differences") {
  // Smooth test function of the pose.
  const Vec3 a(0.3, -0.7, 0.2), c(0.5, 0.1, -0.4);
  const Quat ref = rot_x(0.7) * rot_z(-0.3);
  auto f = [&](const Pose& p) {
    return a.dot(p.translation()) + p.translation().squaredNorm() + c.dot(log_so3(p.rotation() * ref.conjugate()));
  };
  const std::array<double, 7> raw = {0.9, 0.2, -0.3, 0.4, 0.3, -0.1, 1.2};
  const Pose p = pose_from_raw_oracle(raw);
  const double h = 1e-6;
  Vec6 tg;
  for (int d = 0; d < 6; ++d) {
    Vec6 e = Vec6::Zero();
    e[d] = h;
    tg[d] = (f(retract(p, e)) - f(retract(p, -e))) / (2 * h);
  }
  const auto g = tangent_to_raw_gradient(raw, tg);
  for (int i = 0; i < 7; ++i) {
    auto rp = raw, rm = raw;
    rp[i] += h;
    rm[i] -= h;
    const double numeric = (f(pose_from_raw_oracle(rp)) - f(pose_from_raw_oracle(rm))) / (2 * h);
    CAPTURE(i);
    CHECK(g[i] == doctest::Approx(numeric).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("loss terms and in-view gating") {
  const fs::path& d = fixture_dataset();
  const Manifest man = load_manifest(d);
  const Architecture arch;
  const PerceptionModel m = init_model(arch, 1);
  const ReprojectionRenderer rr = ReprojectionRenderer::for_manifest(man, arch);
  TrainConfig cfg;
  bool saw_in = false, saw_out = false;
  for (const auto& f : man.frames) {
    const LoadedFrame lf = load_frame(d, f);
    const Image x = prepare_input(lf.rgb, arch), y = prepare_mask(lf.mask, arch);
    const PerceptionOutput out = forward(m, x);
    if (!f.in_view) {
      saw_out = true;
      const LossTerms base = compute_loss(out, f, x, y, &rr, cfg, true);
      CHECK(base.total == doctest::Approx(cfg.lambda_seg * base.seg));
      LabeledFrame shuffled = f;
      shuffled.pose_label = Pose(rot_x(2.0), Vec3(3, -2, 7));
      CHECK(compute_loss(out, shuffled, x, y, &rr, cfg, true).total == base.total);
    } else if (!saw_in) {
      saw_in = true;
      // Self-render at the true pose reproduces the frame.
      const Image re = rr.render(f, f.pose_label);
      CHECK(1.0 - ssim(re, x) < 0.05);
      PerceptionOutput perfect = out;
      perfect.pose = f.pose_label;
      perfect.mask_prob = y;
      const LossTerms t = compute_loss(perfect, f, x, y, &rr, cfg, true);
      CHECK(t.pose == doctest::Approx(0.0).epsilon(1e-9));
      CHECK(t.reproj < 0.05);
      CHECK(t.seg < 1e-5);
      const LossTerms skipped = compute_loss(perfect, f, x, y, &rr, cfg, false);
      CHECK(skipped.reproj == 0.0);
    }
  }
  CHECK(saw_in);
  CHECK(saw_out);
}

TEST_CASE("training schedule edge cases") {
  const fs::path& d = fixture_dataset();
  TrainConfig cfg;
  cfg.seed = 12;

  SUBCASE("zero epochs returns the initialized model") {
    cfg.stage1_epochs = cfg.stage2_epochs = 0;
    const TrainResult r = train(d, cfg);
    CHECK(r.report.epochs.empty());
    const PerceptionModel init = init_model(cfg.arch, cfg.seed);
    for (const auto& p : init.params) {
      if (p.name == "fc2.b") continue;
      CHECK(r.model.param(p.name).data == p.data);
    }
    // Translation bias starts at the mean in-view label translation.
    const Manifest man = load_manifest(d);
    Vec3 mean = Vec3::Zero();
    int n = 0;
    for (const auto& f : man.frames)
      if (f.in_view) mean += f.pose_label.translation(), ++n;
    mean /= n;
    const auto& b = r.model.param("fc2.b").data;
    for (int i = 0; i < 4; ++i) CHECK(b[i] == init.param("fc2.b").data[i]);
    for (int i = 0; i < 3; ++i) CHECK(b[4 + i] == doctest::Approx(mean[i]).epsilon(1e-6));
  }
  SUBCASE("same seed gives bit-identical parameters") {
    cfg.stage1_epochs = 1;
    cfg.stage2_epochs = 1;
    cfg.reproj_every = 4;
    const TrainResult a = train(d, cfg), b = train(d, cfg);
    CHECK(encode_model(a.model) == encode_model(b.model));
    REQUIRE(a.report.epochs.size() == 2);
    CHECK(a.report.epochs[1].reproj_samples > 0);
    cfg.seed = 13;
    CHECK(encode_model(train(d, cfg).model) != encode_model(a.model));
  }
  SUBCASE("stage 1 leaves the pose head untouched") {
    cfg.stage1_epochs = 1;
    cfg.stage2_epochs = 0;
    const TrainResult r = train(d, cfg);
    cfg.stage1_epochs = 0;
    const TrainResult z = train(d, cfg);
    for (const char* name : {"gate.w", "gate.b", "fc1.w", "fc1.b", "fc2.w", "fc2.b"})
      CHECK(r.model.param(name).data == z.model.param(name).data);
    CHECK(r.model.param("enc1.w").data != z.model.param("enc1.w").data);
    CHECK(r.model.param("dec3.w").data != z.model.param("dec3.w").data);
  }
  SUBCASE("invalid configs") {
    cfg.stage1_epochs = -1;
    CHECK_THROWS(train(d, cfg));
    cfg.stage1_epochs = 1;
    cfg.lambda_pose = -1;
    CHECK_THROWS(cfg.validate());
  }
}

TEST_CASE("training needs an in-view frame") {
  const fs::path d = fs::temp_directory_path() / "falcon_perception_empty";
  fs::remove_all(d);
  RandomizationConfig c;
  c.width = c.height = 64;
  c.empty_fraction = 1.0;
  generate_dataset(generate_archetype(Archetype::car, 0), "car:0", c, 3, d);
  CHECK_THROWS_AS(train(d, TrainConfig{}), EmptyDataset);
  fs::remove_all(d);
}

TEST_CASE("model file round trip and validation") {
  const PerceptionModel m = init_model(Architecture{}, 77);
  const auto bytes = encode_model(m);
  const PerceptionModel r = decode_model(bytes);
  CHECK(encode_model(r) == bytes);
  CHECK(r.arch == m.arch);
  const Image x = random_rgb(64, 64, 5);
  CHECK(forward(r, x).mask_prob == forward(m, x).mask_prob);
  CHECK(forward(r, x).raw == forward(m, x).raw);

  const fs::path path = fs::temp_directory_path() / "falcon_model_test.fapm";
  save_model(path, m);
  CHECK(encode_model(load_model(path)) == bytes);
  fs::remove(path);

  SUBCASE("truncation") {
    for (std::size_t cut : {std::size_t{3}, std::size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
      std::vector<std::uint8_t> t(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
      CHECK_THROWS_AS(decode_model(t), CorruptModel);
    }
    auto extra = bytes;
    extra.push_back(0);
    CHECK_THROWS_AS(decode_model(extra), CorruptModel);
  }
  SUBCASE("wrong magic is named") {
    auto b = bytes;
    b[0] = 'X';
    b[1] = 'Y';
    try {
      decode_model(b);
      FAIL("expected CorruptModel");
    } catch (const CorruptModel& e) {
      CHECK(std::string(e.what()).find("XYPM") != std::string::npos);
    }
  }
  SUBCASE("version") {
    auto b = bytes;
    b[4] = kModelVersion + 1;
    CHECK_THROWS_AS(decode_model(b), VersionMismatch);
  }
  CHECK_THROWS(load_model("/nonexistent/model.fapm"));
}
