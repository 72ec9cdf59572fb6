#include "falcon/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <sstream>

#include "falcon/rng.hpp"

namespace falcon {

using nlohmann::json;

std::string object_reference(const std::string& object, std::uint64_t asset_seed) {
  if (archetype_from_string(object)) return object + ":" + std::to_string(asset_seed);
  return object;
}

json train_config_json(const TrainConfig& c) {
  return {{"stage1_epochs", c.stage1_epochs},
          {"stage2_epochs", c.stage2_epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"lambda_seg", c.lambda_seg},
          {"lambda_pose", c.lambda_pose},
          {"lambda_reproj", c.lambda_reproj},
          {"reproj_every", c.reproj_every},
          {"seed", c.seed},
          {"input_width", c.arch.input_width},
          {"input_height", c.arch.input_height}};
}

json metric_row_json(const MetricRow& r) {
  return {{"object", r.object},
          {"method", r.method},
          {"iou", r.iou ? json(*r.iou) : json(nullptr)},
          {"mte_percent", r.mte_percent},
          {"mae_rad", r.mae_rad},
          {"n_frames", r.n_frames},
          {"n_pose_frames", r.n_pose_frames},
          {"n_pose_failures", r.n_pose_failures},
          {"n_environments", r.n_environments}};
}

namespace {

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

void write_text(const std::filesystem::path& p, const std::string& s) {
  write_file(p, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg, const StageProgressFn& progress) {
  if (cfg.count == 0) throw InvalidArgument("count must be positive");
  if (cfg.test_count == 0) throw InvalidArgument("test count must be positive");
  if (cfg.out_dir.empty()) throw InvalidArgument("output directory is required");
  auto report_progress = [&](const char* stage, double f) {
    if (progress) progress(stage, f);
  };
  const auto t_total = Clock::now();
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create " + cfg.out_dir.string() + ": " + ec.message());

  // Asset.
  auto t0 = Clock::now();
  report_progress("asset", 0.0);
  const std::string ref = object_reference(cfg.object, cfg.asset_seed);
  const SplatAsset asset = resolve_asset(ref);
  const double t_asset = seconds_since(t0);
  report_progress("asset", 1.0);

  // Labeling: training and held-out sets from disjoint seeds.
  t0 = Clock::now();
  RandomizationConfig train_rc = cfg.randomization;
  train_rc.seed = mix_seeds(cfg.seed, 1);
  RandomizationConfig test_rc = cfg.randomization;
  test_rc.seed = mix_seeds(cfg.seed, 2);
  const double share = static_cast<double>(cfg.count) / static_cast<double>(cfg.count + cfg.test_count);
  const auto data_dir = cfg.out_dir / "data";
  const auto test_dir = cfg.out_dir / "test";
  const DatasetStats train_stats = generate_dataset(asset, ref, train_rc, cfg.count, data_dir,
                                                    [&](double f) { report_progress("labeling", f * share); });
  const DatasetStats test_stats = generate_dataset(asset, ref, test_rc, cfg.test_count, test_dir, [&](double f) {
    report_progress("labeling", share + f * (1.0 - share));
  });
  const double t_label = seconds_since(t0);

  // Training.
  t0 = Clock::now();
  TrainConfig tc = cfg.train;
  tc.seed = mix_seeds(cfg.seed, 3);
  report_progress("training", 0.0);
  const TrainResult trained = train(data_dir, tc, [&](double f) { report_progress("training", f); });
  const auto model_path = cfg.out_dir / "model.fapm";
  save_model(model_path, trained.model);
  const double t_train = seconds_since(t0);

  // Evaluation.
  t0 = Clock::now();
  report_progress("evaluation", 0.0);
  const Manifest train_manifest = load_manifest(data_dir);
  const Manifest test_manifest = load_manifest(test_dir);
  const auto train_seeds = frame_seeds(train_manifest);
  const std::string name = asset.name();
  std::vector<MetricRow> rows;
  rows.push_back(
      evaluate("FalconApp", learned_estimator(trained.model), test_manifest, test_dir, asset, name, &train_seeds).row);
  if (cfg.pnp_baseline)
    rows.push_back(evaluate("PnP", pnp_estimator(asset, cfg.pnp_keypoints, cfg.pnp_noise), test_manifest, test_dir,
                            asset, name, &train_seeds)
                       .row);
  write_text(cfg.out_dir / "eval.md", report_markdown(rows, cfg.pnp_noise));
  write_text(cfg.out_dir / "eval.csv", report_csv(rows));
  const double t_eval = seconds_since(t0);
  report_progress("evaluation", 1.0);

  json epochs = json::array();
  for (const auto& e : trained.report.epochs)
    epochs.push_back({{"stage", e.stage},
                      {"epoch", e.epoch},
                      {"seg", e.seg},
                      {"pose", e.pose},
                      {"reproj", e.reproj},
                      {"total", e.total},
                      {"reproj_samples", e.reproj_samples},
                      {"seconds", e.seconds}});
  json metrics = json::array();
  for (const auto& r : rows) metrics.push_back(metric_row_json(r));

  const auto& rc = cfg.randomization;
  json report = {
      {"version", 1},
      {"config",
       {{"object", cfg.object},
        {"asset_seed", cfg.asset_seed},
        {"seed", cfg.seed},
        {"count", cfg.count},
        {"test_count", cfg.test_count},
        {"width", rc.width},
        {"height", rc.height},
        {"backgrounds", rc.backgrounds},
        {"empty_fraction", rc.empty_fraction},
        {"pnp_baseline", cfg.pnp_baseline},
        {"pnp_keypoints", cfg.pnp_keypoints},
        {"pnp_noise_px", cfg.pnp_noise},
        {"train", train_config_json(tc)}}},
      {"object",
       {{"name", name},
        {"reference", ref},
        {"size_m", asset.object_size()},
        {"splats", asset.splats().size()},
        {"symmetry", std::string(to_string(asset.symmetry()))}}},
      {"frames",
       {{"train", train_stats.frames},
        {"train_in_view", train_stats.in_view},
        {"train_empty", train_stats.empty},
        {"test", test_stats.frames},
        {"test_in_view", test_stats.in_view}}},
      {"timings_s",
       {{"asset", t_asset},
        {"labeling", t_label},
        {"training", t_train},
        {"evaluation", t_eval},
        {"labeling_plus_training", t_label + t_train},
        {"total", seconds_since(t_total)}}},
      {"training",
       {{"initial_seg_loss", trained.report.initial_seg_loss},
        {"stage1_seg_loss", trained.report.stage1_seg_loss},
        {"parameters", trained.model.parameter_count()},
        {"epochs", epochs}}},
      {"metrics", metrics},
      {"paths",
       {{"train_data", "data"},
        {"test_data", "test"},
        {"model", "model.fapm"},
        {"report_json", "report.json"},
        {"report_text", "report.txt"},
        {"eval_markdown", "eval.md"},
        {"eval_csv", "eval.csv"}}},
  };
  write_text(cfg.out_dir / "report.json", report.dump(2) + "\n");
  write_text(cfg.out_dir / "report.txt", report_text(report));
  return {report, model_path, rows};
}

std::string report_text(const json& r) {
  std::ostringstream o;
  char buf[256];
  const auto& t = r.at("timings_s");
  o << "object        " << r.at("object").at("name").get<std::string>() << " ("
    << r.at("object").at("reference").get<std::string>() << ")\n";
  o << "seed          " << r.at("config").at("seed").get<std::uint64_t>() << "\n";
  o << "frames        " << r.at("frames").at("train").get<std::size_t>() << " train ("
    << r.at("frames").at("train_in_view").get<std::size_t>() << " in view), "
    << r.at("frames").at("test").get<std::size_t>() << " test\n\n";
  o << "| Stage | Wall time (s) |\n|---|---|\n";
  for (const char* k : {"asset", "labeling", "training", "evaluation", "labeling_plus_training", "total"}) {
    std::snprintf(buf, sizeof buf, "| %s | %.1f |\n", k, t.at(k).get<double>());
    o << buf;
  }
  std::snprintf(buf, sizeof buf, "\nseg loss: initial %.4f, after stage 1 %.4f\n\n",
                r.at("training").at("initial_seg_loss").get<double>(),
                r.at("training").at("stage1_seg_loss").get<double>());
  o << buf;
  o << "| Method | IoU | MTE (%) | MAE (rad) | Frames |\n|---|---|---|---|---|\n";
  for (const auto& m : r.at("metrics")) {
    std::string iou_s;
    if (!m.at("iou").is_null()) {
      std::snprintf(buf, sizeof buf, "%.3f", m.at("iou").get<double>());
      iou_s = buf;
    }
    std::snprintf(buf, sizeof buf, "| %s | %s | %.1f | %.3f | %zu |\n", m.at("method").get<std::string>().c_str(),
                  iou_s.c_str(), m.at("mte_percent").get<double>(), m.at("mae_rad").get<double>(),
                  m.at("n_frames").get<std::size_t>());
    o << buf;
  }
  return o.str();
}

}  // namespace falcon
