// falcon: command-line driver for asset generation, labeling, training,
// evaluation, inference, serving and the end-to-end pipeline.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "falcon/eval.hpp"
#include "falcon/pipeline.hpp"
#include "falcon/server.hpp"

using namespace falcon;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitPipeline = 4;

void add_randomization(CLI::App* app, RandomizationConfig& rc) {
  app->add_option("--width", rc.width, "Rendered image width")->capture_default_str();
  app->add_option("--height", rc.height, "Rendered image height")->capture_default_str();
  app->add_option("--empty-fraction", rc.empty_fraction, "Fraction of object-free frames")->capture_default_str();
  app->add_option("--backgrounds", rc.backgrounds, "Background asset references")->capture_default_str();
}

void add_training(CLI::App* app, TrainConfig& tc) {
  app->add_option("--stage1-epochs", tc.stage1_epochs, "Mask-only epochs")->capture_default_str();
  app->add_option("--stage2-epochs", tc.stage2_epochs, "Joint mask+pose epochs")->capture_default_str();
  app->add_option("--batch-size", tc.batch_size, "Minibatch size")->capture_default_str();
  app->add_option("--lr", tc.learning_rate, "Adam learning rate")->capture_default_str();
  app->add_option("--lambda-seg", tc.lambda_seg, "Segmentation loss weight")->capture_default_str();
  app->add_option("--lambda-pose", tc.lambda_pose, "Pose loss weight")->capture_default_str();
  app->add_option("--lambda-reproj", tc.lambda_reproj, "Reprojection loss weight")->capture_default_str();
  app->add_option("--reproj-every", tc.reproj_every, "Apply the reprojection term to 1 of every N samples")
      ->capture_default_str();
}

ProgressFn bar(const char* label) {
  return [label, last = -1](double f) mutable {
    const int pct = static_cast<int>(f * 100.0);
    if (pct / 10 != last / 10 || pct == 100) std::fprintf(stderr, "%s %3d%%\n", label, pct);
    last = pct;
  };
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  write_file(p, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"falcon: auto-labeled object perception pipeline"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // gen-asset
  auto* gen = app.add_subcommand("gen-asset", "Generate a procedural object or environment asset");
  std::string gen_archetype, gen_out;
  int gen_env = -1;
  std::uint64_t gen_seed = 0;
  gen->add_option("--archetype", gen_archetype, "car | quadrotor | gate | plane | lamp");
  gen->add_option("--env", gen_env, "Environment id instead of an object");
  gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output .splat path (sidecar .json is written next to it)")->required();

  // label
  auto* label = app.add_subcommand("label", "Render an auto-labeled dataset");
  std::string label_object = "car";
  std::uint64_t label_asset_seed = 0;
  std::size_t label_count = 200;
  std::string label_out;
  RandomizationConfig label_rc;
  label->add_option("--object,--archetype", label_object, "Archetype name, asset reference or .splat path")
      ->capture_default_str();
  label->add_option("--asset-seed", label_asset_seed, "Seed for archetype assets")->capture_default_str();
  label->add_option("--count", label_count, "Number of frames")->capture_default_str();
  label->add_option("--seed", label_rc.seed, "Dataset seed")->capture_default_str();
  label->add_option("--out", label_out, "Output dataset directory")->required();
  add_randomization(label, label_rc);

  // train
  auto* tr = app.add_subcommand("train", "Train a perception model on a dataset");
  std::string train_data, train_out, train_report;
  TrainConfig train_cfg;
  tr->add_option("--data", train_data, "Dataset directory")->required();
  tr->add_option("--out", train_out, "Output model file (.fapm)")->required();
  tr->add_option("--seed", train_cfg.seed, "Initialization and shuffling seed")->capture_default_str();
  tr->add_option("--report", train_report, "Write the training log as JSON");
  add_training(tr, train_cfg);

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a model (and optionally the PnP baseline) on a test set");
  std::string eval_model, eval_data, eval_report, eval_csv, eval_baseline = "none", eval_train_data;
  double eval_noise = kDefaultClickNoise;
  std::size_t eval_keypoints = 8;
  ev->add_option("--model", eval_model, "Model file (.fapm)")->required();
  ev->add_option("--data", eval_data, "Test dataset directory")->required();
  ev->add_option("--baseline", eval_baseline, "none | pnp")
      ->check(CLI::IsMember({"none", "pnp"}))
      ->capture_default_str();
  ev->add_option("--report", eval_report, "Write the markdown table here (default: stdout)");
  ev->add_option("--csv", eval_csv, "Write the CSV table here");
  ev->add_option("--train-data", eval_train_data, "Training set; checked to be disjoint from the test set");
  ev->add_option("--click-noise", eval_noise, "PnP click noise sigma in pixels")->capture_default_str();
  ev->add_option("--keypoints", eval_keypoints, "PnP keypoint count")->capture_default_str();

  // infer
  auto* inf = app.add_subcommand("infer", "Run a model on one image");
  std::string infer_model, infer_image, infer_mask;
  inf->add_option("--model", infer_model, "Model file (.fapm)")->required();
  inf->add_option("--image", infer_image, "Input PPM image")->required();
  inf->add_option("--mask-out", infer_mask, "Write the predicted mask as PGM");

  // serve
  auto* sv = app.add_subcommand("serve", "Run the protocol server");
  ServerConfig server_cfg;
  std::vector<std::string> preload;
  sv->add_option("--host", server_cfg.host, "Listen address")->envname("FALCON_HOST")->capture_default_str();
  sv->add_option("--port", server_cfg.tcp_port, "Stream transport port (0 = any, -1 = off)")
      ->envname("FALCON_PORT")
      ->capture_default_str();
  sv->add_option("--ws-port", server_cfg.ws_port, "Browser (WebSocket) transport port (0 = any, -1 = off)")
      ->envname("FALCON_WS_PORT")
      ->capture_default_str();
  sv->add_option("--workers", server_cfg.workers, "Concurrent pipelines")
      ->envname("FALCON_WORKERS")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sv->add_option("--work-dir", server_cfg.work_dir, "Directory for pipeline outputs and models")
      ->envname("FALCON_WORK_DIR")
      ->capture_default_str();
  sv->add_option("--count", server_cfg.pipeline.count, "Training frames per pipeline")->capture_default_str();
  sv->add_option("--test-count", server_cfg.pipeline.test_count, "Held-out frames per pipeline")
      ->capture_default_str();
  sv->add_option("--preload", preload, "Serve a trained model: NAME=PATH (repeatable)");
  add_training(sv, server_cfg.pipeline.train);

  // pipeline
  auto* pl = app.add_subcommand("pipeline", "Label, train and evaluate end to end");
  PipelineConfig pipe_cfg;
  std::string pipe_out;
  bool no_pnp = false;
  pl->add_option("--object,--archetype", pipe_cfg.object, "Archetype name, asset reference or .splat path")
      ->capture_default_str();
  pl->add_option("--asset-seed", pipe_cfg.asset_seed, "Seed for archetype assets")->capture_default_str();
  pl->add_option("--count", pipe_cfg.count, "Training frames")->capture_default_str();
  pl->add_option("--test-count", pipe_cfg.test_count, "Held-out frames")->capture_default_str();
  pl->add_option("--seed", pipe_cfg.seed, "Run seed")->capture_default_str();
  pl->add_option("--out", pipe_out, "Output directory")->required();
  pl->add_flag("--no-pnp", no_pnp, "Skip the PnP baseline");
  pl->add_option("--click-noise", pipe_cfg.pnp_noise, "PnP click noise sigma in pixels")->capture_default_str();
  add_randomization(pl, pipe_cfg.randomization);
  add_training(pl, pipe_cfg.train);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) {
      if (gen_archetype.empty() == (gen_env < 0)) throw InvalidArgument("give exactly one of --archetype or --env");
      SplatAsset asset;
      if (gen_env >= 0) {
        asset = generate_environment(gen_env, gen_seed);
      } else {
        const auto a = archetype_from_string(gen_archetype);
        if (!a) throw InvalidArgument("unknown archetype '" + gen_archetype + "'");
        asset = generate_archetype(*a, gen_seed);
      }
      save_splat(gen_out, asset);
      std::cout << json{{"name", asset.name()},
                        {"splats", asset.splats().size()},
                        {"object_size", asset.object_size()},
                        {"symmetry", std::string(to_string(asset.symmetry()))},
                        {"path", gen_out},
                        {"sidecar", sidecar_path(gen_out).string()}}
                       .dump(2)
                << "\n";
    } else if (*label) {
      const std::string ref = object_reference(label_object, label_asset_seed);
      const SplatAsset asset = resolve_asset(ref);
      const DatasetStats st = generate_dataset(asset, ref, label_rc, label_count, label_out, bar("labeling"));
      std::cout << json{{"frames", st.frames}, {"in_view", st.in_view}, {"empty", st.empty}, {"seconds", st.seconds}}
                       .dump(2)
                << "\n";
    } else if (*tr) {
      const TrainResult r = train(train_data, train_cfg, bar("training"));
      save_model(train_out, r.model);
      json epochs = json::array();
      for (const auto& e : r.report.epochs)
        epochs.push_back({{"stage", e.stage}, {"epoch", e.epoch}, {"seg", e.seg}, {"pose", e.pose},
                          {"reproj", e.reproj}, {"total", e.total}, {"seconds", e.seconds}});
      const json rep = {{"config", train_config_json(train_cfg)},
                        {"frames", r.report.frames},
                        {"in_view_frames", r.report.in_view_frames},
                        {"initial_seg_loss", r.report.initial_seg_loss},
                        {"stage1_seg_loss", r.report.stage1_seg_loss},
                        {"epochs", epochs},
                        {"seconds", r.report.seconds}};
      if (!train_report.empty()) write_text(train_report, rep.dump(2) + "\n");
      std::cout << rep.dump(2) << "\n";
    } else if (*ev) {
      const PerceptionModel model = load_model(eval_model);
      const Manifest test = load_manifest(eval_data);
      const SplatAsset asset = resolve_asset(test.object);
      std::set<std::uint64_t> train_seeds;
      if (!eval_train_data.empty()) train_seeds = frame_seeds(load_manifest(eval_train_data));
      const auto* seeds = eval_train_data.empty() ? nullptr : &train_seeds;
      std::vector<MetricRow> rows;
      rows.push_back(evaluate("FalconApp", learned_estimator(model), test, eval_data, asset, asset.name(), seeds).row);
      if (eval_baseline == "pnp")
        rows.push_back(evaluate("PnP", pnp_estimator(asset, eval_keypoints, eval_noise), test, eval_data, asset,
                                asset.name(), seeds)
                           .row);
      const std::string md = report_markdown(rows, eval_noise);
      if (eval_report.empty()) {
        std::cout << md;
      } else {
        write_text(eval_report, md);
      }
      if (!eval_csv.empty()) write_text(eval_csv, report_csv(rows));
    } else if (*inf) {
      const PerceptionModel model = load_model(infer_model);
      const PerceptionOutput out = infer(model, read_pnm(infer_image));
      if (!infer_mask.empty()) write_pnm(infer_mask, threshold(out.mask_prob, 0.5f));
      const Quat& q = out.pose.rotation();
      const Vec3& t = out.pose.translation();
      std::cout << json{{"in_view", out.in_view},
                        {"mask_area", out.mask_area},
                        {"pose", {{"q", {q.w(), q.x(), q.y(), q.z()}}, {"t", {t.x(), t.y(), t.z()}}}}}
                       .dump(2)
                << "\n";
    } else if (*sv) {
      for (const auto& p : preload) {
        const auto eq = p.find('=');
        if (eq == std::string::npos || eq == 0) throw InvalidArgument("--preload expects NAME=PATH");
        server_cfg.preload[p.substr(0, eq)] = p.substr(eq + 1);
      }
      Server server(server_cfg);
      server.start();
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::fprintf(stderr, "listening: stream %s:%d, websocket %s:%d\n", server_cfg.host.c_str(), server.tcp_port(),
                   server_cfg.host.c_str(), server.ws_port());
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
      server.stop();
    } else if (*pl) {
      pipe_cfg.out_dir = pipe_out;
      pipe_cfg.pnp_baseline = !no_pnp;
      std::string last_stage;
      int last_pct = -1;
      const PipelineResult r = run_pipeline(pipe_cfg, [&](const std::string& stage, double f) {
        const int pct = static_cast<int>(f * 100.0);
        if (stage != last_stage || pct / 10 != last_pct / 10) std::fprintf(stderr, "%s %3d%%\n", stage.c_str(), pct);
        last_stage = stage;
        last_pct = pct;
      });
      std::cout << report_text(r.report);
    }
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const SplitOverlap& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kExitIo;
  } catch (const CorruptModel& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kExitIo;
  } catch (const VersionMismatch& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kExitIo;
  } catch (const Error& e) {
    std::fprintf(stderr, "pipeline failure (%s): %s\n", e.code().c_str(), e.what());
    return kExitPipeline;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "pipeline failure: %s\n", e.what());
    return kExitPipeline;
  }
  return 0;
}
