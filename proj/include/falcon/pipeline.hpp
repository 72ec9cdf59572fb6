#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include <json.hpp>

#include "falcon/datagen.hpp"
#include "falcon/eval.hpp"
#include "falcon/perception.hpp"

namespace falcon {

struct PipelineConfig {
  std::string object = "car";  // archetype name or asset reference
  std::uint64_t asset_seed = 0;  // used when `object` is a bare archetype name
  std::size_t count = 200;       // training frames
  std::size_t test_count = 200;  // held-out frames
  std::uint64_t seed = 0;
  RandomizationConfig randomization;  // its seed is derived from `seed`
  TrainConfig train;                  // its seed is derived from `seed`
  bool pnp_baseline = true;
  std::size_t pnp_keypoints = 8;
  double pnp_noise = kDefaultClickNoise;
  std::filesystem::path out_dir;
};

/// Stage is "asset", "labeling", "training" or "evaluation"; fraction in [0,1]
/// and non-decreasing within a stage.
using StageProgressFn = std::function<void(const std::string& stage, double fraction)>;

struct PipelineResult {
  nlohmann::json report;  // RunReport
  std::filesystem::path model_path;
  std::vector<MetricRow> metrics;
};

/// Resolves "car" style names to "car:<asset_seed>"; other references pass through.
std::string object_reference(const std::string& object, std::uint64_t asset_seed);

/// Asset generation, labeling of training and held-out sets, training and
/// evaluation. Writes data/, test/, model.fapm, report.json, report.txt,
/// eval.md and eval.csv under out_dir.
PipelineResult run_pipeline(const PipelineConfig& cfg, const StageProgressFn& progress = {});

std::string report_text(const nlohmann::json& report);

nlohmann::json train_config_json(const TrainConfig& c);
nlohmann::json metric_row_json(const MetricRow& r);

}  // namespace falcon
