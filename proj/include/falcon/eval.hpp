#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "falcon/datagen.hpp"
#include "falcon/error.hpp"
#include "falcon/image.hpp"
#include "falcon/perception.hpp"
#include "falcon/pnp.hpp"

namespace falcon {

class EmptyTestSet : public Error {
 public:
  explicit EmptyTestSet(const std::string& m) : Error("empty_test_set", m) {}
};
class SplitOverlap : public Error {
 public:
  explicit SplitOverlap(const std::string& m) : Error("split_overlap", m) {}
};

/// Intersection over union of two binary masks (> 0.5 is foreground).
/// Two empty masks agree perfectly and score 1.
double iou(const Image& pred, const Image& gt);

/// Translation error as a percentage of the object size.
double mte_percent(const Vec3& t_pred, const Vec3& t_gt, double object_size);

struct FrameEstimate {
  std::optional<Image> mask;  // absent for pose-only methods
  std::optional<Pose> pose;   // absent when the method produced none
};

using Estimator = std::function<FrameEstimate(const LoadedFrame&)>;

Estimator learned_estimator(const PerceptionModel& model);
/// Simulated-click PnP on `n_keypoints` farthest-point keypoints.
Estimator pnp_estimator(const SplatAsset& asset, std::size_t n_keypoints = 8, double noise_sigma = kDefaultClickNoise);
/// Returns the ground truth; used to validate the metric plumbing.
Estimator oracle_estimator();

struct FrameMetrics {
  std::size_t id = 0;
  bool in_view = false;
  std::optional<double> iou;
  std::optional<double> mte_percent;  // in-view frames with a pose
  std::optional<double> mae_rad;
};

struct MetricRow {
  std::string object;
  std::string method;
  std::optional<double> iou;  // mean over all frames; blank for pose-only methods
  double mte_percent = 0.0;   // mean over in-view frames with a pose
  double mae_rad = 0.0;
  std::size_t n_frames = 0;
  std::size_t n_pose_frames = 0;
  std::size_t n_pose_failures = 0;  // in-view frames where the method gave no pose
  std::size_t n_environments = 0;
};

struct EvalResult {
  MetricRow row;
  std::vector<FrameMetrics> frames;
};

/// Runs `estimator` on every frame of the test set. `train_seeds`, when
/// given, must not share any frame seed with the test manifest.
EvalResult evaluate(const std::string& method, const Estimator& estimator, const Manifest& test,
                    const std::filesystem::path& test_dir, const SplatAsset& asset, const std::string& object_name,
                    const std::set<std::uint64_t>* train_seeds = nullptr);

std::set<std::uint64_t> frame_seeds(const Manifest& m);

/// Markdown table with one row per (object, method) and footnotes.
std::string report_markdown(const std::vector<MetricRow>& rows, double click_noise = kDefaultClickNoise);
/// CSV: object,method,iou,mte_percent,mae_rad,n_frames
std::string report_csv(const std::vector<MetricRow>& rows);

}  // namespace falcon
