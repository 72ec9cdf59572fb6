#include "falcon/eval.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <mutex>
#include <thread>

#include "falcon/rng.hpp"

namespace falcon {

double iou(const Image& pred, const Image& gt) {
  if (!pred.same_shape(gt) || pred.channels != 1)
    throw DimensionMismatch("iou needs two single-channel masks of equal size");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool a = pred.data[i] > 0.5f, b = gt.data[i] > 0.5f;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double mte_percent(const Vec3& t_pred, const Vec3& t_gt, double object_size) {
  if (!(object_size > 0)) throw InvalidArgument("object size must be positive");
  return 100.0 * (t_pred - t_gt).norm() / object_size;
}

Estimator learned_estimator(const PerceptionModel& model) {
  return [&model](const LoadedFrame& f) {
    const PerceptionOutput out = infer(model, f.rgb);
    FrameEstimate e;
    e.mask = threshold(out.mask_prob, 0.5f);
    e.pose = out.pose;
    return e;
  };
}

Estimator pnp_estimator(const SplatAsset& asset, std::size_t n_keypoints, double noise_sigma) {
  auto keypoints = std::make_shared<const std::vector<Vec3>>(select_keypoints(asset, n_keypoints));
  return [keypoints, noise_sigma](const LoadedFrame& f) {
    FrameEstimate e;
    if (!f.label.in_view) return e;
    try {
      e.pose = pnp_estimate_frame(f.label, *keypoints, noise_sigma).pose;
    } catch (const NoConvergence& nc) {
      e.pose = nc.best().pose;
    } catch (const NotVisible&) {
    } catch (const DegenerateConfiguration&) {
    }
    return e;
  };
}

Estimator oracle_estimator() {
  return [](const LoadedFrame& f) {
    FrameEstimate e;
    e.mask = f.mask;
    if (f.label.in_view) e.pose = f.label.pose_label;
    return e;
  };
}

std::set<std::uint64_t> frame_seeds(const Manifest& m) {
  std::set<std::uint64_t> s;
  for (const auto& f : m.frames) s.insert(mix_seeds(m.config.seed, f.seed));
  return s;
}

EvalResult evaluate(const std::string& method, const Estimator& estimator, const Manifest& test,
                    const std::filesystem::path& test_dir, const SplatAsset& asset, const std::string& object_name,
                    const std::set<std::uint64_t>* train_seeds) {
  if (test.frames.empty()) throw EmptyTestSet("test set has no frames");
  if (train_seeds) {
    for (auto s : frame_seeds(test))
      if (train_seeds->contains(s)) throw SplitOverlap("test set shares frame seeds with the training set");
  }
  const double size = asset.object_size();

  EvalResult res;
  res.frames.resize(test.frames.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < test.frames.size(); i = next++) {
      try {
        const LoadedFrame lf = load_frame(test_dir, test.frames[i]);
        const FrameEstimate est = estimator(lf);
        FrameMetrics fm;
        fm.id = lf.label.id;
        fm.in_view = lf.label.in_view;
        if (est.mask) {
          Image gt = lf.mask;
          if (!gt.same_shape(*est.mask)) gt = threshold(resize(gt, est.mask->width, est.mask->height), 0.5f);
          fm.iou = iou(*est.mask, gt);
        }
        if (fm.in_view && est.pose) {
          const Pose scaled_gt = lf.label.pose_label;
          fm.mte_percent = mte_percent(est.pose->translation(), scaled_gt.translation(), size * lf.label.scale);
          fm.mae_rad = geodesic_angle(est.pose->rotation(), scaled_gt.rotation());
        }
        res.frames[i] = fm;
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        next = test.frames.size();
      }
    }
  };
  const unsigned n_threads = std::max(1u, std::min(4u, std::thread::hardware_concurrency()));
  std::vector<std::thread> threads;
  for (unsigned t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);

  MetricRow& row = res.row;
  row.object = object_name;
  row.method = method;
  row.n_frames = res.frames.size();
  std::set<std::string> envs;
  for (const auto& f : test.frames) envs.insert(f.background);
  row.n_environments = envs.size();
  double iou_sum = 0.0, mte_sum = 0.0, mae_sum = 0.0;
  std::size_t iou_n = 0;
  for (const auto& fm : res.frames) {
    if (fm.iou) iou_sum += *fm.iou, ++iou_n;
    if (fm.mte_percent) {
      mte_sum += *fm.mte_percent;
      mae_sum += *fm.mae_rad;
      ++row.n_pose_frames;
    } else if (fm.in_view) {
      ++row.n_pose_failures;
    }
  }
  if (iou_n == res.frames.size()) row.iou = iou_sum / static_cast<double>(iou_n);
  if (row.n_pose_frames > 0) {
    row.mte_percent = mte_sum / static_cast<double>(row.n_pose_frames);
    row.mae_rad = mae_sum / static_cast<double>(row.n_pose_frames);
  }
  return res;
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

std::string report_markdown(const std::vector<MetricRow>& rows, double click_noise) {
  std::ostringstream o;
  o << "| Object | Method | IoU | MTE (%) | MAE (rad) | Frames |\n";
  o << "|---|---|---|---|---|---|\n";
  bool any_failures = false;
  for (const auto& r : rows) {
    o << "| " << r.object << " | " << r.method << " | " << (r.iou ? fmt("%.3f", *r.iou) : std::string()) << " | "
      << fmt("%.1f", r.mte_percent) << " | " << fmt("%.3f", r.mae_rad) << " | " << r.n_frames << " |\n";
    any_failures = any_failures || r.n_pose_failures > 0;
  }
  o << "\nIoU is the mean over all test frames; a frame where both masks are empty scores 1.\n";
  o << "MTE is normalized by object size; MTE and MAE are means over in-view frames.\n";
  o << "PnP outputs only pose, so its IoU is left blank. Its correspondences are simulated clicks: "
       "ground-truth keypoint projections plus "
    << fmt("%g", click_noise) << " px Gaussian noise.\n";
  if (any_failures) {
    o << "\nIn-view frames without a pose estimate (excluded from MTE/MAE):";
    for (const auto& r : rows)
      if (r.n_pose_failures) o << " " << r.object << "/" << r.method << "=" << r.n_pose_failures;
    o << "\n";
  }
  return o.str();
}

std::string report_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream o;
  o << "object,method,iou,mte_percent,mae_rad,n_frames\n";
  for (const auto& r : rows)
    o << r.object << "," << r.method << "," << (r.iou ? fmt("%.6f", *r.iou) : std::string()) << ","
      << fmt("%.6f", r.mte_percent) << "," << fmt("%.6f", r.mae_rad) << "," << r.n_frames << "\n";
  return o.str();
}

}  // namespace falcon
