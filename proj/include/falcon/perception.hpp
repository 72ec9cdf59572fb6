#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "falcon/datagen.hpp"
#include "falcon/error.hpp"
#include "falcon/geometry.hpp"
#include "falcon/image.hpp"
#include "falcon/splats.hpp"

namespace falcon {

class ResolutionMismatch : public Error {
 public:
  explicit ResolutionMismatch(const std::string& m) : Error("resolution_mismatch", m) {}
};
class CorruptModel : public Error {
 public:
  explicit CorruptModel(const std::string& m) : Error("corrupt_model", m) {}
};
class VersionMismatch : public Error {
 public:
  explicit VersionMismatch(const std::string& m) : Error("version_mismatch", m) {}
};
class EmptyDataset : public Error {
 public:
  explicit EmptyDataset(const std::string& m) : Error("empty_dataset", m) {}
};

/// Layer widths of the mask + gated-attention pose network.
struct Architecture {
  int input_width = 64;
  int input_height = 64;
  std::array<int, 3> encoder = {8, 16, 32};
  std::array<int, 3> decoder = {16, 16, 8};
  int hidden = 64;
  /// Predicted-mask pixel count below which the object is reported absent.
  int min_mask_area = 25;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

struct PerceptionModel {
  Architecture arch;
  std::vector<ParamTensor> params;  // fixed order, see param_layout()

  const ParamTensor& param(const std::string& name) const;
  ParamTensor& param(const std::string& name);
  std::size_t parameter_count() const;
};

/// Names and shapes of every parameter tensor in file/descriptor order.
std::vector<std::pair<std::string, std::vector<int>>> param_layout(const Architecture& arch);

/// He-normal convolution weights, zero biases, pose head biased toward the
/// identity rotation.
PerceptionModel init_model(const Architecture& arch, std::uint64_t seed);

struct ForwardOptions {
  /// Replaces the sigmoid gate with a constant (test hook).
  std::optional<double> gate_override;
};

struct PerceptionOutput {
  Image mask_prob;            // 1 channel, values in (0,1)
  Pose pose;                  // object in camera frame, unit quaternion
  std::array<double, 7> raw;  // unnormalized head output: q(4), t(3)
  std::size_t mask_area = 0;  // pixels with probability > 0.5
  bool in_view = false;       // mask_area >= min_mask_area
};

/// `rgb` must already be at the model's input resolution.
PerceptionOutput forward(const PerceptionModel& model, const Image& rgb, const ForwardOptions& opt = {});

/// Resizes to the model resolution, then runs forward().
PerceptionOutput infer(const PerceptionModel& model, const Image& rgb);

/// Image/mask preparation shared by training, evaluation and serving.
Image prepare_input(const Image& rgb, const Architecture& arch);
Image prepare_mask(const Image& mask, const Architecture& arch);

// ---- loss ----

struct TrainConfig {
  int stage1_epochs = 5;
  int stage2_epochs = 15;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double lambda_seg = 1.0;
  double lambda_pose = 1.0;
  double lambda_reproj = 0.1;
  int reproj_every = 8;
  /// Central-difference steps on the pose tangent: radians, and a fraction
  /// of the object size for translation.
  double fd_rotation_step = 1e-2;
  double fd_translation_step = 1e-2;
  std::uint64_t seed = 0;
  Architecture arch;

  void validate() const;
};

/// Re-renders a frame's object at a hypothesized pose over the frame's
/// background, camera and lighting, at the model resolution.
class ReprojectionRenderer {
 public:
  ReprojectionRenderer(SplatAsset object, std::map<std::string, SplatAsset> backgrounds, Architecture arch);

  /// Loads the object and every background named by a manifest.
  static ReprojectionRenderer for_manifest(const Manifest& m, const Architecture& arch);

  Image render(const LabeledFrame& frame, const Pose& object_in_camera) const;
  double object_size() const { return object_.object_size(); }

 private:
  SplatAsset object_;
  std::map<std::string, SplatAsset> backgrounds_;
  Architecture arch_;
};

struct LossTerms {
  double seg = 0.0;
  double pose = 0.0;
  double reproj = 0.0;
  double total = 0.0;
};

/// Translation error squared plus (1 - |q_pred . q_gt|).
double pose_loss(const Pose& pred, const Pose& gt);

/// total = l_seg*BCE + in_view*l_pose*pose + in_view*selected*l_reproj*(1 - ssim).
/// `rgb` and `mask` are the frame images at the model resolution. The
/// reprojection term is skipped when `renderer` is null or `selected` is false.
LossTerms compute_loss(const PerceptionOutput& out, const LabeledFrame& frame, const Image& rgb,
                       const Image& mask, const ReprojectionRenderer* renderer, const TrainConfig& cfg,
                       bool selected);

/// d(loss)/d(raw head output) for a loss whose gradient on the 6-dim left
/// tangent (omega, v) at the predicted pose is `tangent_grad`.
std::array<double, 7> tangent_to_raw_gradient(const std::array<double, 7>& raw, const Vec6& tangent_grad);

// ---- training ----

struct EpochLog {
  int stage = 1;
  int epoch = 0;  // within the stage
  double seg = 0.0;
  double pose = 0.0;
  double reproj = 0.0;
  double total = 0.0;
  std::size_t reproj_samples = 0;
  double seconds = 0.0;
};

struct TrainReport {
  std::size_t frames = 0;
  std::size_t in_view_frames = 0;
  double initial_seg_loss = 0.0;   // full-dataset BCE before training
  double stage1_seg_loss = 0.0;    // full-dataset BCE after stage 1
  std::vector<EpochLog> epochs;
  double seconds = 0.0;
};

struct TrainResult {
  PerceptionModel model;
  TrainReport report;
};

/// Stage 1 updates encoder and mask decoder with the segmentation loss only;
/// stage 2 updates every parameter with the full loss.
TrainResult train(const std::filesystem::path& dataset_dir, const TrainConfig& cfg,
                  const ProgressFn& progress = {});

/// Full-dataset mean BCE of a model (forward only).
double dataset_seg_loss(const PerceptionModel& model, const std::vector<Image>& inputs,
                        const std::vector<Image>& masks);

// ---- model file ----
//
// "FAPM", u8 version, u32 LE descriptor length, JSON descriptor, then per
// tensor: u32 LE name length, name, u32 LE rank, rank x u32 LE dims,
// LE float32 data, in descriptor order.

inline constexpr std::uint8_t kModelVersion = 1;

std::vector<std::uint8_t> encode_model(const PerceptionModel& model);
PerceptionModel decode_model(std::span<const std::uint8_t> bytes);
void save_model(const std::filesystem::path& path, const PerceptionModel& model);
PerceptionModel load_model(const std::filesystem::path& path);

}  // namespace falcon
