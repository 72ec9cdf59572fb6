#pragma once

// Per-connection protocol state machine. Pure: it maps (session, frame) to
// (session, outbound frames, optional pipeline request) and reaches the rest
// of the server only through `Services`.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "falcon/geometry.hpp"
#include "falcon/perception.hpp"
#include "falcon/protocol.hpp"
#include "falcon/splats.hpp"

namespace falcon {

enum class SessionState { idle, capturing, processing, ready, inferring };
inline constexpr SessionState kAllSessionStates[] = {SessionState::idle, SessionState::capturing,
                                                     SessionState::processing, SessionState::ready,
                                                     SessionState::inferring};
const char* to_string(SessionState s);

struct Session {
  SessionState state = SessionState::idle;
  std::string object;      // name given by the client
  std::string object_ref;  // resolved asset reference
  std::size_t frames_received = 0;
  std::string stage;       // while processing: "labeling" or "training"
  double progress = 0.0;
  std::string model_id;    // ready / inferring
};

struct PipelineRequest {
  std::string object;      // display name
  std::string object_ref;  // asset reference, see resolve_asset
  std::uint64_t seed = 0;
};

class Services {
 public:
  virtual ~Services() = default;
  /// Object names accepted by SELECT_ASSET.
  virtual std::vector<std::string> catalog() const = 0;
  /// Asset reference for an object name, or nullopt when unknown.
  virtual std::optional<std::string> resolve_object(const std::string& name, std::uint64_t seed) const = 0;
  virtual std::shared_ptr<const SplatAsset> asset(const std::string& ref) const = 0;
  /// Null when the model is not (or no longer) available.
  virtual std::shared_ptr<const PerceptionModel> model(const std::string& id) const = 0;
  virtual std::optional<std::vector<std::uint8_t>> model_file(const std::string& id) const = 0;
};

struct StepResult {
  Session session;
  std::vector<ProtocolFrame> out;
  std::optional<PipelineRequest> pipeline;
};

inline constexpr const char* kServerVersion = "1.0";

/// Handles one client frame.
StepResult session_step(const Session& s, const ProtocolFrame& f, const Services& services);

/// Pipeline events delivered by the worker that owns the session's pipeline.
StepResult session_progress(const Session& s, const std::string& stage, double fraction);
StepResult session_pipeline_done(const Session& s, const std::string& model_id, const nlohmann::json& metrics);
StepResult session_pipeline_failed(const Session& s, const std::string& message);

ProtocolFrame error_frame(const std::string& code, const std::string& message, const nlohmann::json& extra = {});

nlohmann::json pose_to_json(const Pose& p);
Pose pose_from_json(const nlohmann::json& j);

/// Intrinsics used for RENDER_AND_INFER views.
Intrinsics render_view_intrinsics(int width = 256, int height = 256);

}  // namespace falcon
