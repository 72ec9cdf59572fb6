#include "falcon/session.hpp"

#include <chrono>

#include "falcon/eval.hpp"
#include "falcon/image.hpp"
#include "falcon/renderer.hpp"

namespace falcon {

using nlohmann::json;

const char* to_string(SessionState s) {
  switch (s) {
    case SessionState::idle: return "idle";
    case SessionState::capturing: return "capturing";
    case SessionState::processing: return "processing";
    case SessionState::ready: return "ready";
    case SessionState::inferring: return "inferring";
  }
  return "unknown";
}

ProtocolFrame error_frame(const std::string& code, const std::string& message, const json& extra) {
  json h = {{"code", code}, {"message", message}};
  if (extra.is_object())
    for (const auto& [k, v] : extra.items()) h[k] = v;
  return ProtocolFrame::make(MsgType::error, h);
}

json pose_to_json(const Pose& p) {
  const Quat& q = p.rotation();
  const Vec3& t = p.translation();
  return {{"q", {q.w(), q.x(), q.y(), q.z()}}, {"t", {t.x(), t.y(), t.z()}}};
}

Pose pose_from_json(const json& j) {
  const auto q = j.at("q").get<std::vector<double>>();
  const auto t = j.at("t").get<std::vector<double>>();
  if (q.size() != 4 || t.size() != 3) throw InvalidArgument("pose needs q[4] and t[3]");
  const Quat qq(q[0], q[1], q[2], q[3]);
  if (!(qq.norm() > 1e-12) || !std::isfinite(qq.norm())) throw InvalidArgument("pose quaternion is degenerate");
  const Vec3 tt(t[0], t[1], t[2]);
  if (!tt.allFinite()) throw InvalidArgument("pose translation is not finite");
  return Pose(qq, tt);
}

Intrinsics render_view_intrinsics(int width, int height) { return Intrinsics::centered(width, height, 1.0); }

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

StepResult reply(Session s, ProtocolFrame f) { return {std::move(s), {std::move(f)}, std::nullopt}; }

StepResult out_of_order(const Session& s, MsgType t) {
  return reply(s, error_frame("out_of_order",
                              std::string(to_string(t)) + " is not allowed in state " + to_string(s.state),
                              {{"in_reply_to", to_string(t)}, {"state", to_string(s.state)}}));
}

json request_id_of(const json& h) { return h.contains("request_id") ? h["request_id"] : json(nullptr); }

// Absent seeds default to 0; anything but a non-negative integer is rejected.
std::optional<std::uint64_t> seed_of(const json& h) {
  if (!h.contains("seed")) return 0;
  const json& v = h["seed"];
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  return std::nullopt;
}

bool model_state(SessionState s) { return s == SessionState::ready || s == SessionState::inferring; }

StepResult start_pipeline(Session s, const std::string& object, const std::string& ref, std::uint64_t seed) {
  s.state = SessionState::processing;
  s.object = object;
  s.object_ref = ref;
  s.stage = "labeling";
  s.progress = 0.0;
  s.model_id.clear();
  StepResult r{s, {}, PipelineRequest{object, ref, seed}};
  r.out.push_back(ProtocolFrame::make(MsgType::progress, {{"stage", "labeling"}, {"fraction", 0.0}}));
  return r;
}

StepResult handle_infer(const Session& s, const ProtocolFrame& f, const json& h, const Services& sv) {
  const auto t0 = Clock::now();
  const auto model = sv.model(s.model_id);
  if (!model) return reply(s, error_frame("model_missing", "model '" + s.model_id + "' is not available"));
  Image rgb;
  try {
    rgb = decode_pnm(f.blob);
  } catch (const Error& e) {
    return reply(s, error_frame("bad_request", std::string("INFER_REQUEST blob: ") + e.what(),
                                {{"request_id", request_id_of(h)}}));
  }
  if (rgb.channels != 3)
    return reply(s, error_frame("bad_request", "INFER_REQUEST needs a colour PPM", {{"request_id", request_id_of(h)}}));
  const PerceptionOutput out = infer(*model, rgb);
  Session next = s;
  next.state = SessionState::inferring;
  json rh = {{"pose", pose_to_json(out.pose)},
             {"in_view", out.in_view},
             {"mask_area", out.mask_area},
             {"request_id", request_id_of(h)},
             {"latency_ms", ms_since(t0)}};
  return reply(next, ProtocolFrame::make(MsgType::infer_response, rh, encode_pnm(threshold(out.mask_prob, 0.5f))));
}

StepResult handle_render(const Session& s, const json& h, const Services& sv) {
  const auto t0 = Clock::now();
  const json rid = request_id_of(h);
  const auto model = sv.model(s.model_id);
  if (!model) return reply(s, error_frame("model_missing", "model '" + s.model_id + "' is not available"));
  Pose camera;
  std::string env;
  int width = 256, height = 256;
  try {
    camera = pose_from_json(h.at("camera"));
    const json& e = h.contains("environment") ? h["environment"] : json("env:0");
    env = e.is_number_integer() ? "env:" + std::to_string(e.get<int>()) : e.get<std::string>();
    width = h.value("width", 256);
    height = h.value("height", 256);
    if (width < 16 || height < 16 || width > 2048 || height > 2048) throw InvalidArgument("view size out of range");
  } catch (const std::exception& e) {
    return reply(s, error_frame("bad_request", std::string("RENDER_AND_INFER: ") + e.what(), {{"request_id", rid}}));
  }
  std::shared_ptr<const SplatAsset> background, object;
  try {
    background = sv.asset(env);
    object = sv.asset(s.object_ref);
  } catch (const Error& e) {
    return reply(s, error_frame("unknown_asset", e.what(), {{"request_id", rid}}));
  }
  const Intrinsics k = render_view_intrinsics(width, height);
  const RenderOutput view = render(composite(*background, *object, Pose::identity(), 1.0), camera, k, Lighting{});
  const PerceptionOutput out = infer(*model, view.rgb);
  const Pose gt = relative_pose(camera, Pose::identity());
  const bool gt_in_view = count_foreground(view.mask) > 0;

  // Predicted mask blended in red over the rendered view.
  Image blended = view.rgb;
  const Image mask_full = resize(out.mask_prob, width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const float a = mask_full.at(x, y, 0) > 0.5f ? 0.5f : 0.0f;
      for (int c = 0; c < 3; ++c)
        blended.at(x, y, c) = (1.0f - a) * blended.at(x, y, c) + a * (c == 0 ? 1.0f : 0.0f);
    }
  json errors = nullptr;
  if (gt_in_view)
    errors = {{"mte_percent", mte_percent(out.pose.translation(), gt.translation(), object->object_size())},
              {"mae_rad", geodesic_angle(out.pose.rotation(), gt.rotation())}};
  Session next = s;
  next.state = SessionState::inferring;
  json rh = {{"request_id", rid},          {"gt_pose", pose_to_json(gt)},   {"pred_pose", pose_to_json(out.pose)},
             {"gt_in_view", gt_in_view},   {"in_view", out.in_view},        {"errors", errors},
             {"environment", env},         {"width", width},                {"height", height},
             {"latency_ms", ms_since(t0)}};
  return reply(next, ProtocolFrame::make(MsgType::render_result, rh, encode_pnm(blended)));
}

}  // namespace

namespace {

StepResult dispatch(const Session& s, const ProtocolFrame& f, const json& h, const Services& sv) {
  switch (f.type) {
    case MsgType::hello:
      return reply(s, ProtocolFrame::make(MsgType::hello_ack, {{"server_version", kServerVersion},
                                                               {"protocol_version", kProtocolVersion},
                                                               {"assets", sv.catalog()},
                                                               {"state", to_string(s.state)}}));

    case MsgType::capture_begin: {
      if (s.state == SessionState::capturing || s.state == SessionState::processing) return out_of_order(s, f.type);
      const auto name = h.value("object", std::string());
      if (name.empty()) return reply(s, error_frame("bad_request", "CAPTURE_BEGIN needs an object name"));
      Session next;
      next.state = SessionState::capturing;
      next.object = name;
      return reply(next, ProtocolFrame::make(MsgType::progress, {{"stage", "capture"}, {"fraction", 0.0}, {"frames", 0}}));
    }

    case MsgType::capture_frame: {
      if (s.state != SessionState::capturing) return out_of_order(s, f.type);
      try {
        if (decode_pnm(f.blob).channels != 3) throw InvalidArgument("CAPTURE_FRAME needs a colour PPM");
        if (h.contains("pose")) pose_from_json(h["pose"]);
      } catch (const std::exception& e) {
        return reply(s, error_frame("bad_request", e.what()));
      }
      Session next = s;
      ++next.frames_received;
      return reply(next, ProtocolFrame::make(MsgType::progress, {{"stage", "capture"},
                                                                 {"fraction", 0.0},
                                                                 {"frames", next.frames_received}}));
    }

    case MsgType::capture_end: {
      if (s.state != SessionState::capturing) return out_of_order(s, f.type);
      const auto seed = seed_of(h);
      if (!seed) return reply(s, error_frame("bad_request", "seed must be a non-negative integer"));
      const auto ref = sv.resolve_object(s.object, *seed);
      if (!ref) {
        // Captures cannot be reconstructed here; only catalog objects proceed.
        Session next;
        return reply(next, error_frame("unknown_asset", "no asset for captured object '" + s.object +
                                                            "'; captures are stored but only catalog objects can "
                                                            "be processed"));
      }
      return start_pipeline(s, s.object, *ref, *seed);
    }

    case MsgType::select_asset: {
      if (s.state == SessionState::capturing || s.state == SessionState::processing) return out_of_order(s, f.type);
      const auto name = h.value("archetype", h.value("object", std::string()));
      const auto seed = seed_of(h);
      if (!seed) return reply(s, error_frame("bad_request", "seed must be a non-negative integer"));
      const auto ref = sv.resolve_object(name, *seed);
      if (!ref) return reply(s, error_frame("unknown_asset", "unknown asset '" + name + "'"));
      return start_pipeline(s, name, *ref, *seed);
    }

    case MsgType::model_download: {
      if (!model_state(s.state)) return out_of_order(s, f.type);
      auto bytes = sv.model_file(s.model_id);
      if (!bytes) return reply(s, error_frame("model_missing", "model '" + s.model_id + "' is not available"));
      const std::size_t n = bytes->size();
      return reply(s, ProtocolFrame::make(MsgType::model_download, {{"model_id", s.model_id}, {"bytes", n}},
                                          std::move(*bytes)));
    }

    case MsgType::infer_request:
      if (!model_state(s.state)) return out_of_order(s, f.type);
      return handle_infer(s, f, h, sv);

    case MsgType::render_and_infer:
      if (!model_state(s.state)) return out_of_order(s, f.type);
      return handle_render(s, h, sv);

    case MsgType::hello_ack:
    case MsgType::progress:
    case MsgType::model_ready:
    case MsgType::infer_response:
    case MsgType::render_result:
    case MsgType::error:
      return reply(s, error_frame("out_of_order", std::string(to_string(f.type)) + " is a server message",
                                  {{"in_reply_to", to_string(f.type)}, {"state", to_string(s.state)}}));
  }
  return reply(s, error_frame("bad_request", "unhandled message"));
}

}  // namespace

StepResult session_step(const Session& s, const ProtocolFrame& f, const Services& sv) {
  json h;
  try {
    h = f.header_json();
  } catch (const ProtocolError& e) {
    return reply(s, error_frame("bad_request", e.what()));
  }
  if (!h.is_object()) return reply(s, error_frame("bad_request", "header must be a JSON object"));
  try {
    return dispatch(s, f, h, sv);
  } catch (const json::exception& e) {
    // Wrongly typed header fields.
    return reply(s, error_frame("bad_request", std::string(to_string(f.type)) + ": " + e.what()));
  }
}

StepResult session_progress(const Session& s, const std::string& stage, double fraction) {
  if (s.state != SessionState::processing) return {s, {}, std::nullopt};
  Session next = s;
  fraction = std::clamp(fraction, 0.0, 1.0);
  if (stage == s.stage) fraction = std::max(fraction, s.progress);
  next.stage = stage;
  next.progress = fraction;
  return reply(next, ProtocolFrame::make(MsgType::progress, {{"stage", stage}, {"fraction", fraction}}));
}

StepResult session_pipeline_done(const Session& s, const std::string& model_id, const json& metrics) {
  if (s.state != SessionState::processing) return {s, {}, std::nullopt};
  Session next = s;
  next.state = SessionState::ready;
  next.model_id = model_id;
  next.stage.clear();
  next.progress = 1.0;
  return reply(next, ProtocolFrame::make(MsgType::model_ready,
                                         {{"model_id", model_id}, {"object", s.object}, {"metrics", metrics}}));
}

StepResult session_pipeline_failed(const Session& s, const std::string& message) {
  if (s.state != SessionState::processing) return {s, {}, std::nullopt};
  Session next;
  return reply(next, error_frame("pipeline_failed", message));
}

}  // namespace falcon
