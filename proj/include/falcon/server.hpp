#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "falcon/pipeline.hpp"
#include "falcon/session.hpp"

namespace falcon {

struct ServerConfig {
  std::string host = "127.0.0.1";
  int tcp_port = 7878;  // 0 picks a free port, negative disables
  int ws_port = 7879;   // browser transport; same rules
  int workers = 2;      // concurrent pipelines across all sessions
  std::filesystem::path work_dir = "falcon-server";
  /// Template for pipelines started by SELECT_ASSET / CAPTURE_END; object,
  /// seed and out_dir are filled per request.
  PipelineConfig pipeline;
  /// Object name -> model file served without training (SELECT_ASSET with
  /// any seed returns it).
  std::map<std::string, std::filesystem::path> preload;
};

class Server {
 public:
  explicit Server(ServerConfig cfg);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds the listeners and starts accepting. Throws IoError.
  void start();
  /// Stops listeners, closes connections and cancels running pipelines.
  void stop();
  /// Blocks until stop() is called from another thread.
  void wait();

  int tcp_port() const;
  int ws_port() const;
  std::size_t pipelines_started() const;

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace falcon
