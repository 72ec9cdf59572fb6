#include "falcon/server.hpp"

#include <condition_variable>
#include <deque>
#include <list>
#include <mutex>
#include <semaphore>
#include <thread>
#include <variant>

#include "falcon/net.hpp"

namespace falcon {

using nlohmann::json;

namespace {

struct ProgressEvent {
  std::uint64_t pipeline;
  std::string stage;
  double fraction;
};
struct DoneEvent {
  std::uint64_t pipeline;
  std::string model_id;
  json metrics;
};
struct FailedEvent {
  std::uint64_t pipeline;
  std::string message;
};
struct ClosedEvent {};
using Event = std::variant<ProtocolFrame, ProgressEvent, DoneEvent, FailedEvent, ClosedEvent>;

struct Cancelled {};

struct Connection {
  std::unique_ptr<net::Transport> transport;
  std::mutex mu;
  std::condition_variable cv;
  std::deque<Event> queue;
  std::atomic<bool> cancel{false};

  void post(Event e) {
    {
      std::lock_guard lock(mu);
      queue.push_back(std::move(e));
    }
    cv.notify_one();
  }
  Event pop() {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return !queue.empty(); });
    Event e = std::move(queue.front());
    queue.pop_front();
    return e;
  }
};

struct ModelEntry {
  std::shared_ptr<const PerceptionModel> model;
  std::filesystem::path path;
  json metrics;
};

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return out.substr(0, 40);
}

}  // namespace

struct Server::Impl : Services {
  ServerConfig cfg;
  net::Socket tcp_listener, ws_listener;
  int tcp_port = -1, ws_port = -1;
  std::atomic<bool> stopping{false};
  bool started = false;
  std::vector<std::thread> acceptors;

  struct ConnSlot {
    std::thread thread;
    std::shared_ptr<Connection> conn;
    std::shared_ptr<std::atomic<bool>> done;
  };
  std::mutex conns_mu;
  std::list<ConnSlot> conns;
  std::vector<std::thread> workers;

  std::counting_semaphore<1024> slots{1};
  std::atomic<std::uint64_t> next_pipeline{1};
  std::atomic<std::size_t> started_pipelines{0};

  mutable std::mutex store_mu;
  std::map<std::string, ModelEntry> models;      // model id -> entry
  std::map<std::string, std::string> by_key;     // object ref -> model id
  mutable std::map<std::string, std::shared_ptr<const SplatAsset>> assets;

  std::mutex stop_mu;
  std::condition_variable stop_cv;
  bool stopped = false;

  explicit Impl(ServerConfig c) : cfg(std::move(c)), slots(std::max(1, cfg.workers)) {}

  // ---- Services
  std::vector<std::string> catalog() const override {
    std::vector<std::string> out;
    for (Archetype a : kAllArchetypes) out.emplace_back(to_string(a));
    for (const auto& [name, path] : cfg.preload)
      if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
    return out;
  }

  std::optional<std::string> resolve_object(const std::string& name, std::uint64_t seed) const override {
    if (cfg.preload.contains(name)) return "preload:" + name;
    if (archetype_from_string(name)) return name + ":" + std::to_string(seed);
    return std::nullopt;
  }

  std::shared_ptr<const SplatAsset> asset(const std::string& ref) const override {
    std::lock_guard lock(store_mu);
    auto it = assets.find(ref);
    if (it != assets.end()) return it->second;
    std::string real = ref;
    if (ref.starts_with("preload:")) {
      const std::string name = ref.substr(8);
      real = archetype_from_string(name) ? name + ":0" : name;
    }
    auto a = std::make_shared<const SplatAsset>(resolve_asset(real));
    assets.emplace(ref, a);
    return a;
  }

  std::shared_ptr<const PerceptionModel> model(const std::string& id) const override {
    std::lock_guard lock(store_mu);
    auto it = models.find(id);
    return it == models.end() ? nullptr : it->second.model;
  }

  std::optional<std::vector<std::uint8_t>> model_file(const std::string& id) const override {
    std::filesystem::path path;
    {
      std::lock_guard lock(store_mu);
      auto it = models.find(id);
      if (it == models.end()) return std::nullopt;
      path = it->second.path;
    }
    try {
      return read_file(path);
    } catch (const Error&) {
      return std::nullopt;
    }
  }

  // ---- lifecycle
  void start() {
    if (started) throw InvalidArgument("server already started");
    std::filesystem::create_directories(cfg.work_dir);
    for (const auto& [name, path] : cfg.preload) {
      auto m = std::make_shared<const PerceptionModel>(load_model(path));
      const std::string id = "preloaded-" + sanitize(name);
      models[id] = {m, path, json::object()};
      by_key["preload:" + name] = id;
    }
    if (cfg.tcp_port >= 0) tcp_listener = net::listen_tcp(cfg.host, cfg.tcp_port, tcp_port);
    if (cfg.ws_port >= 0) ws_listener = net::listen_tcp(cfg.host, cfg.ws_port, ws_port);
    started = true;
    if (tcp_listener.valid()) acceptors.emplace_back([this] { accept_loop(tcp_listener, false); });
    if (ws_listener.valid()) acceptors.emplace_back([this] { accept_loop(ws_listener, true); });
  }

  void accept_loop(net::Socket& listener, bool websocket) {
    while (!stopping) {
      auto s = net::accept_tcp(listener, 100);
      reap();
      if (!s) continue;
      auto done = std::make_shared<std::atomic<bool>>(false);
      auto conn = std::make_shared<Connection>();
      std::lock_guard lock(conns_mu);
      if (stopping) break;
      conns.push_back({std::thread([this, sock = std::move(*s), conn, done, websocket]() mutable {
                         try {
                           conn->transport = websocket ? net::ws_server_transport(std::move(sock))
                                                       : net::tcp_transport(std::move(sock));
                           serve(conn);
                         } catch (const std::exception&) {
                         }
                         *done = true;
                       }),
                       conn, done});
    }
  }

  void reap() {
    std::lock_guard lock(conns_mu);
    for (auto it = conns.begin(); it != conns.end();) {
      if (*it->done) {
        it->thread.join();
        it = conns.erase(it);
      } else {
        ++it;
      }
    }
  }

  void stop() {
    if (stopping.exchange(true)) return;
    for (auto& t : acceptors) t.join();
    acceptors.clear();
    {
      std::lock_guard lock(conns_mu);
      for (auto& c : conns) {
        c.conn->cancel = true;
        if (c.conn->transport) c.conn->transport->shutdown();
        c.conn->post(ClosedEvent{});
      }
    }
    for (auto& c : conns) c.thread.join();
    conns.clear();
    std::vector<std::thread> ws;
    {
      std::lock_guard lock(store_mu);
      ws.swap(workers);
    }
    for (auto& t : ws) t.join();
    tcp_listener.close();
    ws_listener.close();
    {
      std::lock_guard lock(stop_mu);
      stopped = true;
    }
    stop_cv.notify_all();
  }

  // ---- per connection
  void serve(const std::shared_ptr<Connection>& conn_ptr) {
    Connection& conn = *conn_ptr;
    std::thread reader([&conn] {
      for (;;) {
        try {
          auto f = conn.transport->receive(-1);
          if (!f) break;
          conn.post(std::move(*f));
        } catch (const ProtocolError& e) {
          try {
            conn.transport->send(error_frame("protocol_error", e.what(), {{"kind", to_string(e.kind())}}));
          } catch (const std::exception&) {
          }
          break;
        } catch (const std::exception&) {
          break;
        }
      }
      conn.post(ClosedEvent{});
    });

    Session session;
    std::uint64_t pipeline = 0;
    bool open = true;
    while (open) {
      Event ev = conn.pop();
      StepResult r{session, {}, std::nullopt};
      if (auto* f = std::get_if<ProtocolFrame>(&ev)) {
        r = session_step(session, *f, *this);
      } else if (auto* p = std::get_if<ProgressEvent>(&ev)) {
        if (p->pipeline == pipeline) r = session_progress(session, p->stage, p->fraction);
      } else if (auto* d = std::get_if<DoneEvent>(&ev)) {
        if (d->pipeline == pipeline) r = session_pipeline_done(session, d->model_id, d->metrics);
      } else if (auto* x = std::get_if<FailedEvent>(&ev)) {
        if (x->pipeline == pipeline) r = session_pipeline_failed(session, x->message);
      } else {
        open = false;
      }
      session = r.session;
      try {
        for (const auto& out : r.out) conn.transport->send(out);
      } catch (const std::exception&) {
        open = false;
      }
      if (r.pipeline && open) pipeline = launch(conn_ptr, *r.pipeline);
    }
    conn.cancel = true;
    conn.transport->shutdown();
    reader.join();
  }

  std::uint64_t launch(std::shared_ptr<Connection> conn, const PipelineRequest& req) {
    const std::uint64_t id = next_pipeline++;
    {
      std::lock_guard lock(store_mu);
      auto it = by_key.find(req.object_ref);
      if (it != by_key.end()) {
        conn->post(ProgressEvent{id, "labeling", 1.0});
        conn->post(ProgressEvent{id, "training", 1.0});
        conn->post(DoneEvent{id, it->second, models.at(it->second).metrics});
        return id;
      }
    }
    ++started_pipelines;
    auto task = [this, conn, id, req] {
      slots.acquire();
      struct Release {
        std::counting_semaphore<1024>& s;
        ~Release() { s.release(); }
      } release{slots};
      try {
        if (conn->cancel || stopping) return;
        PipelineConfig pc = cfg.pipeline;
        pc.object = req.object_ref;
        pc.seed = req.seed;
        const std::string model_id = sanitize(req.object) + "-s" + std::to_string(req.seed) + "-" + std::to_string(id);
        pc.out_dir = cfg.work_dir / model_id;
        const PipelineResult res = run_pipeline(pc, [&](const std::string& stage, double f) {
          if (conn->cancel || stopping) throw Cancelled{};
          if (stage == "labeling" || stage == "training") conn->post(ProgressEvent{id, stage, f});
        });
        json metrics = json::object();
        if (!res.metrics.empty()) metrics = metric_row_json(res.metrics.front());
        metrics["labeling_s"] = res.report.at("timings_s").at("labeling");
        metrics["training_s"] = res.report.at("timings_s").at("training");
        auto model = std::make_shared<const PerceptionModel>(load_model(res.model_path));
        {
          std::lock_guard lock(store_mu);
          models[model_id] = {model, res.model_path, metrics};
          by_key[req.object_ref] = model_id;
        }
        conn->post(DoneEvent{id, model_id, metrics});
      } catch (const Cancelled&) {
      } catch (const std::exception& e) {
        if (!conn->cancel) conn->post(FailedEvent{id, e.what()});
      }
    };
    std::lock_guard lock(store_mu);
    workers.emplace_back(task);
    return id;
  }
};

Server::Server(ServerConfig cfg) : impl_(std::make_unique<Impl>(std::move(cfg))) {}
Server::~Server() { impl_->stop(); }
void Server::start() { impl_->start(); }
void Server::stop() { impl_->stop(); }
void Server::wait() {
  std::unique_lock lock(impl_->stop_mu);
  impl_->stop_cv.wait(lock, [&] { return impl_->stopped; });
}
int Server::tcp_port() const { return impl_->tcp_port; }
int Server::ws_port() const { return impl_->ws_port; }
std::size_t Server::pipelines_started() const { return impl_->started_pipelines; }

}  // namespace falcon
