#include "falcon/client.hpp"

namespace falcon {

Client Client::connect_tcp(const std::string& host, int port) {
  return Client(net::tcp_transport(net::connect_tcp(host, port)));
}

Client Client::connect_ws(const std::string& host, int port, const std::string& path) {
  return Client(net::ws_client_transport(net::connect_tcp(host, port), host + ":" + std::to_string(port), path));
}

void Client::send(const ProtocolFrame& f) { t_->send(f); }

std::optional<ProtocolFrame> Client::receive(int timeout_ms) {
  bool timed_out = false;
  auto f = t_->receive(timeout_ms, &timed_out);
  if (!f && !timed_out) closed_ = true;
  return f;
}

ProtocolFrame Client::request(const ProtocolFrame& f, int timeout_ms) {
  send(f);
  for (;;) {
    auto r = receive(timeout_ms);
    if (!r) throw IoError(closed_ ? "server closed the connection" : "timed out waiting for a reply");
    if (r->type != MsgType::progress) return *r;
  }
}

void Client::close() {
  if (t_) t_->shutdown();
  closed_ = true;
}

}  // namespace falcon
