#pragma once

// Telemetry/command service over TCP. Server to client: newline-delimited
// JSON records (hello, frame, ack, end). Client to server: one JSON object
// per line, {"cmd": "Arm" | "StartTakeoff" | "SetReference" | "Abort", ...}.
//
// A background thread owns all sockets. publish() only enqueues, so it never
// blocks the scheduler; each client has a bounded queue that drops its
// oldest record when full. A client whose socket stays full for longer than
// the backpressure timeout is disconnected, as is one that sends a line that
// is not a JSON command object.

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>

#include "jetvtol/gcs/runtime.hpp"

namespace jetvtol::gcs {

struct ServerOptions {
  std::size_t queue_capacity = 1024;  // records per client
  double backpressure_timeout = 1.0;  // s
  int send_buffer_bytes = 0;          // SO_SNDBUF for client sockets, 0 keeps the default
  std::size_t max_line_bytes = 65536;
};

/// "host:port", ":port" or "port". Port 0 picks an ephemeral port.
std::pair<std::string, std::uint16_t> parse_bind_address(const std::string& text);

/// Parses one client line. Throws ProtocolError if it is not a command object.
/// An unknown command name is returned as std::nullopt.
std::optional<OperatorCommand> parse_command_line(const std::string& line, Json* id = nullptr);

class TelemetryServer {
 public:
  using CommandHandler = std::function<void(const OperatorCommand&, Runtime::AckFn)>;

  /// Binds and starts serving. Throws std::runtime_error on bind failure.
  explicit TelemetryServer(const std::string& bind, ServerOptions opts = {});
  ~TelemetryServer();
  TelemetryServer(const TelemetryServer&) = delete;
  TelemetryServer& operator=(const TelemetryServer&) = delete;

  std::uint16_t port() const { return port_; }

  /// Fan-out to every connected client. Never blocks on sockets.
  void publish(const std::string& line);
  void set_command_handler(CommandHandler h);
  /// Extra fields for the hello record sent on connect.
  void set_hello(Json fields);

  /// Waits until every client queue is empty or the timeout expires.
  bool flush(double timeout_s);
  void stop();

  std::size_t client_count() const;
  std::uint64_t slow_clients_dropped() const { return slow_dropped_; }
  std::uint64_t malformed_clients_closed() const { return malformed_closed_; }
  std::uint64_t records_dropped() const { return records_dropped_; }

 private:
  struct Client {
    int fd = -1;
    std::string inbuf;
    std::deque<std::string> out;
    std::size_t offset = 0;
    std::optional<std::chrono::steady_clock::time_point> blocked_since;
  };

  void loop();
  void wake();
  void enqueue(Client& c, std::string line);
  void send_to(std::uint64_t client, const std::string& line);
  /// Returns false when the client must be closed.
  bool handle_line(std::uint64_t client, const std::string& line);
  void close_client(std::uint64_t id);

  ServerOptions opts_;
  int listen_fd_ = -1;
  int wake_pipe_[2] = {-1, -1};
  std::uint16_t port_ = 0;
  std::thread thread_;
  std::atomic<bool> running_{false};

  mutable std::mutex mutex_;  // clients_, hello_
  std::map<std::uint64_t, Client> clients_;
  std::uint64_t next_id_ = 1;
  Json hello_ = Json::object();

  std::mutex handler_mutex_;
  CommandHandler handler_;

  std::atomic<std::uint64_t> slow_dropped_{0};
  std::atomic<std::uint64_t> malformed_closed_{0};
  std::atomic<std::uint64_t> records_dropped_{0};
};

}  // namespace jetvtol::gcs
