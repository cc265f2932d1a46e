#include "jetvtol/gcs/telemetry_server.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <vector>

namespace jetvtol::gcs {

namespace {

void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL, 0) | O_NONBLOCK); }

std::optional<CommandKind> kind_from_string(const std::string& s) {
  for (auto k : {CommandKind::Arm, CommandKind::StartTakeoff, CommandKind::SetReference, CommandKind::Abort}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

Json ack_record(const Json& id, const std::string& cmd, const CommandResult& r) {
  Json j;
  j["v"] = kTelemetryVersion;
  j["kind"] = "ack";
  j["id"] = id;
  j["cmd"] = cmd;
  j["accepted"] = r.accepted;
  j["phase"] = to_string(r.phase);
  j["reason"] = r.reason.empty() ? Json(nullptr) : Json(r.reason);
  return j;
}

}  // namespace

std::pair<std::string, std::uint16_t> parse_bind_address(const std::string& text) {
  std::string host = "127.0.0.1";
  std::string port = text;
  if (const auto colon = text.rfind(':'); colon != std::string::npos) {
    if (colon > 0) host = text.substr(0, colon);
    port = text.substr(colon + 1);
  }
  if (host == "localhost") host = "127.0.0.1";
  if (port.empty() || port.find_first_not_of("0123456789") != std::string::npos || port.size() > 5) {
    throw std::runtime_error("invalid bind address '" + text + "'");
  }
  const unsigned long p = std::stoul(port);
  if (p > 65535) throw std::runtime_error("port out of range in '" + text + "'");
  return {host, static_cast<std::uint16_t>(p)};
}

std::optional<OperatorCommand> parse_command_line(const std::string& line, Json* id) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::exception&) {
    throw ProtocolError("command is not valid JSON");
  }
  if (!j.is_object()) throw ProtocolError("command must be a JSON object");
  const auto cmd = j.find("cmd");
  if (cmd == j.end() || !cmd->is_string()) throw ProtocolError("command needs a string field 'cmd'");
  if (id) *id = j.contains("id") ? j["id"] : Json(nullptr);
  const auto kind = kind_from_string(cmd->get<std::string>());
  if (!kind) return std::nullopt;
  OperatorCommand c;
  c.kind = *kind;
  if (const auto z = j.find("z_offset"); z != j.end()) {
    if (!z->is_number()) throw ProtocolError("'z_offset' must be a number");
    c.z_offset = z->get<double>();
  }
  if (const auto tr = j.find("trajectory"); tr != j.end()) {
    if (!tr->is_string()) throw ProtocolError("'trajectory' must be a string");
    c.trajectory = tr->get<std::string>();
  }
  return c;
}

TelemetryServer::TelemetryServer(const std::string& bind, ServerOptions opts) : opts_(opts) {
  const auto [host, port] = parse_bind_address(bind);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw std::runtime_error("cannot resolve bind host '" + host + "'");
  }
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(listen_fd_, 16) != 0) {
    const std::string err = std::strerror(errno);
    ::close(listen_fd_);
    throw std::runtime_error("cannot bind " + bind + ": " + err);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  set_nonblocking(listen_fd_);
  if (::pipe(wake_pipe_) != 0) {
    ::close(listen_fd_);
    throw std::runtime_error("pipe failed");
  }
  set_nonblocking(wake_pipe_[0]);
  set_nonblocking(wake_pipe_[1]);
  running_ = true;
  thread_ = std::thread([this] { loop(); });
}

TelemetryServer::~TelemetryServer() { stop(); }

void TelemetryServer::stop() {
  if (!running_.exchange(false)) return;
  wake();
  thread_.join();
  std::lock_guard lock(mutex_);
  for (auto& [id, c] : clients_) ::close(c.fd);
  clients_.clear();
  ::close(listen_fd_);
  ::close(wake_pipe_[0]);
  ::close(wake_pipe_[1]);
}

void TelemetryServer::wake() {
  const char b = 1;
  [[maybe_unused]] const auto n = ::write(wake_pipe_[1], &b, 1);
}

void TelemetryServer::enqueue(Client& c, std::string line) {
  line.push_back('\n');
  if (c.out.size() >= opts_.queue_capacity) {
    // Keep a partially sent record, drop the oldest whole one after it.
    if (c.offset > 0 && c.out.size() > 1) {
      c.out.erase(c.out.begin() + 1);
    } else if (c.offset == 0) {
      c.out.pop_front();
    }
    ++records_dropped_;
  }
  c.out.push_back(std::move(line));
}

void TelemetryServer::publish(const std::string& line) {
  {
    std::lock_guard lock(mutex_);
    for (auto& [id, c] : clients_) enqueue(c, line);
  }
  wake();
}

void TelemetryServer::send_to(std::uint64_t client, const std::string& line) {
  {
    std::lock_guard lock(mutex_);
    const auto it = clients_.find(client);
    if (it == clients_.end()) return;
    enqueue(it->second, line);
  }
  wake();
}

void TelemetryServer::set_command_handler(CommandHandler h) {
  std::lock_guard lock(handler_mutex_);
  handler_ = std::move(h);
}

void TelemetryServer::set_hello(Json fields) {
  std::lock_guard lock(mutex_);
  hello_ = std::move(fields);
}

std::size_t TelemetryServer::client_count() const {
  std::lock_guard lock(mutex_);
  return clients_.size();
}

bool TelemetryServer::flush(double timeout_s) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
  while (std::chrono::steady_clock::now() < deadline) {
    {
      std::lock_guard lock(mutex_);
      bool empty = true;
      for (const auto& [id, c] : clients_) empty = empty && c.out.empty();
      if (empty) return true;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  return false;
}

void TelemetryServer::close_client(std::uint64_t id) {
  const auto it = clients_.find(id);
  if (it == clients_.end()) return;
  ::close(it->second.fd);
  clients_.erase(it);
}

bool TelemetryServer::handle_line(std::uint64_t client, const std::string& line) {
  Json id;
  std::optional<OperatorCommand> cmd;
  try {
    cmd = parse_command_line(line, &id);
  } catch (const ProtocolError&) {
    return false;
  }
  std::string name;
  try {
    name = Json::parse(line).at("cmd").get<std::string>();
  } catch (const Json::exception&) {
    return false;
  }
  if (!cmd) {
    send_to(client, ack_record(id, name, {false, FlightPhase::Idle, "unknown command '" + name + "'"}).dump());
    return true;
  }
  std::lock_guard lock(handler_mutex_);
  if (!handler_) {
    send_to(client, ack_record(id, name, {false, FlightPhase::Idle, "no scenario is running"}).dump());
    return true;
  }
  handler_(*cmd, [this, client, id, name](const CommandResult& r) { send_to(client, ack_record(id, name, r).dump()); });
  return true;
}

void TelemetryServer::loop() {
  std::vector<pollfd> fds;
  std::vector<std::uint64_t> ids;
  while (running_) {
    fds.clear();
    ids.clear();
    fds.push_back({listen_fd_, POLLIN, 0});
    fds.push_back({wake_pipe_[0], POLLIN, 0});
    {
      std::lock_guard lock(mutex_);
      for (const auto& [id, c] : clients_) {
        fds.push_back({c.fd, static_cast<short>(POLLIN | (c.out.empty() ? 0 : POLLOUT)), 0});
        ids.push_back(id);
      }
    }
    ::poll(fds.data(), fds.size(), 50);
    if (!running_) break;

    if (fds[1].revents & POLLIN) {
      char buf[256];
      while (::read(wake_pipe_[0], buf, sizeof(buf)) > 0) {
      }
    }
    if (fds[0].revents & POLLIN) {
      for (;;) {
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) break;
        set_nonblocking(fd);
        if (opts_.send_buffer_bytes > 0) {
          ::setsockopt(fd, SOL_SOCKET, SO_SNDBUF, &opts_.send_buffer_bytes, sizeof(opts_.send_buffer_bytes));
        }
        std::lock_guard lock(mutex_);
        Json hello;
        hello["v"] = kTelemetryVersion;
        hello["kind"] = "hello";
        hello["server"] = "jetvtol-gcs";
        for (const auto& [k, v] : hello_.items()) hello[k] = v;
        Client c;
        c.fd = fd;
        enqueue(c, hello.dump());
        clients_.emplace(next_id_++, std::move(c));
      }
    }

    const auto now = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::uint64_t id = ids[i];
      const short rev = fds[i + 2].revents;
      bool close_it = false;
      bool malformed = false;

      if (rev & (POLLIN | POLLHUP | POLLERR)) {
        std::vector<std::string> lines;
        {
          std::lock_guard lock(mutex_);
          auto it = clients_.find(id);
          if (it == clients_.end()) continue;
          Client& c = it->second;
          char buf[4096];
          for (;;) {
            const ssize_t n = ::recv(c.fd, buf, sizeof(buf), 0);
            if (n > 0) {
              c.inbuf.append(buf, static_cast<std::size_t>(n));
              continue;
            }
            if (n == 0 || (errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR)) close_it = true;
            break;
          }
          for (std::size_t pos; (pos = c.inbuf.find('\n')) != std::string::npos;) {
            std::string line = c.inbuf.substr(0, pos);
            c.inbuf.erase(0, pos + 1);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) lines.push_back(std::move(line));
          }
          if (c.inbuf.size() > opts_.max_line_bytes) malformed = true;
        }
        for (const auto& line : lines) {
          if (malformed) break;
          if (!handle_line(id, line)) malformed = true;
        }
      }

      std::lock_guard lock(mutex_);
      auto it = clients_.find(id);
      if (it == clients_.end()) continue;
      Client& c = it->second;
      if (malformed) {
        ++malformed_closed_;
        close_client(id);
        continue;
      }
      if (close_it) {
        close_client(id);
        continue;
      }
      while (!c.out.empty()) {
        const std::string& front = c.out.front();
        const ssize_t n = ::send(c.fd, front.data() + c.offset, front.size() - c.offset, MSG_NOSIGNAL);
        if (n > 0) {
          c.offset += static_cast<std::size_t>(n);
          if (c.offset == front.size()) {
            c.out.pop_front();
            c.offset = 0;
          }
          continue;
        }
        if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
          if (!c.blocked_since) c.blocked_since = now;
        } else if (n < 0 && errno != EINTR) {
          close_it = true;
        }
        break;
      }
      if (c.out.empty()) c.blocked_since.reset();
      if (close_it) {
        close_client(id);
      } else if (c.blocked_since &&
                 std::chrono::duration<double>(now - *c.blocked_since).count() > opts_.backpressure_timeout) {
        ++slow_dropped_;
        close_client(id);
      }
    }
  }
}

}  // namespace jetvtol::gcs
