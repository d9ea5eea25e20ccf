#include "breps/bridge.hpp"

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <map>
#include <thread>

#include "breps/data.hpp"

namespace breps {

using json = nlohmann::json;

void BridgeEndpoint::validate() const {
  if (timeout_ms <= 0) throw InvalidParameter("bridge: timeout_ms must be > 0");
  if (max_inflight < 1) throw InvalidParameter("bridge: max_inflight must be >= 1");
  if (transport == Transport::stdio && command.empty()) {
    throw InvalidParameter("bridge: stdio endpoint needs a command");
  }
  if (transport == Transport::tcp && (host.empty() || port <= 0 || port > 65535)) {
    throw InvalidParameter("bridge: tcp endpoint needs host:port");
  }
}

BridgeEndpoint BridgeEndpoint::parse(std::string_view spec) {
  BridgeEndpoint ep;
  if (spec.starts_with("stdio:")) {
    ep.transport = Transport::stdio;
    ep.command = std::string(spec.substr(6));
  } else if (spec.starts_with("tcp:")) {
    ep.transport = Transport::tcp;
    const std::string_view rest = spec.substr(4);
    const auto colon = rest.rfind(':');
    if (colon == std::string_view::npos) {
      throw InvalidParameter("bridge endpoint '" + std::string(spec) + "': expected tcp:host:port");
    }
    ep.host = std::string(rest.substr(0, colon));
    try {
      ep.port = std::stoi(std::string(rest.substr(colon + 1)));
    } catch (const std::exception&) {
      throw InvalidParameter("bridge endpoint '" + std::string(spec) + "': bad port");
    }
  } else {
    throw InvalidParameter("bridge endpoint '" + std::string(spec) +
                           "': expected stdio:<command> or tcp:<host>:<port>");
  }
  ep.validate();
  return ep;
}

// ---- base64 ----

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out += {kB64[v >> 18], kB64[(v >> 12) & 63], kB64[(v >> 6) & 63], kB64[v & 63]};
  }
  if (i + 1 == bytes.size()) {
    const unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    out += {kB64[v >> 18], kB64[(v >> 12) & 63], '=', '='};
  } else if (i + 2 == bytes.size()) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out += {kB64[v >> 18], kB64[(v >> 12) & 63], kB64[(v >> 6) & 63], '='};
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw InvalidInput("base64: length is not a multiple of 4");
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::string out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    const bool last = i + 4 == text.size();
    const int pad = last ? (text[i + 3] == '=') + (text[i + 2] == '=') : 0;
    unsigned v = 0;
    for (int k = 0; k < 4; ++k) {
      const int d = k >= 4 - pad ? 0 : value(text[i + k]);
      if (d < 0) throw InvalidInput("base64: invalid character");
      v = (v << 6) | static_cast<unsigned>(d);
    }
    out.push_back(static_cast<char>(v >> 16));
    if (pad < 2) out.push_back(static_cast<char>((v >> 8) & 255));
    if (pad < 1) out.push_back(static_cast<char>(v & 255));
  }
  return out;
}

// ---- channels ----

namespace {

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

void write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw BridgeTransportError(std::string("bridge: write failed: ") + std::strerror(errno));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

class FdChannel : public LineChannel {
 public:
  FdChannel(int read_fd, int write_fd) : read_fd_(read_fd), write_fd_(write_fd) {}

  void write_line(std::string_view line) override {
    std::string buf(line);
    buf.push_back('\n');
    write_all(write_fd_, buf);
  }

  std::string read_line(int timeout_ms) override {
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                            deadline - std::chrono::steady_clock::now())
                            .count();
      if (left <= 0) {
        throw BridgeTimeout("bridge: no reply within " + std::to_string(timeout_ms) + " ms");
      }
      pollfd p{read_fd_, POLLIN, 0};
      const int r = ::poll(&p, 1, static_cast<int>(left));
      if (r < 0) {
        if (errno == EINTR) continue;
        throw BridgeTransportError(std::string("bridge: poll failed: ") + std::strerror(errno));
      }
      if (r == 0) continue;
      char chunk[4096];
      const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw BridgeTransportError(std::string("bridge: read failed: ") + std::strerror(errno));
      }
      if (n == 0) throw BridgeTransportError("bridge: connection closed by server");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 protected:
  int read_fd_;
  int write_fd_;
  std::string buffer_;
};

class ProcessChannel final : public FdChannel {
 public:
  explicit ProcessChannel(const std::string& command) : FdChannel(-1, -1) {
    int to_child[2], from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0 || ::pipe2(from_child, O_CLOEXEC) != 0) {
      throw BridgeTransportError(std::string("bridge: pipe failed: ") + std::strerror(errno));
    }
    pid_ = ::fork();
    if (pid_ < 0) {
      throw BridgeTransportError(std::string("bridge: fork failed: ") + std::strerror(errno));
    }
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
  }

  ~ProcessChannel() override {
    ::close(write_fd_);  // EOF lets a well-behaved server exit
    ::close(read_fd_);
    for (int i = 0; i < 100; ++i) {
      if (::waitpid(pid_, nullptr, WNOHANG) != 0) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
  }

 private:
  pid_t pid_ = -1;
};

class SocketChannel final : public FdChannel {
 public:
  SocketChannel(const std::string& host, int port) : FdChannel(-1, -1) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res);
    if (rc != 0) {
      throw BridgeTransportError("bridge: cannot resolve " + host + ": " + ::gai_strerror(rc));
    }
    int fd = -1;
    for (addrinfo* a = res; a; a = a->ai_next) {
      fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
      ::close(fd);
      fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) {
      throw BridgeTransportError("bridge: cannot connect to " + host + ":" + std::to_string(port));
    }
    read_fd_ = write_fd_ = fd;
  }

  ~SocketChannel() override { ::close(read_fd_); }
};

}  // namespace

std::unique_ptr<LineChannel> open_channel(const BridgeEndpoint& endpoint) {
  endpoint.validate();
  ignore_sigpipe();
  if (endpoint.transport == BridgeEndpoint::Transport::stdio) {
    return std::make_unique<ProcessChannel>(endpoint.command);
  }
  return std::make_unique<SocketChannel>(endpoint.host, endpoint.port);
}

// ---- client ----

namespace {

const json& field(const json& msg, const char* name) {
  const auto it = msg.find(name);
  if (it == msg.end()) throw BridgeProtocolError(name, "missing");
  return *it;
}

double number_field(const json& msg, const char* name) {
  const json& v = field(msg, name);
  if (!v.is_number()) throw BridgeProtocolError(name, "expected a number, got " + v.dump());
  return v.get<double>();
}

std::uint64_t id_field(const json& msg) {
  const json& v = field(msg, "id");
  if (!v.is_number_unsigned()) {
    throw BridgeProtocolError("id", "expected a non-negative integer, got " + v.dump());
  }
  return v.get<std::uint64_t>();
}

}  // namespace

BridgeClient::BridgeClient(const BridgeEndpoint& endpoint)
    : BridgeClient(open_channel(endpoint), endpoint) {}

BridgeClient::BridgeClient(std::unique_ptr<LineChannel> channel, const BridgeEndpoint& endpoint)
    : channel_(std::move(channel)), endpoint_(endpoint) {
  endpoint_.validate();
  handshake();
}

json BridgeClient::read_message() {
  const std::string line = channel_->read_line(endpoint_.timeout_ms);
  json msg = json::parse(line, nullptr, false);
  if (msg.is_discarded()) throw BridgeProtocolError("<message>", "reply is not valid JSON");
  if (!msg.is_object()) throw BridgeProtocolError("<message>", "reply is not a JSON object");
  field(msg, "type");
  if (!msg["type"].is_string()) throw BridgeProtocolError("type", "expected a string");
  return msg;
}

void BridgeClient::handshake() {
  channel_->write_line(json{{"type", "hello"}, {"version", kBridgeProtocolVersion}}.dump());
  const json msg = read_message();
  const std::string type = msg["type"];
  if (type == "error") {
    const std::string code = msg.value("code", "");
    if (code == "version_mismatch") {
      throw BridgeVersionMismatch("bridge: server rejected protocol version " +
                                      std::to_string(kBridgeProtocolVersion) + ": " +
                                      msg.value("message", ""),
                                  -1);
    }
    throw BridgeServerError(code, msg.value("message", ""));
  }
  if (type != "hello_ok") throw BridgeProtocolError("type", "expected hello_ok, got " + type);
  const json& version = field(msg, "version");
  if (!version.is_number_integer()) throw BridgeProtocolError("version", "expected an integer");
  if (version.get<int>() != kBridgeProtocolVersion) {
    throw BridgeVersionMismatch("bridge: server speaks protocol version " +
                                    std::to_string(version.get<int>()) + ", client speaks " +
                                    std::to_string(kBridgeProtocolVersion),
                                version.get<int>());
  }
  const json& images = field(msg, "images");
  if (!images.is_array()) throw BridgeProtocolError("images", "expected an array");
  for (const auto& id : images) {
    if (!id.is_string()) throw BridgeProtocolError("images", "expected strings");
    server_images_.push_back(id.get<std::string>());
    known_.insert(id.get<std::string>());
  }
}

void BridgeClient::register_image(const Instance& inst) {
  const std::string pgm = encode_pgm(to_gray(inst.gt_mask));
  channel_->write_line(json{{"type", "register"},
                            {"image_id", inst.image_id},
                            {"mask_pgm_b64", base64_encode(pgm)}}
                           .dump());
  const json msg = read_message();
  const std::string type = msg["type"];
  if (type == "error") {
    const std::string code = msg.value("code", "");
    if (code == "duplicate_image") {  // already there: fine for our purposes
      known_.insert(inst.image_id);
      return;
    }
    throw BridgeServerError(code, msg.value("message", ""));
  }
  if (type != "ok") throw BridgeProtocolError("type", "expected ok, got " + type);
  id_field(msg);
  known_.insert(inst.image_id);
}

std::uint64_t BridgeClient::send_eval(const std::string& image_id, const BBox& b) {
  const std::uint64_t id = next_id_++;
  channel_->write_line(json{{"type", "eval"},
                            {"id", id},
                            {"image_id", image_id},
                            {"bbox", {b.x1, b.y1, b.x2, b.y2}}}
                           .dump());
  return id;
}

std::uint64_t BridgeClient::read_eval_reply(const std::string& image_id, ModelEval& out) {
  const json msg = read_message();
  const std::string type = msg["type"];
  if (type == "error") {
    const std::string code = msg.value("code", "");
    const std::string message = msg.value("message", "");
    if (code == "unknown_image") throw BridgeUnknownImage(image_id, message);
    throw BridgeServerError(code, message);
  }
  if (type != "eval_ok") throw BridgeProtocolError("type", "expected eval_ok, got " + type);
  const std::uint64_t id = id_field(msg);
  out.dice_loss = number_field(msg, "dice_loss");
  out.iou = number_field(msg, "iou");
  const json& grad = field(msg, "grad");
  if (!grad.is_array() || grad.size() != 4) {
    throw BridgeProtocolError("grad", "expected an array of 4 numbers, got " + grad.dump());
  }
  for (std::size_t k = 0; k < 4; ++k) {
    if (!grad[k].is_number()) throw BridgeProtocolError("grad", "non-numeric entry " + grad[k].dump());
    out.grad[k] = grad[k].get<double>();
  }
  return id;
}

ModelEval BridgeClient::eval(const std::string& image_id, const BBox& b) {
  const std::uint64_t id = send_eval(image_id, b);
  ModelEval out;
  const std::uint64_t got = read_eval_reply(image_id, out);
  if (got != id) {
    throw BridgeProtocolError("id", "expected reply to request " + std::to_string(id) + ", got " +
                                        std::to_string(got));
  }
  return out;
}

std::vector<ModelEval> BridgeClient::eval_batch(const std::string& image_id,
                                                std::span<const BBox> boxes) {
  std::vector<ModelEval> out(boxes.size());
  std::map<std::uint64_t, std::size_t> pending;
  std::size_t sent = 0;
  while (sent < boxes.size() || !pending.empty()) {
    while (sent < boxes.size() && pending.size() < static_cast<std::size_t>(endpoint_.max_inflight)) {
      pending.emplace(send_eval(image_id, boxes[sent]), sent);
      ++sent;
    }
    ModelEval ev;
    const std::uint64_t id = read_eval_reply(image_id, ev);
    const auto it = pending.find(id);
    if (it == pending.end()) {
      throw BridgeProtocolError("id", "reply to unknown or completed request " + std::to_string(id));
    }
    out[it->second] = ev;
    pending.erase(it);
  }
  return out;
}

// ---- model ----

BridgeModel::BridgeModel(const BridgeEndpoint& endpoint)
    : client_(endpoint),
      name_(endpoint.transport == BridgeEndpoint::Transport::stdio
                ? "bridge:stdio:" + endpoint.command
                : "bridge:tcp:" + endpoint.host + ":" + std::to_string(endpoint.port)) {}

ModelEval BridgeModel::eval(const Instance& inst, const BBox& b) {
  std::lock_guard lock(mutex_);
  if (!client_.has_image(inst.image_id)) client_.register_image(inst);
  return client_.eval(inst.image_id, b);
}

std::unique_ptr<SegModel> make_model(std::string_view spec, int timeout_ms) {
  if (spec == "toy") return std::make_unique<ToyModel>();
  if (spec.starts_with("bridge:")) {
    BridgeEndpoint ep = BridgeEndpoint::parse(spec.substr(7));
    ep.timeout_ms = timeout_ms;
    return std::make_unique<BridgeModel>(ep);
  }
  throw InvalidParameter("unknown model '" + std::string(spec) +
                         "' (expected toy, bridge:stdio:<cmd> or bridge:tcp:<host>:<port>)");
}

}  // namespace breps
