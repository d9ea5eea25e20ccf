#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "breps/error.hpp"
#include "breps/segmodel.hpp"

namespace breps {

inline constexpr int kBridgeProtocolVersion = 1;

class BridgeError : public Error {
 public:
  using Error::Error;
};

// No reply within the endpoint timeout.
class BridgeTimeout : public BridgeError {
 public:
  using BridgeError::BridgeError;
};

// Connection could not be opened, or closed underneath us.
class BridgeTransportError : public BridgeError {
 public:
  using BridgeError::BridgeError;
};

// Reply that does not follow the message schema.
class BridgeProtocolError : public BridgeError {
 public:
  BridgeProtocolError(const std::string& field, const std::string& what)
      : BridgeError("bridge protocol error in field '" + field + "': " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class BridgeVersionMismatch : public BridgeError {
 public:
  BridgeVersionMismatch(const std::string& what, int server_version)
      : BridgeError(what), server_version_(server_version) {}
  int server_version() const noexcept { return server_version_; }

 private:
  int server_version_;
};

// Error frame sent by the server.
class BridgeServerError : public BridgeError {
 public:
  BridgeServerError(const std::string& code, const std::string& message)
      : BridgeError("bridge server error [" + code + "]: " + message), code_(code) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class BridgeUnknownImage : public BridgeError {
 public:
  BridgeUnknownImage(const std::string& image_id, const std::string& message)
      : BridgeError("bridge server does not know image '" + image_id + "': " + message),
        image_id_(image_id) {}
  const std::string& image_id() const noexcept { return image_id_; }

 private:
  std::string image_id_;
};

struct BridgeEndpoint {
  enum class Transport { stdio, tcp };

  Transport transport = Transport::stdio;
  std::string command;  // stdio: run through /bin/sh -c
  std::string host;     // tcp
  int port = 0;         // tcp
  int timeout_ms = 30000;
  int max_inflight = 1;

  void validate() const;

  // "stdio:<command>" or "tcp:<host>:<port>".
  static BridgeEndpoint parse(std::string_view spec);
};

// Line transport: one JSON object per line.
class LineChannel {
 public:
  virtual ~LineChannel() = default;
  virtual void write_line(std::string_view line) = 0;
  // Throws BridgeTimeout after timeout_ms without a complete line.
  virtual std::string read_line(int timeout_ms) = 0;
};

std::unique_ptr<LineChannel> open_channel(const BridgeEndpoint& endpoint);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);  // throws InvalidInput

// Client side of the bridge protocol. Not thread-safe; BridgeModel adds the
// serialization the SegModel interface needs.
class BridgeClient {
 public:
  // Opens the channel and performs the handshake.
  explicit BridgeClient(const BridgeEndpoint& endpoint);
  // For tests: handshake over an existing channel.
  BridgeClient(std::unique_ptr<LineChannel> channel, const BridgeEndpoint& endpoint);

  const std::vector<std::string>& server_images() const { return server_images_; }
  bool has_image(const std::string& image_id) const { return known_.count(image_id) != 0; }

  // Sends the instance mask as base64 PGM.
  void register_image(const Instance& inst);

  ModelEval eval(const std::string& image_id, const BBox& b);

  // Keeps up to max_inflight requests outstanding and matches replies by id,
  // so results come back in input order whatever order the server answers.
  std::vector<ModelEval> eval_batch(const std::string& image_id, std::span<const BBox> boxes);

  std::uint64_t last_request_id() const { return next_id_ - 1; }

 private:
  void handshake();
  nlohmann::json read_message();
  std::uint64_t send_eval(const std::string& image_id, const BBox& b);
  // Returns the id of the reply and stores the evaluation in `out`.
  std::uint64_t read_eval_reply(const std::string& image_id, ModelEval& out);

  std::unique_ptr<LineChannel> channel_;
  BridgeEndpoint endpoint_;
  std::vector<std::string> server_images_;
  std::set<std::string> known_;
  std::uint64_t next_id_ = 1;
};

// SegModel backed by a bridge connection. Instances are registered lazily on
// first use.
class BridgeModel final : public SegModel {
 public:
  explicit BridgeModel(const BridgeEndpoint& endpoint);

  ModelEval eval(const Instance& inst, const BBox& b) override;
  bool concurrent_safe() const override { return false; }
  std::string name() const override { return name_; }

  BridgeClient& client() { return client_; }

 private:
  std::mutex mutex_;
  BridgeClient client_;
  std::string name_;
};

// "toy", "bridge:stdio:<command>" or "bridge:tcp:<host>:<port>".
std::unique_ptr<SegModel> make_model(std::string_view spec, int timeout_ms = 30000);

}  // namespace breps
