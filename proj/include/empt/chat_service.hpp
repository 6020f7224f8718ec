#pragma once

#include <memory>
#include <optional>
#include <string>

#include "json.hpp"

#include "empt/decoder.hpp"
#include "empt/model.hpp"

namespace empt {

struct HttpReply {
  int status = 200;
  nlohmann::json body;
};

// Stateless request handlers over a frozen model. Every call is independent
// and safe to run concurrently.
class ChatService {
 public:
  ChatService();  // no model: /api/chat answers 503
  ChatService(Model<float> model, Vocabulary vocab, std::string model_hash);
  // Loads a checkpoint and the vocabulary named in its sidecar (relative
  // paths resolve against the checkpoint's directory).
  static ChatService from_checkpoint(const std::string& path);

  bool loaded() const { return model_.has_value(); }
  SamplingParams& defaults() { return defaults_; }

  HttpReply chat(const std::string& body) const;
  HttpReply chat(const nlohmann::json& request) const;
  HttpReply meta() const;

 private:
  std::optional<Model<float>> model_;
  Vocabulary vocab_;
  std::string model_hash_;
  SamplingParams defaults_;
};

// HTTP/1.1 front end: POST /api/chat, GET /api/meta and, when static_dir is
// set, the files under it at /.
class ChatServer {
 public:
  ChatServer(const ChatService& service, const std::string& static_dir = "");
  ~ChatServer();
  // Binds to an ephemeral port and returns it, or -1.
  int bind_any_port(const std::string& host);
  bool bind(const std::string& host, int port);
  bool listen_after_bind();  // blocks until stop()
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// "host:port" -> (host, port); throws ConfigError.
std::pair<std::string, int> parse_address(const std::string& addr);

}  // namespace empt
