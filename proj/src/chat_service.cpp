#include "empt/chat_service.hpp"

#include <cfloat>
#include <cmath>
#include <random>

#include <spdlog/spdlog.h>

#include "httplib.h"

#include "empt/error.hpp"

using nlohmann::json;

namespace empt {

namespace {

struct BadRequest {
  std::string field;
  std::string message;
};

HttpReply error_reply(int status, const std::string& message, const std::string& field = "") {
  json body = {{"error", message}};
  if (!field.empty()) body["field"] = field;
  return {status, body};
}

template <class E, class Parse>
E label(const json& v, const std::string& field, Parse parse) {
  if (!v.is_string()) throw BadRequest{field, "expected a label string"};
  auto e = parse(v.get<std::string>());
  if (!e) throw BadRequest{field, "unknown label '" + v.get<std::string>() + "'"};
  return *e;
}

double number(const json& v, const std::string& field) {
  if (!v.is_number()) throw BadRequest{field, "expected a number"};
  return v.get<double>();
}

struct ParsedRequest {
  Topic topic = Topic::kOrdinaryLife;
  std::vector<Segment> history;
  SamplingParams sampling;
  bool has_seed = false;
  std::optional<Emotion> force_emotion;
  Act act = Act::kInform;
};

ParsedRequest parse_request(const json& req, const SamplingParams& defaults, const Vocabulary& vocab) {
  if (!req.is_object()) throw BadRequest{"", "request body must be a JSON object"};
  ParsedRequest p;
  p.sampling = defaults;
  for (auto it = req.begin(); it != req.end(); ++it) {
    const auto& k = it.key();
    if (k != "topic" && k != "history" && k != "sampling" && k != "force_emotion" && k != "force_act") {
      throw BadRequest{k, "unknown field"};
    }
  }
  if (!req.contains("topic")) throw BadRequest{"topic", "missing"};
  p.topic = label<Topic>(req["topic"], "topic", parse_topic);

  if (req.contains("history")) {
    const auto& h = req["history"];
    if (!h.is_array()) throw BadRequest{"history", "expected an array"};
    for (std::size_t i = 0; i < h.size(); ++i) {
      const std::string at = "history[" + std::to_string(i) + "]";
      const auto& u = h[i];
      if (!u.is_object()) throw BadRequest{at, "expected an object"};
      for (auto it = u.begin(); it != u.end(); ++it) {
        const auto& k = it.key();
        if (k != "speaker" && k != "text" && k != "emotion" && k != "act") throw BadRequest{at + "." + k, "unknown field"};
      }
      Segment s;
      if (!u.contains("speaker") || !u["speaker"].is_number_integer()) throw BadRequest{at + ".speaker", "expected 1 or 2"};
      const int spk = u["speaker"].get<int>();
      if (spk != 1 && spk != 2) throw BadRequest{at + ".speaker", "expected 1 or 2"};
      s.speaker = spk == 1 ? Vocabulary::kSpeaker1 : Vocabulary::kSpeaker2;
      if (!u.contains("text") || !u["text"].is_string()) throw BadRequest{at + ".text", "expected a string"};
      s.tokens = encode(u["text"].get<std::string>(), vocab);
      if (u.contains("emotion") && !u["emotion"].is_null()) {
        s.emotion_row = static_cast<std::int32_t>(label<Emotion>(u["emotion"], at + ".emotion", parse_emotion));
      }
      if (u.contains("act") && !u["act"].is_null()) {
        s.act_row = static_cast<std::int32_t>(label<Act>(u["act"], at + ".act", parse_act));
      }
      p.history.push_back(std::move(s));
    }
  }

  if (req.contains("sampling")) {
    const auto& s = req["sampling"];
    if (!s.is_object()) throw BadRequest{"sampling", "expected an object"};
    for (auto it = s.begin(); it != s.end(); ++it) {
      const auto& k = it.key();
      const std::string f = "sampling." + k;
      if (k == "p") {
        p.sampling.p = number(*it, f);
        if (!(p.sampling.p > 0 && p.sampling.p <= 1)) throw BadRequest{f, "must lie in (0, 1]"};
      } else if (k == "temperature") {
        p.sampling.temperature = number(*it, f);
        if (!(p.sampling.temperature > 0)) throw BadRequest{f, "must be > 0"};
      } else if (k == "max_new_tokens") {
        if (!it->is_number_integer() || it->get<long long>() < 1) throw BadRequest{f, "expected an integer >= 1"};
        p.sampling.max_new_tokens = static_cast<int>(std::min<long long>(it->get<long long>(), 1 << 20));
      } else if (k == "seed") {
        if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<long long>() >= 0)) {
          throw BadRequest{f, "expected a non-negative integer"};
        }
        p.sampling.seed = it->get<std::uint64_t>();
        p.has_seed = true;
      } else {
        throw BadRequest{f, "unknown field"};
      }
    }
  }
  if (req.contains("force_emotion") && !req["force_emotion"].is_null()) {
    p.force_emotion = label<Emotion>(req["force_emotion"], "force_emotion", parse_emotion);
  }
  if (req.contains("force_act") && !req["force_act"].is_null()) {
    p.act = label<Act>(req["force_act"], "force_act", parse_act);
  }
  return p;
}

json label_names() {
  json e = json::array(), a = json::array(), t = json::array();
  for (auto n : kEmotionNames) e.push_back(std::string(n));
  for (auto n : kActNames) a.push_back(std::string(n));
  for (auto n : kTopicNames) t.push_back(std::string(n));
  return {{"emotions", e}, {"acts", a}, {"topics", t}};
}

}  // namespace

ChatService::ChatService() = default;

ChatService::ChatService(Model<float> model, Vocabulary vocab, std::string model_hash)
    : model_(std::move(model)), vocab_(std::move(vocab)), model_hash_(std::move(model_hash)) {
  if (vocab_.size() > model_->config().vocab_size) throw ConfigError("vocabulary is larger than the model's token table");
}

ChatService ChatService::from_checkpoint(const std::string& path) {
  auto b = load_bundle(path);
  return ChatService(std::move(b.model), std::move(b.vocab), b.checkpoint_hash);
}

HttpReply ChatService::chat(const std::string& body) const {
  json req;
  try {
    req = json::parse(body);
  } catch (const json::parse_error& e) {
    return error_reply(400, std::string("malformed JSON: ") + e.what());
  }
  return chat(req);
}

HttpReply ChatService::chat(const json& request) const {
  if (!model_) return error_reply(503, "model not loaded");
  ParsedRequest p;
  try {
    p = parse_request(request, defaults_, vocab_);
  } catch (const BadRequest& b) {
    return error_reply(400, b.message, b.field);
  }
  if (!p.has_seed) p.sampling.seed = std::random_device{}();
  const auto& model = *model_;
  const std::size_t max_pos = static_cast<std::size_t>(model.config().max_positions);
  if (static_cast<std::size_t>(p.sampling.max_new_tokens) + 3 > max_pos) {
    return error_reply(413, "max_new_tokens leaves no room for the conversation within " + std::to_string(max_pos) +
                                " positions", "sampling.max_new_tokens");
  }

  const TokenId reply_speaker = p.history.empty() || p.history.back().speaker == Vocabulary::kSpeaker2
                                    ? Vocabulary::kSpeaker1
                                    : Vocabulary::kSpeaker2;
  try {
    const auto ranked = predict_emotion(model, p.topic, p.history, reply_speaker);
    const Emotion predicted = ranked.front().emotion;
    const Emotion used = p.force_emotion.value_or(predicted);
    Segment cand{{}, reply_speaker, static_cast<std::int32_t>(used), static_cast<std::int32_t>(p.act)};
    const auto g = generate(model, p.topic, p.history, cand, vocab_, p.sampling);

    json scores = json::object();
    for (const auto& s : ranked) {
      // keep scores strictly inside (0, 1) when the logistic saturates
      scores[std::string(name_of(s.emotion))] = std::clamp(s.score, DBL_MIN, std::nextafter(1.0, 0.0));
    }
    json body = {{"reply", to_valid_utf8(g.text)},
                 {"predicted_emotion", std::string(name_of(predicted))},
                 {"emotion_scores", scores},
                 {"emotion_used", std::string(name_of(used))},
                 {"act_used", std::string(name_of(p.act))},
                 {"token_count", g.ids.size()},
                 {"model_hash", model_hash_}};
    return {200, body};
  } catch (const ContextOverflow& e) {
    return error_reply(413, e.what(), "history");
  }
}

HttpReply ChatService::meta() const {
  json j = label_names();
  j["sampling_defaults"] = {{"p", defaults_.p},
                            {"temperature", defaults_.temperature},
                            {"max_new_tokens", defaults_.max_new_tokens}};
  if (model_) {
    const auto cfg = model_->config().to_json();
    j["model"] = {{"hash", model_hash_},
                  {"config", cfg},
                  {"config_hash", hex64(fnv1a64(cfg.dump()))},
                  {"vocab_size", vocab_.size()}};
  } else {
    j["model"] = nullptr;
  }
  return {200, j};
}

struct ChatServer::Impl {
  httplib::Server server;
};

ChatServer::ChatServer(const ChatService& service, const std::string& static_dir) : impl_(std::make_unique<Impl>()) {
  auto& s = impl_->server;
  auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  s.Post("/api/chat", [&service, send](const httplib::Request& req, httplib::Response& res) {
    const auto r = service.chat(req.body);
    spdlog::info("POST /api/chat -> {}", r.status);
    send(res, r);
  });
  // metadata is fixed for the server's lifetime
  const std::string meta = service.meta().body.dump();
  s.Get("/api/meta", [meta](const httplib::Request&, httplib::Response& res) {
    res.set_content(meta, "application/json");
  });
  if (!static_dir.empty() && !s.set_mount_point("/", static_dir)) {
    throw ConfigError("static directory not found: " + static_dir);
  }
  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
    res.set_content(json{{"error", httplib::status_message(res.status)}}.dump(), "application/json");
    return httplib::Server::HandlerResponse::Handled;
  });
}

ChatServer::~ChatServer() = default;

int ChatServer::bind_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool ChatServer::bind(const std::string& host, int port) { return impl_->server.bind_to_port(host, port); }

bool ChatServer::listen_after_bind() { return impl_->server.listen_after_bind(); }

void ChatServer::stop() { impl_->server.stop(); }

std::pair<std::string, int> parse_address(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos || colon == 0) throw ConfigError("address must be host:port, got '" + addr + "'");
  const std::string port = addr.substr(colon + 1);
  int p = 0;
  try {
    std::size_t used = 0;
    p = std::stoi(port, &used);
    if (used != port.size()) throw std::invalid_argument(port);
  } catch (const std::exception&) {
    throw ConfigError("bad port in address '" + addr + "'");
  }
  if (p < 0 || p > 65535) throw ConfigError("port out of range in '" + addr + "'");
  return {addr.substr(0, colon), p};
}

}  // namespace empt
