#include <filesystem>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "empt/chat_service.hpp"
#include "empt/error.hpp"
#include "httplib.h"

using namespace empt;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.max_positions = 64;
  c.vocab_size = Vocabulary::kMinSize;
  c.embd_dropout = c.resid_dropout = c.attn_dropout = 0.0;
  return c;
}

ChatService make_service() { return ChatService(Model<float>(tiny_config(), 12), Vocabulary(), "abc123"); }

json request() {
  return {{"topic", "ordinary_life"},
          {"history",
           {{{"speaker", 1}, {"text", "You look so happy, any good news?"}, {"emotion", "happiness"}, {"act", "question"}},
            {{"speaker", 2}, {"text", "Yes, I've won the math contest"}}}},
          {"sampling", {{"p", 0.9}, {"temperature", 0.7}, {"max_new_tokens", 8}, {"seed", 7}}}};
}

}  // namespace

TEST_CASE("chat replies with a prediction and a sampled reply") {
  const auto svc = make_service();
  const auto r = svc.chat(request());
  REQUIRE(r.status == 200);
  const auto& b = r.body;
  CHECK(b.at("model_hash") == "abc123");
  CHECK(b.at("act_used") == "inform");
  CHECK(b.at("token_count").get<int>() <= 8);
  const auto& scores = b.at("emotion_scores");
  CHECK(scores.size() == 7);
  std::string best;
  double best_v = -1;
  for (auto it = scores.begin(); it != scores.end(); ++it) {
    const double v = it->get<double>();
    CHECK(v > 0.0);
    CHECK(v < 1.0);
    if (v > best_v) {
      best_v = v;
      best = it.key();
    }
  }
  CHECK(scores.at(b.at("predicted_emotion").get<std::string>()).get<double>() == best_v);
  CHECK(b.at("emotion_used") == b.at("predicted_emotion"));

  // identical seeded requests give identical bodies
  CHECK(svc.chat(request()).body.dump() == b.dump());
  CHECK(svc.chat(request().dump()).body.dump() == b.dump());
}

TEST_CASE("empty history and overrides") {
  const auto svc = make_service();
  json req = {{"topic", "work"}, {"history", json::array()}, {"sampling", {{"seed", 1}, {"max_new_tokens", 4}}}};
  auto r = svc.chat(req);
  CHECK(r.status == 200);
  req = {{"topic", "work"}, {"sampling", {{"seed", 1}, {"max_new_tokens", 4}}}};
  CHECK(svc.chat(req).body.dump() == r.body.dump());

  req["force_emotion"] = "sadness";
  req["force_act"] = "question";
  r = svc.chat(req);
  REQUIRE(r.status == 200);
  CHECK(r.body.at("emotion_used") == "sadness");
  CHECK(r.body.at("act_used") == "question");
}

TEST_CASE("invalid requests name the offending field") {
  const auto svc = make_service();
  auto field_of = [&](json req) {
    const auto r = svc.chat(req);
    CHECK(r.status == 400);
    CHECK(r.body.contains("error"));
    return r.body.value("field", std::string());
  };
  auto req = request();
  req["history"][0]["emotion"] = "joyful";
  CHECK(field_of(req) == "history[0].emotion");
  req = request();
  req["history"][1]["act"] = "greeting";
  CHECK(field_of(req) == "history[1].act");
  req = request();
  req["history"][0]["speaker"] = 3;
  CHECK(field_of(req) == "history[0].speaker");
  req = request();
  req["history"][0]["mood"] = "x";
  CHECK(field_of(req) == "history[0].mood");
  req = request();
  req["topic"] = "sports";
  CHECK(field_of(req) == "topic");
  req = request();
  req.erase("topic");
  CHECK(field_of(req) == "topic");
  req = request();
  req["extra"] = 1;
  CHECK(field_of(req) == "extra");
  req = request();
  req["sampling"]["p"] = 0.0;
  CHECK(field_of(req) == "sampling.p");
  req = request();
  req["sampling"]["temperature"] = -1;
  CHECK(field_of(req) == "sampling.temperature");
  req = request();
  req["sampling"]["top_k"] = 3;
  CHECK(field_of(req) == "sampling.top_k");
  req = request();
  req["force_emotion"] = "bliss";
  CHECK(field_of(req) == "force_emotion");

  const auto bad = svc.chat(std::string("{not json"));
  CHECK(bad.status == 400);
  CHECK(bad.body.contains("error"));
}

TEST_CASE("context overflow and missing model") {
  const auto svc = make_service();
  auto req = request();
  req["sampling"]["max_new_tokens"] = 62;
  auto r = svc.chat(req);
  CHECK(r.status == 413);
  CHECK(r.body.at("field") == "sampling.max_new_tokens");

  ChatService empty;
  r = empty.chat(request());
  CHECK(r.status == 503);
  CHECK(r.body.contains("error"));
  CHECK(empty.meta().status == 200);
}

TEST_CASE("meta lists the closed label sets and sampling defaults") {
  const auto svc = make_service();
  const auto m = svc.meta();
  CHECK(m.status == 200);
  CHECK(m.body.at("emotions").size() == 7);
  CHECK(m.body.at("acts").size() == 4);
  CHECK(m.body.at("topics").size() == 10);
  CHECK(m.body.at("sampling_defaults").at("p") == 0.9);
  CHECK(m.body.at("sampling_defaults").at("temperature") == 0.7);
  CHECK(m.body.at("model").at("hash") == "abc123");
  CHECK(svc.meta().body.dump() == m.body.dump());
}

TEST_CASE("stateless under reordering and concurrency") {
  const auto svc = make_service();
  auto a = request();
  json b = {{"topic", "health"},
            {"history", {{{"speaker", 1}, {"text", "I feel sick."}, {"emotion", "sadness"}}}},
            {"sampling", {{"seed", 3}, {"max_new_tokens", 6}}}};
  const auto ra = svc.chat(a).body.dump();
  const auto rb = svc.chat(b).body.dump();
  CHECK(svc.chat(b).body.dump() == rb);
  CHECK(svc.chat(a).body.dump() == ra);

  std::vector<std::string> out(4);
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i) threads.emplace_back([&, i] { out[i] = svc.chat(i % 2 ? b : a).body.dump(); });
  for (auto& t : threads) t.join();
  for (int i = 0; i < 4; ++i) CHECK(out[i] == (i % 2 ? rb : ra));
}

TEST_CASE("http loopback") {
  const fs::path dir = fs::temp_directory_path() / "empt_static";
  fs::create_directories(dir);
  std::ofstream(dir / "index.html") << "<html>ok</html>";

  const auto svc = make_service();
  ChatServer server(svc, dir.string());
  const int port = server.bind_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { server.listen_after_bind(); });

  httplib::Client cli("127.0.0.1", port);
  auto meta = cli.Get("/api/meta");
  REQUIRE(meta);
  CHECK(meta->status == 200);
  auto meta2 = cli.Get("/api/meta");
  CHECK(meta2->body == meta->body);
  CHECK(json::parse(meta->body).at("emotions").size() == 7);

  auto chat = cli.Post("/api/chat", request().dump(), "application/json");
  REQUIRE(chat);
  CHECK(chat->status == 200);
  CHECK(chat->body == svc.chat(request()).body.dump());

  auto bad = request();
  bad["history"][0]["emotion"] = "joyful";
  auto r400 = cli.Post("/api/chat", bad.dump(), "application/json");
  CHECK(r400->status == 400);
  CHECK(json::parse(r400->body).at("field") == "history[0].emotion");

  auto missing = cli.Get("/nope.txt");
  CHECK(missing->status == 404);
  CHECK(json::parse(missing->body).contains("error"));

  auto page = cli.Get("/index.html");
  CHECK(page->status == 200);
  CHECK(page->body == "<html>ok</html>");

  server.stop();
  th.join();
  fs::remove_all(dir);
}

TEST_CASE("address parsing") {
  CHECK(parse_address("127.0.0.1:8080") == std::pair<std::string, int>{"127.0.0.1", 8080});
  CHECK_THROWS_AS(parse_address("localhost"), ConfigError);
  CHECK_THROWS_AS(parse_address("h:80x"), ConfigError);
  CHECK_THROWS_AS(parse_address("h:70000"), ConfigError);
}
