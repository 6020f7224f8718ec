// empt: command-line front end for tokenizer training, data preparation,
// training, evaluation, generation and serving.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "empt/chat_service.hpp"
#include "empt/checkpoint.hpp"
#include "empt/error.hpp"
#include "empt/run_config.hpp"

using namespace empt;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct UsageError : Error {
  explicit UsageError(const std::string& w) : Error("usage", w) {}
};

void setup_logging() {
  spdlog::set_default_logger(spdlog::stderr_color_mt("empt"));
  spdlog::set_pattern("[%H:%M:%S] [%l] %v");
  const char* env = std::getenv("EMPT_LOG");
  const std::string level = env ? env : "info";
  if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else if (level == "info") spdlog::set_level(spdlog::level::info);
  else if (level == "warn") spdlog::set_level(spdlog::level::warn);
  else if (level == "error") spdlog::set_level(spdlog::level::err);
  else spdlog::warn("EMPT_LOG={} not recognized; using info", level);
}

// Utterances of plain text: one per line, "__eou__" also separates.
std::vector<std::string> split_utterances(const std::string& raw) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < raw.size()) {
    auto nl = raw.find('\n', start);
    if (nl == std::string::npos) nl = raw.size();
    const std::string line = raw.substr(start, nl - start);
    std::size_t p = 0;
    while (true) {
      const auto e = line.find("__eou__", p);
      const auto piece = line.substr(p, e == std::string::npos ? std::string::npos : e - p);
      const auto a = piece.find_first_not_of(" \t\r"), b = piece.find_last_not_of(" \t\r");
      if (a != std::string::npos) out.push_back(piece.substr(a, b - a + 1));
      if (e == std::string::npos) break;
      p = e + 7;
    }
    start = nl + 1;
  }
  return out;
}

bool is_sample_cache(const std::string& path) {
  if (!fs::is_regular_file(path)) return false;
  const auto ext = fs::path(path).extension().string();
  return ext != ".jsonl" && ext != ".txt";
}

std::vector<std::string> corpus_texts(const std::string& path) {
  if (!fs::is_directory(path) && fs::path(path).extension() != ".jsonl") return split_utterances(read_file(path));
  std::vector<std::string> texts;
  for (const auto& c : load_data_dir(path).train) {
    for (const auto& u : c.utterances) texts.push_back(u.text);
  }
  return texts;
}

const std::vector<Conversation>& pick_split(const CorpusSplits& s, const std::string& split) {
  if (split == "train") return s.train;
  if (split == "validation") return s.validation;
  if (split == "test") return s.test;
  if (!s.test.empty()) return s.test;
  if (!s.validation.empty()) return s.validation;
  spdlog::warn("no held-out split available; evaluating on the training split");
  return s.train;
}

void ensure_parent(const std::string& path) {
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
}

void write_json(const std::string& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

int cmd_bpe_train(const std::string& corpus, int vocab_size, const std::string& out) {
  const auto texts = corpus_texts(corpus);
  spdlog::info("training BPE on {} texts", texts.size());
  const auto v = train_bpe(texts, vocab_size);
  if (v.size() < vocab_size) spdlog::info("corpus ran out of repeated pairs at {} tokens", v.size());
  ensure_parent(out);
  v.save(out);
  std::cout << json{{"vocab", out}, {"size", v.size()}, {"merges", v.merges().size()}, {"hash", v.hash()}}.dump()
            << "\n";
  return 0;
}

int cmd_data_prepare(const std::string& dir, const SampleConfig& sc, const std::string& out) {
  SampleCache cache;
  cache.corpus = load_data_dir(dir);
  cache.config = sc;
  cache.train_samples = build_samples(cache.corpus.train, sc);
  spdlog::info("splits: train {} / validation {} / test {} conversations", cache.corpus.train.size(),
               cache.corpus.validation.size(), cache.corpus.test.size());
  ensure_parent(out);
  cache.save(out);
  std::cout << json{{"cache", out},
                    {"train_conversations", cache.corpus.train.size()},
                    {"validation_conversations", cache.corpus.validation.size()},
                    {"test_conversations", cache.corpus.test.size()},
                    {"train_samples", cache.train_samples.size()}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_train(RunConfig cfg, const std::string& data, const std::string& out, const std::string& resume,
              const std::string& vocab_flag) {
  if (!vocab_flag.empty()) cfg.vocab = vocab_flag;
  if (cfg.vocab.empty()) throw UsageError("train needs a vocabulary: --vocab or \"vocab\" in the config");
  const auto vocab = Vocabulary::load(cfg.vocab);
  cfg.model.vocab_size = vocab.size();

  std::vector<TrainingSample> samples;
  if (is_sample_cache(data)) {
    auto cache = SampleCache::load(data);
    cfg.data = cache.config;
    samples = std::move(cache.train_samples);
  } else {
    samples = build_samples(load_data_dir(data).train, cfg.data);
  }
  cfg.validate();

  fs::create_directories(out);
  vocab.save((fs::path(out) / "vocab.json").string());
  write_json((fs::path(out) / "config.json").string(), cfg.to_json());

  const std::size_t max_len = static_cast<std::size_t>(cfg.model.max_positions);
  std::size_t skipped = 0;
  const auto encoded = encode_groups(samples, vocab, max_len, &skipped);
  if (skipped > 0) spdlog::warn("{} position group(s) skipped: reply longer than {} positions", skipped, max_len);
  if (encoded.empty()) throw DataError("no trainable samples");

  Model<float> model(cfg.model, cfg.train.seed);
  TrainOptions opt;
  opt.out_dir = out;
  opt.resume_from = resume;
  opt.vocab_path = "../vocab.json";  // relative to checkpoints/
  opt.vocab_hash = vocab.hash();
  opt.on_step = [](const StepMetrics& m) {
    if (m.step % 10 == 0 || m.step == 1) {
      spdlog::info("step {} lr {:.3g} L1 {:.4f} L2 {:.4f} L3 {:.4f} total {:.4f}", m.step, m.lr, m.l1, m.l2, m.l3,
                   m.total);
    }
  };
  const auto r = train(model, encoded, cfg.train, opt);
  json summary = r.last.to_json();
  summary["checkpoint"] = r.final_checkpoint;
  summary["total_steps"] = r.total_steps;
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& ckpt, const std::string& data, const std::string& split,
                 const std::string& out, const std::string& vocab_flag) {
  const auto bundle = load_bundle(ckpt, vocab_flag);
  const CorpusSplits splits = is_sample_cache(data) ? SampleCache::load(data).corpus : load_data_dir(data);
  auto rep = evaluate(bundle.model, bundle.vocab, pick_split(splits, split), cfg.eval);
  rep.model_hash = bundle.checkpoint_hash;
  const auto j = rep.to_json();
  ensure_parent(out);
  write_json(out, j);
  std::cout << json{{"hit_at_1", j["hit_at_1"]},     {"ppl", j["ppl"]},
                    {"bleu", j["bleu"]},             {"token_f1", j["token_f1"]},
                    {"emotion_f1", j["emotion_f1"]}, {"n_positions", j["n_positions"]},
                    {"report", out}}
                   .dump()
            << "\n";
  return 0;
}

// JSON array of {speaker, text, emotion?, act?}, or plain utterances with
// alternating speakers starting at 1. A path to a file holding either works.
json parse_history(const std::string& arg) {
  if (arg.empty()) return json::array();
  const std::string text = fs::is_regular_file(arg) ? read_file(arg) : arg;
  try {
    auto j = json::parse(text);
    if (j.is_array()) return j;
  } catch (const json::parse_error&) {
  }
  json h = json::array();
  int i = 0;
  for (const auto& t : split_utterances(text)) h.push_back({{"speaker", i++ % 2 + 1}, {"text", t}});
  return h;
}

int reply_or_fail(const HttpReply& r) {
  if (r.status == 200) return 0;
  const std::string field = r.body.value("field", std::string());
  const std::string kind = r.status == 413 ? "context-overflow" : "invalid-request";
  throw Error(kind, (field.empty() ? "" : field + ": ") + r.body.value("error", std::string("request failed")));
}

int cmd_generate(const std::string& ckpt, const std::string& vocab_flag, const json& request, bool as_json) {
  auto b = load_bundle(ckpt, vocab_flag);
  const ChatService svc(std::move(b.model), std::move(b.vocab), b.checkpoint_hash);
  const auto r = svc.chat(request);
  reply_or_fail(r);
  if (as_json) std::cout << r.body.dump() << "\n";
  else std::cout << r.body.at("reply").get<std::string>() << "\n";
  spdlog::info("predicted emotion {}, reply conditioned on {}", r.body.at("predicted_emotion").get<std::string>(),
               r.body.at("emotion_used").get<std::string>());
  return 0;
}

ChatServer* g_server = nullptr;

int cmd_serve(const std::string& ckpt, const std::string& vocab_flag, const std::string& addr,
              const std::string& static_dir, double p, double temp) {
  const auto [host, port] = parse_address(addr);
  auto b = load_bundle(ckpt, vocab_flag);
  ChatService svc(std::move(b.model), std::move(b.vocab), b.checkpoint_hash);
  svc.defaults().p = p;
  svc.defaults().temperature = temp;
  svc.defaults().validate();
  ChatServer server(svc, static_dir);
  if (!server.bind(host, port)) throw IoError("cannot bind " + addr);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  spdlog::info("serving on http://{}:{}", host, port);
  server.listen_after_bind();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"empt: dialogue model with emotion, act and topic conditioning"};
  app.require_subcommand(1);

  std::string config_path, data, out, resume, vocab, ckpt, split, corpus, history, topic = "ordinary_life";
  std::string emotion, act, addr = "127.0.0.1:8080", static_dir;
  std::vector<std::string> sets;
  int vocab_size = 4000, window = 2, utt_d = 1, emo_d = 1, distractors = 19, max_groups = 0;
  int max_new_tokens = SamplingParams{}.max_new_tokens;
  std::uint64_t seed = 0;
  double p = SamplingParams{}.p, temp = SamplingParams{}.temperature;
  bool micro = false, exclude_no_emotion = false, no_generate = false, as_json = false;

  auto* bpe = app.add_subcommand("bpe-train", "Learn a byte-level BPE vocabulary");
  bpe->add_option("--corpus", corpus, "JSON-lines file, data directory or plain text")->required();
  bpe->add_option("--vocab-size", vocab_size, "Target vocabulary size")->capture_default_str();
  bpe->add_option("--out", out, "Vocabulary JSON to write")->required();

  auto* prep = app.add_subcommand("data-prepare", "Build the training sample cache");
  prep->add_option("--data-dir", data, "DailyDialog directory, split directory or .jsonl")->required();
  prep->add_option("--window", window, "History window in utterances")->capture_default_str();
  prep->add_option("--utt-distractors", utt_d, "Utterance distractors per position")->capture_default_str();
  prep->add_option("--emo-distractors", emo_d, "Emotion distractors per position")->capture_default_str();
  prep->add_option("--seed", seed, "Distractor sampling seed")->capture_default_str();
  prep->add_option("--out", out, "Cache file to write")->required();

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", config_path, "Run config JSON");
  tr->add_option("--set", sets, "Override a config key: dotted.key=value")->take_all();
  tr->add_option("--data", data, "Sample cache, data directory or .jsonl")->required();
  tr->add_option("--vocab", vocab, "Vocabulary JSON (overrides the config)");
  tr->add_option("--out", out, "Run directory")->required();
  tr->add_option("--resume", resume, "Training checkpoint to resume from");

  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint on held-out conversations");
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ev->add_option("--data", data, "Sample cache, data directory or .jsonl")->required();
  ev->add_option("--vocab", vocab, "Vocabulary JSON (default: from the checkpoint sidecar)");
  ev->add_option("--split", split, "train, validation or test (default: first held-out split)");
  ev->add_option("--config", config_path, "Run config JSON");
  ev->add_option("--set", sets, "Override a config key: dotted.key=value")->take_all();
  auto* ev_d = ev->add_option("--distractors", distractors, "Utterance distractors per position");
  auto* ev_s = ev->add_option("--seed", seed, "Distractor and sampling seed");
  auto* ev_m = ev->add_option("--max-positions", max_groups, "Evaluate at most this many positions (0 = all)");
  ev->add_flag("--micro", micro, "Micro-average emotion precision and recall");
  ev->add_flag("--exclude-no-emotion", exclude_no_emotion, "Drop the no-emotion class from the confusion matrix");
  ev->add_flag("--no-generate", no_generate, "Skip reply generation (no BLEU or F1)");
  ev->add_option("--out", out, "Report JSON to write")->required();

  auto* gen = app.add_subcommand("generate", "Sample one reply");
  gen->add_option("--ckpt", ckpt, "Checkpoint")->required();
  gen->add_option("--vocab", vocab, "Vocabulary JSON (default: from the checkpoint sidecar)");
  gen->add_option("--topic", topic, "Topic label")->capture_default_str();
  gen->add_option("--history", history, "File or inline text: JSON array or utterances separated by __eou__");
  gen->add_option("--p", p, "Nucleus mass")->capture_default_str();
  gen->add_option("--temp", temp, "Temperature")->capture_default_str();
  gen->add_option("--max-new-tokens", max_new_tokens, "Reply length limit")->capture_default_str();
  gen->add_option("--seed", seed, "Sampling seed")->capture_default_str();
  gen->add_option("--emotion", emotion, "Condition on this emotion instead of the predicted one");
  gen->add_option("--act", act, "Dialog act of the reply (default inform)");
  gen->add_flag("--json", as_json, "Print the full response object");

  auto* srv = app.add_subcommand("serve", "Serve the chat API and static UI");
  srv->add_option("--ckpt", ckpt, "Checkpoint")->required();
  srv->add_option("--vocab", vocab, "Vocabulary JSON (default: from the checkpoint sidecar)");
  srv->add_option("--addr", addr, "host:port")->capture_default_str();
  srv->add_option("--static", static_dir, "Directory served at /");
  srv->add_option("--p", p, "Default nucleus mass")->capture_default_str();
  srv->add_option("--temp", temp, "Default temperature")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*bpe) return cmd_bpe_train(corpus, vocab_size, out);
    if (*prep) return cmd_data_prepare(data, SampleConfig{window, utt_d, emo_d, seed}, out);
    if (*tr) return cmd_train(load_run_config(config_path, sets), data, out, resume, vocab);
    if (*ev) {
      if (*ev_d) sets.push_back("eval.n_distractors=" + std::to_string(distractors));
      if (*ev_s) sets.push_back("seed=" + std::to_string(seed));
      if (*ev_m) sets.push_back("eval.max_groups=" + std::to_string(max_groups));
      if (micro) sets.push_back("eval.micro=true");
      if (exclude_no_emotion) sets.push_back("eval.exclude_no_emotion=true");
      if (no_generate) sets.push_back("eval.generate=false");
      auto cfg = load_run_config(config_path, sets);
      if (*ev_s) cfg.eval.seed = cfg.sampling.seed = cfg.eval.sampling.seed = seed;
      return cmd_evaluate(cfg, ckpt, data, split, out, vocab);
    }
    if (*gen) {
      json req = {{"topic", topic},
                  {"history", parse_history(history)},
                  {"sampling", {{"p", p}, {"temperature", temp}, {"max_new_tokens", max_new_tokens}, {"seed", seed}}}};
      if (!emotion.empty()) req["force_emotion"] = emotion;
      if (!act.empty()) req["force_act"] = act;
      return cmd_generate(ckpt, vocab, req, as_json);
    }
    if (*srv) return cmd_serve(ckpt, vocab, addr, static_dir, p, temp);
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return e.kind() == "usage" || e.kind() == "config" || e.kind() == "invalid-request" ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
