#include "empt/corpus.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

#include "empt/checkpoint.hpp"
#include "empt/error.hpp"
#include "empt/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace empt {
namespace {

std::string trim(std::string_view s) {
  const char* ws = " \t\r\n\v\f";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  // A trailing blank line is a file-ending artifact, not a conversation.
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  return lines;
}

std::vector<std::string> split_eou(const std::string& line, const std::string& where) {
  static const std::string kEou = "__eou__";
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(kEou, start);
    std::string piece = trim(std::string_view(line).substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) {
      if (!piece.empty()) out.push_back(std::move(piece));
      break;
    }
    if (piece.empty()) throw DataError(where + ": empty utterance");
    out.push_back(std::move(piece));
    start = pos + kEou.size();
  }
  return out;
}

std::vector<int> parse_digits(const std::string& line, const std::string& where) {
  std::vector<int> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) {
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw DataError(where + ": not a label digit: '" + tok + "'");
    }
    out.push_back(std::stoi(tok));
  }
  return out;
}

std::vector<Conversation> parse_parallel(const std::vector<std::string>& text, const std::string& text_name,
                                         const std::vector<std::string>& emo, const std::string& emo_name,
                                         const std::vector<std::string>& act, const std::string& act_name,
                                         const std::vector<Topic>& topics) {
  auto check_lines = [&](std::size_t n, const std::string& name) {
    if (n != text.size()) {
      throw DataError(name + ": " + std::to_string(n) + " lines but " + text_name + " has " +
                      std::to_string(text.size()) + " (first unmatched line " +
                      std::to_string(std::min(n, text.size()) + 1) + ")");
    }
  };
  check_lines(emo.size(), emo_name);
  check_lines(act.size(), act_name);
  std::vector<Conversation> out;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const std::string line_no = std::to_string(i + 1);
    const auto utts = split_eou(text[i], text_name + " line " + line_no);
    const auto emotions = parse_digits(emo[i], emo_name + " line " + line_no);
    const auto acts = parse_digits(act[i], act_name + " line " + line_no);
    if (emotions.size() != utts.size()) {
      throw DataError(emo_name + " line " + line_no + ": " + std::to_string(emotions.size()) +
                      " labels for " + std::to_string(utts.size()) + " utterances");
    }
    if (acts.size() != utts.size()) {
      throw DataError(act_name + " line " + line_no + ": " + std::to_string(acts.size()) + " labels for " +
                      std::to_string(utts.size()) + " utterances");
    }
    Conversation c;
    c.topic = topics[i];
    for (std::size_t k = 0; k < utts.size(); ++k) {
      const auto e = emotion_from_digit(emotions[k]);
      if (!e) throw DataError(emo_name + " line " + line_no + ": unknown emotion digit " + std::to_string(emotions[k]));
      const auto a = act_from_digit(acts[k]);
      if (!a) throw DataError(act_name + " line " + line_no + ": unknown act digit " + std::to_string(acts[k]));
      c.utterances.push_back({utts[k], *e, *a});
    }
    if (c.utterances.size() < 2) {
      ++skipped;
      continue;
    }
    out.push_back(std::move(c));
  }
  if (skipped > 0) spdlog::warn("{}: skipped {} conversation(s) with fewer than 2 utterances", text_name, skipped);
  return out;
}

std::vector<Topic> parse_topics(const std::vector<std::string>& lines, const std::string& name) {
  std::vector<Topic> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto d = parse_digits(lines[i], name + " line " + std::to_string(i + 1));
    if (d.size() != 1) throw DataError(name + " line " + std::to_string(i + 1) + ": expected one topic digit");
    const auto t = topic_from_digit(d[0]);
    if (!t) throw DataError(name + " line " + std::to_string(i + 1) + ": unknown topic digit " + std::to_string(d[0]));
    out.push_back(*t);
  }
  return out;
}

Conversation conversation_from_json(const json& j, const std::string& where) {
  Conversation c;
  const auto topic = parse_topic(j.at("topic").get<std::string>());
  if (!topic) throw DataError(where + ": unknown topic '" + j.at("topic").get<std::string>() + "'");
  c.topic = *topic;
  for (const auto& u : j.at("utterances")) {
    Utterance x;
    x.text = trim(u.at("text").get<std::string>());
    if (x.text.empty()) throw DataError(where + ": empty utterance");
    const auto e = parse_emotion(u.at("emotion").get<std::string>());
    if (!e) throw DataError(where + ": unknown emotion '" + u.at("emotion").get<std::string>() + "'");
    const auto a = parse_act(u.at("act").get<std::string>());
    if (!a) throw DataError(where + ": unknown act '" + u.at("act").get<std::string>() + "'");
    x.emotion = *e;
    x.act = *a;
    c.utterances.push_back(std::move(x));
  }
  return c;
}

json conversation_to_json(const Conversation& c) {
  json utts = json::array();
  for (const auto& u : c.utterances) {
    utts.push_back({{"text", u.text}, {"emotion", name_of(u.emotion)}, {"act", name_of(u.act)}});
  }
  return {{"topic", name_of(c.topic)}, {"utterances", std::move(utts)}};
}

std::vector<Conversation> parse_jsonl(const std::string& text, const std::string& name) {
  std::vector<Conversation> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0, skipped = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = name + " line " + std::to_string(line_no);
    Conversation c;
    try {
      c = conversation_from_json(json::parse(line), where);
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    if (c.utterances.size() < 2) {
      ++skipped;
      continue;
    }
    out.push_back(std::move(c));
  }
  if (skipped > 0) spdlog::warn("{}: skipped {} conversation(s) with fewer than 2 utterances", name, skipped);
  return out;
}

std::string to_jsonl(const std::vector<Conversation>& corpus) {
  std::string out;
  for (const auto& c : corpus) {
    out += conversation_to_json(c).dump();
    out += '\n';
  }
  return out;
}

// Emotion ids are table rows; a label's row is its enum value.
std::int32_t row(Emotion e) { return static_cast<std::int32_t>(e); }
std::int32_t row(Act a) { return static_cast<std::int32_t>(a); }


// Little-endian fixed-width record writer for the sample cache.
struct ByteWriter {
  std::string buf;
  template <class T>
  void put(T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    buf.append(b, sizeof(T));
  }
};

struct ByteReader {
  std::string_view buf;
  std::size_t pos = 0;
  template <class T>
  T get() {
    if (pos + sizeof(T) > buf.size()) throw DataError("sample cache: truncated payload");
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
};

constexpr const char* kCacheFormat = "empt-samples";

}  // namespace

std::vector<Segment> history_segments(const TrainingSample& s, const Vocabulary& vocab) {
  std::vector<Segment> out;
  const std::size_t first = s.turn_index - s.history.size();
  for (std::size_t i = 0; i < s.history.size(); ++i) {
    const auto& u = s.history[i];
    out.push_back({encode(u.text, vocab), Vocabulary::speaker_token(first + i), row(u.emotion), row(u.act)});
  }
  return out;
}

std::string_view name_of(SampleSource s) {
  switch (s) {
    case SampleSource::kGold: return "gold";
    case SampleSource::kUtteranceDistractor: return "utterance-distractor";
    case SampleSource::kEmotionDistractor: return "emotion-distractor";
  }
  return "?";
}

bool InputRepresentation::valid() const {
  const std::size_t n = token_ids.size();
  if (position_ids.size() != n || emotion_ids.size() != n || action_ids.size() != n) return false;
  for (std::size_t i = 0; i < n; ++i) {
    if (position_ids[i] != static_cast<std::int32_t>(i)) return false;
  }
  return candidate_begin <= lm_begin && lm_begin <= lm_end && lm_end <= candidate_end && candidate_end <= n;
}

InputRepresentation assemble_input(Topic topic, const std::vector<Segment>& history, const Segment& candidate,
                                   Tail tail, std::size_t max_len) {
  std::size_t cand_len = 1;
  if (tail == Tail::kFull) cand_len += candidate.tokens.size() + 1;
  const std::size_t fixed = 2 + cand_len + (tail == Tail::kPrompt ? 0 : 1);
  if (fixed > max_len) {
    throw ContextOverflow("candidate needs " + std::to_string(fixed) + " positions but the limit is " +
                          std::to_string(max_len));
  }

  InputRepresentation r;
  auto push = [&](TokenId tok, std::int32_t emo, std::int32_t act) {
    r.position_ids.push_back(static_cast<std::int32_t>(r.token_ids.size()));
    r.token_ids.push_back(tok);
    r.emotion_ids.push_back(emo);
    r.action_ids.push_back(act);
  };
  push(Vocabulary::topic_token(topic), kNeutralEmotionRow, kNeutralActRow);
  push(Vocabulary::kBos, kNeutralEmotionRow, kNeutralActRow);

  std::size_t hist_len = 0;
  for (const auto& s : history) hist_len += 1 + s.tokens.size();
  std::size_t drop = hist_len > max_len - fixed ? hist_len - (max_len - fixed) : 0;
  for (const auto& s : history) {
    const std::size_t span = 1 + s.tokens.size();
    if (drop >= span) {
      drop -= span;
      continue;
    }
    for (std::size_t i = drop; i < span; ++i) push(i == 0 ? s.speaker : s.tokens[i - 1], s.emotion_row, s.act_row);
    drop = 0;
  }

  r.candidate_begin = r.size();
  push(candidate.speaker, candidate.emotion_row, candidate.act_row);
  r.lm_begin = r.size();
  if (tail == Tail::kFull) {
    for (TokenId t : candidate.tokens) push(t, candidate.emotion_row, candidate.act_row);
    push(Vocabulary::kEos, candidate.emotion_row, candidate.act_row);
  }
  r.lm_end = r.size();
  r.candidate_end = r.size();
  if (tail != Tail::kPrompt) push(Vocabulary::kCls, kNeutralEmotionRow, kNeutralActRow);
  return r;
}

InputRepresentation build_input(const TrainingSample& sample, const Vocabulary& vocab, std::size_t max_len) {
  Segment cand{encode(sample.candidate.text, vocab), Vocabulary::speaker_token(sample.turn_index),
               row(sample.candidate_emotion), row(sample.candidate.act)};
  return assemble_input(sample.topic, history_segments(sample, vocab), cand, Tail::kFull, max_len);
}

InputRepresentation build_emotion_stub(const TrainingSample& sample, Emotion emotion, const Vocabulary& vocab,
                                       std::size_t max_len) {
  Segment cand{{}, Vocabulary::speaker_token(sample.turn_index), row(emotion), kNeutralActRow};
  return assemble_input(sample.topic, history_segments(sample, vocab), cand, Tail::kStub, max_len);
}

std::vector<Conversation> load_corpus(const std::string& dialogues_path, const std::string& emotions_path,
                                      const std::string& acts_path, const std::string& topics_path) {
  const auto text = read_lines(dialogues_path);
  const auto emo = read_lines(emotions_path);
  const auto act = read_lines(acts_path);
  std::vector<Topic> topics;
  if (!topics_path.empty()) {
    topics = parse_topics(read_lines(topics_path), topics_path);
    if (topics.size() != text.size()) {
      throw DataError(topics_path + ": " + std::to_string(topics.size()) + " lines but " + dialogues_path + " has " +
                      std::to_string(text.size()) + " (first unmatched line " +
                      std::to_string(std::min(topics.size(), text.size()) + 1) + ")");
    }
  } else {
    topics.assign(text.size(), Topic::kOrdinaryLife);
  }
  if (text.empty() && emo.empty() && act.empty()) {
    spdlog::warn("{}: empty corpus", dialogues_path);
    return {};
  }
  return parse_parallel(text, dialogues_path, emo, emotions_path, act, acts_path, topics);
}

std::vector<Conversation> load_jsonl(const std::string& path) { return parse_jsonl(read_file(path), path); }

void save_jsonl(const std::vector<Conversation>& corpus, const std::string& path) {
  write_file_atomic(path, to_jsonl(corpus));
}

CorpusSplits load_data_dir(const std::string& path) {
  CorpusSplits out;
  const fs::path root(path);
  if (fs::is_regular_file(root)) {
    out.train = load_jsonl(path);
    return out;
  }
  if (!fs::is_directory(root)) throw IoError("no such data directory: " + path);

  if (fs::exists(root / "train.jsonl")) {
    out.train = load_jsonl((root / "train.jsonl").string());
    if (fs::exists(root / "validation.jsonl")) out.validation = load_jsonl((root / "validation.jsonl").string());
    if (fs::exists(root / "test.jsonl")) out.test = load_jsonl((root / "test.jsonl").string());
    return out;
  }

  const fs::path full_text = root / "dialogues_text.txt";
  const fs::path full_topic = root / "dialogues_topic.txt";
  if (fs::exists(root / "train" / "dialogues_train.txt")) {
    // Official split files carry no topic column; topics are recovered by
    // matching each line against the full corpus file.
    std::unordered_map<std::string, Topic> topic_of;
    if (fs::exists(full_text) && fs::exists(full_topic)) {
      const auto lines = read_lines(full_text.string());
      const auto topics = parse_topics(read_lines(full_topic.string()), full_topic.string());
      if (topics.size() != lines.size()) throw DataError(full_topic.string() + ": line count differs from " + full_text.string());
      for (std::size_t i = 0; i < lines.size(); ++i) topic_of.emplace(trim(lines[i]), topics[i]);
    } else {
      spdlog::warn("{}: no dialogues_topic.txt next to the split folders; topics default to ordinary_life", path);
    }
    auto load_split = [&](const std::string& split) -> std::vector<Conversation> {
      const fs::path dir = root / split;
      const fs::path text_path = dir / ("dialogues_" + split + ".txt");
      if (!fs::exists(text_path)) return {};
      const auto text = read_lines(text_path.string());
      std::vector<Topic> topics;
      std::size_t missing = 0;
      for (const auto& line : text) {
        auto it = topic_of.find(trim(line));
        if (it == topic_of.end()) {
          ++missing;
          topics.push_back(Topic::kOrdinaryLife);
        } else {
          topics.push_back(it->second);
        }
      }
      if (missing > 0 && !topic_of.empty()) {
        spdlog::warn("{}: {} line(s) not found in the full corpus; topic set to ordinary_life", text_path.string(), missing);
      }
      const fs::path emo = dir / ("dialogues_emotion_" + split + ".txt");
      const fs::path act = dir / ("dialogues_act_" + split + ".txt");
      return parse_parallel(text, text_path.string(), read_lines(emo.string()), emo.string(),
                            read_lines(act.string()), act.string(), topics);
    };
    out.train = load_split("train");
    out.validation = load_split("validation");
    out.test = load_split("test");
    return out;
  }

  if (fs::exists(full_text)) {
    spdlog::warn("{}: no split folders; the whole corpus is used as the training split", path);
    out.train = load_corpus(full_text.string(), (root / "dialogues_emotion.txt").string(),
                            (root / "dialogues_act.txt").string(), full_topic.string());
    return out;
  }
  throw DataError(path + ": no recognizable corpus (expected DailyDialog files or train.jsonl)");
}

std::vector<TrainingSample> build_samples(const std::vector<Conversation>& corpus, const SampleConfig& cfg) {
  if (cfg.history_window < 1) throw ConfigError("history_window must be >= 1");
  if (cfg.n_utt_distractors < 0 || cfg.n_emo_distractors < 0) throw ConfigError("distractor counts must be >= 0");
  if (cfg.n_utt_distractors > 0 && corpus.size() < 2) {
    throw DataError("utterance distractors need at least 2 conversations, got " + std::to_string(corpus.size()));
  }
  const std::size_t window = static_cast<std::size_t>(cfg.history_window);

  // Global utterance numbering for uniform draws from other conversations.
  std::vector<std::size_t> offset(corpus.size() + 1, 0);
  for (std::size_t c = 0; c < corpus.size(); ++c) offset[c + 1] = offset[c] + corpus[c].utterances.size();
  const std::size_t total = offset.back();

  std::vector<TrainingSample> out;
  std::uint32_t group = 0;
  for (std::size_t c = 0; c < corpus.size(); ++c) {
    const auto& conv = corpus[c];
    const std::size_t own = conv.utterances.size();
    if (cfg.n_utt_distractors > 0 && total - own < static_cast<std::size_t>(cfg.n_utt_distractors)) {
      throw DataError("only " + std::to_string(total - own) + " utterances outside conversation " +
                      std::to_string(c) + " for " + std::to_string(cfg.n_utt_distractors) + " distractors");
    }
    Rng rng = Rng::stream(cfg.seed, "samples", c);
    for (std::size_t t = window; t < own; ++t, ++group) {
      TrainingSample gold;
      gold.topic = conv.topic;
      gold.history.assign(conv.utterances.begin() + static_cast<std::ptrdiff_t>(t - window),
                          conv.utterances.begin() + static_cast<std::ptrdiff_t>(t));
      gold.turn_index = static_cast<std::uint32_t>(t);
      gold.candidate = conv.utterances[t];
      gold.candidate_emotion = gold.candidate.emotion;
      gold.conversation = static_cast<std::uint32_t>(c);
      gold.group = group;
      gold.source_conversation = static_cast<std::uint32_t>(c);
      gold.source_utterance = static_cast<std::uint32_t>(t);
      out.push_back(gold);

      std::set<std::size_t> used;
      for (int k = 0; k < cfg.n_utt_distractors; ++k) {
        std::size_t g = 0, dc = 0;
        // Prefer distinct draws whose text differs from the gold reply; give
        // up on that preference in tiny corpora.
        for (int attempt = 0; attempt < 64; ++attempt) {
          g = rng.uniform_index(total - own);
          if (g >= offset[c]) g += own;
          dc = static_cast<std::size_t>(std::upper_bound(offset.begin(), offset.end(), g) - offset.begin()) - 1;
          if (!used.count(g) && corpus[dc].utterances[g - offset[dc]].text != gold.candidate.text) break;
        }
        used.insert(g);
        TrainingSample d = gold;
        d.candidate = corpus[dc].utterances[g - offset[dc]];
        d.candidate_emotion = d.candidate.emotion;
        d.is_gold_utterance = false;
        d.is_gold_emotion = false;
        d.source = SampleSource::kUtteranceDistractor;
        d.source_conversation = static_cast<std::uint32_t>(dc);
        d.source_utterance = static_cast<std::uint32_t>(g - offset[dc]);
        out.push_back(std::move(d));
      }

      std::vector<Emotion> others;
      for (int e = 0; e < kNumEmotions; ++e) {
        if (static_cast<Emotion>(e) != gold.candidate.emotion) others.push_back(static_cast<Emotion>(e));
      }
      for (std::size_t i = others.size() - 1; i > 0; --i) std::swap(others[i], others[rng.uniform_index(i + 1)]);
      for (int k = 0; k < cfg.n_emo_distractors; ++k) {
        TrainingSample d = gold;
        d.candidate_emotion = k < static_cast<int>(others.size()) ? others[k] : others[rng.uniform_index(others.size())];
        d.is_gold_emotion = false;
        d.source = SampleSource::kEmotionDistractor;
        out.push_back(std::move(d));
      }
    }
  }
  return out;
}

void SampleCache::save(const std::string& path) const {
  std::vector<std::pair<std::string, std::string>> sections;
  sections.emplace_back("corpus.train", to_jsonl(corpus.train));
  sections.emplace_back("corpus.validation", to_jsonl(corpus.validation));
  sections.emplace_back("corpus.test", to_jsonl(corpus.test));
  ByteWriter w;
  for (const auto& s : train_samples) {
    w.put<std::uint32_t>(s.conversation);
    w.put<std::uint32_t>(s.turn_index);
    w.put<std::uint32_t>(s.group);
    w.put<std::uint32_t>(s.source_conversation);
    w.put<std::uint32_t>(s.source_utterance);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(s.history.size()));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(s.source));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(s.candidate_emotion));
  }
  sections.emplace_back("samples.train", std::move(w.buf));

  json manifest;
  manifest["format"] = kCacheFormat;
  manifest["version"] = 1;
  manifest["config"] = {{"history_window", config.history_window},
                        {"n_utt_distractors", config.n_utt_distractors},
                        {"n_emo_distractors", config.n_emo_distractors},
                        {"seed", config.seed}};
  manifest["counts"] = {{"train_conversations", corpus.train.size()},
                        {"validation_conversations", corpus.validation.size()},
                        {"test_conversations", corpus.test.size()},
                        {"train_samples", train_samples.size()}};
  std::uint64_t offset = 0;
  json secs = json::array();
  for (const auto& [name, bytes] : sections) {
    secs.push_back({{"name", name}, {"offset", offset}, {"nbytes", bytes.size()}, {"fnv1a64", hex64(fnv1a64(bytes))}});
    offset += bytes.size();
  }
  manifest["sections"] = std::move(secs);

  const std::string header = manifest.dump();
  ByteWriter out;
  out.put<std::uint64_t>(header.size());
  out.buf += header;
  for (const auto& s : sections) out.buf += s.second;
  write_file_atomic(path, out.buf);
}

SampleCache SampleCache::load(const std::string& path) {
  const std::string bytes = read_file(path);
  ByteReader r{bytes};
  const auto header_len = r.get<std::uint64_t>();
  if (header_len > bytes.size() - 8) throw DataError(path + ": manifest length exceeds file size");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(8, header_len));
  } catch (const json::exception& e) {
    throw DataError(path + ": bad manifest: " + e.what());
  }
  if (manifest.value("format", "") != kCacheFormat) throw DataError(path + ": not a sample cache");
  if (manifest.value("version", 0) != 1) throw DataError(path + ": unsupported sample cache version");
  const std::size_t base = 8 + header_len;
  std::unordered_map<std::string, std::string_view> sec;
  for (const auto& s : manifest.at("sections")) {
    const auto off = s.at("offset").get<std::uint64_t>();
    const auto n = s.at("nbytes").get<std::uint64_t>();
    if (base + off + n > bytes.size()) throw DataError(path + ": section out of bounds");
    std::string_view view(bytes.data() + base + off, n);
    if (hex64(fnv1a64(view)) != s.at("fnv1a64").get<std::string>()) {
      throw DataError(path + ": checksum mismatch in " + s.at("name").get<std::string>());
    }
    sec[s.at("name").get<std::string>()] = view;
  }

  SampleCache c;
  const auto& cfg = manifest.at("config");
  c.config.history_window = cfg.at("history_window");
  c.config.n_utt_distractors = cfg.at("n_utt_distractors");
  c.config.n_emo_distractors = cfg.at("n_emo_distractors");
  c.config.seed = cfg.at("seed");
  c.corpus.train = parse_jsonl(std::string(sec.at("corpus.train")), path + ":train");
  c.corpus.validation = parse_jsonl(std::string(sec.at("corpus.validation")), path + ":validation");
  c.corpus.test = parse_jsonl(std::string(sec.at("corpus.test")), path + ":test");

  ByteReader sr{sec.at("samples.train")};
  const auto& convs = c.corpus.train;
  while (sr.pos < sr.buf.size()) {
    TrainingSample s;
    s.conversation = sr.get<std::uint32_t>();
    s.turn_index = sr.get<std::uint32_t>();
    s.group = sr.get<std::uint32_t>();
    s.source_conversation = sr.get<std::uint32_t>();
    s.source_utterance = sr.get<std::uint32_t>();
    const auto hist = sr.get<std::uint8_t>();
    const auto source = sr.get<std::uint8_t>();
    const auto emo = sr.get<std::uint8_t>();
    if (s.conversation >= convs.size() || s.source_conversation >= convs.size() || source > 2 ||
        emo >= kNumEmotions) {
      throw DataError(path + ": sample record out of range");
    }
    const auto& conv = convs[s.conversation];
    const auto& src = convs[s.source_conversation];
    if (s.turn_index >= conv.utterances.size() || hist > s.turn_index || s.source_utterance >= src.utterances.size()) {
      throw DataError(path + ": sample record out of range");
    }
    s.topic = conv.topic;
    s.history.assign(conv.utterances.begin() + (s.turn_index - hist), conv.utterances.begin() + s.turn_index);
    s.candidate = src.utterances[s.source_utterance];
    s.candidate_emotion = static_cast<Emotion>(emo);
    s.source = static_cast<SampleSource>(source);
    s.is_gold_utterance = s.source != SampleSource::kUtteranceDistractor;
    s.is_gold_emotion = s.source == SampleSource::kGold;
    c.train_samples.push_back(std::move(s));
  }
  return c;
}

}  // namespace empt
