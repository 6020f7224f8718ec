#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "empt/bpe.hpp"
#include "empt/labels.hpp"

namespace empt {

struct Utterance {
  std::string text;
  Emotion emotion = Emotion::kNoEmotion;
  Act act = Act::kInform;
};

struct Conversation {
  Topic topic = Topic::kOrdinaryLife;
  std::vector<Utterance> utterances;
};

enum class SampleSource : std::uint8_t { kGold = 0, kUtteranceDistractor, kEmotionDistractor };
std::string_view name_of(SampleSource s);

struct TrainingSample {
  Topic topic = Topic::kOrdinaryLife;
  std::vector<Utterance> history;
  // Index of the candidate utterance within its conversation; history[i]
  // sits at turn_index - history.size() + i. Speaker parity follows it.
  std::uint32_t turn_index = 0;
  Utterance candidate;
  Emotion candidate_emotion = Emotion::kNoEmotion;
  bool is_gold_utterance = true;
  bool is_gold_emotion = true;
  SampleSource source = SampleSource::kGold;
  // Provenance: conversation of the position, and for an utterance
  // distractor the (conversation, utterance) it was drawn from.
  std::uint32_t conversation = 0;
  std::uint32_t group = 0;
  std::uint32_t source_conversation = 0;
  std::uint32_t source_utterance = 0;
};

// Per-position id rows. emotion_ids / action_ids hold embedding-table rows:
// label value for utterance spans, kNeutralEmotionRow / kNeutralActRow for
// the topic, bos and cls slots.
struct InputRepresentation {
  std::vector<TokenId> token_ids;
  std::vector<std::int32_t> position_ids;
  std::vector<std::int32_t> emotion_ids;
  std::vector<std::int32_t> action_ids;
  // Candidate span [candidate_begin, candidate_end): speaker token, text
  // tokens and eos when present.
  std::size_t candidate_begin = 0;
  std::size_t candidate_end = 0;
  // Positions whose token is an LM target: the candidate text and eos.
  std::size_t lm_begin = 0;
  std::size_t lm_end = 0;

  std::size_t size() const { return token_ids.size(); }
  bool valid() const;
};

// One utterance span before assembly.
struct Segment {
  std::vector<TokenId> tokens;
  TokenId speaker = Vocabulary::kSpeaker1;
  std::int32_t emotion_row = kNeutralEmotionRow;
  std::int32_t act_row = kNeutralActRow;
};

enum class Tail {
  kFull,    // candidate tokens, eos, cls
  kStub,    // candidate speaker token only, then cls
  kPrompt,  // candidate speaker token, open for generation
};

// History utterances of a sample as spans, speakers by utterance parity.
std::vector<Segment> history_segments(const TrainingSample& s, const Vocabulary& vocab);

// Assembles [topic][bos][history spans][candidate span][cls]. History is cut
// from the left (oldest tokens first) to fit max_len; throws ContextOverflow
// when the fixed part alone does not fit.
InputRepresentation assemble_input(Topic topic, const std::vector<Segment>& history, const Segment& candidate,
                                   Tail tail, std::size_t max_len);

InputRepresentation build_input(const TrainingSample& sample, const Vocabulary& vocab, std::size_t max_len);
// Same history with the candidate reduced to its speaker token carrying
// `emotion`; the emotion head reads the speaker-token position.
InputRepresentation build_emotion_stub(const TrainingSample& sample, Emotion emotion, const Vocabulary& vocab,
                                       std::size_t max_len);

// Four parallel DailyDialog files. topics_path may be empty when topics are
// supplied separately (split files ship without them).
std::vector<Conversation> load_corpus(const std::string& dialogues_path, const std::string& emotions_path,
                                      const std::string& acts_path, const std::string& topics_path);
std::vector<Conversation> load_jsonl(const std::string& path);
void save_jsonl(const std::vector<Conversation>& corpus, const std::string& path);

struct CorpusSplits {
  std::vector<Conversation> train;
  std::vector<Conversation> validation;
  std::vector<Conversation> test;
};
// Accepts a DailyDialog directory (official train/validation/test split
// folders, or only the four top-level files), a directory holding
// {train,validation,test}.jsonl, or a single .jsonl file (train only).
CorpusSplits load_data_dir(const std::string& path);

struct SampleConfig {
  int history_window = 2;
  int n_utt_distractors = 1;
  int n_emo_distractors = 1;
  std::uint64_t seed = 0;
};

// Emits, for every position with a full history window, one gold sample
// followed by its utterance and emotion distractors; all samples of one
// position share a group id and are contiguous.
std::vector<TrainingSample> build_samples(const std::vector<Conversation>& corpus, const SampleConfig& cfg);

// Binary sample cache: u64 manifest length, JSON manifest, then payload.
struct SampleCache {
  CorpusSplits corpus;
  SampleConfig config;
  std::vector<TrainingSample> train_samples;

  void save(const std::string& path) const;
  static SampleCache load(const std::string& path);
};

}  // namespace empt
