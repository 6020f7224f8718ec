#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "empt/bpe.hpp"
#include "empt/checkpoint.hpp"
#include "empt/corpus.hpp"
#include "empt/rng.hpp"
#include "empt/tensor.hpp"

namespace empt {

// kBinary: each candidate sequence is classified on its own (labels 1/0).
// kMultipleChoice: candidates of one position compete in a softmax over
// score = logit[1] - logit[0].
enum class HeadVariant { kBinary, kMultipleChoice };

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 512;
  int max_positions = 256;
  int vocab_size = 4000;
  int n_emotions = kNumEmotions;
  int n_actions = kNumActs;
  int n_topics = kNumTopics;
  double embd_dropout = 0.1;
  double resid_dropout = 0.1;
  double attn_dropout = 0.1;
  double c1 = 1.0;
  double c2 = 1.0;
  double c3 = 1.0;
  double ln_eps = 1e-5;
  HeadVariant head = HeadVariant::kBinary;

  // Throws ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static ModelConfig from_json(const nlohmann::json& j);
  // V·d + P·d + (E+1)·d + (A+1)·d
  //   + L·(4d + 4(d²+d) + (d·f + f) + (f·d + d)) + 2d + 2·2d
  std::size_t parameter_count() const;
};

template <class T>
struct ForwardOutput {
  Tensor<T> hidden;            // (n, d), after the final layer norm
  Tensor<T> lm_logits;         // (n, V) when requested, else undefined
  Tensor<T> utterance_logits;  // (2), read at the last position (cls)
  Tensor<T> emotion_logits;    // (2), read at the position before it
};

struct ForwardOptions {
  bool train = false;
  Rng* dropout_rng = nullptr;  // required when train and any dropout > 0
  bool full_lm = false;
};

template <class T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& parameters() const { return params_; }
  Tensor<T>& param(const std::string& name);
  const Tensor<T>& param(const std::string& name) const;
  // The LM output projection: the token embedding table itself.
  const Tensor<T>& lm_projection() const { return param("tok_emb"); }
  std::size_t parameter_count() const;

  ForwardOutput<T> forward(const InputRepresentation& in, const ForwardOptions& opt = {}) const;
  // Logits for rows [begin, end) of `hidden`.
  Tensor<T> lm_logits(const Tensor<T>& hidden, std::size_t begin, std::size_t end) const;

  void zero_grad();
  void set_requires_grad(bool on);
  Model clone() const;

  void export_to(Checkpoint& ckpt) const;
  static Model import_from(const Checkpoint& ckpt);

 private:
  Model() = default;
  void add(const std::string& name, Tensor<T> t);

  ModelConfig cfg_;
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Mean next-token cross entropy over the candidate text and eos. Throws
// InvalidValue when the span is empty.
template <class T>
Tensor<T> lm_loss(const Model<T>& model, const ForwardOutput<T>& out, const InputRepresentation& in);
// Binary cross entropy of softmax(logits) against label (1 = gold).
template <class T>
Tensor<T> utterance_loss(const ForwardOutput<T>& out, bool is_gold_utterance);
template <class T>
Tensor<T> emotion_loss(const ForwardOutput<T>& out, bool is_gold_emotion);

// c1·L1 + c2·L2 + c3·L3; absent terms contribute 0. Throws ConfigError on a
// negative coefficient.
double total_loss(std::optional<double> l1, std::optional<double> l2, std::optional<double> l3, double c1,
                  double c2, double c3);

struct LossReport {
  std::optional<double> l1, l2, l3;
  double c1 = 1, c2 = 1, c3 = 1;
  double total = 0;
  nlohmann::json to_json() const;
};

// Inputs of one candidate, encoded once: the full sequence (LM and
// next-utterance head) and the emotion stub (next-emotion head).
struct EncodedSample {
  InputRepresentation full;
  InputRepresentation stub;
  SampleSource source = SampleSource::kGold;
  std::uint32_t group = 0;
};
EncodedSample encode_sample(const TrainingSample& s, const Vocabulary& vocab, std::size_t max_len);
// Encodes whole position groups. A group with any sample that cannot fit
// max_len is dropped; the number dropped goes to `skipped` when given.
std::vector<EncodedSample> encode_groups(const std::vector<TrainingSample>& samples, const Vocabulary& vocab,
                                         std::size_t max_len, std::size_t* skipped = nullptr);

// Loss of one position group (gold plus its distractors):
//   gold        -> L1 on the full input, L2 with a=1, L3 on the stub with e=1
//   utterance-d -> L2 with a=0
//   emotion-d   -> L3 on the stub with e=0
// L2 and L3 average over their candidates (binary head) or are one softmax
// over the group (multiple-choice head).
template <class T>
std::pair<Tensor<T>, LossReport> group_loss(const Model<T>& model, std::span<const EncodedSample> group,
                                            const ForwardOptions& opt);

struct EmotionScore {
  Emotion emotion;
  double score;  // P(e = 1)
};
// Scores all emotions for the next turn and sorts them by score, ties in
// label order. `candidate_speaker` is the speaker of the turn to predict.
template <class T>
std::vector<EmotionScore> predict_emotion(const Model<T>& model, Topic topic, const std::vector<Segment>& history,
                                          TokenId candidate_speaker);
template <class T>
std::vector<EmotionScore> predict_emotion(const Model<T>& model, const TrainingSample& context,
                                          const Vocabulary& vocab);

// Checkpoint X.bin plus sidecar X.json {model, vocab_path, vocab_hash}.
void save_model(const Model<float>& model, const std::string& path, const std::string& vocab_path,
                const std::string& vocab_hash);
struct LoadedModel {
  Model<float> model;
  std::string vocab_path;
  std::string vocab_hash;
  std::string checkpoint_hash;
};
LoadedModel load_model(const std::string& path);

struct ModelBundle {
  Model<float> model;
  Vocabulary vocab;
  std::string vocab_path;
  std::string checkpoint_hash;
};
// Checkpoint plus its vocabulary. `vocab_override` replaces the sidecar's
// path; a relative sidecar path resolves against the checkpoint's directory.
// Throws DataError when the vocabulary hash differs from the recorded one.
ModelBundle load_bundle(const std::string& checkpoint_path, const std::string& vocab_override = "");
std::string sidecar_path(const std::string& checkpoint_path);

}  // namespace empt
