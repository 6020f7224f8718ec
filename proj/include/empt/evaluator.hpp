#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "empt/decoder.hpp"
#include "empt/model.hpp"

namespace empt {

// Fraction of groups whose first score (the gold candidate) is strictly
// greater than every other score in the group. Ties are misses.
double hit_at_1(const std::vector<std::vector<double>>& scores);

// Ranking score of one candidate: logit(a=1) - logit(a=0). Monotone in
// P(a=1) under the binary head and the group-softmax score under the
// multiple-choice head.
template <class T>
double utterance_score(const Model<T>& model, const InputRepresentation& full);

struct PerplexityResult {
  double ppl = 1;  // +inf when a gold token had probability 0
  double mean_nll = 0;
  std::int64_t n_tokens = 0;
};
// exp(-(1/N) sum ln p). Throws InvalidValue on an empty list.
PerplexityResult perplexity_from_logprobs(std::span<const double> logp);
// Natural-log probabilities of the gold reply tokens and eos of `full`.
template <class T>
std::vector<double> gold_logprobs(const Model<T>& model, const InputRepresentation& full);
template <class T>
PerplexityResult perplexity(const Model<T>& model, const std::vector<InputRepresentation>& gold);

using Words = std::vector<std::string>;
// Word and punctuation pieces of a text, whitespace dropped.
Words bleu_words(std::string_view text);
// Corpus BLEU-4 against a single reference per hypothesis, with brevity
// penalty. A zero match count at orders 2-4 is add-one smoothed; order 1 is
// never smoothed. Throws InvalidValue on an empty corpus or unequal counts.
double bleu(const std::vector<Words>& hypotheses, const std::vector<Words>& references);

// Multiset overlap F1. Both empty -> 1, exactly one empty -> 0.
double token_f1(std::span<const TokenId> hypothesis, std::span<const TokenId> reference);

struct EmotionConfusion {
  std::vector<Emotion> labels;                    // row and column order
  std::vector<std::vector<std::int64_t>> counts;  // [gold][predicted]
  double precision = 0, recall = 0, f1 = 0;       // fractions in [0, 1]
  bool micro = false;
  std::vector<std::string> notes;
  std::int64_t total() const;
  nlohmann::json to_json() const;
};
// Builds the matrix from (gold, predicted) pairs. With exclude_no_emotion the
// no-emotion class is dropped: pairs with that gold label are skipped and a
// no-emotion prediction is an InvalidValue. Macro averages skip classes absent
// from the gold labels and record a note; micro uses pooled counts.
EmotionConfusion confusion_from_pairs(const std::vector<std::pair<Emotion, Emotion>>& gold_pred,
                                      bool exclude_no_emotion, bool micro);
// Top-ranked emotion, skipping no-emotion when excluded.
Emotion top_emotion(const std::vector<EmotionScore>& ranked, bool exclude_no_emotion);

struct EvalConfig {
  int n_distractors = 19;
  int history_window = 2;
  std::uint64_t seed = 0;
  bool exclude_no_emotion = false;
  bool micro = false;
  int max_groups = 0;  // 0 = every position
  bool generate = true;
  SamplingParams sampling;

  void validate() const;
  nlohmann::json to_json() const;
  static EvalConfig from_json(const nlohmann::json& j);
};

struct EvalReport {
  double hit_at_1 = 0;
  PerplexityResult ppl;
  double bleu = 0;
  double token_f1 = 0;
  bool generated = false;
  EmotionConfusion emotion;
  std::int64_t n_positions = 0;
  EvalConfig config;
  std::string config_hash;
  std::string model_hash;
  nlohmann::json to_json() const;
};

// Scores every position of `conversations` with a fixed-seed set of
// n_distractors utterance distractors. Replies for BLEU and F1 are sampled
// with the gold reply's emotion and act on the candidate span.
template <class T>
EvalReport evaluate(const Model<T>& model, const Vocabulary& vocab, const std::vector<Conversation>& conversations,
                    const EvalConfig& cfg);

}  // namespace empt
