#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "empt/model.hpp"

namespace empt {

struct SamplingParams {
  double p = 0.9;
  double temperature = 0.7;
  int max_new_tokens = 40;
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError
  nlohmann::json to_json() const;
  static SamplingParams from_json(const nlohmann::json& j);
};

// softmax(logits / T) in double. -inf logits get probability 0.
// Throws InvalidValue for T <= 0, NaN or +inf logits, or no finite logit.
std::vector<double> apply_temperature(std::span<const double> logits, double temperature);

// Keeps the smallest prefix of tokens sorted by probability (descending,
// ties by id ascending) whose mass reaches p, zeroes the rest and
// renormalizes. Throws InvalidValue for p outside (0, 1].
std::vector<double> nucleus_filter(std::span<const double> probs, double p);

// Inverse-CDF draw over `probs` in index order.
std::size_t sample_index(std::span<const double> probs, Rng& rng);

struct Generation {
  std::string text;
  std::vector<TokenId> ids;  // without the terminating eos
  bool stopped_at_eos = false;
};

// Samples a reply after `history`. The reply span opens with candidate.speaker
// and every generated token carries candidate.emotion_row / act_row. Special
// tokens other than eos are never sampled. Throws ContextOverflow when
// max_new_tokens leaves no room for the prompt.
template <class T>
Generation generate(const Model<T>& model, Topic topic, const std::vector<Segment>& history, const Segment& candidate,
                    const Vocabulary& vocab, const SamplingParams& sp);

// Reply for a sample's context, conditioned on its candidate emotion and act.
template <class T>
Generation generate(const Model<T>& model, const TrainingSample& context, const Vocabulary& vocab,
                    const SamplingParams& sp);

}  // namespace empt
