#include "empt/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "empt/error.hpp"

using nlohmann::json;

namespace empt {

void SamplingParams::validate() const {
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("sampling.p must lie in (0, 1]");
  if (!(temperature > 0.0)) throw ConfigError("sampling.temperature must be > 0");
  if (max_new_tokens < 1) throw ConfigError("sampling.max_new_tokens must be >= 1");
}

json SamplingParams::to_json() const {
  return {{"p", p}, {"temperature", temperature}, {"max_new_tokens", max_new_tokens}, {"seed", seed}};
}

SamplingParams SamplingParams::from_json(const json& j) {
  SamplingParams s;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    try {
      if (k == "p") s.p = it->get<double>();
      else if (k == "temperature") s.temperature = it->get<double>();
      else if (k == "max_new_tokens") s.max_new_tokens = it->get<int>();
      else if (k == "seed") s.seed = it->get<std::uint64_t>();
      else throw ConfigError("unknown key sampling." + k);
    } catch (const json::exception& e) {
      throw ConfigError("sampling." + k + ": " + e.what());
    }
  }
  return s;
}

std::vector<double> apply_temperature(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw InvalidValue("temperature must be > 0");
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : logits) {
    if (std::isnan(x) || x == std::numeric_limits<double>::infinity()) throw InvalidValue("apply_temperature: non-finite logit");
    mx = std::max(mx, x);
  }
  if (!std::isfinite(mx)) throw InvalidValue("apply_temperature: no finite logit");
  std::vector<double> out(logits.size());
  double z = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::isfinite(logits[i]) ? std::exp((logits[i] - mx) / temperature) : 0.0;
    z += out[i];
  }
  for (auto& v : out) v /= z;
  return out;
}

std::vector<double> nucleus_filter(std::span<const double> probs, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw InvalidValue("nucleus p must lie in (0, 1]");
  if (probs.empty()) throw InvalidValue("nucleus_filter: empty distribution");
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  // The slack absorbs rounding in the running sum so that p = 1 does not
  // drag zero-probability tail tokens into the support.
  const double target = p - 1e-12;
  std::vector<double> out(probs.size(), 0.0);
  double mass = 0;
  std::size_t kept = 0;
  while (kept < order.size()) {
    mass += probs[order[kept]];
    ++kept;
    if (mass >= target) break;
  }
  for (std::size_t i = 0; i < kept; ++i) out[order[i]] = probs[order[i]] / mass;
  return out;
}

std::size_t sample_index(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0) continue;
    acc += probs[i];
    last = i;
    if (u < acc) return i;
  }
  return last;  // u landed in the rounding gap above the final sum
}

template <class T>
Generation generate(const Model<T>& model, Topic topic, const std::vector<Segment>& history, const Segment& candidate,
                    const Vocabulary& vocab, const SamplingParams& sp) {
  sp.validate();
  if (vocab.size() > model.config().vocab_size) throw ConfigError("vocabulary is larger than the model's token table");
  const std::size_t max_pos = static_cast<std::size_t>(model.config().max_positions);
  if (static_cast<std::size_t>(sp.max_new_tokens) + 3 > max_pos) {
    throw ContextOverflow("max_new_tokens " + std::to_string(sp.max_new_tokens) + " leaves no room for a prompt within " +
                          std::to_string(max_pos) + " positions");
  }
  NoGradGuard guard;
  auto in = assemble_input(topic, history, candidate, Tail::kPrompt, max_pos - static_cast<std::size_t>(sp.max_new_tokens));
  Rng rng = Rng::stream(sp.seed, "sample");
  Generation g;
  const double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> logits(static_cast<std::size_t>(model.config().vocab_size));
  for (int step = 0; step < sp.max_new_tokens && in.size() < max_pos; ++step) {
    auto out = model.forward(in);
    auto row = model.lm_logits(out.hidden, in.size() - 1, in.size());
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = static_cast<double>(row.at(i));
    for (TokenId s = 0; s < Vocabulary::kNumSpecials; ++s) {
      if (s != Vocabulary::kEos) logits[static_cast<std::size_t>(s)] = neg_inf;
    }
    // Rows of the token table beyond the vocabulary are never produced.
    for (std::size_t i = static_cast<std::size_t>(vocab.size()); i < logits.size(); ++i) logits[i] = neg_inf;
    const auto probs = nucleus_filter(apply_temperature(logits, sp.temperature), sp.p);
    const auto tok = static_cast<TokenId>(sample_index(probs, rng));
    if (tok == Vocabulary::kEos) {
      g.stopped_at_eos = true;
      break;
    }
    g.ids.push_back(tok);
    in.position_ids.push_back(static_cast<std::int32_t>(in.size()));
    in.token_ids.push_back(tok);
    in.emotion_ids.push_back(candidate.emotion_row);
    in.action_ids.push_back(candidate.act_row);
  }
  g.text = decode(g.ids, vocab);
  return g;
}

template <class T>
Generation generate(const Model<T>& model, const TrainingSample& context, const Vocabulary& vocab,
                    const SamplingParams& sp) {
  Segment cand;
  cand.speaker = Vocabulary::speaker_token(context.turn_index);
  cand.emotion_row = static_cast<std::int32_t>(context.candidate_emotion);
  cand.act_row = static_cast<std::int32_t>(context.candidate.act);
  return generate(model, context.topic, history_segments(context, vocab), cand, vocab, sp);
}

template Generation generate(const Model<float>&, Topic, const std::vector<Segment>&, const Segment&,
                             const Vocabulary&, const SamplingParams&);
template Generation generate(const Model<double>&, Topic, const std::vector<Segment>&, const Segment&,
                             const Vocabulary&, const SamplingParams&);
template Generation generate(const Model<float>&, const TrainingSample&, const Vocabulary&, const SamplingParams&);
template Generation generate(const Model<double>&, const TrainingSample&, const Vocabulary&, const SamplingParams&);

}  // namespace empt
