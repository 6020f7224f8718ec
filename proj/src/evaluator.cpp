#include "empt/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <spdlog/spdlog.h>

#include "empt/checkpoint.hpp"
#include "empt/error.hpp"

using nlohmann::json;

namespace empt {

double hit_at_1(const std::vector<std::vector<double>>& scores) {
  if (scores.empty()) throw InvalidValue("hit_at_1: no positions");
  std::int64_t hits = 0;
  for (const auto& g : scores) {
    if (g.size() < 2) throw InvalidValue("hit_at_1: a position needs the gold score and at least one distractor");
    bool hit = true;
    for (std::size_t i = 1; i < g.size() && hit; ++i) hit = g[0] > g[i];
    hits += hit;
  }
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

template <class T>
double utterance_score(const Model<T>& model, const InputRepresentation& full) {
  NoGradGuard guard;
  const auto out = model.forward(full);
  return static_cast<double>(out.utterance_logits.at(1)) - static_cast<double>(out.utterance_logits.at(0));
}

PerplexityResult perplexity_from_logprobs(std::span<const double> logp) {
  if (logp.empty()) throw InvalidValue("perplexity: no gold tokens");
  PerplexityResult r;
  r.n_tokens = static_cast<std::int64_t>(logp.size());
  double sum = 0;
  for (double x : logp) sum -= x;
  r.mean_nll = sum / static_cast<double>(logp.size());
  r.ppl = std::exp(r.mean_nll);
  return r;
}

template <class T>
std::vector<double> gold_logprobs(const Model<T>& model, const InputRepresentation& full) {
  if (full.lm_begin == 0 || full.lm_end <= full.lm_begin) throw InvalidValue("perplexity: empty gold span");
  NoGradGuard guard;
  const auto out = model.forward(full);
  const auto logits = model.lm_logits(out.hidden, full.lm_begin - 1, full.lm_end - 1);
  const std::size_t v = logits.shape()[1];
  std::vector<double> lp;
  for (std::size_t r = 0; r + full.lm_begin < full.lm_end; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, static_cast<double>(logits.at(r * v + j)));
    double z = 0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(static_cast<double>(logits.at(r * v + j)) - mx);
    const auto target = static_cast<std::size_t>(full.token_ids[full.lm_begin + r]);
    lp.push_back(static_cast<double>(logits.at(r * v + target)) - mx - std::log(z));
  }
  return lp;
}

template <class T>
PerplexityResult perplexity(const Model<T>& model, const std::vector<InputRepresentation>& gold) {
  std::vector<double> all;
  for (const auto& in : gold) {
    const auto lp = gold_logprobs(model, in);
    all.insert(all.end(), lp.begin(), lp.end());
  }
  return perplexity_from_logprobs(all);
}

Words bleu_words(std::string_view text) {
  Words out;
  for (const auto& p : split_pieces(text)) {
    if (!std::isspace(static_cast<unsigned char>(p.text[0]))) out.push_back(p.text);
  }
  return out;
}

namespace {

std::map<std::vector<std::string>, std::int64_t> ngram_counts(const Words& w, std::size_t n) {
  std::map<std::vector<std::string>, std::int64_t> c;
  for (std::size_t i = 0; i + n <= w.size(); ++i) ++c[Words(w.begin() + static_cast<std::ptrdiff_t>(i),
                                                          w.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return c;
}

}  // namespace

double bleu(const std::vector<Words>& hypotheses, const std::vector<Words>& references) {
  if (hypotheses.empty()) throw InvalidValue("bleu: empty corpus");
  if (hypotheses.size() != references.size()) throw InvalidValue("bleu: hypothesis and reference counts differ");
  std::int64_t matched[4] = {0, 0, 0, 0}, proposed[4] = {0, 0, 0, 0};
  std::int64_t hyp_len = 0, ref_len = 0;
  for (std::size_t k = 0; k < hypotheses.size(); ++k) {
    hyp_len += static_cast<std::int64_t>(hypotheses[k].size());
    ref_len += static_cast<std::int64_t>(references[k].size());
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto h = ngram_counts(hypotheses[k], n);
      const auto r = ngram_counts(references[k], n);
      for (const auto& [g, c] : h) {
        proposed[n - 1] += c;
        if (auto it = r.find(g); it != r.end()) matched[n - 1] += std::min(c, it->second);
      }
    }
  }
  if (hyp_len == 0 || matched[0] == 0) return 0.0;
  double log_p = 0;
  for (int n = 0; n < 4; ++n) {
    double m = static_cast<double>(matched[n]), t = static_cast<double>(proposed[n]);
    if (n > 0 && matched[n] == 0) {
      m += 1;
      t += 1;
    }
    log_p += std::log(m / t) / 4.0;
  }
  const double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return bp * std::exp(log_p);
}

double token_f1(std::span<const TokenId> hypothesis, std::span<const TokenId> reference) {
  if (hypothesis.empty() && reference.empty()) return 1.0;
  if (hypothesis.empty() || reference.empty()) return 0.0;
  std::map<TokenId, std::int64_t> ref;
  for (TokenId t : reference) ++ref[t];
  std::int64_t overlap = 0;
  for (TokenId t : hypothesis) {
    auto it = ref.find(t);
    if (it != ref.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double p = static_cast<double>(overlap) / static_cast<double>(hypothesis.size());
  const double r = static_cast<double>(overlap) / static_cast<double>(reference.size());
  return 2 * p * r / (p + r);
}

std::int64_t EmotionConfusion::total() const {
  std::int64_t t = 0;
  for (const auto& row : counts) {
    for (auto c : row) t += c;
  }
  return t;
}

json EmotionConfusion::to_json() const {
  json names = json::array();
  for (auto e : labels) names.push_back(std::string(name_of(e)));
  return {{"labels", names}, {"counts", counts},   {"precision", precision}, {"recall", recall},
          {"f1", f1},        {"micro", micro},     {"notes", notes},         {"total", total()}};
}

EmotionConfusion confusion_from_pairs(const std::vector<std::pair<Emotion, Emotion>>& gold_pred,
                                      bool exclude_no_emotion, bool micro) {
  EmotionConfusion c;
  c.micro = micro;
  for (int e = exclude_no_emotion ? 1 : 0; e < kNumEmotions; ++e) c.labels.push_back(static_cast<Emotion>(e));
  const std::size_t k = c.labels.size();
  const int shift = exclude_no_emotion ? 1 : 0;
  c.counts.assign(k, std::vector<std::int64_t>(k, 0));
  for (auto [gold, pred] : gold_pred) {
    if (exclude_no_emotion && gold == Emotion::kNoEmotion) continue;
    if (exclude_no_emotion && pred == Emotion::kNoEmotion) {
      throw InvalidValue("no-emotion prediction while that class is excluded");
    }
    ++c.counts[static_cast<std::size_t>(static_cast<int>(gold) - shift)]
              [static_cast<std::size_t>(static_cast<int>(pred) - shift)];
  }
  const std::int64_t total = c.total();
  if (total == 0) {
    c.notes.push_back("no evaluated positions");
    return c;
  }
  if (micro) {
    std::int64_t diag = 0;
    for (std::size_t i = 0; i < k; ++i) diag += c.counts[i][i];
    c.precision = c.recall = static_cast<double>(diag) / static_cast<double>(total);
  } else {
    double p_sum = 0, r_sum = 0;
    int present = 0;
    for (std::size_t i = 0; i < k; ++i) {
      std::int64_t row = 0, col = 0;
      for (std::size_t j = 0; j < k; ++j) {
        row += c.counts[i][j];
        col += c.counts[j][i];
      }
      if (row == 0) {
        c.notes.push_back("class " + std::string(name_of(c.labels[i])) +
                          " absent from the evaluation set; skipped in the macro average");
        continue;
      }
      ++present;
      r_sum += static_cast<double>(c.counts[i][i]) / static_cast<double>(row);
      p_sum += col == 0 ? 0.0 : static_cast<double>(c.counts[i][i]) / static_cast<double>(col);
    }
    c.precision = p_sum / present;
    c.recall = r_sum / present;
  }
  c.f1 = c.precision + c.recall > 0 ? 2 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
  return c;
}

Emotion top_emotion(const std::vector<EmotionScore>& ranked, bool exclude_no_emotion) {
  for (const auto& s : ranked) {
    if (!(exclude_no_emotion && s.emotion == Emotion::kNoEmotion)) return s.emotion;
  }
  throw InvalidValue("top_emotion: no eligible emotion");
}

void EvalConfig::validate() const {
  if (n_distractors < 1) throw ConfigError("eval.n_distractors must be >= 1");
  if (history_window < 1) throw ConfigError("eval.history_window must be >= 1");
  if (max_groups < 0) throw ConfigError("eval.max_groups must be >= 0");
  sampling.validate();
}

json EvalConfig::to_json() const {
  return {{"n_distractors", n_distractors}, {"history_window", history_window},
          {"seed", seed},                   {"exclude_no_emotion", exclude_no_emotion},
          {"micro", micro},                 {"max_groups", max_groups},
          {"generate", generate},           {"sampling", sampling.to_json()}};
}

EvalConfig EvalConfig::from_json(const json& j) {
  EvalConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    try {
      if (k == "n_distractors") c.n_distractors = it->get<int>();
      else if (k == "history_window") c.history_window = it->get<int>();
      else if (k == "seed") c.seed = it->get<std::uint64_t>();
      else if (k == "exclude_no_emotion") c.exclude_no_emotion = it->get<bool>();
      else if (k == "micro") c.micro = it->get<bool>();
      else if (k == "max_groups") c.max_groups = it->get<int>();
      else if (k == "generate") c.generate = it->get<bool>();
      else if (k == "sampling") c.sampling = SamplingParams::from_json(*it);
      else throw ConfigError("unknown key eval." + k);
    } catch (const json::exception& e) {
      throw ConfigError("eval." + k + ": " + e.what());
    }
  }
  return c;
}

json EvalReport::to_json() const {
  json j = {{"hit_at_1", hit_at_1},
            {"ppl", std::isfinite(ppl.ppl) ? json(ppl.ppl) : json("inf")},
            {"ppl_mean_nll", std::isfinite(ppl.mean_nll) ? json(ppl.mean_nll) : json("inf")},
            {"ppl_tokens", ppl.n_tokens},
            {"emotion_confusion", emotion.to_json()},
            {"emotion_precision", emotion.precision},
            {"emotion_recall", emotion.recall},
            {"emotion_f1", emotion.f1},
            {"n_positions", n_positions},
            {"config", config.to_json()},
            {"config_hash", config_hash},
            {"model_hash", model_hash},
            {"seed", config.seed}};
  if (generated) {
    j["bleu"] = bleu;
    j["token_f1"] = token_f1;
  } else {
    j["bleu"] = nullptr;
    j["token_f1"] = nullptr;
  }
  return j;
}

template <class T>
EvalReport evaluate(const Model<T>& model, const Vocabulary& vocab, const std::vector<Conversation>& conversations,
                    const EvalConfig& cfg) {
  cfg.validate();
  EvalReport rep;
  rep.config = cfg;
  rep.config_hash = hex64(fnv1a64(cfg.to_json().dump()));
  const auto samples = build_samples(conversations, {cfg.history_window, cfg.n_distractors, 0, cfg.seed});
  const std::size_t max_len = static_cast<std::size_t>(model.config().max_positions);
  const std::size_t group_size = static_cast<std::size_t>(cfg.n_distractors) + 1;

  std::vector<std::vector<double>> scores;
  std::vector<double> logp;
  std::vector<std::pair<Emotion, Emotion>> emotions;
  std::vector<Words> hyp_words, ref_words;
  double f1_sum = 0;
  for (std::size_t a = 0; a < samples.size(); a += group_size) {
    if (cfg.max_groups > 0 && scores.size() >= static_cast<std::size_t>(cfg.max_groups)) break;
    const auto& gold = samples[a];
    std::vector<double> g;
    for (std::size_t i = a; i < a + group_size; ++i) g.push_back(utterance_score(model, build_input(samples[i], vocab, max_len)));
    scores.push_back(std::move(g));

    const auto lp = gold_logprobs(model, build_input(gold, vocab, max_len));
    logp.insert(logp.end(), lp.begin(), lp.end());

    emotions.emplace_back(gold.candidate_emotion,
                          top_emotion(predict_emotion(model, gold, vocab), cfg.exclude_no_emotion));

    if (cfg.generate) {
      SamplingParams sp = cfg.sampling;
      sp.seed = cfg.sampling.seed + gold.group;
      const auto reply = generate(model, gold, vocab, sp);
      hyp_words.push_back(bleu_words(reply.text));
      ref_words.push_back(bleu_words(gold.candidate.text));
      const auto ref_ids = encode(gold.candidate.text, vocab);
      f1_sum += token_f1(reply.ids, ref_ids);
    }
    spdlog::debug("evaluated position {}", scores.size());
  }
  if (scores.empty()) throw DataError("evaluation set has no position with a full history window");
  rep.n_positions = static_cast<std::int64_t>(scores.size());
  rep.hit_at_1 = hit_at_1(scores);
  rep.ppl = perplexity_from_logprobs(logp);
  rep.emotion = confusion_from_pairs(emotions, cfg.exclude_no_emotion, cfg.micro);
  if (cfg.generate) {
    rep.generated = true;
    rep.bleu = bleu(hyp_words, ref_words);
    rep.token_f1 = f1_sum / static_cast<double>(scores.size());
  }
  return rep;
}

#define EMPT_INSTANTIATE(T)                                                                                 \
  template double utterance_score(const Model<T>&, const InputRepresentation&);                             \
  template std::vector<double> gold_logprobs(const Model<T>&, const InputRepresentation&);                  \
  template PerplexityResult perplexity(const Model<T>&, const std::vector<InputRepresentation>&);           \
  template EvalReport evaluate(const Model<T>&, const Vocabulary&, const std::vector<Conversation>&,         \
                               const EvalConfig&);
EMPT_INSTANTIATE(float)
EMPT_INSTANTIATE(double)
#undef EMPT_INSTANTIATE

}  // namespace empt
