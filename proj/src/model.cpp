#include "empt/model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iterator>

#include "empt/error.hpp"
#include "empt/ops.hpp"

using nlohmann::json;

namespace empt {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(d_model, "d_model");
  positive(d_ff, "d_ff");
  positive(max_positions, "max_positions");
  if (d_model % n_heads != 0) throw ConfigError("model.d_model must be divisible by model.n_heads");
  if (vocab_size < Vocabulary::kMinSize) {
    throw ConfigError("model.vocab_size must be at least " + std::to_string(Vocabulary::kMinSize));
  }
  if (n_emotions != kNumEmotions || n_actions != kNumActs || n_topics != kNumTopics) {
    throw ConfigError("label set sizes are fixed at 7 emotions, 4 acts, 10 topics");
  }
  for (double p : {embd_dropout, resid_dropout, attn_dropout}) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout rates must lie in [0, 1)");
  }
  if (c1 < 0 || c2 < 0 || c3 < 0) throw ConfigError("loss coefficients must be >= 0");
  if (!(ln_eps > 0)) throw ConfigError("model.ln_eps must be positive");
}

json ModelConfig::to_json() const {
  return {{"n_layers", n_layers},
          {"n_heads", n_heads},
          {"d_model", d_model},
          {"d_ff", d_ff},
          {"max_positions", max_positions},
          {"vocab_size", vocab_size},
          {"n_emotions", n_emotions},
          {"n_actions", n_actions},
          {"n_topics", n_topics},
          {"embd_dropout", embd_dropout},
          {"resid_dropout", resid_dropout},
          {"attn_dropout", attn_dropout},
          {"c1", c1},
          {"c2", c2},
          {"c3", c3},
          {"ln_eps", ln_eps},
          {"head", head == HeadVariant::kBinary ? "binary" : "multiple_choice"}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    try {
      if (k == "n_layers") c.n_layers = v.get<int>();
      else if (k == "n_heads") c.n_heads = v.get<int>();
      else if (k == "d_model") c.d_model = v.get<int>();
      else if (k == "d_ff") c.d_ff = v.get<int>();
      else if (k == "max_positions") c.max_positions = v.get<int>();
      else if (k == "vocab_size") c.vocab_size = v.get<int>();
      else if (k == "n_emotions") c.n_emotions = v.get<int>();
      else if (k == "n_actions") c.n_actions = v.get<int>();
      else if (k == "n_topics") c.n_topics = v.get<int>();
      else if (k == "embd_dropout") c.embd_dropout = v.get<double>();
      else if (k == "resid_dropout") c.resid_dropout = v.get<double>();
      else if (k == "attn_dropout") c.attn_dropout = v.get<double>();
      else if (k == "c1") c.c1 = v.get<double>();
      else if (k == "c2") c.c2 = v.get<double>();
      else if (k == "c3") c.c3 = v.get<double>();
      else if (k == "ln_eps") c.ln_eps = v.get<double>();
      else if (k == "head") {
        const auto s = v.get<std::string>();
        if (s == "binary") c.head = HeadVariant::kBinary;
        else if (s == "multiple_choice") c.head = HeadVariant::kMultipleChoice;
        else throw ConfigError("model.head must be binary or multiple_choice");
      } else {
        throw ConfigError("unknown key model." + k);
      }
    } catch (const json::exception& e) {
      throw ConfigError("model." + k + ": " + e.what());
    }
  }
  return c;
}

std::size_t ModelConfig::parameter_count() const {
  const std::size_t V = vocab_size, P = max_positions, d = d_model, f = d_ff, L = n_layers;
  const std::size_t E = n_emotions + 1, A = n_actions + 1;
  const std::size_t block = 4 * d + 4 * (d * d + d) + (d * f + f) + (f * d + d);
  return V * d + P * d + E * d + A * d + L * block + 2 * d + 2 * 2 * d;
}

template <class T>
void Model<T>::add(const std::string& name, Tensor<T> t) {
  index_[name] = params_.size();
  t.set_requires_grad();
  params_.emplace_back(name, std::move(t));
}

template <class T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = Rng::stream(seed, "init");
  const std::size_t d = cfg_.d_model, f = cfg_.d_ff;
  auto normal = [&](Shape s) {
    Tensor<T> t(std::move(s));
    for (auto& x : t.mutable_data()) x = static_cast<T>(rng.normal(0.0, 0.02));
    return t;
  };
  add("tok_emb", normal({static_cast<std::size_t>(cfg_.vocab_size), d}));
  add("pos_emb", normal({static_cast<std::size_t>(cfg_.max_positions), d}));
  add("emo_emb", normal({static_cast<std::size_t>(cfg_.n_emotions + 1), d}));
  add("act_emb", normal({static_cast<std::size_t>(cfg_.n_actions + 1), d}));
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "h" + std::to_string(l) + ".";
    add(p + "ln1.g", Tensor<T>::full({d}, T(1)));
    add(p + "ln1.b", Tensor<T>::zeros({d}));
    for (const char* w : {"q", "k", "v", "o"}) {
      add(p + "attn.w" + w, normal({d, d}));
      add(p + "attn.b" + w, Tensor<T>::zeros({d}));
    }
    add(p + "ln2.g", Tensor<T>::full({d}, T(1)));
    add(p + "ln2.b", Tensor<T>::zeros({d}));
    add(p + "mlp.w1", normal({d, f}));
    add(p + "mlp.b1", Tensor<T>::zeros({f}));
    add(p + "mlp.w2", normal({f, d}));
    add(p + "mlp.b2", Tensor<T>::zeros({d}));
  }
  add("ln_f.g", Tensor<T>::full({d}, T(1)));
  add("ln_f.b", Tensor<T>::zeros({d}));
  add("head.utterance", normal({d, 2}));
  add("head.emotion", normal({d, 2}));
}

template <class T>
Tensor<T>& Model<T>::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw IndexError("no parameter named " + name);
  return params_[it->second].second;
}

template <class T>
const Tensor<T>& Model<T>::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw IndexError("no parameter named " + name);
  return params_[it->second].second;
}

template <class T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

template <class T>
ForwardOutput<T> Model<T>::forward(const InputRepresentation& in, const ForwardOptions& opt) const {
  const std::size_t n = in.size();
  if (n < 2) throw ShapeError("forward needs at least 2 positions");
  if (n > static_cast<std::size_t>(cfg_.max_positions)) {
    throw ContextOverflow("input of " + std::to_string(n) + " positions exceeds max_positions " +
                          std::to_string(cfg_.max_positions));
  }
  if (!in.valid()) throw ShapeError("input rows differ in length");
  const bool drop = opt.train;
  if (drop && opt.dropout_rng == nullptr &&
      (cfg_.embd_dropout > 0 || cfg_.resid_dropout > 0 || cfg_.attn_dropout > 0)) {
    throw InvalidValue("training forward with dropout needs an RNG");
  }
  auto maybe_dropout = [&](const Tensor<T>& x, double p) {
    return drop && p > 0 ? ops::dropout(x, p, *opt.dropout_rng) : x;
  };
  const T eps = static_cast<T>(cfg_.ln_eps);

  Tensor<T> x = ops::add(ops::add(ops::embedding(param("tok_emb"), std::span<const std::int32_t>(in.token_ids)),
                                  ops::embedding(param("pos_emb"), std::span<const std::int32_t>(in.position_ids))),
                         ops::add(ops::embedding(param("emo_emb"), std::span<const std::int32_t>(in.emotion_ids)),
                                  ops::embedding(param("act_emb"), std::span<const std::int32_t>(in.action_ids))));
  x = maybe_dropout(x, cfg_.embd_dropout);

  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "h" + std::to_string(l) + ".";
    auto h = ops::layer_norm(x, param(p + "ln1.g"), param(p + "ln1.b"), eps);
    auto q = ops::add_bias(ops::matmul(h, param(p + "attn.wq")), param(p + "attn.bq"));
    auto k = ops::add_bias(ops::matmul(h, param(p + "attn.wk")), param(p + "attn.bk"));
    auto v = ops::add_bias(ops::matmul(h, param(p + "attn.wv")), param(p + "attn.bv"));
    auto a = ops::causal_attention(q, k, v, static_cast<std::size_t>(cfg_.n_heads), drop ? cfg_.attn_dropout : 0.0,
                                   opt.dropout_rng);
    a = ops::add_bias(ops::matmul(a, param(p + "attn.wo")), param(p + "attn.bo"));
    x = ops::add(x, maybe_dropout(a, cfg_.resid_dropout));

    h = ops::layer_norm(x, param(p + "ln2.g"), param(p + "ln2.b"), eps);
    auto m = ops::gelu(ops::add_bias(ops::matmul(h, param(p + "mlp.w1")), param(p + "mlp.b1")));
    m = ops::add_bias(ops::matmul(m, param(p + "mlp.w2")), param(p + "mlp.b2"));
    x = ops::add(x, maybe_dropout(m, cfg_.resid_dropout));
  }

  ForwardOutput<T> out;
  out.hidden = ops::layer_norm(x, param("ln_f.g"), param("ln_f.b"), eps);
  const std::size_t last = n - 1, before = n - 2;
  out.utterance_logits =
      ops::reshape(ops::matmul(ops::select_rows(out.hidden, std::span<const std::size_t>(&last, 1)),
                               param("head.utterance")),
                   {2});
  out.emotion_logits =
      ops::reshape(ops::matmul(ops::select_rows(out.hidden, std::span<const std::size_t>(&before, 1)),
                               param("head.emotion")),
                   {2});
  if (opt.full_lm) out.lm_logits = ops::matmul_nt(out.hidden, param("tok_emb"));
  return out;
}

template <class T>
Tensor<T> Model<T>::lm_logits(const Tensor<T>& hidden, std::size_t begin, std::size_t end) const {
  if (begin >= end || end > hidden.rows()) throw IndexError("lm_logits: bad row range");
  std::vector<std::size_t> rows(end - begin);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = begin + i;
  return ops::matmul_nt(ops::select_rows(hidden, std::span<const std::size_t>(rows)), param("tok_emb"));
}

template <class T>
void Model<T>::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

template <class T>
void Model<T>::set_requires_grad(bool on) {
  for (auto& [_, t] : params_) t.set_requires_grad(on);
}

template <class T>
Model<T> Model<T>::clone() const {
  Model m;
  m.cfg_ = cfg_;
  for (const auto& [name, t] : params_) m.add(name, t.detach().clone());
  for (auto& [name, t] : m.params_) t.set_requires_grad(param(name).requires_grad());
  return m;
}

template <class T>
void Model<T>::export_to(Checkpoint& ckpt) const {
  ckpt.meta()["model"] = cfg_.to_json();
  for (const auto& [name, t] : params_) ckpt.put<T>("param." + name, t);
}

template <class T>
Model<T> Model<T>::import_from(const Checkpoint& ckpt) {
  if (!ckpt.meta().contains("model")) throw DataError("checkpoint has no model config");
  Model m;
  m.cfg_ = ModelConfig::from_json(ckpt.meta().at("model"));
  m.cfg_.validate();
  const Model shape_ref(m.cfg_, 0);
  for (const auto& [name, ref] : shape_ref.params_) {
    const std::string key = "param." + name;
    if (!ckpt.contains(key)) throw DataError("checkpoint is missing " + key);
    auto t = ckpt.get<T>(key);
    if (t.shape() != ref.shape()) throw DataError("checkpoint tensor " + key + " has the wrong shape");
    m.add(name, std::move(t));
  }
  return m;
}

template <class T>
Tensor<T> lm_loss(const Model<T>& model, const ForwardOutput<T>& out, const InputRepresentation& in) {
  if (in.lm_begin == 0 || in.lm_end <= in.lm_begin) throw InvalidValue("lm_loss: empty gold span");
  auto logits = model.lm_logits(out.hidden, in.lm_begin - 1, in.lm_end - 1);
  return ops::cross_entropy(logits, std::span<const std::int32_t>(in.token_ids).subspan(
                                        in.lm_begin, in.lm_end - in.lm_begin));
}

template <class T>
Tensor<T> utterance_loss(const ForwardOutput<T>& out, bool is_gold_utterance) {
  return ops::cross_entropy(out.utterance_logits, is_gold_utterance ? 1 : 0);
}

template <class T>
Tensor<T> emotion_loss(const ForwardOutput<T>& out, bool is_gold_emotion) {
  return ops::cross_entropy(out.emotion_logits, is_gold_emotion ? 1 : 0);
}

double total_loss(std::optional<double> l1, std::optional<double> l2, std::optional<double> l3, double c1,
                  double c2, double c3) {
  if (c1 < 0 || c2 < 0 || c3 < 0) throw ConfigError("loss coefficients must be >= 0");
  double t = 0;
  if (l1) t += c1 * *l1;
  if (l2) t += c2 * *l2;
  if (l3) t += c3 * *l3;
  return t;
}

json LossReport::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"L1", opt(l1)}, {"L2", opt(l2)}, {"L3", opt(l3)}, {"c1", c1}, {"c2", c2}, {"c3", c3}, {"total", total}};
}

EncodedSample encode_sample(const TrainingSample& s, const Vocabulary& vocab, std::size_t max_len) {
  EncodedSample e;
  e.source = s.source;
  e.group = s.group;
  if (s.source != SampleSource::kEmotionDistractor) e.full = build_input(s, vocab, max_len);
  if (s.source != SampleSource::kUtteranceDistractor) e.stub = build_emotion_stub(s, s.candidate_emotion, vocab, max_len);
  return e;
}

std::vector<EncodedSample> encode_groups(const std::vector<TrainingSample>& samples, const Vocabulary& vocab,
                                         std::size_t max_len, std::size_t* skipped) {
  std::vector<EncodedSample> encoded;
  std::size_t dropped = 0;
  for (std::size_t a = 0; a < samples.size();) {
    std::size_t b = a;
    while (b < samples.size() && samples[b].group == samples[a].group) ++b;
    try {
      std::vector<EncodedSample> g;
      for (std::size_t i = a; i < b; ++i) g.push_back(encode_sample(samples[i], vocab, max_len));
      encoded.insert(encoded.end(), std::make_move_iterator(g.begin()), std::make_move_iterator(g.end()));
    } catch (const ContextOverflow&) {
      ++dropped;
    }
    a = b;
  }
  if (skipped) *skipped = dropped;
  return encoded;
}

namespace {

// score = logit[1] - logit[0] for each candidate, stacked into one vector.
template <class T>
Tensor<T> stacked_scores(const std::vector<Tensor<T>>& logits) {
  const Tensor<T> diff({2, 1}, {T(-1), T(1)});
  std::vector<Tensor<T>> rows;
  rows.reserve(logits.size());
  for (const auto& l : logits) rows.push_back(ops::matmul(ops::reshape(l, {1, 2}), diff));
  return ops::reshape(ops::concat_rows(rows), {logits.size()});
}

}  // namespace

template <class T>
std::pair<Tensor<T>, LossReport> group_loss(const Model<T>& model, std::span<const EncodedSample> group,
                                            const ForwardOptions& opt) {
  const auto& cfg = model.config();
  LossReport rep;
  rep.c1 = cfg.c1;
  rep.c2 = cfg.c2;
  rep.c3 = cfg.c3;

  Tensor<T> l1;
  std::vector<Tensor<T>> utt_logits, emo_logits;
  std::vector<bool> utt_labels, emo_labels;
  // Binary-head terms are appended with the gold candidate first, which is
  // also the target index of the multiple-choice softmax.
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& s : group) {
      const bool gold = s.source == SampleSource::kGold;
      if (gold != (pass == 0)) continue;
      if (s.source != SampleSource::kEmotionDistractor) {
        auto out = model.forward(s.full, opt);
        if (gold) l1 = lm_loss(model, out, s.full);
        utt_logits.push_back(out.utterance_logits);
        utt_labels.push_back(gold);
      }
      if (s.source != SampleSource::kUtteranceDistractor) {
        auto out = model.forward(s.stub, opt);
        emo_logits.push_back(out.emotion_logits);
        emo_labels.push_back(gold);
      }
    }
  }
  if (!l1.defined()) throw InvalidValue("group has no gold sample");

  auto head_loss = [&](const std::vector<Tensor<T>>& logits, const std::vector<bool>& labels) {
    if (cfg.head == HeadVariant::kMultipleChoice) {
      return ops::cross_entropy(stacked_scores(logits), 0);
    }
    Tensor<T> acc;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      auto li = ops::cross_entropy(logits[i], labels[i] ? 1 : 0);
      acc = acc.defined() ? ops::add(acc, li) : li;
    }
    return ops::scale(acc, static_cast<T>(1.0 / static_cast<double>(logits.size())));
  };
  Tensor<T> l2 = head_loss(utt_logits, utt_labels);
  Tensor<T> l3 = head_loss(emo_logits, emo_labels);
  rep.l1 = l1.item();
  rep.l2 = l2.item();
  rep.l3 = l3.item();
  rep.total = total_loss(rep.l1, rep.l2, rep.l3, cfg.c1, cfg.c2, cfg.c3);

  // Terms with a zero coefficient are left out of the graph entirely.
  Tensor<T> total;
  auto accumulate = [&](const Tensor<T>& term, double c) {
    if (c == 0.0) return;
    auto scaled = ops::scale(term, static_cast<T>(c));
    total = total.defined() ? ops::add(total, scaled) : scaled;
  };
  accumulate(l1, cfg.c1);
  accumulate(l2, cfg.c2);
  accumulate(l3, cfg.c3);
  if (!total.defined()) total = Tensor<T>::scalar(T(0));
  return {total, rep};
}

template <class T>
std::vector<EmotionScore> predict_emotion(const Model<T>& model, Topic topic, const std::vector<Segment>& history,
                                          TokenId candidate_speaker) {
  NoGradGuard guard;
  std::vector<EmotionScore> scores;
  for (int e = 0; e < kNumEmotions; ++e) {
    Segment cand;
    cand.speaker = candidate_speaker;
    cand.emotion_row = e;
    cand.act_row = kNeutralActRow;
    auto in = assemble_input(topic, history, cand, Tail::kStub, static_cast<std::size_t>(model.config().max_positions));
    auto out = model.forward(in);
    const double a = out.emotion_logits.at(0), b = out.emotion_logits.at(1);
    // softmax(...)[1] written as a logistic for stability
    const double z = b - a;
    const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    scores.push_back({static_cast<Emotion>(e), p});
  }
  std::stable_sort(scores.begin(), scores.end(),
                   [](const EmotionScore& x, const EmotionScore& y) { return x.score > y.score; });
  return scores;
}

template <class T>
std::vector<EmotionScore> predict_emotion(const Model<T>& model, const TrainingSample& context,
                                          const Vocabulary& vocab) {
  return predict_emotion(model, context.topic, history_segments(context, vocab),
                         Vocabulary::speaker_token(context.turn_index));
}

std::string sidecar_path(const std::string& checkpoint_path) {
  const auto dot = checkpoint_path.rfind('.');
  const auto slash = checkpoint_path.rfind('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return checkpoint_path + ".json";
  return checkpoint_path.substr(0, dot) + ".json";
}

void save_model(const Model<float>& model, const std::string& path, const std::string& vocab_path,
                const std::string& vocab_hash) {
  Checkpoint ckpt;
  model.export_to(ckpt);
  ckpt.meta()["vocab_hash"] = vocab_hash;
  ckpt.save(path);
  json side = {{"model", model.config().to_json()}, {"vocab_path", vocab_path}, {"vocab_hash", vocab_hash}};
  write_file_atomic(sidecar_path(path), side.dump(2) + "\n");
}

LoadedModel load_model(const std::string& path) {
  const std::string bytes = read_file(path);
  const auto ckpt = Checkpoint::deserialize(bytes);
  std::string vocab_path, vocab_hash = ckpt.meta().value("vocab_hash", "");
  try {
    const auto side = json::parse(read_file(sidecar_path(path)));
    vocab_path = side.value("vocab_path", "");
    if (side.contains("vocab_hash")) vocab_hash = side.at("vocab_hash").get<std::string>();
  } catch (const IoError&) {
    // A bare checkpoint still carries its config; the vocabulary must then be given explicitly.
  } catch (const json::exception& e) {
    throw DataError(sidecar_path(path) + ": " + e.what());
  }
  return {Model<float>::import_from(ckpt), vocab_path, vocab_hash, hex64(fnv1a64(bytes))};
}

ModelBundle load_bundle(const std::string& checkpoint_path, const std::string& vocab_override) {
  auto loaded = load_model(checkpoint_path);
  std::filesystem::path vp = vocab_override.empty() ? loaded.vocab_path : vocab_override;
  if (vp.empty()) throw DataError(checkpoint_path + ": no vocabulary recorded for this checkpoint; pass one explicitly");
  if (vocab_override.empty() && vp.is_relative()) vp = std::filesystem::path(checkpoint_path).parent_path() / vp;
  auto vocab = Vocabulary::load(vp.string());
  if (!loaded.vocab_hash.empty() && vocab.hash() != loaded.vocab_hash) {
    throw DataError(vp.string() + ": vocabulary hash " + vocab.hash() + " does not match the checkpoint's " +
                    loaded.vocab_hash);
  }
  if (vocab.size() > loaded.model.config().vocab_size) {
    throw DataError(vp.string() + ": vocabulary is larger than the checkpoint's token table");
  }
  return {std::move(loaded.model), std::move(vocab), vp.string(), loaded.checkpoint_hash};
}

template class Model<float>;
template class Model<double>;
#define EMPT_INSTANTIATE(T)                                                                                   \
  template Tensor<T> lm_loss(const Model<T>&, const ForwardOutput<T>&, const InputRepresentation&);           \
  template Tensor<T> utterance_loss(const ForwardOutput<T>&, bool);                                           \
  template Tensor<T> emotion_loss(const ForwardOutput<T>&, bool);                                             \
  template std::pair<Tensor<T>, LossReport> group_loss(const Model<T>&, std::span<const EncodedSample>,       \
                                                       const ForwardOptions&);                                \
  template std::vector<EmotionScore> predict_emotion(const Model<T>&, Topic, const std::vector<Segment>&,     \
                                                     TokenId);                                                \
  template std::vector<EmotionScore> predict_emotion(const Model<T>&, const TrainingSample&, const Vocabulary&);
EMPT_INSTANTIATE(float)
EMPT_INSTANTIATE(double)
#undef EMPT_INSTANTIATE

}  // namespace empt
