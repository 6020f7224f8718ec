#include "empt/run_config.hpp"

#include "empt/checkpoint.hpp"
#include "empt/error.hpp"

using nlohmann::json;

namespace empt {

json sample_config_to_json(const SampleConfig& c) {
  return {{"history_window", c.history_window},
          {"n_utt_distractors", c.n_utt_distractors},
          {"n_emo_distractors", c.n_emo_distractors},
          {"seed", c.seed}};
}

SampleConfig sample_config_from_json(const json& j) {
  SampleConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    try {
      if (k == "history_window") c.history_window = it->get<int>();
      else if (k == "n_utt_distractors") c.n_utt_distractors = it->get<int>();
      else if (k == "n_emo_distractors") c.n_emo_distractors = it->get<int>();
      else if (k == "seed") c.seed = it->get<std::uint64_t>();
      else throw ConfigError("unknown key data." + k);
    } catch (const json::exception& e) {
      throw ConfigError("data." + k + ": " + e.what());
    }
  }
  return c;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  eval.validate();
  sampling.validate();
  if (data.history_window < 1) throw ConfigError("data.history_window must be >= 1");
  if (data.n_utt_distractors < 0 || data.n_emo_distractors < 0) throw ConfigError("data distractor counts must be >= 0");
}

json RunConfig::to_json() const {
  json e = eval.to_json();
  e.erase("sampling");
  return {{"seed", seed},         {"vocab", vocab}, {"model", model.to_json()}, {"train", train.to_json()},
          {"data", sample_config_to_json(data)}, {"eval", e}, {"sampling", sampling.to_json()}};
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k != "seed" && k != "vocab" && k != "model" && k != "train" && k != "data" && k != "eval" && k != "sampling") {
      throw ConfigError("unknown key " + k);
    }
  }
  try {
    c.seed = j.value("seed", std::uint64_t{0});
    c.vocab = j.value("vocab", std::string());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("seed/vocab: ") + e.what());
  }
  auto section = [&](const char* name) {
    json s = j.contains(name) ? j.at(name) : json::object();
    if (!s.is_object()) throw ConfigError(std::string(name) + " must be an object");
    return s;
  };
  c.model = ModelConfig::from_json(section("model"));

  json t = section("train");
  if (!t.contains("seed")) t["seed"] = c.seed;
  if (t.contains("schedule")) {
    if (t["schedule"] != "linear-decay-to-zero") throw ConfigError("train.schedule: only linear-decay-to-zero is supported");
    t.erase("schedule");
  }
  c.train = TrainConfig::from_json(t);

  json d = section("data");
  if (!d.contains("seed")) d["seed"] = c.seed;
  c.data = sample_config_from_json(d);

  json s = section("sampling");
  if (!s.contains("seed")) s["seed"] = c.seed;
  c.sampling = SamplingParams::from_json(s);

  json e = section("eval");
  if (e.contains("sampling")) throw ConfigError("eval.sampling: set the top-level sampling section instead");
  if (!e.contains("seed")) e["seed"] = c.seed;
  c.eval = EvalConfig::from_json(e);
  c.eval.sampling = c.sampling;
  return c;
}

json apply_overrides(json base, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must be key=value, got '" + a + "'");
    const std::string key = a.substr(0, eq), raw = a.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    json* node = &base;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ConfigError("empty path segment in '" + key + "'");
      if (!node->is_object()) throw ConfigError("'" + key + "' descends into a non-object");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      node = &(*node)[part];
      if (node->is_null()) *node = json::object();
      start = dot + 1;
    }
  }
  return base;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& assignments) {
  json j = json::object();
  if (!path.empty()) {
    try {
      j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
  auto c = RunConfig::from_json(apply_overrides(std::move(j), assignments));
  c.validate();
  return c;
}

}  // namespace empt
