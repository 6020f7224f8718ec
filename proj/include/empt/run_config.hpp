#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "empt/evaluator.hpp"
#include "empt/trainer.hpp"

namespace empt {

// Everything one CLI run needs. In JSON:
//   {"seed", "vocab", "model":{..}, "train":{..}, "data":{..}, "eval":{..}, "sampling":{..}}
// A top-level seed fills train.seed, data.seed, eval.seed and sampling.seed
// where those are not given. eval.sampling mirrors "sampling".
struct RunConfig {
  std::uint64_t seed = 0;
  std::string vocab;
  ModelConfig model;
  TrainConfig train;
  SampleConfig data;
  EvalConfig eval;
  SamplingParams sampling;

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

// Applies "dotted.key=value" assignments. The value is parsed as JSON when it
// is valid JSON and taken as a string otherwise.
nlohmann::json apply_overrides(nlohmann::json base, const std::vector<std::string>& assignments);

// Reads `path` (empty = all defaults), applies the overrides and validates.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& assignments);

nlohmann::json sample_config_to_json(const SampleConfig& c);
SampleConfig sample_config_from_json(const nlohmann::json& j);

}  // namespace empt
