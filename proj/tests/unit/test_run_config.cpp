#include "doctest.h"
#include "empt/error.hpp"
#include "empt/run_config.hpp"

using namespace empt;
using nlohmann::json;

TEST_CASE("run config defaults and round trip") {
  const auto c = RunConfig::from_json(json::object());
  CHECK(c.sampling.p == 0.9);
  CHECK(c.sampling.temperature == 0.7);
  CHECK(c.train.lr == 6.25e-5);
  CHECK(c.eval.n_distractors == 19);
  CHECK(c.data.history_window == 2);
  const auto back = RunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
}

TEST_CASE("top-level seed fills unset seeds") {
  auto c = RunConfig::from_json({{"seed", 9}, {"train", {{"seed", 2}}}});
  CHECK(c.train.seed == 2);
  CHECK(c.data.seed == 9);
  CHECK(c.eval.seed == 9);
  CHECK(c.sampling.seed == 9);
  CHECK(c.eval.sampling.seed == 9);
  CHECK(RunConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("dotted overrides") {
  json base = {{"model", {{"n_layers", 4}}}};
  auto j = apply_overrides(base, {"model.n_layers=2", "train.lr=0.001", "vocab=runs/v.json", "eval.micro=true",
                                  "sampling.p=0.5"});
  CHECK(j["model"]["n_layers"] == 2);
  CHECK(j["train"]["lr"] == 0.001);
  CHECK(j["vocab"] == "runs/v.json");
  const auto c = RunConfig::from_json(j);
  CHECK(c.model.n_layers == 2);
  CHECK(c.eval.micro);
  CHECK(c.sampling.p == 0.5);
  CHECK(c.eval.sampling.p == 0.5);

  CHECK_THROWS_AS(apply_overrides(base, {"model.n_layers"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(base, {"model..x=1"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(base, {"model.n_layers.x=1"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(apply_overrides(base, {"model.layers=2"})), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(apply_overrides(base, {"trian.lr=1"})), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(apply_overrides(base, {"train.schedule=cosine"})), ConfigError);
  CHECK_THROWS_AS(load_run_config("", {"sampling.temperature=0"}), ConfigError);
}
