#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "empt/checkpoint.hpp"
#include "empt/error.hpp"
#include "empt/trainer.hpp"

using namespace empt;
namespace fs = std::filesystem;

namespace {

const std::string kToy = std::string(EMPT_TEST_DATA_DIR) + "/../../data/toy_dialogues.jsonl";

ModelConfig micro_config(double dropout = 0.0) {
  ModelConfig c;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.max_positions = 160;
  c.vocab_size = Vocabulary::kMinSize;
  c.embd_dropout = c.resid_dropout = c.attn_dropout = dropout;
  return c;
}

std::vector<EncodedSample> toy_samples(std::size_t max_groups = 1000) {
  Vocabulary v;
  auto corpus = load_jsonl(kToy);
  std::vector<EncodedSample> out;
  for (const auto& s : build_samples(corpus, {2, 1, 1, 4})) {
    if (s.group >= max_groups) break;
    out.push_back(encode_sample(s, v, 160));
  }
  return out;
}

using Params = std::vector<std::pair<std::string, Tensor<double>>>;

Params scalar_params(std::vector<double> values, std::vector<double> grads) {
  Params p;
  for (std::size_t i = 0; i < values.size(); ++i) {
    Tensor<double> t({1}, {values[i]});
    t.set_requires_grad();
    t.mutable_grad()[0] = grads[i];
    p.emplace_back("p" + std::to_string(i), t);
  }
  return p;
}

AdamState<double> zero_state(const Params& p) {
  AdamState<double> s;
  for (const auto& [_, t] : p) {
    s.m.push_back(Tensor<double>::zeros(t.shape()));
    s.v.push_back(Tensor<double>::zeros(t.shape()));
  }
  return s;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("adam step examples") {
  TrainConfig cfg;
  {
    auto p = scalar_params({1.0, -2.0}, {0.0, 0.0});
    auto s = zero_state(p);
    adam_step(p, s, 0.1, cfg);
    CHECK(p[0].second.at(0) == 1.0);
    CHECK(p[1].second.at(0) == -2.0);
  }
  {
    auto p = scalar_params({1.0}, {0.5});
    auto s = zero_state(p);
    adam_step(p, s, 0.1, cfg);
    CHECK(p[0].second.at(0) == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
    CHECK(std::abs(p[0].second.at(0) - 0.9) < 1e-7);
    CHECK(s.step == 1);
  }
  {
    auto p = scalar_params({0.3, 0.3}, {0.7, 0.7});
    auto s = zero_state(p);
    for (int i = 0; i < 5; ++i) {
      adam_step(p, s, 0.01, cfg);
      CHECK(p[0].second.at(0) == p[1].second.at(0));
    }
  }
  {
    auto p = scalar_params({1.0, 2.0}, {0.1, std::nan("")});
    auto s = zero_state(p);
    try {
      adam_step(p, s, 0.1, cfg);
      FAIL("expected TrainingHalted");
    } catch (const TrainingHalted& e) {
      CHECK(std::string(e.what()).find("p1") != std::string::npos);
    }
    CHECK(p[0].second.at(0) == 1.0);
    CHECK(s.step == 0);
  }
}

TEST_CASE("global norm clipping") {
  auto p = scalar_params({0, 0}, {3, 4});
  CHECK(clip_global_norm(p, 1.0) == doctest::Approx(5.0));
  CHECK(p[0].second.grad()[0] == doctest::Approx(0.6));
  CHECK(p[1].second.grad()[0] == doctest::Approx(0.8));

  p = scalar_params({0, 0}, {0.3, 0.4});
  CHECK(clip_global_norm(p, 1.0) == doctest::Approx(0.5));
  CHECK(p[0].second.grad()[0] == 0.3);
  CHECK(p[1].second.grad()[0] == 0.4);

  p = scalar_params({0, 0}, {0, 0});
  CHECK(clip_global_norm(p, 1.0) == 0.0);
  CHECK(p[0].second.grad()[0] == 0.0);

  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> g(7);
    for (auto& x : g) x = (rng.uniform() - 0.5) * 20;
    auto q = scalar_params(std::vector<double>(7, 0.0), g);
    const double max_norm = 0.1 + rng.uniform() * 3;
    clip_global_norm(q, max_norm);
    double sq = 0;
    for (const auto& [_, t] : q) sq += t.grad()[0] * t.grad()[0];
    CHECK(std::sqrt(sq) <= max_norm + 1e-9);
  }
}

TEST_CASE("linear decay schedule") {
  CHECK(schedule_lr(0, 100, 0.5) == 0.5);
  CHECK(schedule_lr(100, 100, 0.5) == 0.0);
  CHECK(schedule_lr(50, 100, 0.5) == 0.25);
  CHECK(schedule_lr(150, 100, 0.5) == 0.0);
  double prev = 1e9;
  for (int s = 0; s <= 37; ++s) {
    const double lr = schedule_lr(s, 37, 6.25e-5);
    CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("train config json and validation") {
  TrainConfig c;
  CHECK(c.lr == 6.25e-5);
  CHECK(c.grad_accum_steps == 8);
  CHECK(c.batch_size == 4);
  CHECK(c.epochs == 20);
  c.seed = 77;
  auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  c.grad_accum_steps = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json({{"learning_rate", 1}}), ConfigError);
  CHECK(steps_per_epoch(63, TrainConfig{}) == 2);
}

TEST_CASE("accumulated micro-batches equal one large batch") {
  const auto samples = toy_samples(40);
  TrainConfig a;
  a.lr = 1e-3;
  a.batch_size = 4;
  a.grad_accum_steps = 8;
  a.max_steps = 1;
  a.seed = 5;
  TrainConfig b = a;
  b.batch_size = 32;
  b.grad_accum_steps = 1;

  Model<float> ma(micro_config(), 1), mb(micro_config(), 1);
  auto ra = train(ma, samples, a);
  auto rb = train(mb, samples, b);
  CHECK(ra.last.total == doctest::Approx(rb.last.total).epsilon(1e-6));
  double max_grad = 0, max_param = 0;
  for (std::size_t i = 0; i < ma.parameters().size(); ++i) {
    const auto& pa = ma.parameters()[i].second;
    const auto& pb = mb.parameters()[i].second;
    for (std::size_t j = 0; j < pa.numel(); ++j) {
      max_param = std::max(max_param, std::abs(double(pa.at(j)) - double(pb.at(j))));
      if (pa.has_grad()) max_grad = std::max(max_grad, std::abs(double(pa.grad()[j]) - double(pb.grad()[j])));
    }
  }
  CHECK(max_grad <= 1e-6);
  CHECK(max_param <= 1e-6);
}

TEST_CASE("seeded runs are bitwise identical and resume reproduces the log") {
  const auto samples = toy_samples(24);
  TrainConfig cfg;
  cfg.lr = 2e-3;
  cfg.batch_size = 2;
  cfg.grad_accum_steps = 2;
  cfg.epochs = 2;
  cfg.seed = 11;
  cfg.checkpoint_every = 3;

  TempDir d1("empt_train_a"), d2("empt_train_b");
  Model<float> m1(micro_config(0.1), 2), m2(micro_config(0.1), 2);
  auto r1 = train(m1, samples, cfg, {.out_dir = d1.path.string()});
  auto r2 = train(m2, samples, cfg, {.out_dir = d2.path.string()});
  CHECK(r1.steps == 12);
  CHECK(read_file(r1.final_checkpoint) == read_file(r2.final_checkpoint));
  const auto log1 = lines_of(d1.path / "metrics.jsonl");
  CHECK(log1 == lines_of(d2.path / "metrics.jsonl"));
  REQUIRE(log1.size() == 12);

  double prev_lr = 1e9;
  for (const auto& l : log1) {
    const auto j = nlohmann::json::parse(l);
    CHECK(j.at("lr").get<double>() <= prev_lr);
    prev_lr = j.at("lr").get<double>();
    for (auto k : {"L1", "L2", "L3", "total", "grad_norm"}) CHECK(std::isfinite(j.at(k).get<double>()));
  }

  // Resume the second run from step 6: the log and the final checkpoint match.
  Model<float> m3(micro_config(0.1), 999);
  auto r3 = train(m3, samples, cfg,
                  {.out_dir = d2.path.string(), .resume_from = (d2.path / "checkpoints" / "step_6.bin").string()});
  CHECK(r3.steps == 12);
  CHECK(lines_of(d2.path / "metrics.jsonl") == log1);
  CHECK(read_file(r3.final_checkpoint) == read_file(r1.final_checkpoint));

  for (const auto& [name, p] : m1.parameters()) {
    for (float x : p.data()) REQUIRE(std::isfinite(x));
  }
}

TEST_CASE("a non-finite loss halts training and keeps the last good parameters") {
  const auto samples = toy_samples(8);
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.grad_accum_steps = 1;
  cfg.max_steps = 3;
  TempDir d("empt_train_nan");
  Model<float> m(micro_config(), 3);
  m.param("ln_f.g").mutable_data()[0] = std::nanf("");
  CHECK_THROWS_AS(train(m, samples, cfg, {.out_dir = d.path.string()}), TrainingHalted);
  CHECK(fs::exists(d.path / "checkpoints" / "last_good.bin"));
  CHECK(Tape::current().size() == 0);
}
