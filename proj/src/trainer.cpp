#include "empt/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "empt/error.hpp"
#include "empt/ops.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace empt {

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("train.lr must be > 0");
  if (!(clip_norm > 0)) throw ConfigError("train.clip_norm must be > 0");
  if (grad_accum_steps < 1) throw ConfigError("train.grad_accum_steps must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("train.eps must be > 0");
  if (checkpoint_every < 0 || max_steps < 0) throw ConfigError("train.checkpoint_every and train.max_steps must be >= 0");
}

json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"eps", eps},
          {"clip_norm", clip_norm},
          {"grad_accum_steps", grad_accum_steps},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"max_steps", max_steps},
          {"schedule", "linear-decay-to-zero"}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    try {
      if (k == "lr") c.lr = v.get<double>();
      else if (k == "beta1") c.beta1 = v.get<double>();
      else if (k == "beta2") c.beta2 = v.get<double>();
      else if (k == "eps") c.eps = v.get<double>();
      else if (k == "clip_norm") c.clip_norm = v.get<double>();
      else if (k == "grad_accum_steps") c.grad_accum_steps = v.get<int>();
      else if (k == "batch_size") c.batch_size = v.get<int>();
      else if (k == "epochs") c.epochs = v.get<int>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "checkpoint_every") c.checkpoint_every = v.get<int>();
      else if (k == "max_steps") c.max_steps = v.get<int>();
      else if (k == "schedule") {
        if (v.get<std::string>() != "linear-decay-to-zero") throw ConfigError("train.schedule must be linear-decay-to-zero");
      } else {
        throw ConfigError("unknown key train." + k);
      }
    } catch (const json::exception& e) {
      throw ConfigError("train." + k + ": " + e.what());
    }
  }
  return c;
}

template <class T>
AdamState<T> AdamState<T>::zeros_like(const Model<T>& model) {
  AdamState s;
  for (const auto& [_, p] : model.parameters()) {
    s.m.push_back(Tensor<T>::zeros(p.shape()));
    s.v.push_back(Tensor<T>::zeros(p.shape()));
  }
  return s;
}

template <class T>
void adam_step(const std::vector<std::pair<std::string, Tensor<T>>>& params, AdamState<T>& state, double lr,
               const TrainConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: moment buffers do not match the parameter list");
  }
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) {
      if (!std::isfinite(static_cast<double>(g))) throw TrainingHalted("non-finite gradient in " + name);
    }
  }
  const std::int64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> p = params[i].second;
    if (p.shape() != state.m[i].shape()) throw ShapeError("adam_step: moment shape mismatch for " + params[i].first);
    auto w = p.mutable_data();
    auto m = state.m[i].mutable_data();
    auto v = state.v[i].mutable_data();
    const bool has = p.has_grad();
    std::span<const T> g = has ? p.grad() : std::span<const T>();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = has ? static_cast<double>(g[j]) : 0.0;
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      w[j] = static_cast<T>(w[j] - lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps));
    }
  }
  state.step = t;
}

template <class T>
double clip_global_norm(const std::vector<std::pair<std::string, Tensor<T>>>& params, double max_norm) {
  double sq = 0;
  for (const auto& [_, p] : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (std::isfinite(norm) && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& [_, pc] : params) {
      if (!pc.has_grad()) continue;
      Tensor<T> p = pc;
      for (auto& g : p.mutable_grad()) g = static_cast<T>(g * s);
    }
  }
  return norm;
}

double schedule_lr(std::int64_t step, std::int64_t total_steps, double base_lr) {
  if (total_steps <= 0 || step >= total_steps) {
    if (step > total_steps) spdlog::warn("schedule_lr: step {} past total {}; lr clamped to 0", step, total_steps);
    return 0.0;
  }
  if (step < 0) return base_lr;
  return base_lr * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

json StepMetrics::to_json() const {
  return {{"step", step}, {"lr", lr}, {"L1", l1}, {"L2", l2}, {"L3", l3}, {"total", total}, {"grad_norm", grad_norm}};
}

std::int64_t steps_per_epoch(std::size_t n_groups, const TrainConfig& cfg) {
  const std::size_t per_step = static_cast<std::size_t>(cfg.batch_size) * static_cast<std::size_t>(cfg.grad_accum_steps);
  return static_cast<std::int64_t>((n_groups + per_step - 1) / per_step);
}

void save_training_checkpoint(const std::string& path, const Model<float>& model, const AdamState<float>& state,
                              const Rng& dropout_rng, std::int64_t total_steps, const TrainConfig& cfg,
                              const TrainOptions& opt) {
  Checkpoint ckpt;
  model.export_to(ckpt);
  const auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt.put<float>("adam.m." + params[i].first, state.m[i]);
    ckpt.put<float>("adam.v." + params[i].first, state.v[i]);
  }
  ckpt.meta()["step"] = state.step;
  ckpt.meta()["total_steps"] = total_steps;
  ckpt.meta()["dropout_rng"] = dropout_rng.serialize();
  ckpt.meta()["train"] = cfg.to_json();
  ckpt.meta()["vocab_hash"] = opt.vocab_hash;
  ckpt.save(path);
  json side = {{"model", model.config().to_json()}, {"vocab_path", opt.vocab_path}, {"vocab_hash", opt.vocab_hash}};
  write_file_atomic(sidecar_path(path), side.dump(2) + "\n");
}

namespace {

std::vector<std::pair<std::size_t, std::size_t>> group_ranges(const std::vector<EncodedSample>& samples) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < samples.size();) {
    std::size_t j = i + 1;
    while (j < samples.size() && samples[j].group == samples[i].group) ++j;
    out.emplace_back(i, j);
    i = j;
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::stream(seed, "shuffle", static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  return order;
}

// Keeps the metric lines of steps <= `step` so a resumed run appends the
// same lines an uninterrupted run would have written.
void truncate_metrics(const fs::path& path, std::int64_t step) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (json::parse(line).at("step").get<std::int64_t>() <= step) kept += line + "\n";
  }
  in.close();
  write_file_atomic(path.string(), kept);
}

}  // namespace

TrainResult train(Model<float>& model, const std::vector<EncodedSample>& samples, const TrainConfig& cfg,
                  const TrainOptions& opt) {
  cfg.validate();
  const auto groups = group_ranges(samples);
  if (groups.empty()) throw DataError("train: no samples");
  const std::int64_t spe = steps_per_epoch(groups.size(), cfg);
  const std::int64_t total = cfg.max_steps > 0 ? cfg.max_steps : spe * cfg.epochs;

  AdamState<float> state = AdamState<float>::zeros_like(model);
  Rng dropout_rng = Rng::stream(cfg.seed, "dropout");
  const auto& params = model.parameters();

  if (!opt.resume_from.empty()) {
    const auto ckpt = Checkpoint::load(opt.resume_from);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& name = params[i].first;
      auto t = ckpt.get<float>("param." + name);
      if (t.shape() != params[i].second.shape()) throw DataError("resume: shape mismatch for " + name);
      Tensor<float> p = params[i].second;
      std::copy(t.data().begin(), t.data().end(), p.mutable_data().begin());
      state.m[i] = ckpt.get<float>("adam.m." + name);
      state.v[i] = ckpt.get<float>("adam.v." + name);
    }
    state.step = ckpt.meta().at("step").get<std::int64_t>();
    if (ckpt.meta().at("total_steps").get<std::int64_t>() != total) {
      throw ConfigError("resume: checkpoint was written for " +
                        std::to_string(ckpt.meta().at("total_steps").get<std::int64_t>()) + " total steps, this run has " +
                        std::to_string(total));
    }
    dropout_rng.deserialize(ckpt.meta().at("dropout_rng").get<std::string>());
    spdlog::info("resumed from {} at step {}", opt.resume_from, state.step);
  }

  fs::path metrics_path;
  if (!opt.out_dir.empty()) {
    fs::create_directories(fs::path(opt.out_dir) / "checkpoints");
    metrics_path = fs::path(opt.out_dir) / "metrics.jsonl";
    if (opt.resume_from.empty()) {
      write_file_atomic(metrics_path.string(), "");
    } else {
      truncate_metrics(metrics_path, state.step);
    }
  }
  auto ckpt_path = [&](const std::string& stem) {
    return (fs::path(opt.out_dir) / "checkpoints" / (stem + ".bin")).string();
  };

  spdlog::info("training: {} groups, {} steps/epoch, {} total steps", groups.size(), spe, total);
  const std::size_t per_step = static_cast<std::size_t>(cfg.batch_size) * static_cast<std::size_t>(cfg.grad_accum_steps);
  std::int64_t order_epoch = -1;
  std::vector<std::size_t> order;
  TrainResult result;
  result.total_steps = total;
  const ForwardOptions fwd{.train = true, .dropout_rng = &dropout_rng};

  for (std::int64_t s = state.step; s < total; ++s) {
    const std::int64_t epoch = s / spe;
    if (epoch != order_epoch) {
      order = epoch_order(groups.size(), cfg.seed, epoch);
      order_epoch = epoch;
    }
    const std::size_t begin = static_cast<std::size_t>(s % spe) * per_step;
    const std::size_t end = std::min(begin + per_step, groups.size());
    const std::size_t n_micro = (end - begin + cfg.batch_size - 1) / cfg.batch_size;

    model.zero_grad();
    StepMetrics m;
    m.step = s + 1;
    for (std::size_t mb = 0; mb < n_micro; ++mb) {
      const std::size_t mb_begin = begin + mb * cfg.batch_size;
      const std::size_t mb_end = std::min(mb_begin + cfg.batch_size, end);
      const float weight = static_cast<float>(1.0 / (static_cast<double>(mb_end - mb_begin) * n_micro));
      for (std::size_t gi = mb_begin; gi < mb_end; ++gi) {
        const auto [a, b] = groups[order[gi]];
        Tensor<float> loss;
        LossReport rep;
        try {
          std::tie(loss, rep) = group_loss(model, std::span<const EncodedSample>(samples.data() + a, b - a), fwd);
        } catch (const InvalidValue&) {
          rep.total = std::numeric_limits<double>::quiet_NaN();  // a non-finite logit reached a softmax
        }
        if (!std::isfinite(rep.total)) {
          Tape::current().clear();
          std::string where;
          if (!opt.out_dir.empty()) {
            save_training_checkpoint(ckpt_path("last_good"), model, state, dropout_rng, total, cfg, opt);
            where = "; last good parameters in " + ckpt_path("last_good");
          }
          throw TrainingHalted("non-finite loss at step " + std::to_string(s + 1) + where);
        }
        const double share = 1.0 / static_cast<double>(end - begin);
        m.l1 += rep.l1.value_or(0) * share;
        m.l2 += rep.l2.value_or(0) * share;
        m.l3 += rep.l3.value_or(0) * share;
        m.total += rep.total * share;
        backward(ops::scale(loss, weight));
      }
    }
    m.grad_norm = clip_global_norm(params, cfg.clip_norm);
    m.lr = schedule_lr(s, total, cfg.lr);
    try {
      adam_step(params, state, m.lr, cfg);
    } catch (const TrainingHalted&) {
      if (!opt.out_dir.empty()) save_training_checkpoint(ckpt_path("last_good"), model, state, dropout_rng, total, cfg, opt);
      throw;
    }

    if (!metrics_path.empty()) {
      std::ofstream(metrics_path, std::ios::app) << m.to_json().dump() << "\n";
    }
    if (opt.on_step) opt.on_step(m);
    if (cfg.checkpoint_every > 0 && (s + 1) % cfg.checkpoint_every == 0 && !opt.out_dir.empty()) {
      save_training_checkpoint(ckpt_path("step_" + std::to_string(s + 1)), model, state, dropout_rng, total, cfg, opt);
    }
    if (m.step % 50 == 0 || m.step == total) {
      spdlog::info("step {}/{} lr {:.3g} L1 {:.4f} L2 {:.4f} L3 {:.4f} total {:.4f}", m.step, total, m.lr, m.l1, m.l2,
                   m.l3, m.total);
    }
    result.last = m;
  }
  result.steps = state.step;
  if (!opt.out_dir.empty()) {
    result.final_checkpoint = ckpt_path("final");
    save_training_checkpoint(result.final_checkpoint, model, state, dropout_rng, total, cfg, opt);
  }
  return result;
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(const std::vector<std::pair<std::string, Tensor<float>>>&, AdamState<float>&, double,
                        const TrainConfig&);
template void adam_step(const std::vector<std::pair<std::string, Tensor<double>>>&, AdamState<double>&, double,
                        const TrainConfig&);
template double clip_global_norm(const std::vector<std::pair<std::string, Tensor<float>>>&, double);
template double clip_global_norm(const std::vector<std::pair<std::string, Tensor<double>>>&, double);

}  // namespace empt
