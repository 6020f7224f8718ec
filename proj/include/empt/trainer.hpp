#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "empt/model.hpp"

namespace empt {

struct TrainConfig {
  double lr = 6.25e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;
  int grad_accum_steps = 8;
  int batch_size = 4;  // position groups per micro-batch
  int epochs = 20;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // optimizer steps; 0 = only the final checkpoint
  int max_steps = 0;         // 0 = epochs x steps per epoch

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Adam moments, one pair per parameter in model order.
template <class T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  std::int64_t step = 0;  // completed updates

  static AdamState zeros_like(const Model<T>& model);
};

// One bias-corrected Adam update with learning rate `lr`; parameters without a
// gradient are treated as having a zero gradient. Throws TrainingHalted naming
// the parameter when any gradient is non-finite; nothing is modified then.
template <class T>
void adam_step(const std::vector<std::pair<std::string, Tensor<T>>>& params, AdamState<T>& state, double lr,
               const TrainConfig& cfg);

// Scales all gradients by max_norm / norm when the global L2 norm exceeds
// max_norm. Returns the pre-clip norm.
template <class T>
double clip_global_norm(const std::vector<std::pair<std::string, Tensor<T>>>& params, double max_norm);

// base_lr · (1 - step / total_steps); a step past the end clamps to 0.
double schedule_lr(std::int64_t step, std::int64_t total_steps, double base_lr);

struct StepMetrics {
  std::int64_t step = 0;  // 1-based index of the completed update
  double lr = 0;
  double l1 = 0, l2 = 0, l3 = 0, total = 0;  // means over the step's groups
  double grad_norm = 0;                      // before clipping
  nlohmann::json to_json() const;
};

struct TrainOptions {
  std::string out_dir;      // checkpoints/ and metrics.jsonl; empty = write nothing
  std::string resume_from;  // checkpoint written by a previous run
  std::string vocab_path;   // recorded in checkpoint sidecars
  std::string vocab_hash;
  std::function<void(const StepMetrics&)> on_step;
};

struct TrainResult {
  std::int64_t steps = 0;
  std::int64_t total_steps = 0;
  StepMetrics last;
  std::string final_checkpoint;
};

std::int64_t steps_per_epoch(std::size_t n_groups, const TrainConfig& cfg);

// Trains on position groups (samples sharing a group id must be contiguous).
// Each micro-batch contributes the mean group loss divided by the number of
// micro-batches in the update. A non-finite loss writes last_good.bin and
// throws TrainingHalted.
TrainResult train(Model<float>& model, const std::vector<EncodedSample>& samples, const TrainConfig& cfg,
                  const TrainOptions& opt = {});

// Checkpoint holding parameters, optimizer moments, step and dropout RNG.
void save_training_checkpoint(const std::string& path, const Model<float>& model, const AdamState<float>& state,
                              const Rng& dropout_rng, std::int64_t total_steps, const TrainConfig& cfg,
                              const TrainOptions& opt);

}  // namespace empt
