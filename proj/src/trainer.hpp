// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "rim.hpp"
#include "tasks.hpp"

namespace dvnc {

struct TaskSpec {
  enum class Kind { adding, copying };
  Kind kind = Kind::adding;
  AddingSpec adding;
  CopyingSpec copying;

  int64_t input_dim() const;
  int64_t readout_dim() const;
  int64_t batch() const { return kind == Kind::adding ? adding.batch : copying.batch; }
  uint64_t seed() const { return kind == Kind::adding ? adding.seed : copying.seed; }
  void set_batch(int64_t b);
  void set_seed(uint64_t s);
  void validate() const;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  TaskSpec task;
  RimConfig rim;  // input_dim/readout_dim are derived from the task
  AdamConfig adam;
  int64_t batch = 64;
  int64_t epochs = 1;
  int64_t steps_per_epoch = 100;
  double grad_clip = 1.0;
  std::vector<TaskSpec> eval_specs;
  uint64_t seed = 0;
  std::string out_dir = ".";
  int64_t checkpoint_every = 0;  // 0: final checkpoint only

  int64_t total_steps() const { return epochs * steps_per_epoch; }
  void validate() const;

  // Strict schema: unknown keys are rejected.
  static TrainConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
};

TaskSpec task_spec_from_json_text(const std::string& text);
std::string task_spec_to_json_text(const TaskSpec& spec);

// Adam with bias correction over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  // Global-norm gradient clipping; returns the pre-clip norm.
  double clip_global_norm(double max_norm);
  void step();
  void zero_grad();

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

struct EvalRecord {
  TaskSpec spec;
  double mse = 0.0;            // adding
  double cross_entropy = 0.0;  // copying, recall positions only
  double accuracy = 0.0;       // copying
};

struct StepMetrics {
  int64_t step = 0;
  double task_loss = 0.0;
  double codebook_loss = 0.0;
  double commitment_loss = 0.0;
  double total_loss = 0.0;
  double perplexity = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::string checkpoint_path;
  std::string metrics_path;
  int64_t steps = 0;
  std::optional<StepMetrics> final_metrics;
  std::vector<EvalRecord> evals;  // training-distribution eval first
};

// Runs the full loop: codebook bootstrap from a warmup batch, per-step
// rollout / loss / backward / clip / Adam, one metrics row per step,
// checkpoints at the end and every checkpoint_every steps.
TrainResult train(const TrainConfig& cfg);

EvalRecord evaluate(const RimParams& params, const RimConfig& rim, const TaskSpec& spec);
EvalRecord evaluate_checkpoint(const std::string& ckpt_path, const TaskSpec& spec);

// Checkpoint <-> parameter plumbing.
Checkpoint make_checkpoint(const RimParams& params, const TrainConfig& cfg,
                           uint64_t rng_state);
RimParams params_from_checkpoint(const Checkpoint& ckpt, TrainConfig* cfg_out);

}  // namespace dvnc
