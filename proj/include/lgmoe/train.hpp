#pragma once

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "lgmoe/data.hpp"
#include "lgmoe/model.hpp"

namespace lgmoe {

struct TrainConfig {
  double lr = 1e-3;
  int warmup_steps = 500;
  int max_steps = 1000;
  int batch_size = 8;
  uint64_t seed = 1;
  int checkpoint_every = 0;  // 0: final checkpoint only
  double clip_norm = 5.0;    // global-norm gradient clip

  // optional overrides applied to the model config before training
  std::optional<KPolicy> k_policy;
  std::optional<double> lambda_ctc;
  std::optional<double> lambda_inter;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainResult {
  int steps = 0;
  double first_loss = 0.0;
  double final_loss = 0.0;
  std::string log_path;
  std::string ckpt_path;
};

/// Joint training loop: per step, draw k, run forward/backward over the
/// batch (independent tapes, gradients averaged), clip, Adam with an
/// inverse-sqrt warmup schedule. Writes train_log.jsonl (one line per step:
/// step, k, loss, ctc, att, inter), expert_stats.jsonl, and checkpoints
/// under out_dir. Deterministic for a fixed seed/config/dataset.
TrainResult train(Model& model, const Dataset& dataset, const TrainConfig& cfg,
                  const std::string& out_dir);

/// lr * sqrt(warmup) * min(step^-1/2, step * warmup^-3/2); plain lr when
/// warmup is 0.
double lr_at_step(double lr, int warmup_steps, int step);

}  // namespace lgmoe
