#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgmoe/data.hpp"
#include "lgmoe/edit_distance.hpp"
#include "lgmoe/model.hpp"

namespace lgmoe {

struct EvalOptions {
  int k = 1;
  std::optional<int> override_lang;
  bool force_k = false;  // allow k outside the trained policy bounds
  std::string dump_routing_path;  // JSONL of first-MoE-layer tables when set
};

/// Corpus-level token error aggregate.
struct RateAgg {
  int64_t edits = 0;
  int64_t ref_len = 0;
  int n_utts = 0;

  double rate() const { return static_cast<double>(edits) / std::max<int64_t>(1, ref_len); }
};

struct EvalReport {
  std::vector<RateAgg> mono;  // one per language (monolingual utterances)
  RateAgg cs;                 // code-switching subset ("mixed error rate" role)
  RateAgg overall;
  // frame-level routing accuracy vs true_frame_lang (first MoE layer)
  double routing_acc_mono = 0.0;
  double routing_acc_cs = 0.0;
  double routing_acc_overall = 0.0;
  std::vector<GroupStats> expert_util;  // aggregated per (layer, language)
  double mean_loss = 0.0, mean_ctc = 0.0, mean_att = 0.0, mean_inter = 0.0;
  int k_used = 1;
  std::optional<int> override_lang;

  nlohmann::json to_json() const;
};

/// Greedy-decode the dataset at the given k (optionally overriding the
/// language routing) and score token error rates split by utterance class.
/// Read-only on the model.
EvalReport evaluate(Model& model, const Dataset& dataset, const EvalOptions& opts);

}  // namespace lgmoe
