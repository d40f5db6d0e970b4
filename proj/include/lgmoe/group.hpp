#pragma once

#include <cstdint>
#include <vector>

#include "lgmoe/params.hpp"
#include "lgmoe/rng.hpp"
#include "lgmoe/router.hpp"

namespace lgmoe {

/// How many experts to activate per frame.
struct KPolicy {
  enum class Mode { kFixed, kDynamic };

  Mode mode = Mode::kFixed;
  int k = 1;            // fixed mode
  int k_min = 1, k_max = 1;  // dynamic mode, inclusive

  static KPolicy fixed(int k) { return KPolicy{Mode::kFixed, k, k, k}; }
  static KPolicy dynamic(int k_min, int k_max) {
    return KPolicy{Mode::kDynamic, k_min, k_min, k_max};
  }
  int max_k() const { return mode == Mode::kFixed ? k : k_max; }
  int min_k() const { return mode == Mode::kFixed ? k : k_min; }
  void validate(int n_experts) const;
};

/// Fixed mode returns k; dynamic mode draws uniformly from [k_min, k_max].
/// The trainer draws once per step and applies the value to every layer.
int sample_k(const KPolicy& policy, Rng& rng);

/// One FFN expert (d -> d_ffn -> d), as ParamSet handles.
struct ExpertFfn {
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};

/// A language's expert group: n same-shape experts plus the group's
/// unsupervised gating router (d x n, no bias).
struct ExpertGroup {
  std::vector<ExpertFfn> experts;
  int router_w = -1;
  int language = -1;
};

/// Frame index lists per language; disjoint, sorted, covering [0, T).
struct DispatchPlan {
  std::vector<std::vector<int>> frame_idx;
  int total_frames = 0;
};

DispatchPlan make_dispatch_plan(const RoutingTable& table, int n_langs);

/// Rows of h_pre belonging to one language, in original relative order.
Var dispatch(Var h_pre, const DispatchPlan& plan, int lang);

/// Per-step expert utilization for one (layer, language) group.
struct GroupStats {
  int layer = -1;
  int language = -1;
  int k = 0;
  std::vector<int64_t> expert_counts;
};

/// Top-k indices per row of `logits`, ordered by descending value with ties
/// broken toward the lowest index.
std::vector<std::vector<int>> topk_rows(const Tensor& logits, int k);

/// Gated k-of-n expert mixture: router logits -> top-k selection -> softmax
/// over the selected logits only -> weighted sum of the selected experts'
/// outputs. Gradients flow through the gates and expert parameters, never
/// through the selection indices.
Var group_forward(ParamBinding& bind, Var h_sub, const ExpertGroup& grp, int k, Act act,
                  GroupStats* stats = nullptr);

/// Router-free variant: the first k experts, each weighted 1/k.
Var group_forward_uniform(ParamBinding& bind, Var h_sub, const ExpertGroup& grp, int k,
                          Act act, GroupStats* stats = nullptr);

/// Scatter per-language outputs back to original frame order.
Var combine(const std::vector<Var>& outs, const DispatchPlan& plan);

}  // namespace lgmoe
