#include "lgmoe/group.hpp"

#include <algorithm>
#include <numeric>

namespace lgmoe {

void KPolicy::validate(int n_experts) const {
  if (mode == Mode::kFixed) {
    LGMOE_CHECK(1 <= k && k <= n_experts,
                "k policy: fixed k=" << k << " outside [1," << n_experts << "]");
  } else {
    LGMOE_CHECK(1 <= k_min && k_min <= k_max && k_max <= n_experts,
                "k policy: dynamic range [" << k_min << "," << k_max << "] invalid for n="
                                            << n_experts);
  }
}

int sample_k(const KPolicy& policy, Rng& rng) {
  if (policy.mode == KPolicy::Mode::kFixed) return policy.k;
  return rng.uniform_int(policy.k_min, policy.k_max);
}

DispatchPlan make_dispatch_plan(const RoutingTable& table, int n_langs) {
  DispatchPlan plan;
  plan.total_frames = table.frames();
  plan.frame_idx.assign(static_cast<size_t>(n_langs), {});
  for (int t = 0; t < table.frames(); ++t) {
    int lang = table.lang_ids[static_cast<size_t>(t)];
    LGMOE_CHECK(lang >= 0 && lang < n_langs,
                "dispatch: language " << lang << " out of range [0," << n_langs << ")");
    plan.frame_idx[static_cast<size_t>(lang)].push_back(t);
  }
  return plan;
}

Var dispatch(Var h_pre, const DispatchPlan& plan, int lang) {
  LGMOE_CHECK(h_pre.valid(), "dispatch: invalid var");
  const Tensor& hv = h_pre.tape->value(h_pre);
  LGMOE_CHECK(hv.dim(0) == plan.total_frames,
              "dispatch: tensor has " << hv.dim(0) << " frames, plan expects "
                                      << plan.total_frames);
  LGMOE_CHECK(lang >= 0 && lang < static_cast<int>(plan.frame_idx.size()),
              "dispatch: language " << lang << " out of range");
  return gather_rows(h_pre, plan.frame_idx[static_cast<size_t>(lang)]);
}

std::vector<std::vector<int>> topk_rows(const Tensor& logits, int k) {
  int rows = logits.dim(0), n = logits.dim(1);
  std::vector<std::vector<int>> sel(static_cast<size_t>(rows));
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < rows; ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      double va = logits.at(i, a), vb = logits.at(i, b);
      if (va != vb) return va > vb;
      return a < b;
    });
    sel[static_cast<size_t>(i)].assign(order.begin(), order.begin() + k);
  }
  return sel;
}

namespace {

Var expert_ffn(ParamBinding& bind, Var x, const ExpertFfn& e, Act act) {
  Var h = activation(add_bias(matmul(x, bind(e.w1)), bind(e.b1)), act);
  return add_bias(matmul(h, bind(e.w2)), bind(e.b2));
}

}  // namespace

Var group_forward(ParamBinding& bind, Var h_sub, const ExpertGroup& grp, int k, Act act,
                  GroupStats* stats) {
  const int n = static_cast<int>(grp.experts.size());
  LGMOE_CHECK(k >= 1 && k <= n, "group_forward: k=" << k << " outside [1," << n << "]");
  const Tensor& hv = h_sub.tape->value(h_sub);
  const int rows = hv.dim(0);
  if (stats) {
    stats->language = grp.language;
    stats->k = k;
    stats->expert_counts.assign(static_cast<size_t>(n), 0);
  }
  if (rows == 0) return h_sub;  // empty 0 x d, nothing to do

  Var logits = matmul(h_sub, bind(grp.router_w));
  std::vector<std::vector<int>> sel = topk_rows(h_sub.tape->value(logits), k);
  Var gates = softmax(gather_cols(logits, sel), 1);

  // run each expert once over the frames that picked it
  std::vector<Var> parts;
  std::vector<std::vector<int>> part_idx;
  for (int e = 0; e < n; ++e) {
    std::vector<int> rows_e;
    std::vector<std::vector<int>> slot_e;
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < k; ++j) {
        if (sel[static_cast<size_t>(i)][static_cast<size_t>(j)] == e) {
          rows_e.push_back(i);
          slot_e.push_back({j});
          break;
        }
      }
    }
    if (stats) stats->expert_counts[static_cast<size_t>(e)] = static_cast<int64_t>(rows_e.size());
    if (rows_e.empty()) continue;
    Var x_e = gather_rows(h_sub, rows_e);
    Var y_e = expert_ffn(bind, x_e, grp.experts[static_cast<size_t>(e)], act);
    Var g_e = gather_cols(gather_rows(gates, rows_e), slot_e);
    parts.push_back(scale_rows(y_e, g_e));
    part_idx.push_back(std::move(rows_e));
  }
  return combine_rows(parts, part_idx, rows);
}

Var group_forward_uniform(ParamBinding& bind, Var h_sub, const ExpertGroup& grp, int k,
                          Act act, GroupStats* stats) {
  const int n = static_cast<int>(grp.experts.size());
  LGMOE_CHECK(k >= 1 && k <= n,
              "group_forward_uniform: k=" << k << " outside [1," << n << "]");
  const Tensor& hv = h_sub.tape->value(h_sub);
  const int rows = hv.dim(0);
  if (stats) {
    stats->language = grp.language;
    stats->k = k;
    stats->expert_counts.assign(static_cast<size_t>(n), 0);
    for (int e = 0; e < k; ++e) stats->expert_counts[static_cast<size_t>(e)] = rows;
  }
  if (rows == 0) return h_sub;

  Var out = scale(expert_ffn(bind, h_sub, grp.experts[0], act), 1.0 / k);
  for (int e = 1; e < k; ++e)
    out = add(out, scale(expert_ffn(bind, h_sub, grp.experts[static_cast<size_t>(e)], act),
                         1.0 / k));
  return out;
}

Var combine(const std::vector<Var>& outs, const DispatchPlan& plan) {
  LGMOE_CHECK(outs.size() == plan.frame_idx.size(),
              "combine: " << outs.size() << " outputs for " << plan.frame_idx.size()
                          << " languages");
  for (size_t l = 0; l < outs.size(); ++l) {
    const Tensor& ov = outs[l].tape->value(outs[l]);
    LGMOE_CHECK(ov.dim(0) == static_cast<int>(plan.frame_idx[l].size()),
                "combine: language " << l << " produced " << ov.dim(0) << " rows, expected "
                                     << plan.frame_idx[l].size());
  }
  return combine_rows(outs, plan.frame_idx, plan.total_frames);
}

}  // namespace lgmoe
