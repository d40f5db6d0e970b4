#pragma once

#include <string>
#include <vector>

#include "lgmoe/ctc.hpp"
#include "lgmoe/tensor.hpp"

namespace lgmoe {

/// Frame-level hard language assignment, one language id per frame.
struct RoutingTable {
  enum class Source { kRouter, kOverride };

  std::vector<int> lang_ids;  // each in [0, n_langs)
  Source source = Source::kRouter;
  int override_lang = -1;  // set when source == kOverride
  int n_langs = 0;

  int frames() const { return static_cast<int>(lang_ids.size()); }
};

struct InterLoss {
  Var loss;  // ctc(h*W_lid, y_lid) + ctc(h*W_asr, y_asr)
  bool lid_feasible = true;
  bool asr_feasible = true;
};

/// Joint LID+ASR CTC loss on the intermediate representations, through the
/// shared router heads (both heads are plain linear projections followed by
/// log-softmax).
InterLoss inter_loss(Var h_inter, const CtcLabelSeq& y_asr, const CtcLabelSeq& y_lid,
                     Var w_lid, Var w_asr);

/// Greedy frame-local routing: project onto the LID head, drop the blank
/// column, argmax over the remaining languages (ties go to the lowest
/// index). Pure value-level computation; no gradient flows through it.
RoutingTable make_routing_table(const Tensor& h, const Tensor& w_lid, int n_langs);

/// Route every frame to one designated language group.
RoutingTable override_routing_table(int t_frames, int lang, int n_langs);

/// One JSON line per utterance: {"utt_id":..., "lang_ids":[...], "source":...}
std::string routing_table_jsonl(const std::string& utt_id, const RoutingTable& table);

}  // namespace lgmoe
