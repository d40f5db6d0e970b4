#include "lgmoe/router.hpp"

#include <nlohmann/json.hpp>

#include "lgmoe/kernels.hpp"

namespace lgmoe {

InterLoss inter_loss(Var h_inter, const CtcLabelSeq& y_asr, const CtcLabelSeq& y_lid,
                     Var w_lid, Var w_asr) {
  LGMOE_CHECK(y_lid.length() == y_asr.length(),
              "inter_loss: LID labels must be the token-wise map of ASR labels ("
                  << y_lid.length() << " vs " << y_asr.length() << ")");
  CtcLoss lid = ctc_loss(log_softmax(matmul(h_inter, w_lid), 1), y_lid);
  CtcLoss asr = ctc_loss(log_softmax(matmul(h_inter, w_asr), 1), y_asr);
  return InterLoss{add(lid.loss, asr.loss), lid.feasible, asr.feasible};
}

RoutingTable make_routing_table(const Tensor& h, const Tensor& w_lid, int n_langs) {
  LGMOE_CHECK(h.rank() == 2 && w_lid.rank() == 2 && h.dim(1) == w_lid.dim(0),
              "make_routing_table: shape mismatch " << h.shape_str() << " vs "
                                                    << w_lid.shape_str());
  LGMOE_CHECK(w_lid.dim(1) == n_langs + 1,
              "make_routing_table: LID head has " << w_lid.dim(1) << " classes, expected "
                                                  << n_langs + 1);
  int frames = h.dim(0);
  Tensor logits({frames, n_langs + 1});
  kern::active().gemm_nn(h.data(), w_lid.data(), logits.data(), frames, h.dim(1),
                         n_langs + 1, false);
  RoutingTable table;
  table.source = RoutingTable::Source::kRouter;
  table.n_langs = n_langs;
  table.lang_ids.resize(static_cast<size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    // column 0 is the blank class; argmax over the rest, lowest index wins ties
    int best = 0;
    double bv = logits.at(t, 1);
    for (int l = 1; l < n_langs; ++l) {
      if (logits.at(t, l + 1) > bv) {
        bv = logits.at(t, l + 1);
        best = l;
      }
    }
    table.lang_ids[static_cast<size_t>(t)] = best;
  }
  return table;
}

RoutingTable override_routing_table(int t_frames, int lang, int n_langs) {
  LGMOE_CHECK(t_frames >= 0, "override_routing_table: negative frame count");
  LGMOE_CHECK(lang >= 0 && lang < n_langs,
              "override_routing_table: language " << lang << " out of range [0," << n_langs
                                                  << ")");
  RoutingTable table;
  table.source = RoutingTable::Source::kOverride;
  table.override_lang = lang;
  table.n_langs = n_langs;
  table.lang_ids.assign(static_cast<size_t>(t_frames), lang);
  return table;
}

std::string routing_table_jsonl(const std::string& utt_id, const RoutingTable& table) {
  nlohmann::json j;
  j["utt_id"] = utt_id;
  j["lang_ids"] = table.lang_ids;
  if (table.source == RoutingTable::Source::kOverride) {
    j["source"] = "override(" + std::to_string(table.override_lang) + ")";
  } else {
    j["source"] = "router";
  }
  return j.dump();
}

}  // namespace lgmoe
