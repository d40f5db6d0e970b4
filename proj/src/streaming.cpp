#include "lgmoe/streaming.hpp"

namespace lgmoe {

ChunkState init_stream(const Model& model) {
  ChunkState state;
  state.layers.resize(model.enc.size());
  return state;
}

StreamStep stream_step(Model& model, ChunkState& state, const Tensor& chunk_feats, int k,
                       std::optional<int> override_lang) {
  LGMOE_CHECK(chunk_feats.rank() == 2 && chunk_feats.dim(1) == model.cfg.d_in,
              "stream_step: chunk " << chunk_feats.shape_str() << " does not match d_in="
                                    << model.cfg.d_in);
  const int chunk = chunk_feats.dim(0);
  LGMOE_CHECK(chunk >= 1, "stream_step: empty chunk");
  LGMOE_CHECK(state.layers.size() == model.enc.size(),
              "stream_step: state has " << state.layers.size() << " layer caches, model has "
                                        << model.enc.size());
  if (override_lang)
    LGMOE_CHECK(*override_lang >= 0 && *override_lang < model.cfg.n_languages,
                "stream_step: override language " << *override_lang << " out of range");

  Tape tape;
  ForwardCtx ctx(tape, model, /*train=*/false);
  ctx.k = k;
  ctx.override_lang = override_lang;

  Var x = add_bias(matmul(tape.constant(chunk_feats), ctx.bind(model.in_w)),
                   ctx.bind(model.in_b));
  x = add(x, tape.constant(model.posenc(state.frames_consumed, chunk)));

  StreamStep out;
  Var h_inter;
  for (int i = 0; i < static_cast<int>(model.enc.size()); ++i) {
    x = encoder_layer_apply(ctx, x, model.enc[static_cast<size_t>(i)], i, nullptr,
                            &state.layers[static_cast<size_t>(i)], h_inter,
                            &out.chunk_tables);
    if (i == model.cfg.n_vanilla_layers - 1) h_inter = x;
  }
  out.h_final = tape.value(x);

  // fold this chunk's routing into the accumulated per-layer tables
  if (state.tables.empty()) {
    state.tables = out.chunk_tables;
  } else {
    LGMOE_CHECK(state.tables.size() == out.chunk_tables.size(),
                "stream_step: MoE layer count changed mid-stream");
    for (size_t l = 0; l < state.tables.size(); ++l) {
      auto& acc = state.tables[l].lang_ids;
      const auto& nw = out.chunk_tables[l].lang_ids;
      acc.insert(acc.end(), nw.begin(), nw.end());
    }
  }

  // incremental greedy CTC decode over this chunk
  Tensor lp = tape.value(asr_head_log_probs(ctx, x));
  for (int t = 0; t < chunk; ++t) {
    int best = 0;
    double bv = lp.at(t, 0);
    for (int c = 1; c < lp.dim(1); ++c) {
      if (lp.at(t, c) > bv) {
        bv = lp.at(t, c);
        best = c;
      }
    }
    if (best != kCtcBlank && best != state.ctc_prev) {
      state.hyp.push_back(best);
      out.new_tokens.push_back(best);
    }
    state.ctc_prev = best;
  }
  out.partial_hyp = state.hyp;
  state.frames_consumed += chunk;
  return out;
}

}  // namespace lgmoe
