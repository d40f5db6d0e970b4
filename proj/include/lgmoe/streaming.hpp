#pragma once

#include <optional>
#include <vector>

#include "lgmoe/mask.hpp"
#include "lgmoe/model.hpp"

namespace lgmoe {

/// Incremental decoding state for one stream. Not shareable mid-utterance;
/// run one ChunkState per stream.
struct ChunkState {
  int64_t frames_consumed = 0;
  std::vector<LayerCache> layers;          // one per encoder layer
  std::vector<RoutingTable> tables;        // accumulated, one per MoE layer
  int ctc_prev = kCtcBlank;                // greedy-collapse carry
  std::vector<int> hyp;                    // running hypothesis
};

ChunkState init_stream(const Model& model);

struct StreamStep {
  Tensor h_final;                          // encoder output for this chunk
  std::vector<RoutingTable> chunk_tables;  // this chunk's routing, per MoE layer
  std::vector<int> new_tokens;             // tokens emitted by this chunk
  std::vector<int> partial_hyp;            // full hypothesis so far
};

/// Process one chunk of new frames against the cached causal context.
/// Equivalent to the chunk-masked full forward over the frames seen so far;
/// routing stays frame-local so streamed and full decisions are identical.
StreamStep stream_step(Model& model, ChunkState& state, const Tensor& chunk_feats, int k,
                       std::optional<int> override_lang);

}  // namespace lgmoe
