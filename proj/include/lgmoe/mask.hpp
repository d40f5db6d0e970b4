#pragma once

#include "lgmoe/tensor.hpp"

namespace lgmoe {

/// Chunk-causal attention mask: frame t sees every frame whose chunk index
/// (frame / chunk_size) is <= its own. Full attention inside a chunk, causal
/// across chunks; chunk_size >= T degenerates to full attention and
/// chunk_size == 1 to a per-frame causal mask.
BoolMatrix chunk_mask(int t_total, int chunk_size);

/// All-visible mask (non-streaming full attention).
BoolMatrix full_mask(int t_total);

}  // namespace lgmoe
