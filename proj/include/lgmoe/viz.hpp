#pragma once

#include <string>

#include "lgmoe/data.hpp"
#include "lgmoe/model.hpp"

namespace lgmoe {

/// Two-line ASCII rendering of the first MoE layer's routing vs the ground
/// truth ('Z' = language 0, 'E' = language 1, digits beyond that).
std::string route_ascii(Model& model, const Utterance& utt, int k);

/// Write a P6 PPM color strip (router row above, truth row below; red =
/// language 0, green = language 1) plus the ASCII rendering to
/// out_path + ".txt". Output bytes are deterministic for a fixed model and
/// utterance.
void route_viz(Model& model, const Utterance& utt, int k, const std::string& out_path);

}  // namespace lgmoe
