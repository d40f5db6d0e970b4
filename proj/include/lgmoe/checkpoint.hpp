#pragma once

#include <string>

#include "lgmoe/model.hpp"

namespace lgmoe {

/// Checkpoint container, version 1:
///   magic "LGMO", u32 version, u64 header length, JSON header
///   (config + tensor directory in registration order), raw little-endian
///   f64 payload. Byte-stable for identical models.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace lgmoe
