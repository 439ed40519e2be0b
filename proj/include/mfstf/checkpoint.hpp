#pragma once

// MFST model checkpoint: magic "MFST", version, K, C, m, then named parameter
// records (u32 name length, name bytes, u32 rank, u32 extents, 32-bit
// little-endian float payload) covering all learnable tensors, BN running
// stats, the fusion weights, and architecture metadata.

#include <string>

#include "mfstf/train.hpp"

namespace mfstf {

void save_model(Model<float>& model, int source_bands, const std::string& path);

struct LoadedModel {
  Model<float> model;
  int source_bands = 0;
};

LoadedModel load_model(const std::string& path);

}  // namespace mfstf
