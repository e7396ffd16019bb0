#pragma once

#include <filesystem>

#include "gvs/trainer.hpp"

namespace gvs {

// Checkpoint container: "GVSCKPT1\n" magic, a little-endian u64 header
// length, a JSON header ({config, config_hash, seed, epoch, rng, tensor
// directory, ...}), then raw little-endian float64 blobs in directory order.
// Loading rebuilds the state from the embedded config and validates every
// tensor shape-for-shape, so a spec/checkpoint mismatch fails loudly.

struct LoadedCheckpoint {
    TrainState state;
    TrainConfig config;
};

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& cfg);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gvs
