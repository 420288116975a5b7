#pragma once

#include "pivot/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace pivot {

// A checkpoint is a directory holding manifest.json (kind, shapes, seeds,
// config hash, parameter order, blob hash) and params.bin, a single blob of
// little-endian 32-bit floats concatenated in manifest order. In-memory
// parameters are snapped to the float32 grid at init and at the end of every
// training entry point, so save -> load reproduces them bit-exactly.

struct CheckpointMeta {
    std::string kind; // "encoder", "decoder", or "bundle"
    std::uint64_t config_hash = 0;
    std::uint64_t world_seed = 0;
    std::uint64_t init_seed = 0;
    ModelConfig model;
    std::string pivot_source = "encoder"; // bundles only: "encoder" | "zero"
};

void save_checkpoint(const std::filesystem::path& dir, const CheckpointMeta& meta,
                     const ParamSet& params);

// Loads and verifies blob size and hash. When expected_config_hash is
// nonzero, a mismatch is refused with both hashes in the message.
ParamSet load_checkpoint(const std::filesystem::path& dir, CheckpointMeta& meta,
                         std::uint64_t expected_config_hash = 0);

void save_bundle(const std::filesystem::path& dir, const RefinerBundle& bundle,
                 std::uint64_t world_seed, std::uint64_t init_seed);
RefinerBundle load_bundle(const std::filesystem::path& dir,
                          std::uint64_t expected_config_hash = 0);

// Hash of the serialized float32 image of a parameter set; stable across
// save/load cycles. Used for the frozen-decoder contract.
std::uint64_t checkpoint_blob_hash(const ParamSet& params);

ModelConfig model_config_from_json_string(const std::string& text);
std::string model_config_to_json_string(const ModelConfig& cfg);

} // namespace pivot
