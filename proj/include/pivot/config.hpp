#pragma once

#include "pivot/model.hpp"
#include "pivot/rl.hpp"
#include "pivot/train.hpp"
#include "pivot/world.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace pivot {

// Log sampling and corpus thresholds.
struct DataSection {
    int n_records = 2000;
    int images_per_prompt = 4;
    double expert_fraction = 0.5;
    double min_relevance = 0.6;
    double min_quality = 0.64;
};

// Model sizes that are not dictated by the world section.
struct ModelSection {
    int d_model = 32;
    int n_heads = 2;
    int enc_layers = 2;
    int dec_layers = 2;
    int ffn_mult = 4;
    double init_std = 0.22;
};

struct EvalSection {
    int n_prompts = 200;
    int n_images = 4;
    int oracle_max_extra = 4;
    std::uint64_t oracle_candidate_cap = 1000000;
};

// One flat JSON config with section objects. Every field has a default;
// unknown keys are rejected by name. The global seed roots every random
// stream outside the world's own seed.
struct RunConfig {
    std::uint64_t seed = 7;
    std::string out = "out";
    WorldParams world;
    DataSection data;
    ModelSection model;
    TrainConfig train; // seed filled from the global seed at load time
    RLConfig rl;       // likewise
    EvalSection eval;
};

RunConfig default_config();
RunConfig load_config(const std::filesystem::path& path);
RunConfig config_from_json_string(const std::string& text);
std::string config_to_json_string(const RunConfig& cfg); // canonical, all fields

// Vocabulary size, max_len, and the pivot shape come from the world section.
ModelConfig make_model_config(const RunConfig& cfg);

// Hash over the canonical world+model sections; embedded in checkpoint
// manifests so bundles refuse mismatched worlds.
std::uint64_t config_hash(const RunConfig& cfg);

} // namespace pivot
