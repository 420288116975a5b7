#pragma once

#include "pivot/data.hpp"
#include "pivot/model.hpp"
#include "pivot/rl.hpp"
#include "pivot/train.hpp"
#include "pivot/world.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace pivot {

// A refiner under evaluation: any map from user prompt to refined prompt.
using RefineFn = std::function<Prompt(const Prompt&)>;

struct EvalOptions {
    int n_images = 4;
    std::uint64_t seed = 7;
    bool with_oracle = false; // also score the brute-force oracle per prompt
    int oracle_max_extra = 4;
    std::uint64_t oracle_candidate_cap = 1000000;
};

struct PromptOutcome {
    Prompt user_prompt;
    Prompt refined_prompt;
    double baseline_mean = 0.0;
    double refined_mean = 0.0;
    double relevance_refined = 0.0; // synthetic relevance component, not comparable
                                    // to human relevance scales
    std::string outcome;            // "win" | "tie" | "loss"
    std::string error;              // refinement failure note, empty on success
};

struct EvalReport {
    std::vector<PromptOutcome> per_prompt;
    double mean_baseline = 0.0;
    double mean_refined = 0.0;
    int wins = 0, ties = 0, losses = 0;
    double win_pct = 0.0, tie_pct = 0.0, loss_pct = 0.0;
    std::optional<double> oracle_mean;
    std::optional<double> oracle_gap_ratio; // mean_refined / oracle_mean
    int n_images = 0;
    std::uint64_t seed = 0;

    std::string to_json_string() const;
};

// For each prompt, n_images are generated from the unrefined prompt and from
// the refinement with matched noise seeds; a prompt is a win when the refined
// mean exceeds the baseline mean, a tie when they agree within 1e-12. Noise is
// keyed by prompt content, so aggregates are invariant to prompt order.
// Refinement failures are recorded as losses with an error note.
EvalReport evaluate(const RefineFn& refine, const std::vector<Prompt>& prompts,
                    const World& world, const EvalOptions& opts);

RefineFn identity_refiner();
RefineFn bundle_refiner(const RefinerBundle& bundle);
RefineFn oracle_refiner(const World& world, int max_extra, std::uint64_t candidate_cap = 1000000);

// ---------------------------------------------------------------------------
// Ablation grid: {full, random-image targets, unconditioned decoder} with and
// without the RL stage, trained on shared data and seeds, evaluated on shared
// held-out prompts.
// ---------------------------------------------------------------------------

struct AblationConfig {
    TrainConfig train;
    RLConfig rl;
    ModelConfig model;
    std::uint64_t init_seed = 7;
    std::uint64_t data_seed = 7;    // seed for the random-target variant
    std::uint64_t eval_seed = 7;
    int eval_prompts = 600; // wide enough to resolve close cells
    int eval_images = 4;
    int rl_prompts = 256; // size of the RL prompt pool
};

struct AblationCell {
    std::string variant; // "full" | "random_target" | "no_pivot"
    bool with_rl = false;
    EvalReport report;
};

struct AblationResult {
    std::vector<AblationCell> cells;
    bool ordering_without_rl = false; // full >= random_target >= no_pivot
    bool ordering_with_rl = false;

    std::string to_text_table() const;
    std::string to_json_string() const;
};

AblationResult run_ablation(const std::vector<InteractionRecord>& log, const World& world,
                            double min_relevance, double min_quality, const AblationConfig& cfg);

// Held-out novice prompts from a dedicated stream.
std::vector<Prompt> sample_eval_prompts(const World& world, int n, std::uint64_t seed);

} // namespace pivot
