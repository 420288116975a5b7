#pragma once

#include "pivot/model.hpp"
#include "pivot/world.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pivot {

// End-to-end stage settings. Desk defaults; the documented reference run is
// 1000 steps at batch size 512.
struct RLConfig {
    int steps = 300;
    int batch_size = 64;
    double lr = 1e-3;
    double clip_epsilon = 0.2;
    int images_per_prompt = 4; // Monte-Carlo images per side of the reward
    double temperature = 1.0;  // sampling temperature for rollouts
    int ppo_epochs = 4;        // optimization passes per collected batch
    std::string baseline = "running_mean"; // or "batch_mean"
    int n_prompts = 256;       // size of the sampled training prompt pool
    std::uint64_t seed = 7;
};

// One rollout: the refined prompt sampled through the frozen decoder, the
// per-token log-probabilities under the behavior and current policies, the
// reward differential, and the advantage.
struct Trajectory {
    Prompt user_prompt;
    Prompt refined;
    std::vector<std::int32_t> actions; // sampled tokens, terminal EOS included
    std::vector<double> logp_old;
    std::vector<double> logp_new;
    double reward = 0.0;
    double advantage = 0.0;
};

// Mean preference of images generated from the refined prompt minus the mean
// for the original prompt, with matched noise seeds per side index. In
// [-1, 1]; exactly zero when refined == user_prompt.
double compute_reward(const Prompt& user_prompt, const Prompt& refined, const World& world,
                      int n_r, std::uint64_t seed);

// The bare differential, exposed for tests of the bounds.
double reward_from_scores(std::span<const double> refined_scores,
                          std::span<const double> original_scores);

// Clipped surrogate: -mean over tokens of min(rho*A, clip(rho, 1-eps, 1+eps)*A)
// with rho = exp(logp_new - logp_old). When dlogp_new is non-null it receives
// d loss / d logp_new, one vector per trajectory. Gradients flow only through
// logp_new.
double ppo_objective(const std::vector<Trajectory>& batch, double clip_epsilon,
                     std::vector<std::vector<double>>* dlogp_new = nullptr);

struct RLResult {
    RefinerBundle bundle;
    std::vector<double> reward_curve; // per-step mean reward
};

// PPO over the encoder only: rollouts sample tokens through the frozen
// decoder conditioned on the encoder's pivot; log-probabilities differentiate
// through the pivot into encoder parameters. Decoder parameters are
// bit-identical before and after. Deterministic given cfg.seed.
RLResult rl_train(RefinerBundle bundle, const std::vector<Prompt>& prompts, const World& world,
                  const RLConfig& cfg);

} // namespace pivot
