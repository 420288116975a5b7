#include "pivot/rl.hpp"

#include "pivot/errors.hpp"
#include "pivot/kernels.hpp"
#include "pivot/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pivot {

double reward_from_scores(std::span<const double> refined_scores,
                          std::span<const double> original_scores) {
    if (refined_scores.empty() || refined_scores.size() != original_scores.size())
        throw InvalidInput("reward_from_scores: score lists must be nonempty and aligned");
    double a = kernels::sum(refined_scores.data(), refined_scores.size());
    double b = kernels::sum(original_scores.data(), original_scores.size());
    return (a - b) / static_cast<double>(refined_scores.size());
}

double compute_reward(const Prompt& user_prompt, const Prompt& refined, const World& world,
                      int n_r, std::uint64_t seed) {
    if (n_r < 1) throw InvalidInput("compute_reward: n_r must be >= 1");
    std::vector<Image> refined_imgs = world.generate(refined, n_r, seed);
    std::vector<Image> original_imgs = world.generate(user_prompt, n_r, seed);
    std::vector<double> rs(n_r), os(n_r);
    for (int k = 0; k < n_r; ++k) {
        rs[k] = world.preference(refined_imgs[k], user_prompt);
        os[k] = world.preference(original_imgs[k], user_prompt);
    }
    return reward_from_scores(rs, os);
}

namespace {

// d term / d logp_new for one token; the branch mirrors the clipped min.
double ppo_token_term(double logp_old, double logp_new, double adv, double eps,
                      double* dlogp) {
    double rho = std::exp(logp_new - logp_old);
    double unclipped = rho * adv;
    double clipped = std::clamp(rho, 1.0 - eps, 1.0 + eps) * adv;
    double term = std::min(unclipped, clipped);
    if (dlogp) {
        bool active;
        if (adv >= 0.0)
            active = rho <= 1.0 + eps; // above the band the clip freezes the term
        else
            active = rho >= 1.0 - eps; // below the band likewise
        *dlogp = active ? adv * rho : 0.0;
    }
    return term;
}

} // namespace

double ppo_objective(const std::vector<Trajectory>& batch, double clip_epsilon,
                     std::vector<std::vector<double>>* dlogp_new) {
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0))
        throw InvalidInput("ppo_objective: clip_epsilon must be in (0, 1)");
    std::size_t n_tokens = 0;
    for (const Trajectory& t : batch) {
        if (t.logp_old.size() != t.logp_new.size())
            throw InvalidInput("ppo_objective: behavior and current log-prob lengths differ");
        if (!std::isfinite(t.advantage) || !std::isfinite(t.reward))
            throw InvalidInput("ppo_objective: non-finite advantage");
        for (double v : t.logp_old)
            if (!std::isfinite(v)) throw InvalidInput("ppo_objective: non-finite log-prob");
        for (double v : t.logp_new)
            if (!std::isfinite(v)) throw InvalidInput("ppo_objective: non-finite log-prob");
        n_tokens += t.logp_new.size();
    }
    if (n_tokens == 0) throw InvalidInput("ppo_objective: empty batch");

    if (dlogp_new) dlogp_new->assign(batch.size(), {});
    const double inv = 1.0 / static_cast<double>(n_tokens);
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Trajectory& t = batch[i];
        std::vector<double>* dv = dlogp_new ? &(*dlogp_new)[i] : nullptr;
        if (dv) dv->assign(t.logp_new.size(), 0.0);
        for (std::size_t m = 0; m < t.logp_new.size(); ++m) {
            double d = 0.0;
            total += ppo_token_term(t.logp_old[m], t.logp_new[m], t.advantage, clip_epsilon,
                                    dv ? &d : nullptr);
            if (dv) (*dv)[m] = -d * inv;
        }
    }
    return -total * inv;
}

namespace {

// Probabilities of the masked, temperature-scaled sampling distribution at
// one position. Masked ids (BOS, PAD) get probability zero.
void action_probs(const double* logits, int vocab_size, double tau, std::vector<double>& p) {
    const int bos = vocab_size - 3;
    const int pad = vocab_size - 1;
    p.assign(vocab_size, 0.0);
    double mx = -std::numeric_limits<double>::infinity();
    for (int id = 0; id < vocab_size; ++id)
        if (id != bos && id != pad) mx = std::max(mx, logits[id] / tau);
    double z = 0.0;
    for (int id = 0; id < vocab_size; ++id) {
        if (id == bos || id == pad) continue;
        p[id] = std::exp(logits[id] / tau - mx);
        z += p[id];
    }
    for (int id = 0; id < vocab_size; ++id) p[id] /= z;
}

} // namespace

RLResult rl_train(RefinerBundle bundle, const std::vector<Prompt>& prompts, const World& world,
                  const RLConfig& cfg) {
    if (cfg.steps < 0 || cfg.batch_size < 1 || cfg.lr <= 0 || cfg.images_per_prompt < 1)
        throw InvalidInput("rl_train: bad config");
    if (!(cfg.clip_epsilon > 0.0 && cfg.clip_epsilon < 1.0))
        throw InvalidInput("rl_train: clip_epsilon must be in (0, 1)");
    if (cfg.baseline != "running_mean" && cfg.baseline != "batch_mean")
        throw InvalidInput("rl_train: unknown baseline \"" + cfg.baseline + "\"");

    RLResult out{std::move(bundle), {}};
    if (cfg.steps == 0) return out;
    if (prompts.empty()) throw InvalidInput("rl_train: empty prompt pool");
    const ModelConfig& mcfg = out.bundle.decoder.cfg;
    for (const Prompt& u : prompts)
        if (static_cast<int>(u.size()) >= mcfg.max_len)
            throw InvalidInput("rl_train: prompt leaves no room for refinement");

    const bool conditioned = out.bundle.pivot_source == PivotSource::Encoder;
    const int kk = mcfg.pivot_rows;
    const int vv = mcfg.vocab_size;
    PivotRep zero_pivot;
    zero_pivot.rows = kk;
    zero_pivot.cols = mcfg.pivot_cols;
    zero_pivot.data.assign(static_cast<std::size_t>(kk) * mcfg.pivot_cols, 0.0);

    std::vector<double> enc_grad(out.bundle.encoder.p.size(), 0.0);
    double reward_sum = 0.0;
    std::uint64_t reward_count = 0;

    std::vector<Trajectory> batch(cfg.batch_size);
    std::vector<EncoderTape> enc_tapes(cfg.batch_size);
    std::vector<double> probs;

    for (int step = 0; step < cfg.steps; ++step) {
        // --- Rollouts under the behavior policy (current parameters). ---
        RandomStream pick(derive_seed(cfg.seed, "rl.batch", static_cast<std::uint64_t>(step)));
        std::uint64_t sample_seed =
            derive_seed(cfg.seed, "rl.sample.step", static_cast<std::uint64_t>(step));
        std::uint64_t reward_seed =
            derive_seed(cfg.seed, "rl.reward.step", static_cast<std::uint64_t>(step));

        double step_reward = 0.0;
        for (int j = 0; j < cfg.batch_size; ++j) {
            Trajectory& t = batch[j];
            t.user_prompt = prompts[pick.uniform_index(prompts.size())];
            PivotRep pivot = conditioned
                                 ? encoder_forward(out.bundle.encoder, t.user_prompt)
                                 : zero_pivot;
            DecodeOptions opts;
            opts.mode = DecodeMode::Sample;
            opts.temperature = cfg.temperature;
            opts.seed = derive_seed(sample_seed, "traj", static_cast<std::uint64_t>(j));
            opts.max_len = mcfg.max_len;
            SampledDecode sd = decode_recorded(out.bundle.decoder, pivot, t.user_prompt, opts);
            t.refined = std::move(sd.output);
            t.actions = std::move(sd.actions);
            t.logp_old = std::move(sd.logp);
            t.logp_new = t.logp_old; // ratio 1 at collection time
            t.reward = compute_reward(t.user_prompt, t.refined, world, cfg.images_per_prompt,
                                      derive_seed(reward_seed, "traj",
                                                  static_cast<std::uint64_t>(j)));
            step_reward += t.reward;
        }
        step_reward /= cfg.batch_size;
        out.reward_curve.push_back(step_reward);

        double baseline;
        if (cfg.baseline == "running_mean") {
            reward_sum += step_reward * cfg.batch_size;
            reward_count += cfg.batch_size;
            baseline = reward_sum / static_cast<double>(reward_count);
        } else {
            baseline = step_reward;
        }
        for (Trajectory& t : batch) t.advantage = t.reward - baseline;

        if (!conditioned) continue; // zero pivot: no gradient path to the encoder

        // --- PPO passes over the collected batch. ---
        const double tau = cfg.temperature > 0 ? cfg.temperature : 1.0;
        std::size_t total_tokens = 0;
        for (const Trajectory& t : batch) total_tokens += t.actions.size();
        const double inv_tokens = 1.0 / static_cast<double>(total_tokens);

        for (int pass = 0; pass < cfg.ppo_epochs; ++pass) {
            std::fill(enc_grad.begin(), enc_grad.end(), 0.0);
            for (int j = 0; j < cfg.batch_size; ++j) {
                Trajectory& t = batch[j];
                EncoderTape& etape = enc_tapes[j];
                PivotRep pivot = encoder_forward_tape(out.bundle.encoder, t.user_prompt, etape);

                // Teacher-forced pass over the sampled tokens. The consumed
                // token sequence is the refined prompt (terminal EOS, when
                // sampled, is an action but never an input token).
                DecoderTape dtape;
                std::vector<double> logits =
                    decoder_forward_tape(out.bundle.decoder, pivot, t.refined, dtape);

                const int prefix_len = static_cast<int>(t.user_prompt.size());
                std::vector<double> dlogits(logits.size(), 0.0);
                for (std::size_t m = 0; m < t.actions.size(); ++m) {
                    int pos = kk + prefix_len + static_cast<int>(m);
                    const double* row = logits.data() + static_cast<std::size_t>(pos) * vv;
                    action_probs(row, vv, tau, probs);
                    t.logp_new[m] = std::log(probs[t.actions[m]]);

                    double dlogp = 0.0;
                    ppo_token_term(t.logp_old[m], t.logp_new[m], t.advantage, cfg.clip_epsilon,
                                   &dlogp);
                    dlogp = -dlogp * inv_tokens; // minimized objective
                    double* drow = dlogits.data() + static_cast<std::size_t>(pos) * vv;
                    for (int id = 0; id < vv; ++id) {
                        if (probs[id] == 0.0 && id != t.actions[m]) continue;
                        double ind = id == t.actions[m] ? 1.0 : 0.0;
                        drow[id] += dlogp * (ind - probs[id]) / tau;
                    }
                }

                PivotRep dpivot;
                decoder_backward(out.bundle.decoder, dtape, dlogits, nullptr, &dpivot);
                encoder_backward(out.bundle.encoder, etape, dpivot, enc_grad);
            }
            kernels::axpy(-cfg.lr, enc_grad.data(), out.bundle.encoder.p.values().data(),
                          out.bundle.encoder.p.size());
        }
    }

    snap_parameters(out.bundle.encoder.p);
    return out;
}

} // namespace pivot
