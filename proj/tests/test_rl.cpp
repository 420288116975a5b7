#include <doctest.h>

#include "pivot/data.hpp"
#include "pivot/rl.hpp"
#include "pivot/rng.hpp"
#include "pivot/train.hpp"

#include <cmath>

using namespace pivot;

namespace {

const World& default_world() {
    static World world(WorldParams{});
    return world;
}

Trajectory make_traj(std::vector<double> logp_old, std::vector<double> logp_new, double adv) {
    Trajectory t;
    t.logp_old = std::move(logp_old);
    t.logp_new = std::move(logp_new);
    t.advantage = adv;
    t.reward = adv;
    return t;
}

RefinerBundle tiny_warm_bundle(std::uint64_t seed) {
    const World& world = default_world();
    ModelConfig mcfg;
    TrainConfig tcfg;
    tcfg.seed = derive_seed(seed, "train");
    tcfg.epochs_enc = 1;
    tcfg.epochs_dec = 1;
    auto log = sample_log(world, 80, 4, 0.5, seed);
    auto pairs = build_preference_pairs(log).pairs;
    auto corpus = build_decoder_corpus(log, 0.3, 0.3, world);
    RefinerBundle bundle;
    bundle.encoder =
        train_encoder_warmup(init_encoder(mcfg, seed), pairs, world, tcfg).params;
    bundle.decoder =
        train_decoder_warmup(init_decoder(mcfg, seed), corpus, world, tcfg).params;
    return bundle;
}

} // namespace

TEST_CASE("reward differential: bounds, identity, antisymmetry") {
    std::vector<double> ones = {1.0, 1.0, 1.0};
    std::vector<double> zeros = {0.0, 0.0, 0.0};
    std::vector<double> half = {0.5};
    CHECK(reward_from_scores(ones, zeros) == 1.0); // bound attained
    CHECK(reward_from_scores(zeros, ones) == -1.0);
    CHECK_THROWS_AS(reward_from_scores(std::vector<double>{}, std::vector<double>{}),
                    InvalidInput);
    CHECK_THROWS_AS(reward_from_scores(ones, half), InvalidInput);

    const World& world = default_world();
    Prompt u = {0, 1};
    CHECK(compute_reward(u, u, world, 4, 99) == 0.0); // matched sampling paths

    Prompt styled = {0, 1, world.vocab().style_id(3)};
    double ab = compute_reward(u, styled, world, 4, 123);
    double ba = compute_reward(styled, u, world, 4, 123);
    CHECK(ab == doctest::Approx(-ba).epsilon(1e-12));
    CHECK(ab >= -1.0);
    CHECK(ab <= 1.0);
}

TEST_CASE("oracle refinement earns a strictly positive reward") {
    const World& world = default_world();
    Prompt u = {0, 1};
    OracleResult best = oracle_best_prompt(u, world, 2);
    double r = compute_reward(u, best.prompt, world, 4, derive_seed(7, "reward"));
    CHECK(r > 0.0);
}

TEST_CASE("ppo objective at rho = 1 is minus the token-weighted mean advantage") {
    std::vector<Trajectory> batch;
    batch.push_back(make_traj({-1.0, -2.0}, {-1.0, -2.0}, 0.5));
    batch.push_back(make_traj({-0.5}, {-0.5}, -0.25));
    double obj = ppo_objective(batch, 0.2);
    CHECK(obj == doctest::Approx(-(0.5 + 0.5 - 0.25) / 3.0).epsilon(1e-12));
}

TEST_CASE("ppo clipping freezes the advantaged side") {
    const double eps = 0.2;
    // positive advantage, ratio above the band: clipped at (1 + eps) * A
    {
        std::vector<Trajectory> batch;
        double lp_old = -1.0;
        double lp_new = lp_old + std::log(1.0 + 2.0 * eps);
        batch.push_back(make_traj({lp_old}, {lp_new}, 2.0));
        CHECK(ppo_objective(batch, eps) == doctest::Approx(-(1.0 + eps) * 2.0).epsilon(1e-12));
        std::vector<std::vector<double>> dl;
        ppo_objective(batch, eps, &dl);
        CHECK(dl[0][0] == 0.0); // gradient frozen by the clip
    }
    // negative advantage, ratio below the band: clipped at (1 - eps) * A
    {
        std::vector<Trajectory> batch;
        double lp_old = -1.0;
        double lp_new = lp_old + std::log(1.0 - 2.0 * eps > 0 ? 1.0 - 2.0 * eps : 0.5);
        batch.push_back(make_traj({lp_old}, {lp_new}, -1.5));
        CHECK(ppo_objective(batch, eps) == doctest::Approx(-(1.0 - eps) * -1.5).epsilon(1e-12));
        std::vector<std::vector<double>> dl;
        ppo_objective(batch, eps, &dl);
        CHECK(dl[0][0] == 0.0);
    }
    // inside the band the gradient is live: d/d lp = -A * rho / n
    {
        std::vector<Trajectory> batch;
        batch.push_back(make_traj({-1.0}, {-0.95}, 1.0));
        std::vector<std::vector<double>> dl;
        ppo_objective(batch, 0.2, &dl);
        double rho = std::exp(0.05);
        CHECK(dl[0][0] == doctest::Approx(-rho).epsilon(1e-12));
    }
}

TEST_CASE("ppo objective validates inputs") {
    std::vector<Trajectory> bad;
    bad.push_back(make_traj({-1.0}, {-1.0, -2.0}, 0.1));
    CHECK_THROWS_AS(ppo_objective(bad, 0.2), InvalidInput);

    std::vector<Trajectory> nonfinite;
    nonfinite.push_back(make_traj({-1.0}, {std::nan("")}, 0.1));
    CHECK_THROWS_AS(ppo_objective(nonfinite, 0.2), InvalidInput);

    std::vector<Trajectory> ok;
    ok.push_back(make_traj({-1.0}, {-1.0}, 0.1));
    CHECK_THROWS_AS(ppo_objective(ok, 0.0), InvalidInput);
    CHECK_THROWS_AS(ppo_objective(ok, 1.0), InvalidInput);
}

TEST_CASE("rl_train: zero steps is a bit-exact no-op") {
    RefinerBundle bundle = tiny_warm_bundle(61);
    std::vector<double> enc_before = bundle.encoder.p.values();
    std::vector<double> dec_before = bundle.decoder.p.values();
    RLConfig cfg;
    cfg.steps = 0;
    RLResult res = rl_train(std::move(bundle), {{0, 1}}, default_world(), cfg);
    CHECK(res.bundle.encoder.p.values() == enc_before);
    CHECK(res.bundle.decoder.p.values() == dec_before);
    CHECK(res.reward_curve.empty());
}

TEST_CASE("rl_train keeps the decoder frozen and reproduces bit-exactly") {
    const World& world = default_world();
    RLConfig cfg;
    cfg.steps = 4;
    cfg.batch_size = 6;
    cfg.ppo_epochs = 2;
    cfg.seed = derive_seed(7, "rl");

    std::vector<Prompt> prompts = {{0}, {1, 2}, {3, 4, 5}, {6, 7}};

    RefinerBundle b1 = tiny_warm_bundle(62);
    std::uint64_t dec_hash = params_hash(b1.decoder.p);
    std::vector<double> enc_before = b1.encoder.p.values();
    RLResult r1 = rl_train(std::move(b1), prompts, world, cfg);
    CHECK(params_hash(r1.bundle.decoder.p) == dec_hash); // frozen-decoder contract
    CHECK(r1.bundle.encoder.p.values() != enc_before);   // encoder actually moved
    REQUIRE(r1.reward_curve.size() == 4);
    for (double r : r1.reward_curve) {
        CHECK(r >= -1.0);
        CHECK(r <= 1.0);
    }

    RefinerBundle b2 = tiny_warm_bundle(62);
    RLResult r2 = rl_train(std::move(b2), prompts, world, cfg);
    CHECK(r1.reward_curve == r2.reward_curve); // bit-reproducible
    CHECK(r1.bundle.encoder.p.values() == r2.bundle.encoder.p.values());
}

TEST_CASE("rl_train leaves zero-pivot bundles untouched") {
    RefinerBundle bundle = tiny_warm_bundle(63);
    bundle.pivot_source = PivotSource::Zero;
    std::vector<double> enc_before = bundle.encoder.p.values();
    RLConfig cfg;
    cfg.steps = 2;
    cfg.batch_size = 4;
    RLResult res = rl_train(std::move(bundle), {{0, 1}, {2}}, default_world(), cfg);
    CHECK(res.bundle.encoder.p.values() == enc_before); // no gradient path
    CHECK(res.reward_curve.size() == 2);
}

TEST_CASE("rl_train validates configuration and prompts") {
    RefinerBundle bundle = tiny_warm_bundle(64);
    RLConfig cfg;
    cfg.steps = 1;
    RefinerBundle copy1 = bundle;
    CHECK_THROWS_AS(rl_train(std::move(copy1), {}, default_world(), cfg), InvalidInput);

    RLConfig bad = cfg;
    bad.clip_epsilon = 1.5;
    RefinerBundle copy2 = bundle;
    CHECK_THROWS_AS(rl_train(std::move(copy2), {{0}}, default_world(), bad), InvalidInput);

    RLConfig bad2 = cfg;
    bad2.baseline = "gae"; // not provided
    RefinerBundle copy3 = bundle;
    CHECK_THROWS_AS(rl_train(std::move(copy3), {{0}}, default_world(), bad2), InvalidInput);

    Prompt too_long(12, 0);
    RefinerBundle copy4 = bundle;
    CHECK_THROWS_AS(rl_train(std::move(copy4), {too_long}, default_world(), cfg), InvalidInput);
}
