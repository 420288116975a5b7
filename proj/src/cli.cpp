#include "pivot/cli.hpp"

#include "pivot/checkpoint.hpp"
#include "pivot/config.hpp"
#include "pivot/data.hpp"
#include "pivot/discrete.hpp"
#include "pivot/errors.hpp"
#include "pivot/eval.hpp"
#include "pivot/kernels.hpp"
#include "pivot/rl.hpp"
#include "pivot/rng.hpp"
#include "pivot/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

namespace pivot::cli {

namespace {

using nlohmann::json;

std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot write " + path.string());
    out << text;
}

void emit(const json& summary) { std::cout << summary.dump() << "\n"; }

struct Ctx {
    RunConfig cfg;
    std::filesystem::path out;
    std::uint64_t cfg_hash = 0;
};

std::filesystem::path log_path(const Ctx& c) { return c.out / "log.jsonl"; }
std::filesystem::path pairs_path(const Ctx& c) { return c.out / "pairs.jsonl"; }
std::filesystem::path corpus_path(const Ctx& c) { return c.out / "decoder.jsonl"; }

int cmd_world_log(const Ctx& c) {
    World world(c.cfg.world);
    auto log = sample_log(world, c.cfg.data.n_records, c.cfg.data.images_per_prompt,
                          c.cfg.data.expert_fraction, derive_seed(c.cfg.seed, "log"));
    std::filesystem::create_directories(c.out);
    save_records(log, log_path(c));
    write_dataset_manifest(log_path(c), "interaction_log", log.size(), c.cfg.world.seed);
    json s;
    s["command"] = "world-log";
    s["records"] = log.size();
    s["path"] = log_path(c).string();
    s["log_hash"] = hex64(file_hash(log_path(c)));
    s["world_seed"] = c.cfg.world.seed;
    emit(s);
    return 0;
}

int cmd_data_build(const Ctx& c) {
    World world(c.cfg.world);
    auto log = load_records(log_path(c), world.vocab(), c.cfg.world.max_len, c.cfg.world.d_img);
    PreferencePairBuild pb = build_preference_pairs(log);
    save_pairs(pb.pairs, pairs_path(c));
    json extra;
    extra["skipped_records"] = pb.skipped_records;
    write_dataset_manifest(pairs_path(c), "preference_pairs", pb.pairs.size(), c.cfg.world.seed,
                           extra.dump());
    auto corpus = build_decoder_corpus(log, c.cfg.data.min_relevance, c.cfg.data.min_quality,
                                       world);
    save_examples(corpus, corpus_path(c));
    json extra2;
    extra2["min_relevance"] = c.cfg.data.min_relevance;
    extra2["min_quality"] = c.cfg.data.min_quality;
    write_dataset_manifest(corpus_path(c), "decoder_corpus", corpus.size(), c.cfg.world.seed,
                           extra2.dump());

    json s;
    s["command"] = "data-build";
    s["pairs"] = pb.pairs.size();
    s["skipped_records"] = pb.skipped_records;
    s["decoder_examples"] = corpus.size();
    s["pairs_hash"] = hex64(file_hash(pairs_path(c)));
    s["corpus_hash"] = hex64(file_hash(corpus_path(c)));
    emit(s);
    return 0;
}

void write_curve(const std::filesystem::path& path, const std::vector<double>& curve) {
    json j = curve;
    write_text(path, j.dump() + "\n");
}

int cmd_train_encoder(const Ctx& c) {
    World world(c.cfg.world);
    auto pairs = load_pairs(pairs_path(c), world.vocab(), c.cfg.world.max_len, c.cfg.world.d_img);
    ModelConfig mcfg = make_model_config(c.cfg);
    std::uint64_t init_seed = derive_seed(c.cfg.seed, "model.init");
    EncoderTrainResult res =
        train_encoder_warmup(init_encoder(mcfg, init_seed), pairs, world, c.cfg.train);

    CheckpointMeta meta;
    meta.kind = "encoder";
    meta.config_hash = c.cfg_hash;
    meta.world_seed = c.cfg.world.seed;
    meta.init_seed = init_seed;
    meta.model = mcfg;
    save_checkpoint(c.out / "encoder_ckpt", meta, res.params.p);
    write_curve(c.out / "encoder_loss.json", res.loss_curve);

    json s;
    s["command"] = "train-encoder";
    s["pairs"] = pairs.size();
    s["epochs"] = c.cfg.train.epochs_enc;
    s["initial_loss"] = res.loss_curve.front();
    s["final_loss"] = res.loss_curve.back();
    s["checkpoint"] = (c.out / "encoder_ckpt").string();
    s["params_hash"] = hex64(checkpoint_blob_hash(res.params.p));
    emit(s);
    return 0;
}

int cmd_train_decoder(const Ctx& c) {
    World world(c.cfg.world);
    auto corpus =
        load_examples(corpus_path(c), world.vocab(), c.cfg.world.max_len, c.cfg.world.d_img);
    ModelConfig mcfg = make_model_config(c.cfg);
    std::uint64_t init_seed = derive_seed(c.cfg.seed, "model.init");
    DecoderTrainResult res =
        train_decoder_warmup(init_decoder(mcfg, init_seed), corpus, world, c.cfg.train);

    CheckpointMeta meta;
    meta.kind = "decoder";
    meta.config_hash = c.cfg_hash;
    meta.world_seed = c.cfg.world.seed;
    meta.init_seed = init_seed;
    meta.model = mcfg;
    save_checkpoint(c.out / "decoder_ckpt", meta, res.params.p);
    write_curve(c.out / "decoder_loss.json", res.loss_curve);

    json s;
    s["command"] = "train-decoder";
    s["examples"] = corpus.size();
    s["epochs"] = c.cfg.train.epochs_dec;
    s["initial_loss"] = res.loss_curve.front();
    s["final_loss"] = res.loss_curve.back();
    s["checkpoint"] = (c.out / "decoder_ckpt").string();
    s["params_hash"] = hex64(checkpoint_blob_hash(res.params.p));
    emit(s);
    return 0;
}

RefinerBundle assemble_bundle(const Ctx& c) {
    CheckpointMeta enc_meta, dec_meta;
    ParamSet enc_p = load_checkpoint(c.out / "encoder_ckpt", enc_meta, c.cfg_hash);
    ParamSet dec_p = load_checkpoint(c.out / "decoder_ckpt", dec_meta, c.cfg_hash);
    ModelConfig mcfg = make_model_config(c.cfg);
    RefinerBundle bundle;
    bundle.encoder = init_encoder(mcfg, enc_meta.init_seed);
    bundle.decoder = init_decoder(mcfg, dec_meta.init_seed);
    bundle.encoder.p.values() = enc_p.values();
    bundle.decoder.p.values() = dec_p.values();
    bundle.config_hash = c.cfg_hash;
    return bundle;
}

int cmd_train_rl(const Ctx& c) {
    World world(c.cfg.world);
    RefinerBundle bundle = assemble_bundle(c);
    save_bundle(c.out / "bundle_warmup", bundle, c.cfg.world.seed,
                derive_seed(c.cfg.seed, "model.init"));
    std::uint64_t dec_hash_before = checkpoint_blob_hash(bundle.decoder.p);

    std::vector<Prompt> pool;
    {
        RandomStream rs(derive_seed(c.cfg.rl.seed, "rl.prompt_pool"));
        pool.reserve(c.cfg.rl.n_prompts);
        for (int i = 0; i < c.cfg.rl.n_prompts; ++i)
            pool.push_back(sample_novice_prompt(world.vocab(), 4, rs));
    }

    RLResult res = rl_train(std::move(bundle), pool, world, c.cfg.rl);
    std::uint64_t dec_hash_after = checkpoint_blob_hash(res.bundle.decoder.p);
    save_bundle(c.out / "bundle_rl", res.bundle, c.cfg.world.seed,
                derive_seed(c.cfg.seed, "model.init"));
    write_curve(c.out / "reward_curve.json", res.reward_curve);

    json manifest;
    manifest["config"] = json::parse(config_to_json_string(c.cfg));
    manifest["decoder_hash_before"] = hex64(dec_hash_before);
    manifest["decoder_hash_after"] = hex64(dec_hash_after);
    manifest["encoder_hash_after"] = hex64(checkpoint_blob_hash(res.bundle.encoder.p));
    manifest["steps"] = c.cfg.rl.steps;
    write_text(c.out / "rl_manifest.json", manifest.dump(2) + "\n");

    double first = 0.0, last = 0.0;
    int window = std::min<int>(50, static_cast<int>(res.reward_curve.size()));
    for (int i = 0; i < window; ++i) first += res.reward_curve[i];
    for (int i = 0; i < window; ++i)
        last += res.reward_curve[res.reward_curve.size() - 1 - i];
    if (window > 0) {
        first /= window;
        last /= window;
    }

    json s;
    s["command"] = "train-rl";
    s["steps"] = c.cfg.rl.steps;
    s["mean_reward_first_window"] = first;
    s["mean_reward_last_window"] = last;
    s["decoder_frozen"] = dec_hash_before == dec_hash_after;
    s["bundle"] = (c.out / "bundle_rl").string();
    emit(s);
    return 0;
}

int cmd_refine(const Ctx& c, const std::string& prompt_text, const std::string& bundle_dir) {
    World world(c.cfg.world);
    Prompt u = world.vocab().parse_prompt(prompt_text);
    std::filesystem::path dir =
        bundle_dir.empty() ? c.out / "bundle_rl" : std::filesystem::path(bundle_dir);
    RefinerBundle bundle = load_bundle(dir, c.cfg_hash);
    Prompt refined = pipeline_refine(bundle, u);
    json s;
    s["command"] = "refine";
    s["prompt"] = world.vocab().prompt_to_string(u);
    s["refined"] = world.vocab().prompt_to_string(refined);
    emit(s);
    return 0;
}

int cmd_eval(const Ctx& c, const std::string& refiner, const std::string& bundle_dir,
             bool with_oracle) {
    World world(c.cfg.world);
    std::vector<Prompt> prompts =
        sample_eval_prompts(world, c.cfg.eval.n_prompts, derive_seed(c.cfg.seed, "eval"));

    EvalOptions opts;
    opts.n_images = c.cfg.eval.n_images;
    opts.seed = derive_seed(c.cfg.seed, "eval");
    opts.with_oracle = with_oracle;
    opts.oracle_max_extra = c.cfg.eval.oracle_max_extra;
    opts.oracle_candidate_cap = c.cfg.eval.oracle_candidate_cap;

    RefinerBundle bundle;
    RefineFn fn;
    if (refiner == "identity") {
        fn = identity_refiner();
    } else if (refiner == "oracle") {
        fn = oracle_refiner(world, c.cfg.eval.oracle_max_extra, c.cfg.eval.oracle_candidate_cap);
    } else if (refiner == "bundle") {
        std::filesystem::path dir =
            bundle_dir.empty() ? c.out / "bundle_rl" : std::filesystem::path(bundle_dir);
        bundle = load_bundle(dir, c.cfg_hash);
        fn = bundle_refiner(bundle);
    } else {
        throw InvalidInput("eval: unknown refiner \"" + refiner + "\"");
    }

    EvalReport report = evaluate(fn, prompts, world, opts);
    write_text(c.out / "eval_report.json", report.to_json_string() + "\n");

    json s;
    s["command"] = "eval";
    s["refiner"] = refiner;
    s["n_prompts"] = prompts.size();
    s["mean_baseline"] = report.mean_baseline;
    s["mean_refined"] = report.mean_refined;
    s["win_pct"] = report.win_pct;
    s["tie_pct"] = report.tie_pct;
    s["loss_pct"] = report.loss_pct;
    if (report.oracle_gap_ratio) s["oracle_gap_ratio"] = *report.oracle_gap_ratio;
    s["report"] = (c.out / "eval_report.json").string();
    emit(s);
    return 0;
}

int cmd_ablate(const Ctx& c) {
    World world(c.cfg.world);
    auto log = load_records(log_path(c), world.vocab(), c.cfg.world.max_len, c.cfg.world.d_img);

    AblationConfig acfg;
    acfg.train = c.cfg.train;
    acfg.rl = c.cfg.rl;
    acfg.model = make_model_config(c.cfg);
    acfg.init_seed = derive_seed(c.cfg.seed, "model.init");
    acfg.data_seed = derive_seed(c.cfg.seed, "ablation.data");
    acfg.eval_seed = derive_seed(c.cfg.seed, "eval");
    acfg.eval_images = c.cfg.eval.n_images;
    acfg.rl_prompts = c.cfg.rl.n_prompts;

    AblationResult res =
        run_ablation(log, world, c.cfg.data.min_relevance, c.cfg.data.min_quality, acfg);
    write_text(c.out / "ablation.json", res.to_json_string() + "\n");
    write_text(c.out / "ablation.txt", res.to_text_table());

    json s;
    s["command"] = "ablate";
    s["ordering_without_rl"] = res.ordering_without_rl;
    s["ordering_with_rl"] = res.ordering_with_rl;
    for (const AblationCell& cell : res.cells)
        s[cell.variant + (cell.with_rl ? "_rl" : "_norl")] = cell.report.mean_refined;
    emit(s);
    return 0;
}

int cmd_oracle_check(const Ctx& c, int instances) {
    // Independent double-loop verification of the discrete algebra, distinct
    // from the implementations in discrete.cpp.
    int marginal_fail = 0, identity_fail = 0, bound_fail = 0;
    double max_marginal_err = 0.0, max_identity_err = 0.0;
    for (int i = 0; i < instances; ++i) {
        DiscreteInstance inst =
            random_instance(derive_seed(c.cfg.seed, "oracle-check", static_cast<std::uint64_t>(i)));
        for (int u = 0; u < inst.n_u; ++u) {
            std::vector<double> r = pivot_marginal(inst, u);
            for (int s = 0; s < inst.n_s; ++s) {
                double byhand = 0.0;
                for (int v = 0; v < inst.n_v; ++v) byhand += inst.d(s, v) * inst.e(v, u);
                max_marginal_err = std::max(max_marginal_err, std::abs(byhand - r[s]));
            }
            double total = 0.0;
            for (double x : r) total += x;
            if (std::abs(total - 1.0) > 1e-12) ++marginal_fail;
        }
        ObjectiveValue ov = objective_value(inst);
        double identity_err = std::abs(ov.lower_bound - (ov.ex * ov.ey + ov.cov));
        max_identity_err = std::max(max_identity_err, identity_err);
        if (identity_err > 1e-12) ++identity_fail;
        if (ov.objective < ov.lower_bound - 1e-12) ++bound_fail;
    }

    bool ok = marginal_fail == 0 && identity_fail == 0 && bound_fail == 0 &&
              max_marginal_err <= 1e-12;
    json s;
    s["command"] = "oracle-check";
    s["instances"] = instances;
    s["max_marginal_error"] = max_marginal_err;
    s["max_identity_error"] = max_identity_err;
    s["marginal_failures"] = marginal_fail;
    s["identity_failures"] = identity_fail;
    s["bound_failures"] = bound_fail;
    s["ok"] = ok;
    emit(s);
    return ok ? 0 : 1;
}

} // namespace

int run_command(const std::vector<std::string>& args) {
    CLI::App app{"prompt refinement pipeline over a synthetic text-to-image world"};
    app.require_subcommand(1);

    std::string config_path, out_override, kernels = "auto";
    std::uint64_t seed_override = 0;
    bool seed_set = false;
    app.add_option("--config", config_path, "JSON config file (defaults apply when omitted)");
    app.add_option("--out", out_override, "output directory (overrides config)");
    app.add_option("--seed", seed_override, "global seed (overrides config)")
        ->each([&](const std::string&) { seed_set = true; });
    app.add_option("--kernels", kernels, "kernel backend: auto | scalar | avx2")
        ->check(CLI::IsMember({"auto", "scalar", "avx2"}));

    auto* c_world_log = app.add_subcommand("world-log", "sample an interaction log");
    auto* c_data_build =
        app.add_subcommand("data-build", "build the two training corpora from the log");
    auto* c_train_enc = app.add_subcommand("train-encoder", "preference-encoder warm-up");
    auto* c_train_dec = app.add_subcommand("train-decoder", "prompt-decoder warm-up");
    auto* c_train_rl = app.add_subcommand("train-rl", "end-to-end PPO over the encoder");

    std::string refine_prompt, refine_bundle;
    auto* c_refine = app.add_subcommand("refine", "refine one prompt with a trained bundle");
    c_refine->add_option("--prompt", refine_prompt, "prompt, e.g. \"c0 c1\"")->required();
    c_refine->add_option("--bundle", refine_bundle, "bundle directory (default <out>/bundle_rl)");

    std::string eval_refiner = "bundle", eval_bundle;
    bool eval_oracle = false;
    auto* c_eval = app.add_subcommand("eval", "evaluate a refiner on held-out prompts");
    c_eval->add_option("--refiner", eval_refiner, "bundle | identity | oracle")
        ->check(CLI::IsMember({"bundle", "identity", "oracle"}));
    c_eval->add_option("--bundle", eval_bundle, "bundle directory (default <out>/bundle_rl)");
    c_eval->add_flag("--with-oracle", eval_oracle, "also report the oracle gap ratio");

    auto* c_ablate = app.add_subcommand("ablate", "train and evaluate the six-variant grid");

    int oc_instances = 1000;
    auto* c_oracle = app.add_subcommand("oracle-check", "exact-algebra sweep on random instances");
    c_oracle->add_option("--instances", oc_instances, "number of random instances");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        Ctx ctx;
        ctx.cfg = config_path.empty() ? default_config() : load_config(config_path);
        if (seed_set) {
            ctx.cfg.seed = seed_override;
            ctx.cfg.train.seed = derive_seed(ctx.cfg.seed, "train");
            ctx.cfg.rl.seed = derive_seed(ctx.cfg.seed, "rl");
        }
        if (!out_override.empty()) ctx.cfg.out = out_override;
        ctx.out = ctx.cfg.out;
        ctx.cfg_hash = config_hash(ctx.cfg);

        if (kernels == "scalar") kernels::set_backend(kernels::Backend::Scalar);
        else if (kernels == "avx2") kernels::set_backend(kernels::Backend::Avx2);
        else kernels::set_backend(kernels::Backend::Auto);

        if (c_world_log->parsed()) return cmd_world_log(ctx);
        if (c_data_build->parsed()) return cmd_data_build(ctx);
        if (c_train_enc->parsed()) return cmd_train_encoder(ctx);
        if (c_train_dec->parsed()) return cmd_train_decoder(ctx);
        if (c_train_rl->parsed()) return cmd_train_rl(ctx);
        if (c_refine->parsed()) return cmd_refine(ctx, refine_prompt, refine_bundle);
        if (c_eval->parsed()) return cmd_eval(ctx, eval_refiner, eval_bundle, eval_oracle);
        if (c_ablate->parsed()) return cmd_ablate(ctx);
        if (c_oracle->parsed()) return cmd_oracle_check(ctx, oc_instances);
        std::cerr << "no subcommand given\n";
        return 1;
    } catch (const ResourceError& e) {
        std::cerr << "resource error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int run_command(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_command(args);
}

} // namespace pivot::cli
