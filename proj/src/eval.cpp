#include "pivot/eval.hpp"

#include "pivot/errors.hpp"
#include "pivot/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pivot {

namespace {

using nlohmann::json;

std::uint64_t prompt_content_hash(const Prompt& p) {
    std::uint64_t h = fnv1a(p.data(), p.size() * sizeof(Prompt::value_type));
    return mix64(h ^ p.size());
}

double mean_preference(const World& world, const std::vector<Image>& images, const Prompt& u) {
    double acc = 0.0;
    for (const Image& img : images) acc += world.preference(img, u);
    return acc / static_cast<double>(images.size());
}

} // namespace

RefineFn identity_refiner() {
    return [](const Prompt& u) { return u; };
}

RefineFn bundle_refiner(const RefinerBundle& bundle) {
    return [&bundle](const Prompt& u) { return pipeline_refine(bundle, u); };
}

RefineFn oracle_refiner(const World& world, int max_extra, std::uint64_t candidate_cap) {
    return [&world, max_extra, candidate_cap](const Prompt& u) {
        return oracle_best_prompt(u, world, max_extra, candidate_cap).prompt;
    };
}

EvalReport evaluate(const RefineFn& refine, const std::vector<Prompt>& prompts,
                    const World& world, const EvalOptions& opts) {
    if (prompts.empty()) throw InvalidInput("evaluate: prompt list is empty");
    if (opts.n_images < 1) throw InvalidInput("evaluate: n_images must be >= 1");

    EvalReport report;
    report.n_images = opts.n_images;
    report.seed = opts.seed;
    std::vector<double> oracle_vals;
    bool oracle_ok = opts.with_oracle;

    for (const Prompt& u : prompts) {
        PromptOutcome po;
        po.user_prompt = u;
        // Noise keyed by prompt content so aggregates are order-invariant.
        std::uint64_t noise = derive_seed(opts.seed, "eval.gen", prompt_content_hash(u));
        std::vector<Image> base = world.generate(u, opts.n_images, noise);
        po.baseline_mean = mean_preference(world, base, u);

        try {
            po.refined_prompt = refine(u);
            std::vector<Image> refined = world.generate(po.refined_prompt, opts.n_images, noise);
            po.refined_mean = mean_preference(world, refined, u);
            double rel = 0.0;
            for (const Image& img : refined) rel += world.relevance(img, u);
            po.relevance_refined = rel / static_cast<double>(refined.size());
            double diff = po.refined_mean - po.baseline_mean;
            po.outcome = std::abs(diff) <= 1e-12 ? "tie" : (diff > 0 ? "win" : "loss");
        } catch (const std::exception& e) {
            po.refined_prompt = u;
            po.refined_mean = 0.0;
            po.relevance_refined = 0.0;
            po.outcome = "loss";
            po.error = e.what();
        }

        if (opts.with_oracle) {
            try {
                Prompt best =
                    oracle_best_prompt(u, world, opts.oracle_max_extra, opts.oracle_candidate_cap)
                        .prompt;
                std::vector<Image> oi = world.generate(best, opts.n_images, noise);
                oracle_vals.push_back(mean_preference(world, oi, u));
            } catch (const ResourceError&) {
                oracle_ok = false; // search space infeasible; report without the ratio
            }
        }

        if (po.outcome == "win") ++report.wins;
        else if (po.outcome == "tie") ++report.ties;
        else ++report.losses;
        report.per_prompt.push_back(std::move(po));
    }

    // Aggregate in a canonical (sorted) order so the means are bit-identical
    // under any permutation of the prompt list.
    const double n = static_cast<double>(prompts.size());
    std::vector<double> base_vals, ref_vals;
    base_vals.reserve(report.per_prompt.size());
    ref_vals.reserve(report.per_prompt.size());
    for (const PromptOutcome& po : report.per_prompt) {
        base_vals.push_back(po.baseline_mean);
        ref_vals.push_back(po.refined_mean);
    }
    std::sort(base_vals.begin(), base_vals.end());
    std::sort(ref_vals.begin(), ref_vals.end());
    for (double v : base_vals) report.mean_baseline += v;
    for (double v : ref_vals) report.mean_refined += v;
    report.mean_baseline /= n;
    report.mean_refined /= n;
    report.win_pct = 100.0 * report.wins / n;
    report.tie_pct = 100.0 * report.ties / n;
    report.loss_pct = 100.0 * report.losses / n;
    if (oracle_ok) {
        std::sort(oracle_vals.begin(), oracle_vals.end());
        double oracle_acc = 0.0;
        for (double v : oracle_vals) oracle_acc += v;
        report.oracle_mean = oracle_acc / n;
        if (*report.oracle_mean > 0.0)
            report.oracle_gap_ratio = report.mean_refined / *report.oracle_mean;
    }
    return report;
}

std::string EvalReport::to_json_string() const {
    json j;
    j["mean_baseline"] = mean_baseline;
    j["mean_refined"] = mean_refined;
    j["wins"] = wins;
    j["ties"] = ties;
    j["losses"] = losses;
    j["win_pct"] = win_pct;
    j["tie_pct"] = tie_pct;
    j["loss_pct"] = loss_pct;
    j["n_prompts"] = per_prompt.size();
    j["n_images"] = n_images;
    j["seed"] = seed;
    if (oracle_mean) j["oracle_mean"] = *oracle_mean;
    if (oracle_gap_ratio) j["oracle_gap_ratio"] = *oracle_gap_ratio;
    json rows = json::array();
    for (const PromptOutcome& po : per_prompt) {
        json r;
        r["prompt"] = po.user_prompt;
        r["refined"] = po.refined_prompt;
        r["baseline_mean"] = po.baseline_mean;
        r["refined_mean"] = po.refined_mean;
        r["relevance_synthetic"] = po.relevance_refined;
        r["outcome"] = po.outcome;
        if (!po.error.empty()) r["error"] = po.error;
        rows.push_back(r);
    }
    j["per_prompt"] = rows;
    return j.dump();
}

std::vector<Prompt> sample_eval_prompts(const World& world, int n, std::uint64_t seed) {
    std::vector<Prompt> prompts;
    prompts.reserve(n);
    RandomStream rs(derive_seed(seed, "eval.prompts"));
    for (int i = 0; i < n; ++i) prompts.push_back(sample_novice_prompt(world.vocab(), 4, rs));
    return prompts;
}

AblationResult run_ablation(const std::vector<InteractionRecord>& log, const World& world,
                            double min_relevance, double min_quality,
                            const AblationConfig& cfg) {
    // Shared corpora.
    PreferencePairBuild pairs_best = build_preference_pairs(log);
    PreferencePairBuild pairs_rand = build_preference_pairs_random_target(log, cfg.data_seed);
    std::vector<DecoderExample> corpus =
        build_decoder_corpus(log, min_relevance, min_quality, world);

    // Shared warm-ups: two encoders (preferred vs random targets), two
    // decoders (conditioned vs zero pivot).
    EncoderTrainResult enc_full = train_encoder_warmup(
        init_encoder(cfg.model, cfg.init_seed), pairs_best.pairs, world, cfg.train);
    EncoderTrainResult enc_rand = train_encoder_warmup(
        init_encoder(cfg.model, cfg.init_seed), pairs_rand.pairs, world, cfg.train);
    DecoderTrainResult dec_full = train_decoder_warmup(init_decoder(cfg.model, cfg.init_seed),
                                                       corpus, world, cfg.train, false);
    DecoderTrainResult dec_zero = train_decoder_warmup(init_decoder(cfg.model, cfg.init_seed),
                                                       corpus, world, cfg.train, true);

    std::vector<Prompt> eval_prompts = sample_eval_prompts(world, cfg.eval_prompts, cfg.eval_seed);
    std::vector<Prompt> rl_prompts;
    {
        RandomStream rs(derive_seed(cfg.rl.seed, "rl.prompt_pool"));
        rl_prompts.reserve(cfg.rl_prompts);
        for (int i = 0; i < cfg.rl_prompts; ++i)
            rl_prompts.push_back(sample_novice_prompt(world.vocab(), 4, rs));
    }
    EvalOptions eopts;
    eopts.n_images = cfg.eval_images;
    eopts.seed = cfg.eval_seed;

    // The no_pivot variant removes image conditioning from decoder training
    // only; the inference pipeline still feeds the encoder's pivot, which that
    // decoder never learned to read.
    auto make_bundle = [&](const std::string& variant) {
        RefinerBundle b;
        b.encoder = variant == "random_target" ? enc_rand.params : enc_full.params;
        b.decoder = variant == "no_pivot" ? dec_zero.params : dec_full.params;
        b.pivot_source = PivotSource::Encoder;
        return b;
    };

    AblationResult result;
    const char* variants[] = {"full", "random_target", "no_pivot"};
    for (bool with_rl : {false, true}) {
        for (const char* variant : variants) {
            RefinerBundle bundle = make_bundle(variant);
            if (with_rl) bundle = rl_train(std::move(bundle), rl_prompts, world, cfg.rl).bundle;
            AblationCell cell;
            cell.variant = variant;
            cell.with_rl = with_rl;
            cell.report = evaluate(bundle_refiner(bundle), eval_prompts, world, eopts);
            result.cells.push_back(std::move(cell));
        }
    }

    auto mean_of = [&](const std::string& variant, bool with_rl) {
        for (const AblationCell& c : result.cells)
            if (c.variant == variant && c.with_rl == with_rl) return c.report.mean_refined;
        throw InvalidInput("run_ablation: missing cell");
    };
    result.ordering_without_rl = mean_of("full", false) >= mean_of("random_target", false) &&
                                 mean_of("random_target", false) >= mean_of("no_pivot", false);
    result.ordering_with_rl = mean_of("full", true) >= mean_of("random_target", true) &&
                              mean_of("random_target", true) >= mean_of("no_pivot", true);
    return result;
}

std::string AblationResult::to_text_table() const {
    std::ostringstream os;
    os << "variant             no-RL mean   with-RL mean\n";
    const char* variants[] = {"full", "random_target", "no_pivot"};
    for (const char* v : variants) {
        double a = 0, b = 0;
        for (const AblationCell& c : cells) {
            if (c.variant == v && !c.with_rl) a = c.report.mean_refined;
            if (c.variant == v && c.with_rl) b = c.report.mean_refined;
        }
        os << v;
        for (std::size_t i = std::string(v).size(); i < 20; ++i) os << ' ';
        char buf[64];
        std::snprintf(buf, sizeof buf, "%10.6f   %12.6f\n", a, b);
        os << buf;
    }
    os << "ordering (no RL):   " << (ordering_without_rl ? "holds" : "violated") << "\n";
    os << "ordering (with RL): " << (ordering_with_rl ? "holds" : "violated") << "\n";
    return os.str();
}

std::string AblationResult::to_json_string() const {
    json j;
    json cells_json = json::array();
    for (const AblationCell& c : cells) {
        json cj;
        cj["variant"] = c.variant;
        cj["with_rl"] = c.with_rl;
        cj["mean_refined"] = c.report.mean_refined;
        cj["mean_baseline"] = c.report.mean_baseline;
        cj["win_pct"] = c.report.win_pct;
        cells_json.push_back(cj);
    }
    j["cells"] = cells_json;
    j["ordering_without_rl"] = ordering_without_rl;
    j["ordering_with_rl"] = ordering_with_rl;
    return j.dump();
}

} // namespace pivot
