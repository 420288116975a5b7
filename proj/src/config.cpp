#include "pivot/config.hpp"

#include "pivot/errors.hpp"
#include "pivot/rng.hpp"

#include <json.hpp>

#include <fstream>
#include <initializer_list>

namespace pivot {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& section,
                std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok)
            throw ValidationError("unknown config key: " +
                                  (section.empty() ? it.key() : section + "." + it.key()));
    }
}

template <typename T>
void get_if(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

json world_json(const WorldParams& w) {
    json j;
    j["seed"] = w.seed;
    j["d_img"] = w.d_img;
    j["sigma"] = w.sigma;
    j["n_concepts"] = w.n_concepts;
    j["n_styles"] = w.n_styles;
    j["max_len"] = w.max_len;
    j["style_gains"] = w.style_gains;
    j["pivot_rows"] = w.pivot_rows;
    j["pivot_cols"] = w.pivot_cols;
    return j;
}

json model_json(const ModelSection& m) {
    json j;
    j["d_model"] = m.d_model;
    j["n_heads"] = m.n_heads;
    j["enc_layers"] = m.enc_layers;
    j["dec_layers"] = m.dec_layers;
    j["ffn_mult"] = m.ffn_mult;
    j["init_std"] = m.init_std;
    return j;
}

} // namespace

RunConfig default_config() { return config_from_json_string("{}"); }

RunConfig config_from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    if (!j.is_object()) throw ValidationError("config: top level must be a JSON object");
    check_keys(j, "", {"seed", "out", "world", "data", "model", "train", "rl", "eval"});

    RunConfig cfg;
    get_if(j, "seed", cfg.seed);
    get_if(j, "out", cfg.out);

    if (j.contains("world")) {
        const json& w = j.at("world");
        check_keys(w, "world",
                   {"seed", "d_img", "sigma", "n_concepts", "n_styles", "max_len", "style_gains",
                    "pivot_rows", "pivot_cols"});
        get_if(w, "seed", cfg.world.seed);
        get_if(w, "d_img", cfg.world.d_img);
        get_if(w, "sigma", cfg.world.sigma);
        get_if(w, "n_concepts", cfg.world.n_concepts);
        get_if(w, "n_styles", cfg.world.n_styles);
        get_if(w, "max_len", cfg.world.max_len);
        get_if(w, "style_gains", cfg.world.style_gains);
        get_if(w, "pivot_rows", cfg.world.pivot_rows);
        get_if(w, "pivot_cols", cfg.world.pivot_cols);
    }
    if (j.contains("data")) {
        const json& d = j.at("data");
        check_keys(d, "data",
                   {"n_records", "images_per_prompt", "expert_fraction", "min_relevance",
                    "min_quality"});
        get_if(d, "n_records", cfg.data.n_records);
        get_if(d, "images_per_prompt", cfg.data.images_per_prompt);
        get_if(d, "expert_fraction", cfg.data.expert_fraction);
        get_if(d, "min_relevance", cfg.data.min_relevance);
        get_if(d, "min_quality", cfg.data.min_quality);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, "model",
                   {"d_model", "n_heads", "enc_layers", "dec_layers", "ffn_mult", "init_std"});
        get_if(m, "d_model", cfg.model.d_model);
        get_if(m, "n_heads", cfg.model.n_heads);
        get_if(m, "enc_layers", cfg.model.enc_layers);
        get_if(m, "dec_layers", cfg.model.dec_layers);
        get_if(m, "ffn_mult", cfg.model.ffn_mult);
        get_if(m, "init_std", cfg.model.init_std);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t, "train", {"epochs_enc", "lr_enc", "epochs_dec", "lr_dec", "batch_size"});
        get_if(t, "epochs_enc", cfg.train.epochs_enc);
        get_if(t, "lr_enc", cfg.train.lr_enc);
        get_if(t, "epochs_dec", cfg.train.epochs_dec);
        get_if(t, "lr_dec", cfg.train.lr_dec);
        get_if(t, "batch_size", cfg.train.batch_size);
    }
    if (j.contains("rl")) {
        const json& r = j.at("rl");
        check_keys(r, "rl",
                   {"steps", "batch_size", "lr", "clip_epsilon", "images_per_prompt",
                    "temperature", "ppo_epochs", "baseline", "n_prompts"});
        get_if(r, "steps", cfg.rl.steps);
        get_if(r, "batch_size", cfg.rl.batch_size);
        get_if(r, "lr", cfg.rl.lr);
        get_if(r, "clip_epsilon", cfg.rl.clip_epsilon);
        get_if(r, "images_per_prompt", cfg.rl.images_per_prompt);
        get_if(r, "temperature", cfg.rl.temperature);
        get_if(r, "ppo_epochs", cfg.rl.ppo_epochs);
        get_if(r, "baseline", cfg.rl.baseline);
        get_if(r, "n_prompts", cfg.rl.n_prompts);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        check_keys(e, "eval", {"n_prompts", "n_images", "oracle_max_extra",
                               "oracle_candidate_cap"});
        get_if(e, "n_prompts", cfg.eval.n_prompts);
        get_if(e, "n_images", cfg.eval.n_images);
        get_if(e, "oracle_max_extra", cfg.eval.oracle_max_extra);
        get_if(e, "oracle_candidate_cap", cfg.eval.oracle_candidate_cap);
    }

    cfg.train.seed = derive_seed(cfg.seed, "train");
    cfg.rl.seed = derive_seed(cfg.seed, "rl");
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open config file " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return config_from_json_string(text);
}

std::string config_to_json_string(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["out"] = cfg.out;
    j["world"] = world_json(cfg.world);
    json d;
    d["n_records"] = cfg.data.n_records;
    d["images_per_prompt"] = cfg.data.images_per_prompt;
    d["expert_fraction"] = cfg.data.expert_fraction;
    d["min_relevance"] = cfg.data.min_relevance;
    d["min_quality"] = cfg.data.min_quality;
    j["data"] = d;
    j["model"] = model_json(cfg.model);
    json t;
    t["epochs_enc"] = cfg.train.epochs_enc;
    t["lr_enc"] = cfg.train.lr_enc;
    t["epochs_dec"] = cfg.train.epochs_dec;
    t["lr_dec"] = cfg.train.lr_dec;
    t["batch_size"] = cfg.train.batch_size;
    j["train"] = t;
    json r;
    r["steps"] = cfg.rl.steps;
    r["batch_size"] = cfg.rl.batch_size;
    r["lr"] = cfg.rl.lr;
    r["clip_epsilon"] = cfg.rl.clip_epsilon;
    r["images_per_prompt"] = cfg.rl.images_per_prompt;
    r["temperature"] = cfg.rl.temperature;
    r["ppo_epochs"] = cfg.rl.ppo_epochs;
    r["baseline"] = cfg.rl.baseline;
    r["n_prompts"] = cfg.rl.n_prompts;
    j["rl"] = r;
    json e;
    e["n_prompts"] = cfg.eval.n_prompts;
    e["n_images"] = cfg.eval.n_images;
    e["oracle_max_extra"] = cfg.eval.oracle_max_extra;
    e["oracle_candidate_cap"] = cfg.eval.oracle_candidate_cap;
    j["eval"] = e;
    return j.dump();
}

ModelConfig make_model_config(const RunConfig& cfg) {
    ModelConfig m;
    Vocab v;
    v.n_concepts = cfg.world.n_concepts;
    v.n_styles = cfg.world.n_styles;
    m.vocab_size = v.size();
    m.max_len = cfg.world.max_len;
    m.pivot_rows = cfg.world.pivot_rows;
    m.pivot_cols = cfg.world.pivot_cols;
    m.d_model = cfg.model.d_model;
    m.n_heads = cfg.model.n_heads;
    m.enc_layers = cfg.model.enc_layers;
    m.dec_layers = cfg.model.dec_layers;
    m.ffn_mult = cfg.model.ffn_mult;
    m.init_std = cfg.model.init_std;
    m.validate();
    return m;
}

std::uint64_t config_hash(const RunConfig& cfg) {
    json j;
    j["world"] = world_json(cfg.world);
    j["model"] = model_json(cfg.model);
    std::string s = j.dump();
    return fnv1a(s.data(), s.size());
}

} // namespace pivot
