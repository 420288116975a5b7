#include "pivot/data.hpp"

#include "pivot/errors.hpp"
#include "pivot/rng.hpp"

#include <json.hpp>

#include <fstream>
#include <functional>

namespace pivot {

namespace {

using nlohmann::json;

void check_score(double s, const std::string& what) {
    if (!(s >= 0.0 && s <= 1.0))
        throw ValidationError(what + " score " + std::to_string(s) + " outside [0, 1]");
}

void check_image(const Image& img, int d_img, const std::string& what) {
    if (static_cast<int>(img.size()) != d_img)
        throw ValidationError(what + " image has dimension " + std::to_string(img.size()) +
                              ", expected " + std::to_string(d_img));
}

// Line-by-line JSONL writer/reader shared by the three dataset kinds.
template <typename T, typename ToJson>
void save_jsonl(const std::vector<T>& items, const std::filesystem::path& path, ToJson to_json) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
    for (const T& item : items) out << to_json(item).dump() << '\n';
    if (!out) throw InvalidInput("write failed for " + path.string());
}

template <typename T, typename FromJson>
std::vector<T> load_jsonl(const std::filesystem::path& path, FromJson from_json) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open " + path.string() + " for reading");
    std::vector<T> items;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        try {
            items.push_back(from_json(j));
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return items;
}

Prompt prompt_from_json(const json& j, const Vocab& vocab, int max_len) {
    Prompt p = j.get<Prompt>();
    try {
        validate_prompt(p, vocab, max_len);
    } catch (const InvalidInput& e) {
        throw ValidationError(e.what());
    }
    return p;
}

} // namespace

PreferencePairBuild build_preference_pairs(const std::vector<InteractionRecord>& log) {
    PreferencePairBuild out;
    for (const InteractionRecord& rec : log) {
        if (rec.images.size() != rec.scores.size())
            throw ValidationError("record " + std::to_string(rec.record_id) + " has " +
                                  std::to_string(rec.images.size()) + " images but " +
                                  std::to_string(rec.scores.size()) + " scores");
        if (rec.images.empty()) {
            ++out.skipped_records;
            continue;
        }
        std::size_t best = 0;
        for (std::size_t k = 1; k < rec.scores.size(); ++k)
            if (rec.scores[k] > rec.scores[best]) best = k;
        out.pairs.push_back({rec.prompt, rec.images[best], rec.scores[best]});
    }
    return out;
}

PreferencePairBuild build_preference_pairs_random_target(
    const std::vector<InteractionRecord>& log, std::uint64_t seed) {
    PreferencePairBuild out;
    for (const InteractionRecord& rec : log) {
        if (rec.images.size() != rec.scores.size())
            throw ValidationError("record " + std::to_string(rec.record_id) + " has " +
                                  std::to_string(rec.images.size()) + " images but " +
                                  std::to_string(rec.scores.size()) + " scores");
        if (rec.images.empty()) {
            ++out.skipped_records;
            continue;
        }
        RandomStream rs(derive_seed(seed, "data.random_target",
                                    static_cast<std::uint64_t>(rec.record_id)));
        std::size_t pick = rs.uniform_index(rec.images.size());
        out.pairs.push_back({rec.prompt, rec.images[pick], rec.scores[pick]});
    }
    return out;
}

std::vector<DecoderExample> build_decoder_corpus(const std::vector<InteractionRecord>& log,
                                                 double min_relevance, double min_quality,
                                                 const World& world) {
    if (!(min_relevance >= 0.0 && min_relevance <= 1.0))
        throw InvalidInput("min_relevance must be in [0, 1]");
    if (!(min_quality >= 0.0 && min_quality <= 1.0))
        throw InvalidInput("min_quality must be in [0, 1]");
    std::vector<DecoderExample> corpus;
    for (const InteractionRecord& rec : log) {
        for (const Image& img : rec.images) {
            double rel = world.relevance(img, rec.prompt);
            double qual = world.quality(img);
            if (rel >= min_relevance && qual >= min_quality)
                corpus.push_back({rec.prompt, img, rel, qual});
        }
    }
    return corpus;
}

void save_records(const std::vector<InteractionRecord>& log, const std::filesystem::path& path) {
    save_jsonl(log, path, [](const InteractionRecord& rec) {
        json j;
        j["record_id"] = rec.record_id;
        j["prompt"] = rec.prompt;
        j["images"] = rec.images;
        j["scores"] = rec.scores;
        return j;
    });
}

std::vector<InteractionRecord> load_records(const std::filesystem::path& path,
                                            const Vocab& vocab, int max_len, int d_img) {
    return load_jsonl<InteractionRecord>(path, [&](const json& j) {
        InteractionRecord rec;
        rec.record_id = j.at("record_id").get<std::int64_t>();
        rec.prompt = prompt_from_json(j.at("prompt"), vocab, max_len);
        rec.images = j.at("images").get<std::vector<Image>>();
        rec.scores = j.at("scores").get<std::vector<double>>();
        if (rec.images.size() != rec.scores.size())
            throw ValidationError("record " + std::to_string(rec.record_id) +
                                  ": images and scores misaligned");
        for (const Image& img : rec.images) check_image(img, d_img, "record");
        for (double s : rec.scores) check_score(s, "record");
        return rec;
    });
}

void save_pairs(const std::vector<PreferencePair>& pairs, const std::filesystem::path& path) {
    save_jsonl(pairs, path, [](const PreferencePair& p) {
        json j;
        j["prompt"] = p.user_prompt;
        j["image"] = p.target_image;
        j["score"] = p.target_score;
        return j;
    });
}

std::vector<PreferencePair> load_pairs(const std::filesystem::path& path, const Vocab& vocab,
                                       int max_len, int d_img) {
    return load_jsonl<PreferencePair>(path, [&](const json& j) {
        PreferencePair p;
        p.user_prompt = prompt_from_json(j.at("prompt"), vocab, max_len);
        p.target_image = j.at("image").get<Image>();
        p.target_score = j.at("score").get<double>();
        check_image(p.target_image, d_img, "pair");
        check_score(p.target_score, "pair");
        return p;
    });
}

void save_examples(const std::vector<DecoderExample>& examples,
                   const std::filesystem::path& path) {
    save_jsonl(examples, path, [](const DecoderExample& e) {
        json j;
        j["prompt"] = e.system_prompt;
        j["image"] = e.image;
        j["relevance"] = e.relevance;
        j["quality"] = e.quality;
        return j;
    });
}

std::vector<DecoderExample> load_examples(const std::filesystem::path& path, const Vocab& vocab,
                                          int max_len, int d_img) {
    return load_jsonl<DecoderExample>(path, [&](const json& j) {
        DecoderExample e;
        e.system_prompt = prompt_from_json(j.at("prompt"), vocab, max_len);
        e.image = j.at("image").get<Image>();
        e.relevance = j.at("relevance").get<double>();
        e.quality = j.at("quality").get<double>();
        check_image(e.image, d_img, "example");
        check_score(e.relevance, "example relevance");
        check_score(e.quality, "example quality");
        return e;
    });
}

std::uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open " + path.string() + " for hashing");
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[4096];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
    return h;
}

void write_dataset_manifest(const std::filesystem::path& dataset_path, const std::string& kind,
                            std::size_t count, std::uint64_t world_seed,
                            const std::string& extra_json) {
    json j;
    j["kind"] = kind;
    j["count"] = count;
    j["world_seed"] = world_seed;
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(file_hash(dataset_path)));
    j["content_hash"] = hex;
    if (!extra_json.empty()) j["extra"] = json::parse(extra_json);
    std::filesystem::path mpath = dataset_path;
    mpath += ".manifest.json";
    std::ofstream out(mpath, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot open " + mpath.string() + " for writing");
    out << j.dump(2) << '\n';
}

} // namespace pivot
