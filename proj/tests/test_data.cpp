#include <doctest.h>

#include "pivot/data.hpp"
#include "pivot/errors.hpp"
#include "pivot/rng.hpp"

#include <filesystem>
#include <fstream>

using namespace pivot;

namespace {

const World& default_world() {
    static World world(WorldParams{});
    return world;
}

std::filesystem::path temp_file(const char* name) {
    auto p = std::filesystem::temp_directory_path() / "pivot_data_tests";
    std::filesystem::create_directories(p);
    return p / name;
}

InteractionRecord make_record(std::int64_t id, Prompt prompt, std::vector<double> scores) {
    InteractionRecord rec;
    rec.record_id = id;
    rec.prompt = std::move(prompt);
    for (double s : scores) {
        rec.images.push_back(Image(16, s)); // distinguishable payloads
        rec.scores.push_back(s);
    }
    return rec;
}

} // namespace

TEST_CASE("preference pairs pick the argmax with lowest-index ties") {
    std::vector<InteractionRecord> log;
    log.push_back(make_record(0, {0, 1}, {0.2, 0.9, 0.5}));
    log.push_back(make_record(1, {2}, {0.7, 0.7}));
    log.push_back(make_record(2, {3}, {}));

    PreferencePairBuild out = build_preference_pairs(log);
    REQUIRE(out.pairs.size() == 2);
    CHECK(out.skipped_records == 1);
    CHECK(out.pairs[0].target_score == 0.9);
    CHECK(out.pairs[0].target_image[0] == 0.9);
    CHECK(out.pairs[1].target_score == 0.7);
    CHECK(out.pairs[1].target_image[0] == 0.7); // index 0 of the tie
}

TEST_CASE("pair counts and mean target match an independent scan") {
    const World& world = default_world();
    auto log = sample_log(world, 100, 4, 0.5, 2024);
    PreferencePairBuild out = build_preference_pairs(log);
    REQUIRE(out.pairs.size() == 100);

    double mean = 0.0;
    for (const auto& rec : log) {
        double best = rec.scores[0];
        for (double s : rec.scores) best = std::max(best, s);
        mean += best;
    }
    mean /= 100.0;
    double got = 0.0;
    for (const auto& p : out.pairs) got += p.target_score;
    got /= 100.0;
    CHECK(got == doctest::Approx(mean).epsilon(1e-12));

    // every pair's target equals the max of its source record
    for (std::size_t i = 0; i < out.pairs.size(); ++i) {
        double best = *std::max_element(log[i].scores.begin(), log[i].scores.end());
        CHECK(out.pairs[i].target_score == best);
    }
}

TEST_CASE("misaligned scores raise a validation error naming the record") {
    std::vector<InteractionRecord> log;
    log.push_back(make_record(41, {0}, {0.5}));
    log[0].scores.push_back(0.6); // now 1 image, 2 scores
    try {
        build_preference_pairs(log);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("41") != std::string::npos);
    }
}

TEST_CASE("random-target variant draws from the same record deterministically") {
    const World& world = default_world();
    auto log = sample_log(world, 50, 4, 0.5, 11);
    auto a = build_preference_pairs_random_target(log, 99);
    auto b = build_preference_pairs_random_target(log, 99);
    REQUIRE(a.pairs.size() == 50);
    for (std::size_t i = 0; i < a.pairs.size(); ++i) {
        CHECK(a.pairs[i].target_image == b.pairs[i].target_image);
        // the target is one of the record's own images
        bool found = false;
        for (const auto& img : log[i].images) found |= img == a.pairs[i].target_image;
        CHECK(found);
    }
}

TEST_CASE("decoder corpus admission and threshold monotonicity") {
    const World& world = default_world();
    auto log = sample_log(world, 80, 4, 0.5, 5);

    auto all = build_decoder_corpus(log, 0.0, 0.0, world);
    CHECK(all.size() == 320); // vacuous thresholds keep every (prompt, image)

    auto some = build_decoder_corpus(log, 0.5, 0.6, world);
    for (const auto& e : some) {
        CHECK(e.relevance >= 0.5);
        CHECK(e.quality >= 0.6);
        // stored scores match a recomputation
        CHECK(e.relevance == doctest::Approx(world.relevance(e.image, e.system_prompt)));
        CHECK(e.quality == doctest::Approx(world.quality(e.image)));
    }

    // raising either threshold never adds examples
    auto higher_rel = build_decoder_corpus(log, 0.6, 0.6, world);
    auto higher_q = build_decoder_corpus(log, 0.5, 0.7, world);
    CHECK(higher_rel.size() <= some.size());
    CHECK(higher_q.size() <= some.size());

    CHECK_THROWS_AS(build_decoder_corpus(log, -0.1, 0.5, world), InvalidInput);
    CHECK_THROWS_AS(build_decoder_corpus(log, 0.5, 1.5, world), InvalidInput);
}

TEST_CASE("jsonl round-trips are lossless for all three dataset kinds") {
    const World& world = default_world();
    const Vocab& vocab = world.vocab();
    auto log = sample_log(world, 20, 3, 0.5, 77);

    auto lp = temp_file("log.jsonl");
    save_records(log, lp);
    auto log2 = load_records(lp, vocab, 12, 16);
    REQUIRE(log2.size() == log.size());
    for (std::size_t i = 0; i < log.size(); ++i) {
        CHECK(log2[i].record_id == log[i].record_id);
        CHECK(log2[i].prompt == log[i].prompt);
        CHECK(log2[i].images == log[i].images);
        CHECK(log2[i].scores == log[i].scores);
    }

    auto pairs = build_preference_pairs(log).pairs;
    auto pp = temp_file("pairs.jsonl");
    save_pairs(pairs, pp);
    auto pairs2 = load_pairs(pp, vocab, 12, 16);
    REQUIRE(pairs2.size() == pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        CHECK(pairs2[i].user_prompt == pairs[i].user_prompt);
        CHECK(pairs2[i].target_image == pairs[i].target_image);
        CHECK(pairs2[i].target_score == pairs[i].target_score);
    }

    auto corpus = build_decoder_corpus(log, 0.3, 0.3, world);
    auto cp = temp_file("corpus.jsonl");
    save_examples(corpus, cp);
    auto corpus2 = load_examples(cp, vocab, 12, 16);
    REQUIRE(corpus2.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        CHECK(corpus2[i].system_prompt == corpus[i].system_prompt);
        CHECK(corpus2[i].image == corpus[i].image);
        CHECK(corpus2[i].relevance == corpus[i].relevance);
        CHECK(corpus2[i].quality == corpus[i].quality);
    }
}

TEST_CASE("empty dataset round-trips to an empty list") {
    auto p = temp_file("empty.jsonl");
    save_pairs({}, p);
    CHECK(load_pairs(p, Vocab{}, 12, 16).empty());
}

TEST_CASE("a truncated final line raises a parse error naming the line") {
    auto p = temp_file("broken.jsonl");
    {
        std::ofstream out(p, std::ios::trunc);
        out << R"({"prompt":[0],"image":[0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0],"score":0.5})" << "\n";
        out << R"({"prompt":[1],"image":[0,0)"; // truncated mid-array
    }
    try {
        load_pairs(p, Vocab{}, 12, 16);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
}

TEST_CASE("loaders validate invariants on read") {
    auto p = temp_file("invalid.jsonl");
    {
        std::ofstream out(p, std::ios::trunc);
        out << R"({"prompt":[0],"image":[0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0],"score":1.5})" << "\n";
    }
    CHECK_THROWS_AS(load_pairs(p, Vocab{}, 12, 16), ValidationError);

    {
        std::ofstream out(p, std::ios::trunc);
        out << R"({"prompt":[14],"image":[0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0],"score":0.5})" << "\n";
    }
    CHECK_THROWS_AS(load_pairs(p, Vocab{}, 12, 16), ValidationError); // PAD inside prompt

    {
        std::ofstream out(p, std::ios::trunc);
        out << R"({"prompt":[0],"image":[1,2,3],"score":0.5})" << "\n";
    }
    CHECK_THROWS_AS(load_pairs(p, Vocab{}, 12, 16), ValidationError); // wrong dimension
}

TEST_CASE("dataset manifests carry counts and a content hash") {
    const World& world = default_world();
    auto log = sample_log(world, 5, 2, 0.5, 3);
    auto p = temp_file("manifested.jsonl");
    save_records(log, p);
    write_dataset_manifest(p, "interaction_log", log.size(), world.params().seed);

    std::filesystem::path mp = p;
    mp += ".manifest.json";
    std::ifstream in(mp);
    REQUIRE(in.good());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text.find("interaction_log") != std::string::npos);
    CHECK(text.find("\"count\": 5") != std::string::npos);

    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", (unsigned long long)file_hash(p));
    CHECK(text.find(hex) != std::string::npos);
}
