#include <doctest.h>

#include "pivot/kernels.hpp"
#include "pivot/model.hpp"
#include "pivot/rng.hpp"

#include <cmath>

using namespace pivot;

namespace {

struct BackendGuard {
    kernels::Backend saved;
    BackendGuard() : saved(kernels::active_backend()) {}
    ~BackendGuard() { kernels::set_backend(saved); }
};

ModelConfig desk_config() { return ModelConfig{}; }

PivotRep random_pivot(const ModelConfig& cfg, std::uint64_t seed) {
    RandomStream rs(seed);
    PivotRep p;
    p.rows = cfg.pivot_rows;
    p.cols = cfg.pivot_cols;
    p.data.resize(p.rows * p.cols);
    for (double& v : p.data) v = rs.normal();
    return p;
}

// Recorded with the scalar backend; see the matching TEST_CASE.
constexpr std::uint64_t kGoldenEncoderHash = 0xf5887e10c32a8b99ull;

} // namespace

TEST_CASE("encoder output shape is K x d for any input length") {
    EncoderParams enc = init_encoder(desk_config(), 1);
    for (const Prompt& p : {Prompt{0, 1, 2}, Prompt{5, 3, 0, 7, 1, 2, 4, 6, 8}}) {
        PivotRep rep = encoder_forward(enc, p);
        CHECK(rep.rows == 4);
        CHECK(rep.cols == 8);
        CHECK(rep.data.size() == 32);
        for (double v : rep.data) CHECK(std::isfinite(v));
    }
}

TEST_CASE("trailing PAD tokens do not change the encoder output at all") {
    EncoderParams enc = init_encoder(desk_config(), 2);
    Vocab v;
    Prompt base = {0, 4, 9};
    Prompt padded = base;
    padded.push_back(v.pad());
    padded.push_back(v.pad());
    PivotRep a = encoder_forward(enc, base);
    PivotRep b = encoder_forward(enc, padded);
    CHECK(a.data == b.data); // bit-exact masking
}

TEST_CASE("encoder rejects invalid inputs") {
    EncoderParams enc = init_encoder(desk_config(), 3);
    Vocab v;
    CHECK_THROWS_AS(encoder_forward(enc, {}), InvalidInput);
    CHECK_THROWS_AS(encoder_forward(enc, Prompt(13, 0)), InvalidInput);
    CHECK_THROWS_AS(encoder_forward(enc, {static_cast<std::int32_t>(v.bos())}), InvalidInput);
    Prompt pad_inside = {0, v.pad(), 1};
    CHECK_THROWS_AS(encoder_forward(enc, pad_inside), InvalidInput);
}

TEST_CASE("seeded encoder forward matches the recorded golden hash") {
    BackendGuard guard;
    kernels::set_backend(kernels::Backend::Scalar);
    EncoderParams enc = init_encoder(desk_config(), 40);
    PivotRep rep = encoder_forward(enc, Prompt{0, 3, 9});
    std::uint64_t h = fnv1a(rep.data.data(), rep.data.size() * sizeof(double));
    CHECK(h == kGoldenEncoderHash);
}

TEST_CASE("decoder logits have vocab length and causal positions are frozen") {
    ModelConfig cfg = desk_config();
    DecoderParams dec = init_decoder(cfg, 4);
    PivotRep pivot = random_pivot(cfg, 10);

    Prompt tokens = {0, 5, 9};
    std::vector<double> l3 = decoder_logits(dec, pivot, tokens);
    CHECK(l3.size() == 15);

    // appending a token must not change logits at earlier positions
    DecoderTape t1, t2;
    std::vector<double> full1 = decoder_forward_tape(dec, pivot, tokens, t1);
    Prompt longer = tokens;
    longer.push_back(2);
    std::vector<double> full2 = decoder_forward_tape(dec, pivot, longer, t2);
    std::size_t upto = (cfg.pivot_rows + 1 + tokens.size()) * 15;
    for (std::size_t i = 0; i < upto; ++i) CHECK(full1[i] == full2[i]); // bit-exact
}

TEST_CASE("decoder validates pivot shape and token ids") {
    ModelConfig cfg = desk_config();
    DecoderParams dec = init_decoder(cfg, 5);
    PivotRep bad;
    bad.rows = 2;
    bad.cols = 8;
    bad.data.assign(16, 0.0);
    CHECK_THROWS_AS(decoder_logits(dec, bad, {0}), InvalidInput);
    PivotRep pivot = random_pivot(cfg, 11);
    CHECK_THROWS_AS(decoder_logits(dec, pivot, {99}), InvalidInput);
    Vocab v;
    Prompt with_pad = {0, v.pad()};
    CHECK_THROWS_AS(decoder_logits(dec, pivot, with_pad), InvalidInput);
}

TEST_CASE("pivot conditioning is live: distinct pivots give distinct logits") {
    ModelConfig cfg = desk_config();
    PivotRep zero;
    zero.rows = cfg.pivot_rows;
    zero.cols = cfg.pivot_cols;
    zero.data.assign(32, 0.0);
    int hits = 0;
    for (int t = 0; t < 100; ++t) {
        DecoderParams dec = init_decoder(cfg, 1000 + t);
        PivotRep pivot = random_pivot(cfg, 2000 + t);
        auto a = decoder_logits(dec, zero, {0, 1});
        auto b = decoder_logits(dec, pivot, {0, 1});
        std::uint64_t ha = fnv1a(a.data(), a.size() * sizeof(double));
        std::uint64_t hb = fnv1a(b.data(), b.size() * sizeof(double));
        hits += ha != hb;
    }
    CHECK(hits == 100);
}

TEST_CASE("decode keeps the prefix verbatim and respects the budget") {
    ModelConfig cfg = desk_config();
    DecoderParams dec = init_decoder(cfg, 6);
    PivotRep pivot = random_pivot(cfg, 12);
    Prompt prefix = {3, 1};

    DecodeOptions opts;
    opts.max_len = cfg.max_len;
    Prompt out = decode(dec, pivot, prefix, opts);
    REQUIRE(out.size() >= prefix.size());
    CHECK(std::equal(prefix.begin(), prefix.end(), out.begin()));
    CHECK(static_cast<int>(out.size()) <= cfg.max_len);
    Vocab v;
    for (auto tok : out) {
        CHECK(tok != v.bos());
        CHECK(tok != v.pad());
        CHECK(tok != v.eos());
    }

    // budget of prefix + 1: exactly one generated token or none (EOS)
    opts.max_len = static_cast<int>(prefix.size()) + 1;
    Prompt tight = decode(dec, pivot, prefix, opts);
    CHECK(tight.size() >= prefix.size());
    CHECK(tight.size() <= prefix.size() + 1);

    // greedy decode is deterministic
    opts.max_len = cfg.max_len;
    CHECK(decode(dec, pivot, prefix, opts) == decode(dec, pivot, prefix, opts));

    // prefix at or beyond the budget is rejected
    opts.max_len = 2;
    CHECK_THROWS_AS(decode(dec, pivot, {0, 1}, opts), InvalidInput);
}

TEST_CASE("sampled decode reproduces from its seed and records log-probs") {
    ModelConfig cfg = desk_config();
    DecoderParams dec = init_decoder(cfg, 7);
    PivotRep pivot = random_pivot(cfg, 13);
    DecodeOptions opts;
    opts.mode = DecodeMode::Sample;
    opts.temperature = 1.0;
    opts.seed = 321;
    opts.max_len = cfg.max_len;

    SampledDecode a = decode_recorded(dec, pivot, {2}, opts);
    SampledDecode b = decode_recorded(dec, pivot, {2}, opts);
    CHECK(a.output == b.output);
    CHECK(a.actions == b.actions);
    CHECK(a.logp == b.logp);
    REQUIRE(!a.actions.empty());
    CHECK(a.actions.size() == a.logp.size());
    for (double lp : a.logp) {
        CHECK(lp <= 0.0);
        CHECK(std::isfinite(lp));
    }
    if (a.ended_with_eos) CHECK(a.actions.back() == Vocab{}.eos());

    opts.seed = 322;
    SampledDecode c = decode_recorded(dec, pivot, {2}, opts);
    // different stream, overwhelmingly likely to differ somewhere
    CHECK((a.output != c.output || a.logp != c.logp));
}

TEST_CASE("pipeline refinement starts with the user prompt even untrained") {
    ModelConfig cfg = desk_config();
    RefinerBundle bundle;
    bundle.encoder = init_encoder(cfg, 8);
    bundle.decoder = init_decoder(cfg, 9);

    RandomStream rs(77);
    for (int t = 0; t < 25; ++t) {
        Prompt u;
        int len = 1 + static_cast<int>(rs.uniform_index(4));
        for (int i = 0; i < len; ++i)
            u.push_back(static_cast<std::int32_t>(rs.uniform_index(12)));
        Prompt refined = pipeline_refine(bundle, u);
        REQUIRE(refined.size() >= u.size());
        CHECK(std::equal(u.begin(), u.end(), refined.begin()));
    }

    Prompt u = {0, 1};
    CHECK(pipeline_refine(bundle, u) == pipeline_refine(bundle, u)); // deterministic
}

TEST_CASE("zero-pivot bundles ignore the encoder") {
    ModelConfig cfg = desk_config();
    RefinerBundle a;
    a.encoder = init_encoder(cfg, 21);
    a.decoder = init_decoder(cfg, 23);
    a.pivot_source = PivotSource::Zero;
    RefinerBundle b;
    b.encoder = init_encoder(cfg, 22); // different encoder
    b.decoder = init_decoder(cfg, 23);
    b.pivot_source = PivotSource::Zero;
    CHECK(pipeline_refine(a, {0, 1}) == pipeline_refine(b, {0, 1}));
}

TEST_CASE("parameter sets expose named blocks and reject unknown names") {
    EncoderParams enc = init_encoder(desk_config(), 31);
    CHECK(enc.p.block("tok_emb").size() == 15u * 32u);
    CHECK(enc.p.block("pool.queries").size() == 4u * 32u);
    CHECK_THROWS_AS(enc.p.block("no.such.block"), InvalidInput);

    // layer-norm gains start at one, biases at zero, embeddings snapped to f32
    for (double v : enc.p.block("l0.ln1.gain")) CHECK(v == 1.0);
    for (double v : enc.p.block("l0.attn.bq")) CHECK(v == 0.0);
    for (double v : enc.p.block("tok_emb"))
        CHECK(v == static_cast<double>(static_cast<float>(v)));
}

TEST_CASE("model config validation") {
    ModelConfig bad = desk_config();
    bad.d_model = 30; // not divisible by heads
    bad.n_heads = 4;
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
    bad = desk_config();
    bad.vocab_size = 3;
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
}
