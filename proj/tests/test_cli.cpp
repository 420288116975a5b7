#include <doctest.h>

#include "pivot/checkpoint.hpp"
#include "pivot/cli.hpp"
#include "pivot/config.hpp"
#include "pivot/rng.hpp"

#include <filesystem>
#include <fstream>

using namespace pivot;

namespace {

std::filesystem::path temp_dir(const char* name) {
    auto p = std::filesystem::temp_directory_path() / "pivot_cli_tests" / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::filesystem::path write_config(const std::filesystem::path& dir, const std::string& body) {
    auto p = dir / "config.json";
    std::ofstream out(p, std::ios::trunc);
    out << body;
    return p;
}

} // namespace

TEST_CASE("config defaults load and the canonical dump round-trips") {
    RunConfig cfg = default_config();
    CHECK(cfg.seed == 7);
    CHECK(cfg.world.d_img == 16);
    CHECK(cfg.train.epochs_enc == 3);
    CHECK(cfg.rl.clip_epsilon == 0.2);
    // seeds for the stages derive from the global seed
    CHECK(cfg.train.seed == derive_seed(7, "train"));
    CHECK(cfg.rl.seed == derive_seed(7, "rl"));

    RunConfig back = config_from_json_string(config_to_json_string(cfg));
    CHECK(config_to_json_string(back) == config_to_json_string(cfg));
    CHECK(config_hash(back) == config_hash(cfg));
}

TEST_CASE("unknown config keys are rejected by name") {
    try {
        config_from_json_string(R"({"train": {"lr_encoder": 0.1}})");
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("train.lr_encoder") != std::string::npos);
    }
    CHECK_THROWS_AS(config_from_json_string(R"({"wrold": {}})"), ValidationError);
    CHECK_THROWS_AS(config_from_json_string("[1, 2]"), ValidationError);
    CHECK_THROWS_AS(config_from_json_string("{nope"), ParseError);
}

TEST_CASE("config hash binds world and model sections only") {
    RunConfig a = default_config();
    RunConfig b = a;
    b.eval.n_prompts = 10; // not part of the hash
    CHECK(config_hash(a) == config_hash(b));
    b.world.seed = 8;
    CHECK(config_hash(a) != config_hash(b));
    RunConfig c = a;
    c.model.d_model = 64;
    CHECK(config_hash(a) != config_hash(c));
}

TEST_CASE("checkpoints round-trip bit-exactly and verify their blob hash") {
    auto dir = temp_dir("ckpt");
    ModelConfig mcfg;
    EncoderParams enc = init_encoder(mcfg, 77);

    CheckpointMeta meta;
    meta.kind = "encoder";
    meta.config_hash = 0xabcdef;
    meta.world_seed = 7;
    meta.init_seed = 77;
    meta.model = mcfg;
    save_checkpoint(dir, meta, enc.p);

    CheckpointMeta loaded_meta;
    ParamSet loaded = load_checkpoint(dir, loaded_meta);
    CHECK(loaded_meta.kind == "encoder");
    CHECK(loaded_meta.config_hash == 0xabcdef);
    CHECK(loaded.values() == enc.p.values()); // snapped parameters reload exactly
    REQUIRE(loaded.blocks().size() == enc.p.blocks().size());
    for (std::size_t i = 0; i < loaded.blocks().size(); ++i) {
        CHECK(loaded.blocks()[i].name == enc.p.blocks()[i].name);
        CHECK(loaded.blocks()[i].shape == enc.p.blocks()[i].shape);
    }

    // forward pass through reloaded parameters is bit-identical
    EncoderParams enc2 = init_encoder(mcfg, 77);
    enc2.p.values() = loaded.values();
    PivotRep a = encoder_forward(enc, {0, 1, 2});
    PivotRep b = encoder_forward(enc2, {0, 1, 2});
    CHECK(a.data == b.data);

    // corrupting the blob is caught by the hash
    {
        std::fstream blob(dir / "params.bin", std::ios::in | std::ios::out | std::ios::binary);
        blob.seekg(10);
        char byte = 0;
        blob.read(&byte, 1);
        byte = static_cast<char>(~byte);
        blob.seekp(10);
        blob.write(&byte, 1);
    }
    CheckpointMeta ignored;
    CHECK_THROWS_AS(load_checkpoint(dir, ignored), ValidationError);
}

TEST_CASE("bundles reload and refuse mismatched config hashes with both hashes named") {
    auto dir = temp_dir("bundle");
    ModelConfig mcfg;
    RefinerBundle bundle;
    bundle.encoder = init_encoder(mcfg, 5);
    bundle.decoder = init_decoder(mcfg, 6);
    bundle.config_hash = 0x1111;
    save_bundle(dir, bundle, 7, 5);

    RefinerBundle back = load_bundle(dir, 0x1111);
    CHECK(back.encoder.p.values() == bundle.encoder.p.values());
    CHECK(back.decoder.p.values() == bundle.decoder.p.values());
    CHECK(back.pivot_source == PivotSource::Encoder);
    CHECK(pipeline_refine(back, {0, 1}) == pipeline_refine(bundle, {0, 1}));

    try {
        load_bundle(dir, 0x2222);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        std::string msg = e.what();
        CHECK(msg.find("0000000000001111") != std::string::npos);
        CHECK(msg.find("0000000000002222") != std::string::npos);
    }
}

TEST_CASE("cli: missing config file names the path and exits 1") {
    int rc = cli::run_command({"--config", "/nonexistent/config.json", "world-log"});
    CHECK(rc == 1);
}

TEST_CASE("cli: unknown subcommand exits nonzero") {
    CHECK(cli::run_command({"frobnicate"}) != 0);
}

TEST_CASE("cli: oracle-check runs clean on a small sweep") {
    auto dir = temp_dir("oracle");
    auto cfgp = write_config(dir, R"({"out": ")" + (dir / "out").string() + R"("})");
    CHECK(cli::run_command({"--config", cfgp.string(), "oracle-check", "--instances", "50"}) == 0);
}

TEST_CASE("cli: tiny pipeline end to end with refine prefix contract") {
    auto dir = temp_dir("pipeline");
    std::string out = (dir / "out").string();
    std::string body = R"({
      "out": ")" + out + R"(",
      "data": {"n_records": 40, "images_per_prompt": 3},
      "train": {"epochs_enc": 1, "epochs_dec": 1},
      "rl": {"steps": 2, "batch_size": 4, "n_prompts": 8},
      "eval": {"n_prompts": 10, "n_images": 2}
    })";
    auto cfgp = write_config(dir, body);

    CHECK(cli::run_command({"--config", cfgp.string(), "world-log"}) == 0);
    CHECK(std::filesystem::exists(out + "/log.jsonl"));
    CHECK(std::filesystem::exists(out + "/log.jsonl.manifest.json"));

    CHECK(cli::run_command({"--config", cfgp.string(), "data-build"}) == 0);
    CHECK(std::filesystem::exists(out + "/pairs.jsonl"));
    CHECK(std::filesystem::exists(out + "/decoder.jsonl"));

    CHECK(cli::run_command({"--config", cfgp.string(), "train-encoder"}) == 0);
    CHECK(std::filesystem::exists(out + "/encoder_ckpt/manifest.json"));
    CHECK(std::filesystem::exists(out + "/encoder_loss.json"));

    CHECK(cli::run_command({"--config", cfgp.string(), "train-decoder"}) == 0);
    CHECK(cli::run_command({"--config", cfgp.string(), "train-rl"}) == 0);
    CHECK(std::filesystem::exists(out + "/bundle_rl/params.bin"));
    CHECK(std::filesystem::exists(out + "/bundle_warmup/params.bin"));
    CHECK(std::filesystem::exists(out + "/reward_curve.json"));

    CHECK(cli::run_command({"--config", cfgp.string(), "refine", "--prompt", "c0 c1"}) == 0);
    CHECK(cli::run_command({"--config", cfgp.string(), "eval", "--refiner", "identity"}) == 0);
    CHECK(std::filesystem::exists(out + "/eval_report.json"));

    // a bundle trained under this config refuses to load under another world
    std::string body8 = body;
    body8.insert(body8.find_last_of('}'), R"(, "world": {"seed": 8})");
    auto cfg8 = write_config(dir, body8);
    CHECK(cli::run_command({"--config", cfg8.string(), "refine", "--prompt", "c0"}) == 1);
}
