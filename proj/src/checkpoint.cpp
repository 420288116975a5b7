#include "pivot/checkpoint.hpp"

#include "pivot/errors.hpp"
#include "pivot/rng.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

namespace pivot {

namespace {

using nlohmann::json;

std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
    return std::strtoull(s.c_str(), nullptr, 16);
}

// Little-endian float32 image of the parameter vector.
std::vector<unsigned char> blob_bytes(const ParamSet& params) {
    std::vector<unsigned char> bytes;
    bytes.reserve(params.values().size() * 4);
    for (double v : params.values()) {
        float f = static_cast<float>(v);
        std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
        bytes.push_back(static_cast<unsigned char>(bits & 0xff));
        bytes.push_back(static_cast<unsigned char>((bits >> 8) & 0xff));
        bytes.push_back(static_cast<unsigned char>((bits >> 16) & 0xff));
        bytes.push_back(static_cast<unsigned char>((bits >> 24) & 0xff));
    }
    return bytes;
}

json model_to_json(const ModelConfig& m) {
    json j;
    j["vocab_size"] = m.vocab_size;
    j["d_model"] = m.d_model;
    j["n_heads"] = m.n_heads;
    j["enc_layers"] = m.enc_layers;
    j["dec_layers"] = m.dec_layers;
    j["ffn_mult"] = m.ffn_mult;
    j["max_len"] = m.max_len;
    j["pivot_rows"] = m.pivot_rows;
    j["pivot_cols"] = m.pivot_cols;
    j["init_std"] = m.init_std;
    return j;
}

ModelConfig model_from_json(const json& j) {
    ModelConfig m;
    m.vocab_size = j.at("vocab_size").get<int>();
    m.d_model = j.at("d_model").get<int>();
    m.n_heads = j.at("n_heads").get<int>();
    m.enc_layers = j.at("enc_layers").get<int>();
    m.dec_layers = j.at("dec_layers").get<int>();
    m.ffn_mult = j.at("ffn_mult").get<int>();
    m.max_len = j.at("max_len").get<int>();
    m.pivot_rows = j.at("pivot_rows").get<int>();
    m.pivot_cols = j.at("pivot_cols").get<int>();
    m.init_std = j.at("init_std").get<double>();
    m.validate();
    return m;
}

} // namespace

std::uint64_t checkpoint_blob_hash(const ParamSet& params) {
    std::vector<unsigned char> bytes = blob_bytes(params);
    return fnv1a(bytes.data(), bytes.size());
}

void save_checkpoint(const std::filesystem::path& dir, const CheckpointMeta& meta,
                     const ParamSet& params) {
    std::filesystem::create_directories(dir);

    std::vector<unsigned char> bytes = blob_bytes(params);
    {
        std::ofstream blob(dir / "params.bin", std::ios::binary | std::ios::trunc);
        if (!blob) throw InvalidInput("cannot write " + (dir / "params.bin").string());
        blob.write(reinterpret_cast<const char*>(bytes.data()),
                   static_cast<std::streamsize>(bytes.size()));
    }

    json j;
    j["kind"] = meta.kind;
    j["dtype"] = "f32le";
    j["config_hash"] = hex64(meta.config_hash);
    j["world_seed"] = meta.world_seed;
    j["init_seed"] = meta.init_seed;
    j["model"] = model_to_json(meta.model);
    j["pivot_source"] = meta.pivot_source;
    j["blob_bytes"] = bytes.size();
    j["blob_hash"] = hex64(fnv1a(bytes.data(), bytes.size()));
    json blocks = json::array();
    for (const ParamBlock& b : params.blocks()) {
        json jb;
        jb["name"] = b.name;
        jb["offset"] = b.offset;
        jb["shape"] = b.shape;
        blocks.push_back(jb);
    }
    j["params"] = blocks;

    std::ofstream manifest(dir / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!manifest) throw InvalidInput("cannot write " + (dir / "manifest.json").string());
    manifest << j.dump(2) << '\n';
}

ParamSet load_checkpoint(const std::filesystem::path& dir, CheckpointMeta& meta,
                         std::uint64_t expected_config_hash) {
    std::ifstream mf(dir / "manifest.json", std::ios::binary);
    if (!mf) throw InvalidInput("cannot open " + (dir / "manifest.json").string());
    json j;
    try {
        j = json::parse(mf);
    } catch (const json::parse_error& e) {
        throw ParseError((dir / "manifest.json").string() + ": " + e.what());
    }

    meta.kind = j.at("kind").get<std::string>();
    meta.config_hash = parse_hex64(j.at("config_hash").get<std::string>());
    meta.world_seed = j.at("world_seed").get<std::uint64_t>();
    meta.init_seed = j.at("init_seed").get<std::uint64_t>();
    meta.model = model_from_json(j.at("model"));
    meta.pivot_source = j.value("pivot_source", "encoder");
    if (j.at("dtype").get<std::string>() != "f32le")
        throw ValidationError("checkpoint dtype must be f32le");

    if (expected_config_hash != 0 && meta.config_hash != expected_config_hash)
        throw ValidationError("checkpoint config hash " + hex64(meta.config_hash) +
                              " does not match the active config hash " +
                              hex64(expected_config_hash) + "; refusing to load " + dir.string());

    ParamSet params;
    for (const json& jb : j.at("params")) {
        std::size_t before = params.size();
        params.add(jb.at("name").get<std::string>(),
                   jb.at("shape").get<std::vector<std::size_t>>());
        if (jb.at("offset").get<std::size_t>() != before)
            throw ValidationError("checkpoint manifest offsets are not contiguous");
    }
    params.finalize();

    std::ifstream blob(dir / "params.bin", std::ios::binary);
    if (!blob) throw InvalidInput("cannot open " + (dir / "params.bin").string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(blob)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() != j.at("blob_bytes").get<std::size_t>() ||
        bytes.size() != params.size() * 4)
        throw ValidationError("checkpoint blob size mismatch in " + dir.string());
    std::uint64_t h = fnv1a(bytes.data(), bytes.size());
    std::uint64_t expected = parse_hex64(j.at("blob_hash").get<std::string>());
    if (h != expected)
        throw ValidationError("checkpoint blob hash " + hex64(h) + " does not match manifest " +
                              hex64(expected));

    for (std::size_t i = 0; i < params.size(); ++i) {
        std::uint32_t bits = static_cast<std::uint32_t>(bytes[4 * i]) |
                             (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
                             (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
                             (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
        params.values()[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    return params;
}

void save_bundle(const std::filesystem::path& dir, const RefinerBundle& bundle,
                 std::uint64_t world_seed, std::uint64_t init_seed) {
    if (!(bundle.encoder.cfg == bundle.decoder.cfg))
        throw InvalidInput("bundle: encoder and decoder configs differ");
    ParamSet combined;
    for (const ParamBlock& b : bundle.encoder.p.blocks()) combined.add("encoder." + b.name, b.shape);
    for (const ParamBlock& b : bundle.decoder.p.blocks()) combined.add("decoder." + b.name, b.shape);
    combined.finalize();
    double* dst = combined.values().data();
    std::memcpy(dst, bundle.encoder.p.values().data(),
                bundle.encoder.p.size() * sizeof(double));
    std::memcpy(dst + bundle.encoder.p.size(), bundle.decoder.p.values().data(),
                bundle.decoder.p.size() * sizeof(double));

    CheckpointMeta meta;
    meta.kind = "bundle";
    meta.config_hash = bundle.config_hash;
    meta.world_seed = world_seed;
    meta.init_seed = init_seed;
    meta.model = bundle.encoder.cfg;
    meta.pivot_source = bundle.pivot_source == PivotSource::Encoder ? "encoder" : "zero";
    save_checkpoint(dir, meta, combined);
}

RefinerBundle load_bundle(const std::filesystem::path& dir,
                          std::uint64_t expected_config_hash) {
    CheckpointMeta meta;
    ParamSet combined = load_checkpoint(dir, meta, expected_config_hash);
    if (meta.kind != "bundle")
        throw ValidationError(dir.string() + " holds a " + meta.kind + " checkpoint, not a bundle");

    RefinerBundle bundle;
    bundle.config_hash = meta.config_hash;
    bundle.pivot_source =
        meta.pivot_source == "zero" ? PivotSource::Zero : PivotSource::Encoder;
    // Rebuild the two layouts from the config, then copy values by name.
    bundle.encoder = init_encoder(meta.model, meta.init_seed);
    bundle.decoder = init_decoder(meta.model, meta.init_seed);
    for (const ParamBlock& b : bundle.encoder.p.blocks()) {
        auto src = combined.block("encoder." + b.name);
        auto dst = bundle.encoder.p.block(b.name);
        std::memcpy(dst.data(), src.data(), src.size() * sizeof(double));
    }
    for (const ParamBlock& b : bundle.decoder.p.blocks()) {
        auto src = combined.block("decoder." + b.name);
        auto dst = bundle.decoder.p.block(b.name);
        std::memcpy(dst.data(), src.data(), src.size() * sizeof(double));
    }
    return bundle;
}

ModelConfig model_config_from_json_string(const std::string& text) {
    return model_from_json(json::parse(text));
}

std::string model_config_to_json_string(const ModelConfig& cfg) {
    return model_to_json(cfg).dump();
}

} // namespace pivot
