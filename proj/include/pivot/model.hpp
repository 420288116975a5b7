#pragma once

#include "pivot/vocab.hpp"
#include "pivot/world.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pivot {

// Sizes of the two sequence models. All sizes are configuration, not
// constants; defaults are the desk-scale values.
struct ModelConfig {
    int vocab_size = 15;
    int d_model = 32;
    int n_heads = 2;
    int enc_layers = 2;
    int dec_layers = 2;
    int ffn_mult = 4;
    int max_len = 12;
    int pivot_rows = 4; // K
    int pivot_cols = 8; // d
    double init_std = 0.22;

    int head_dim() const { return d_model / n_heads; }
    int ffn_dim() const { return d_model * ffn_mult; }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// A named slice of the flat parameter vector.
struct ParamBlock {
    std::string name;
    std::size_t offset = 0;
    std::vector<std::size_t> shape;

    std::size_t size() const {
        std::size_t n = 1;
        for (std::size_t s : shape) n *= s;
        return n;
    }
};

// Flat double-precision parameter storage with named blocks. The block list
// doubles as the checkpoint manifest's parameter order.
class ParamSet {
public:
    std::size_t add(std::string name, std::vector<std::size_t> shape);
    void finalize(); // allocates zero-initialized storage; layout frozen

    std::span<double> block(std::string_view name);
    std::span<const double> block(std::string_view name) const;
    std::size_t block_offset(std::string_view name) const;

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }
    const std::vector<ParamBlock>& blocks() const { return blocks_; }
    std::size_t size() const { return total_; }

private:
    std::vector<ParamBlock> blocks_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<double> values_;
    std::size_t total_ = 0;
    bool finalized_ = false;
};

// Rounds every parameter to its float32 value (widened back to double), the
// precision grid used by checkpoint blobs. Applied at initialization and at
// the end of every training entry point so that a checkpoint round-trip
// reproduces parameters bit-exactly.
void snap_parameters(ParamSet& params);

struct EncoderParams {
    ModelConfig cfg;
    ParamSet p;
};

struct DecoderParams {
    ModelConfig cfg;
    ParamSet p;
};

// Seeded initialization: weights and embeddings N(0, init_std^2), biases
// zero, layer-norm gains one. Deterministic.
EncoderParams init_encoder(const ModelConfig& cfg, std::uint64_t seed);
DecoderParams init_decoder(const ModelConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Tapes: intermediates recorded by the forward passes for exact backprop.
// ---------------------------------------------------------------------------

struct LnTape {
    std::vector<double> xhat;    // n * d_model
    std::vector<double> inv_std; // n
};

struct AttnTape {
    std::vector<double> q, k, v; // n * d_model each (query rows may be K for pooling)
    std::vector<double> alpha;   // heads * n_q * n_k, masked entries zero
    std::vector<double> ctx;     // n_q * d_model
};

struct BlockTape {
    LnTape ln1;
    std::vector<double> ln1_out;
    AttnTape attn;
    LnTape ln2;
    std::vector<double> ln2_out;
    std::vector<double> u; // n * ffn, pre-activation
    std::vector<double> a; // n * ffn, gelu(u)
};

struct StackTape {
    std::vector<BlockTape> blocks;
    std::vector<double> x_last; // input of the final layer norm
    LnTape lnf;
    std::vector<double> x_out; // final states, n * d_model
    int n = 0;
};

struct EncoderTape {
    Prompt tokens;              // as passed, possibly with trailing PAD
    std::vector<char> key_mask; // 1 for non-PAD positions
    StackTape stack;
    AttnTape pool;                // cross-attention pooling intermediates
    std::vector<double> pool_out; // K * d_model, after the pooling projection
};

struct DecoderTape {
    PivotRep pivot;
    std::vector<std::int32_t> seq_tokens; // BOS followed by the consumed tokens
    StackTape stack;
    int n = 0; // K + 1 + tokens
};

// ---------------------------------------------------------------------------
// Encoder: user tokens -> K x d pivot representation.
// ---------------------------------------------------------------------------

PivotRep encoder_forward(const EncoderParams& params, const Prompt& user_tokens);
PivotRep encoder_forward_tape(const EncoderParams& params, const Prompt& user_tokens,
                              EncoderTape& tape);
// Accumulates d loss / d params into grad (flat, same layout as params.p).
void encoder_backward(const EncoderParams& params, const EncoderTape& tape,
                      const PivotRep& dpivot, std::vector<double>& grad);

// ---------------------------------------------------------------------------
// Decoder: pivot prefix + tokens -> next-token logits; autoregressive decode.
// ---------------------------------------------------------------------------

// Next-token logits after the given tokens (length vocab_size).
std::vector<double> decoder_logits(const DecoderParams& params, const PivotRep& pivot,
                                   const Prompt& tokens_so_far);

// Full-sequence forward: logits for every position, row-major n x vocab_size.
std::vector<double> decoder_forward_tape(const DecoderParams& params, const PivotRep& pivot,
                                         const Prompt& tokens, DecoderTape& tape);

// dlogits is n x vocab_size aligned with decoder_forward_tape's output.
// param_grad may be null (frozen decoder); dpivot may be null.
void decoder_backward(const DecoderParams& params, const DecoderTape& tape,
                      const std::vector<double>& dlogits, std::vector<double>* param_grad,
                      PivotRep* dpivot);

enum class DecodeMode { Greedy, Sample };

struct DecodeOptions {
    DecodeMode mode = DecodeMode::Greedy;
    double temperature = 1.0;
    std::uint64_t seed = 0;
    int max_len = 12; // hard budget on the output length, prefix included
};

// Output begins with the prefix verbatim; generation stops at EOS or at the
// length budget; BOS and PAD are never emitted. Greedy mode is deterministic;
// sample mode is reproducible from the seed.
Prompt decode(const DecoderParams& params, const PivotRep& pivot, const Prompt& prefix,
              const DecodeOptions& opts);

// decode() plus the sampled action tokens (including a terminal EOS when one
// was drawn) and their log-probabilities under the masked, temperature-scaled
// sampling distribution. Used by the RL stage.
struct SampledDecode {
    Prompt output;
    std::vector<std::int32_t> actions;
    std::vector<double> logp;
    bool ended_with_eos = false;
};
SampledDecode decode_recorded(const DecoderParams& params, const PivotRep& pivot,
                              const Prompt& prefix, const DecodeOptions& opts);

// ---------------------------------------------------------------------------
// Refiner bundle: the deployable pipeline.
// ---------------------------------------------------------------------------

enum class PivotSource {
    Encoder, // pivot comes from the preference encoder (normal pipeline)
    Zero,    // fixed zero pivot (decoder-without-image ablation)
};

struct RefinerBundle {
    EncoderParams encoder;
    DecoderParams decoder;
    PivotSource pivot_source = PivotSource::Encoder;
    std::uint64_t config_hash = 0; // binds the bundle to (world, model) config
};

// Encoder forward then greedy decode with the user prompt as prefix.
Prompt pipeline_refine(const RefinerBundle& bundle, const Prompt& user_prompt);

// Stable hash of a parameter set's exact bit patterns (used for the
// frozen-decoder contract and golden forward tests).
std::uint64_t params_hash(const ParamSet& params);

} // namespace pivot
