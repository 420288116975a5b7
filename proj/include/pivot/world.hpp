#pragma once

#include "pivot/vocab.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pivot {

// An image is a fixed-dimension real vector produced by the generation map.
using Image = std::vector<double>;

// A K x d pivot representation of an image.
struct PivotRep {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data; // row-major, rows * cols

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

// One interaction-log entry: a prompt, its generated images, and the
// per-image preference scores.
struct InteractionRecord {
    std::int64_t record_id = 0;
    Prompt prompt;
    std::vector<Image> images;
    std::vector<double> scores;
};

// Seed-determined settings of the synthetic text-to-image universe. Matrices
// are derived from the seed and never serialized.
struct WorldParams {
    std::uint64_t seed = 7;
    int d_img = 16;
    double sigma = 0.05;
    int n_concepts = 8;
    int n_styles = 4;
    int max_len = 12;
    std::vector<double> style_gains = {0.5, 1.0, 1.5, 2.0};
    int pivot_rows = 4; // K slots of the frozen image encoder
    int pivot_cols = 8; // width d of each slot
};

// The synthetic world: a deterministic linear generation map with seeded
// Gaussian noise, a closed-form preference function, and a frozen affine
// image encoder. Style directions are biased along a fixed unit quality
// direction with per-style gains, so appending style tokens genuinely
// improves image quality and refinement has an enumerable optimum.
//
// All methods are const and pure given (params, explicit seeds); the object
// is safe for concurrent read-only use.
class World {
public:
    explicit World(WorldParams params);

    const WorldParams& params() const { return params_; }
    const Vocab& vocab() const { return vocab_; }

    // n images from the prompt: A*bow_c + B*bow_s + sigma * eps, where eps for
    // sample k is seeded by (noise_seed, k). With sigma == 0 the map is
    // deterministic and order-invariant in the tokens.
    std::vector<Image> generate(const Prompt& prompt, int n, std::uint64_t noise_seed) const;

    // The noise-free image of a prompt (sigma treated as zero).
    Image deterministic_image(const Prompt& prompt) const;

    // User satisfaction in [0, 1]: relevance(image, prompt) * quality(image).
    double preference(const Image& image, const Prompt& user_prompt) const;
    // Clipped cosine between A^T image and the 0/1 concept bag of the prompt;
    // zero by convention when either side vanishes.
    double relevance(const Image& image, const Prompt& user_prompt) const;
    // Logistic of the projection onto the quality direction.
    double quality(const Image& image) const;

    // Frozen affine image encoder: slot k = M_k * image + p_k.
    PivotRep encode_image(const Image& image) const;

    // Column c of the concept matrix / style matrix (for tests and audits).
    std::vector<double> concept_column(int c) const;
    std::vector<double> style_column(int s) const;
    const std::vector<double>& quality_direction() const { return w_q_; }

private:
    void check_style_monotonicity() const;
    void bow(const Prompt& prompt, std::vector<double>& concepts,
             std::vector<double>& styles) const;

    WorldParams params_;
    Vocab vocab_;
    std::vector<double> concept_cols_; // n_concepts columns of length d_img
    std::vector<double> style_cols_;   // n_styles columns of length d_img
    std::vector<double> w_q_;          // unit quality direction
    std::vector<double> enc_m_;        // K blocks of (pivot_cols x d_img), row-major
    std::vector<double> enc_p_;        // K blocks of pivot_cols offsets
};

// Samples an interaction log: expert prompts carry style tokens, novice
// prompts are concept-only; images use the world's sigma; scores come from
// the preference function. Fully reproducible from the seed.
std::vector<InteractionRecord> sample_log(const World& world, int n_records,
                                          int images_per_prompt, double expert_fraction,
                                          std::uint64_t seed);

// A concept-only prompt with 1..max_concepts distinct tokens in random order.
Prompt sample_novice_prompt(const Vocab& vocab, int max_concepts, class RandomStream& rs);

// Brute-force refinement oracle: enumerates the user prompt followed by every
// multiset of at most max_extra_tokens non-special tokens (capped by the
// world's max_len), scores each candidate on its noise-free image, and
// returns the argmax with lowest-lexicographic tie-break.
struct OracleResult {
    Prompt prompt;
    double score = 0.0;
    std::uint64_t candidates = 0;
};
OracleResult oracle_best_prompt(const Prompt& user_prompt, const World& world,
                                int max_extra_tokens,
                                std::uint64_t candidate_cap = 1000000);

} // namespace pivot
