#pragma once

#include "pivot/world.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pivot {

// One encoder-training pair: a prompt and the highest-scored image of its
// source record.
struct PreferencePair {
    Prompt user_prompt;
    Image target_image;
    double target_score = 0.0;
};

// One decoder-training example: a system prompt, one of its generated
// images, and the two admission scores kept for audit.
struct DecoderExample {
    Prompt system_prompt;
    Image image;
    double relevance = 0.0;
    double quality = 0.0;
};

struct PreferencePairBuild {
    std::vector<PreferencePair> pairs;
    int skipped_records = 0; // records with no images, counted never dropped silently
};

// One pair per record with at least one image; target is the argmax score
// with lowest-index tie-break.
PreferencePairBuild build_preference_pairs(const std::vector<InteractionRecord>& log);

// Ablation variant: the target is a uniformly chosen image from the same
// record instead of the highest-scored one.
PreferencePairBuild build_preference_pairs_random_target(
    const std::vector<InteractionRecord>& log, std::uint64_t seed);

// Every (prompt, image) of the log whose relevance and quality both clear
// the thresholds.
std::vector<DecoderExample> build_decoder_corpus(const std::vector<InteractionRecord>& log,
                                                 double min_relevance, double min_quality,
                                                 const World& world);

// JSON Lines persistence. Round-trips are lossless; loaders validate
// invariants and name the line of any malformed row. A manifest JSON
// (counts, thresholds, world seed, content hash) is written alongside each
// dataset by the callers that know those fields; see write_dataset_manifest.
void save_records(const std::vector<InteractionRecord>& log, const std::filesystem::path& path);
std::vector<InteractionRecord> load_records(const std::filesystem::path& path,
                                            const Vocab& vocab, int max_len, int d_img);

void save_pairs(const std::vector<PreferencePair>& pairs, const std::filesystem::path& path);
std::vector<PreferencePair> load_pairs(const std::filesystem::path& path, const Vocab& vocab,
                                       int max_len, int d_img);

void save_examples(const std::vector<DecoderExample>& examples,
                   const std::filesystem::path& path);
std::vector<DecoderExample> load_examples(const std::filesystem::path& path, const Vocab& vocab,
                                          int max_len, int d_img);

// FNV-1a hash of a file's bytes, as stored in dataset manifests.
std::uint64_t file_hash(const std::filesystem::path& path);

// Writes <dataset>.manifest.json next to the dataset file.
void write_dataset_manifest(const std::filesystem::path& dataset_path, const std::string& kind,
                            std::size_t count, std::uint64_t world_seed,
                            const std::string& extra_json = {});

} // namespace pivot
