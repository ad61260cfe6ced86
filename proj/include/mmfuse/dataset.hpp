#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mmfuse/errors.hpp"

namespace mmfuse {

// One paired observation. Label 1 means informative, 0 non-informative.
struct SampleRecord {
    std::string id;
    std::vector<float> text_embedding;
    std::vector<float> image_embedding;
    int label = 0;
    std::optional<std::string> raw_text;
};

struct Dataset {
    std::vector<SampleRecord> records;
    std::size_t d_text = 0;
    std::size_t d_image = 0;
    std::string name;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
};

struct SplitSpec {
    double train = 0.70;
    double val = 0.15;
    double test = 0.15;

    void validate() const;
};

struct SplitResult {
    Dataset train;
    Dataset val;
    Dataset test;
};

enum class SynthStructure { unimodal_text, unimodal_image, xor_bits };

SynthStructure parse_synth_structure(const std::string& tag);
std::string to_string(SynthStructure s);

// JSON Lines manifest: one object per line with keys `id`, `label`,
// `text_embedding`, `image_embedding` and optional `raw_text`.
Dataset load_manifest(const std::filesystem::path& path);
void save_manifest(const Dataset& ds, const std::filesystem::path& path);

// Lenient record reader for pipelines that fill embeddings in later (the
// embed command); empty embedding arrays are allowed here.
std::vector<SampleRecord> load_manifest_records(const std::filesystem::path& path);
void save_records(const std::vector<SampleRecord>& records, const std::filesystem::path& path);

// Seeded, label-stratified split. Overall part sizes are floor(n * fraction)
// for val and test with the remainder going to train; per-class allocation
// uses largest-remainder rounding so every part stays within one sample of
// the dataset's class balance.
SplitResult split(const Dataset& ds, const SplitSpec& spec, std::uint64_t seed);

// Synthetic paired-embedding generator. Each modality has two unit-norm
// cluster centers at distance 2 (antipodal); per-modality bits (a, b) choose
// the centers and the structure decides the label: a, b, or a XOR b. Classes
// come out balanced within one sample.
Dataset synth_generate(std::size_t n, std::size_t d_text, std::size_t d_image,
                       SynthStructure structure, double noise_sigma, std::uint64_t seed);

// The two cluster centers a modality uses (center of bit 0, then bit 1).
std::pair<std::vector<float>, std::vector<float>> synth_modality_centers(std::size_t dim,
                                                                         std::uint64_t seed,
                                                                         const std::string& tag);

// Seeded per-epoch shuffle chunked into batches; all batches have size
// batch_size except a possibly smaller final one.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t epoch_seed);

}  // namespace mmfuse
