#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mmfuse/errors.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

// Task template wrapped around each post before embedding. Must contain
// exactly one `{text}` placeholder.
class PromptTemplate {
public:
    explicit PromptTemplate(std::string text);

    const std::string& text() const { return text_; }

    static PromptTemplate identity() { return PromptTemplate("{text}"); }

    // The default crisis-post task prompt.
    static PromptTemplate default_template();

private:
    std::string text_;
};

// Substitutes the post into the template; the text must be non-empty after
// trimming whitespace.
std::string compose_prompt(const PromptTemplate& tpl, const std::string& text);

// Deterministic rule-based variant set: original, lowercased,
// punctuation-stripped, token-rotated (seeded offset), truncated to the first
// 23 tokens. Duplicates removed keeping first occurrence; the original is
// always first.
std::vector<std::string> generate_variants(const std::string& text, std::uint64_t seed);

inline constexpr std::size_t kVariantTokenLimit = 23;

// Anything that maps a string to a fixed-width real vector.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::string name() const = 0;
    virtual std::size_t output_dim() const = 0;
    virtual bool deterministic() const = 0;
    virtual std::vector<float> embed(const std::string& input) const = 0;
};

// Hash-seeded stand-in for a real encoder: FNV-1a of the UTF-8 bytes seeds a
// uniform(-1, 1) draw per dimension, then the vector is L2-normalized.
// Identical strings give bit-identical vectors.
class MockEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit MockEmbeddingProvider(std::size_t dim);

    std::string name() const override { return "mock"; }
    std::size_t output_dim() const override { return dim_; }
    bool deterministic() const override { return true; }
    std::vector<float> embed(const std::string& input) const override;

private:
    std::size_t dim_;
};

// Client for the embedding wire contract: POST /embed with body
// {"model": string, "inputs": [string, ...]} answered by
// {"vectors": [[number, ...], ...]}, one vector per input with a constant
// dimension per model. Timeout/retry policy is deployment configuration and
// intentionally not baked in here.
class HttpEmbeddingProvider final : public EmbeddingProvider {
public:
    HttpEmbeddingProvider(std::string host, int port, std::string model, std::size_t dim);

    std::string name() const override { return "http:" + model_; }
    std::size_t output_dim() const override { return dim_; }
    bool deterministic() const override { return false; }
    std::vector<float> embed(const std::string& input) const override;

private:
    std::string host_;
    int port_;
    std::string model_;
    std::size_t dim_;
};

enum class TextFeatureMode { simple, prompt, prompt_variants, prompt_finetune };

TextFeatureMode parse_text_feature_mode(const std::string& tag);
std::string to_string(TextFeatureMode mode);

// Produces the raw text feature vector for one post. simple embeds the text
// directly; prompt embeds the composed prompt; prompt_variants mean-pools the
// embeddings of the composed prompt over the variant set; prompt_finetune
// additionally applies the refinement matrix when one is supplied (the
// trainable matrix lives in the model and is the identity at initialization).
std::vector<float> text_features(TextFeatureMode mode, const PromptTemplate& tpl,
                                 const std::string& text, const EmbeddingProvider& provider,
                                 std::uint64_t variant_seed,
                                 const Tensor<float>* refine = nullptr);

}  // namespace mmfuse
