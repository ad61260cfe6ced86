#include "mmfuse/featurize.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "mmfuse/rng.hpp"

namespace mmfuse {

namespace {

constexpr const char* kPlaceholder = "{text}";

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::vector<std::string> tokenize_ws(const std::string& s) {
    std::vector<std::string> tokens;
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) tokens.push_back(tok);
    return tokens;
}

std::string join(const std::vector<std::string>& tokens, std::size_t count) {
    std::string out;
    for (std::size_t i = 0; i < count && i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

bool is_ascii_punct(unsigned char c) { return c < 128 && std::ispunct(c); }

}  // namespace

PromptTemplate::PromptTemplate(std::string text) : text_(std::move(text)) {
    std::size_t count = 0;
    for (std::size_t pos = text_.find(kPlaceholder); pos != std::string::npos;
         pos = text_.find(kPlaceholder, pos + 1)) {
        ++count;
    }
    if (count != 1) {
        throw ValidationError("PromptTemplate: template must contain exactly one {text} "
                              "placeholder, found " + std::to_string(count));
    }
}

PromptTemplate PromptTemplate::default_template() {
    return PromptTemplate(
        "Task: assess urgency, event type, affected location, and sentiment polarity of this "
        "crisis post: {text}");
}

std::string compose_prompt(const PromptTemplate& tpl, const std::string& text) {
    if (trim(text).empty()) {
        throw ValidationError("compose_prompt: post text is empty");
    }
    std::string out = tpl.text();
    const std::size_t pos = out.find(kPlaceholder);
    out.replace(pos, std::string(kPlaceholder).size(), text);
    return out;
}

std::vector<std::string> generate_variants(const std::string& text, std::uint64_t seed) {
    if (trim(text).empty()) {
        throw ValidationError("generate_variants: post text is empty");
    }

    std::vector<std::string> candidates;
    candidates.push_back(text);

    std::string lowered = text;
    std::transform(lowered.begin(), lowered.end(), lowered.begin(), [](unsigned char c) {
        return static_cast<char>(std::tolower(c));
    });
    candidates.push_back(lowered);

    std::string stripped;
    stripped.reserve(text.size());
    for (unsigned char c : text) {
        if (!is_ascii_punct(c)) stripped.push_back(static_cast<char>(c));
    }
    candidates.push_back(stripped);

    const std::vector<std::string> tokens = tokenize_ws(text);
    if (tokens.size() >= 2) {
        const std::uint64_t span = tokens.size() - 1;
        const std::size_t offset = static_cast<std::size_t>(
            1 + derive_seed(seed, "variant-rotation", fnv1a64(text)) % span);
        std::vector<std::string> rotated(tokens.begin() + offset, tokens.end());
        rotated.insert(rotated.end(), tokens.begin(), tokens.begin() + offset);
        candidates.push_back(join(rotated, rotated.size()));
    } else {
        candidates.push_back(text);
    }

    if (tokens.size() > kVariantTokenLimit) {
        candidates.push_back(join(tokens, kVariantTokenLimit));
    } else {
        candidates.push_back(text);  // truncation is a no-op for short posts
    }

    std::vector<std::string> variants;
    for (auto& c : candidates) {
        if (c.empty()) continue;  // punctuation-only posts can strip to nothing
        if (std::find(variants.begin(), variants.end(), c) == variants.end()) {
            variants.push_back(std::move(c));
        }
    }
    return variants;
}

MockEmbeddingProvider::MockEmbeddingProvider(std::size_t dim) : dim_(dim) {
    if (dim_ == 0) throw ConfigError("MockEmbeddingProvider: output_dim must be positive");
}

std::vector<float> MockEmbeddingProvider::embed(const std::string& input) const {
    if (input.empty()) {
        throw ValidationError("mock embed: input string is empty");
    }
    Rng rng(fnv1a64(input));
    std::vector<float> v(dim_);
    double norm2 = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
        const double x = rng.uniform(-1.0, 1.0);
        v[i] = static_cast<float>(x);
        norm2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t i = 0; i < dim_; ++i) v[i] = static_cast<float>(double(v[i]) * inv);
    return v;
}

TextFeatureMode parse_text_feature_mode(const std::string& tag) {
    if (tag == "simple") return TextFeatureMode::simple;
    if (tag == "prompt") return TextFeatureMode::prompt;
    if (tag == "prompt-variants") return TextFeatureMode::prompt_variants;
    if (tag == "prompt-finetune") return TextFeatureMode::prompt_finetune;
    throw ValidationError("unknown text feature mode '" + tag +
                          "' (expected simple, prompt, prompt-variants or prompt-finetune)");
}

std::string to_string(TextFeatureMode mode) {
    switch (mode) {
        case TextFeatureMode::simple: return "simple";
        case TextFeatureMode::prompt: return "prompt";
        case TextFeatureMode::prompt_variants: return "prompt-variants";
        case TextFeatureMode::prompt_finetune: return "prompt-finetune";
    }
    return "?";
}

namespace {

std::vector<float> apply_refine(const Tensor<float>& refine, const std::vector<float>& x) {
    const std::size_t d = x.size();
    if (refine.rank() != 2 || refine.extent(0) != d || refine.extent(1) != d) {
        throw DimensionError("text_features: refinement matrix " + refine.shape_string() +
                             " does not match embedding dim " + std::to_string(d));
    }
    std::vector<float> y(d, 0.0f);
    for (std::size_t i = 0; i < d; ++i) {
        const float xi = x[i];
        for (std::size_t j = 0; j < d; ++j) y[j] += xi * refine.at(i, j);
    }
    return y;
}

}  // namespace

std::vector<float> text_features(TextFeatureMode mode, const PromptTemplate& tpl,
                                 const std::string& text, const EmbeddingProvider& provider,
                                 std::uint64_t variant_seed, const Tensor<float>* refine) {
    switch (mode) {
        case TextFeatureMode::simple:
            return provider.embed(text);
        case TextFeatureMode::prompt:
            return provider.embed(compose_prompt(tpl, text));
        case TextFeatureMode::prompt_variants: {
            const auto variants = generate_variants(text, variant_seed);
            std::vector<double> acc(provider.output_dim(), 0.0);
            for (const auto& v : variants) {
                const auto e = provider.embed(compose_prompt(tpl, v));
                for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += e[i];
            }
            std::vector<float> mean(acc.size());
            for (std::size_t i = 0; i < acc.size(); ++i) {
                mean[i] = static_cast<float>(acc[i] / double(variants.size()));
            }
            return mean;
        }
        case TextFeatureMode::prompt_finetune: {
            auto e = provider.embed(compose_prompt(tpl, text));
            if (refine) return apply_refine(*refine, e);
            return e;
        }
    }
    throw ValidationError("text_features: unhandled mode");
}

}  // namespace mmfuse
