#pragma once

#include <array>
#include <string>

#include "mmfuse/adapter.hpp"
#include "mmfuse/dataset.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/head.hpp"
#include "mmfuse/param_store.hpp"

namespace mmfuse {

// The six trainable configurations of the ablation grid.
enum class AblationMode {
    text_simple,
    text_prompt,
    text_prompt_variants,
    text_prompt_finetune,
    image_only,
    fusion,
};

inline constexpr std::array<AblationMode, 6> kAblationModes = {
    AblationMode::text_simple,        AblationMode::text_prompt,
    AblationMode::text_prompt_variants, AblationMode::text_prompt_finetune,
    AblationMode::image_only,         AblationMode::fusion,
};

inline std::string to_string(AblationMode mode) {
    switch (mode) {
        case AblationMode::text_simple: return "text-only/simple";
        case AblationMode::text_prompt: return "text-only/prompt";
        case AblationMode::text_prompt_variants: return "text-only/prompt-variants";
        case AblationMode::text_prompt_finetune: return "text-only/prompt-finetune";
        case AblationMode::image_only: return "image-only";
        case AblationMode::fusion: return "contextual-attention-fusion";
    }
    return "?";
}

inline AblationMode parse_ablation_mode(const std::string& tag) {
    for (AblationMode m : kAblationModes) {
        if (to_string(m) == tag) return m;
    }
    throw ValidationError("unknown ablation mode '" + tag + "'");
}

struct ModelConfig {
    AblationMode mode = AblationMode::fusion;
    std::size_t d_text = 768;
    std::size_t d_image = 2048;
    std::size_t n_caps = 8;    // primary capsules per modality
    std::size_t caps_dim = 16;
    std::size_t out_caps = 4;  // routed capsules
    std::size_t out_dim = 16;
    std::size_t routing_iterations = 3;
    std::size_t rnn_units = 30;
    std::size_t fc_units = 100;
    double dropout = 0.5;

    bool uses_text() const { return mode != AblationMode::image_only; }
    bool uses_image() const {
        return mode == AblationMode::image_only || mode == AblationMode::fusion;
    }
    bool has_refine() const { return mode == AblationMode::text_prompt_finetune; }
    bool is_fusion() const { return mode == AblationMode::fusion; }

    // Number of capsules entering routing: both modality sets under fusion,
    // one set otherwise (attention skipped, capsules pass through unchanged).
    std::size_t routing_inputs() const { return is_fusion() ? 2 * n_caps : n_caps; }
    std::size_t pooled_dim() const { return is_fusion() ? 2 * caps_dim : caps_dim; }
    std::size_t joint_dim() const { return out_caps * out_dim; }

    void validate() const {
        if (d_text < 1 || d_image < 1 || n_caps < 1 || caps_dim < 1 || out_caps < 1 ||
            out_dim < 1 || rnn_units < 1 || fc_units < 1) {
            throw ConfigError("ModelConfig: all sizes must be positive");
        }
        if (routing_iterations < 1) {
            throw ConfigError("ModelConfig: routing_iterations must be >= 1");
        }
        if (dropout < 0.0 || dropout >= 1.0) {
            throw ConfigError("ModelConfig: dropout must lie in [0, 1)");
        }
    }
};

struct Prediction {
    int label = 0;
    double prob_informative = 0.0;
    std::array<double, 2> probs{0.0, 0.0};
};

// The end-to-end classifier: modality adapters, inter-modal fusion (full mode)
// or pass-through capsules (unimodal modes), and the recurrent head.
template <class Real>
class Model {
public:
    Model(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        register_params();
        store_.init(seed);
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<Real>& params() { return store_; }
    const ParamStore<Real>& params() const { return store_; }

    // Live handles on the fusion products, for verification losses that probe
    // Z and f directly in addition to the classifier output.
    struct FusionVars {
        VarPtr<Real> joint;
        VarPtr<Real> pooled;
    };

    // Returns class probabilities [2]. The caller owns the tape; a null tape
    // runs forward-only. Train mode requires a dropout stream.
    VarPtr<Real> forward(Tape<Real>* tape, const Tensor<Real>& text_emb,
                         const Tensor<Real>& image_emb, RunMode mode, Rng* dropout_rng = nullptr,
                         FusionTrace<Real>* trace = nullptr,
                         FusionVars* fusion_vars = nullptr) const {
        if (cfg_.is_fusion()) {
            auto caps_t = adapt_modality(tape, text_emb, /*text=*/true);
            auto caps_i = adapt_modality(tape, image_emb, /*text=*/false);
            auto fused = fuse(tape, caps_t, caps_i, attention_refs(), store_.var(kRouting),
                              cfg_.routing_iterations, trace);
            if (fusion_vars) *fusion_vars = {fused.joint, fused.pooled};
            auto joint_caps = reshape(tape, fused.joint, {cfg_.out_caps, cfg_.out_dim});
            return predict_from(tape, joint_caps, fused.pooled, mode, dropout_rng);
        }

        // Unimodal: the modality's capsules pass through unattended and pool
        // directly into f.
        const bool text = cfg_.uses_text();
        auto caps = adapt_modality(tape, text ? text_emb : image_emb, text);
        auto pooled = mean_rows(tape, caps);
        auto routed = dynamic_routing(tape, caps, store_.var(kRouting), cfg_.routing_iterations);
        if (trace) {
            trace->routing_coefficients = routed.coefficients->value;
            trace->routed_capsules = routed.capsules->value;
            trace->pooled = pooled->value;
            trace->joint = routed.capsules->value;
        }
        if (fusion_vars) {
            auto flat = reshape(tape, routed.capsules, {routed.capsules->value.numel()});
            *fusion_vars = {flat, pooled};
        }
        return predict_from(tape, routed.capsules, pooled, mode, dropout_rng);
    }

    // Eval-mode single-record inference; ties on exact probability equality
    // resolve to label 0.
    Prediction predict_sentiment(const SampleRecord& rec) const {
        check_record_dims(rec);
        auto probs = forward(nullptr, to_tensor(rec.text_embedding),
                             to_tensor(rec.image_embedding), RunMode::eval);
        Prediction p;
        p.probs = {double(probs->value[0]), double(probs->value[1])};
        p.label = p.probs[1] > p.probs[0] ? 1 : 0;
        p.prob_informative = p.probs[1];
        return p;
    }

    void check_record_dims(const SampleRecord& rec) const {
        if (cfg_.uses_text() && rec.text_embedding.size() != cfg_.d_text) {
            throw DimensionError("record '" + rec.id + "': text embedding dim " +
                                 std::to_string(rec.text_embedding.size()) + ", model expects " +
                                 std::to_string(cfg_.d_text));
        }
        if (cfg_.uses_image() && rec.image_embedding.size() != cfg_.d_image) {
            throw DimensionError("record '" + rec.id + "': image embedding dim " +
                                 std::to_string(rec.image_embedding.size()) +
                                 ", model expects " + std::to_string(cfg_.d_image));
        }
    }

    static Tensor<Real> to_tensor(const std::vector<float>& v) {
        if (v.empty()) return Tensor<Real>({1});  // unused modality placeholder
        Tensor<Real> t({v.size()});
        for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<Real>(v[i]);
        return t;
    }

private:
    static constexpr const char* kRouting = "routing.transform";

    void register_params() {
        const std::size_t caps_total = cfg_.n_caps * cfg_.caps_dim;
        if (cfg_.uses_text()) {
            store_.add("adapter.text.weight", {cfg_.d_text, caps_total}, InitKind::glorot);
            store_.add("adapter.text.bias", {caps_total}, InitKind::zero);
            if (cfg_.has_refine()) {
                store_.add("adapter.text.refine", {cfg_.d_text, cfg_.d_text},
                           InitKind::identity);
            }
        }
        if (cfg_.uses_image()) {
            store_.add("adapter.image.weight", {cfg_.d_image, caps_total}, InitKind::glorot);
            store_.add("adapter.image.bias", {caps_total}, InitKind::zero);
        }
        if (cfg_.is_fusion()) {
            for (const char* dir : {"t2i", "i2t"}) {
                for (const char* proj : {"wq", "wk", "wv"}) {
                    store_.add(std::string("attention.") + dir + "." + proj,
                               {cfg_.caps_dim, cfg_.caps_dim}, InitKind::glorot);
                }
            }
        }
        store_.add(kRouting, {cfg_.routing_inputs(), cfg_.out_caps, cfg_.caps_dim, cfg_.out_dim},
                   InitKind::glorot);
        store_.add("head.rnn.wx", {cfg_.out_dim, cfg_.rnn_units}, InitKind::glorot);
        store_.add("head.rnn.wh", {cfg_.rnn_units, cfg_.rnn_units}, InitKind::glorot);
        store_.add("head.rnn.bias", {cfg_.rnn_units}, InitKind::zero);
        store_.add("head.fc.weight", {cfg_.rnn_units + cfg_.pooled_dim(), cfg_.fc_units},
                   InitKind::glorot);
        store_.add("head.fc.bias", {cfg_.fc_units}, InitKind::zero);
        store_.add("head.out.weight", {cfg_.fc_units, 2}, InitKind::glorot);
        store_.add("head.out.bias", {2}, InitKind::zero);
    }

    AttentionParamRefs<Real> attention_refs() const {
        AttentionParamRefs<Real> refs;
        refs.t2i_query = store_.var("attention.t2i.wq");
        refs.t2i_key = store_.var("attention.t2i.wk");
        refs.t2i_value = store_.var("attention.t2i.wv");
        refs.i2t_query = store_.var("attention.i2t.wq");
        refs.i2t_key = store_.var("attention.i2t.wk");
        refs.i2t_value = store_.var("attention.i2t.wv");
        return refs;
    }

    HeadParamRefs<Real> head_refs() const {
        HeadParamRefs<Real> refs;
        refs.rnn_wx = store_.var("head.rnn.wx");
        refs.rnn_wh = store_.var("head.rnn.wh");
        refs.rnn_bias = store_.var("head.rnn.bias");
        refs.fc_weight = store_.var("head.fc.weight");
        refs.fc_bias = store_.var("head.fc.bias");
        refs.out_weight = store_.var("head.out.weight");
        refs.out_bias = store_.var("head.out.bias");
        return refs;
    }

    VarPtr<Real> adapt_modality(Tape<Real>* tape, const Tensor<Real>& emb, bool text) const {
        const std::size_t want = text ? cfg_.d_text : cfg_.d_image;
        if (emb.rank() != 1 || emb.numel() != want) {
            throw DimensionError(std::string(text ? "text" : "image") + " embedding " +
                                 emb.shape_string() + " does not match configured dim " +
                                 std::to_string(want));
        }
        auto x = make_var(emb, tape != nullptr);
        if (text && cfg_.has_refine()) {
            x = matvec(tape, store_.var("adapter.text.refine"), x);
        }
        const char* prefix = text ? "adapter.text" : "adapter.image";
        return adapt_capsules(tape, store_.var(std::string(prefix) + ".weight"),
                              store_.var(std::string(prefix) + ".bias"), x, cfg_.n_caps,
                              cfg_.caps_dim);
    }

    VarPtr<Real> predict_from(Tape<Real>* tape, const VarPtr<Real>& joint_caps,
                              const VarPtr<Real>& pooled, RunMode mode, Rng* rng) const {
        return head_predict(tape, joint_caps, pooled, head_refs(), cfg_.dropout, mode, rng);
    }

    ModelConfig cfg_;
    ParamStore<Real> store_;
};

template <class Real>
Tensor<Real> onehot_label(int label) {
    if (label != 0 && label != 1) {
        throw ValidationError("label must be 0 or 1, got " + std::to_string(label));
    }
    Tensor<Real> t({2});
    t[label] = Real(1);
    return t;
}

}  // namespace mmfuse
