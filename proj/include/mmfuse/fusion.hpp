#pragma once

#include <cmath>

#include "mmfuse/ops.hpp"

// Inter-modal integration: bidirectional scaled dot-product attention over the
// two capsule sets, then iterative agreement routing of the attended capsules
// into a joint capsule representation.

namespace mmfuse {

// One projection triple per direction; scale is fixed at 1/sqrt(d_p).
template <class Real>
struct AttentionParamRefs {
    VarPtr<Real> t2i_query, t2i_key, t2i_value;  // text queries attend over image capsules
    VarPtr<Real> i2t_query, i2t_key, i2t_value;  // image queries attend over text capsules
};

template <class Real>
struct AttentionResult {
    VarPtr<Real> text_attended;   // T + context, shape [N_p x d_p]
    VarPtr<Real> image_attended;  // I + context, shape [N_p x d_p]
    VarPtr<Real> attn_text_to_image;  // row-stochastic [N_p x N_p]
    VarPtr<Real> attn_image_to_text;  // row-stochastic [N_p x N_p]
};

// score_ij = <Wq t_i, Wk v_j> / sqrt(d_p); alpha = softmax over j;
// context_i = sum_j alpha_ij (Wv v_j); output_i = t_i + context_i.
// The image direction runs the mirror computation with its own projections.
template <class Real>
AttentionResult<Real> contextual_attention(Tape<Real>* tape, const VarPtr<Real>& text_caps,
                                           const VarPtr<Real>& image_caps,
                                           const AttentionParamRefs<Real>& params) {
    detail::require_rank(text_caps, 2, "contextual_attention", "text capsules");
    detail::require_rank(image_caps, 2, "contextual_attention", "image capsules");
    if (text_caps->value.extent(1) != image_caps->value.extent(1)) {
        detail::mismatch("contextual_attention", text_caps, "text capsules", image_caps,
                         "image capsules");
    }
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(text_caps->value.extent(1)));

    auto attend = [&](const VarPtr<Real>& queries_in, const VarPtr<Real>& keys_in,
                      const VarPtr<Real>& wq, const VarPtr<Real>& wk, const VarPtr<Real>& wv) {
        auto q = matmul_rows(tape, queries_in, wq);
        auto k = matmul_rows(tape, keys_in, wk);
        auto v = matmul_rows(tape, keys_in, wv);
        auto scores = scaled_scores(tape, q, k, scale);
        auto alpha = softmax_rows(tape, scores);
        auto context = matmul_rows(tape, alpha, v);
        return std::pair{add(tape, queries_in, context), alpha};
    };

    AttentionResult<Real> result;
    auto [t_att, a_t2i] =
        attend(text_caps, image_caps, params.t2i_query, params.t2i_key, params.t2i_value);
    auto [i_att, a_i2t] =
        attend(image_caps, text_caps, params.i2t_query, params.i2t_key, params.i2t_value);
    result.text_attended = t_att;
    result.image_attended = i_att;
    result.attn_text_to_image = a_t2i;
    result.attn_image_to_text = a_i2t;
    return result;
}

template <class Real>
struct RoutingResult {
    VarPtr<Real> capsules;      // [K x d_out], every row norm < 1
    VarPtr<Real> coefficients;  // row-stochastic [n_in x K], final iteration
};

// Agreement routing over the stacked capsules. transform is the per-pair map
// tensor [n_in x K x d_p x d_out]. Logits start at zero; each iteration
// renormalizes, mixes, squashes, and (except after the last squash) adds the
// prediction/output agreement back into the logits. Gradients flow through
// the fully unrolled loop.
template <class Real>
RoutingResult<Real> dynamic_routing(Tape<Real>* tape, const VarPtr<Real>& capsules,
                                    const VarPtr<Real>& transform, std::size_t iterations) {
    if (iterations < 1) {
        throw ConfigError("dynamic_routing: iterations must be >= 1, got " +
                          std::to_string(iterations));
    }
    auto uhat = routing_uhat(tape, transform, capsules);
    const std::size_t n_in = uhat->value.extent(0);
    const std::size_t K = uhat->value.extent(1);

    auto logits = make_var(Tensor<Real>::zeros({n_in, K}), tape != nullptr);
    VarPtr<Real> coeffs, outputs;
    for (std::size_t it = 0; it < iterations; ++it) {
        coeffs = softmax_rows(tape, logits);
        auto mixed = route_mix(tape, coeffs, uhat);
        outputs = squash_rows(tape, mixed);
        if (it + 1 < iterations) {
            auto agreement = route_agree(tape, uhat, outputs);
            logits = add(tape, logits, agreement);
        }
    }
    return {outputs, coeffs};
}

// Copies of the fusion internals for invariant checks and reporting.
template <class Real>
struct FusionTrace {
    Tensor<Real> attn_text_to_image;
    Tensor<Real> attn_image_to_text;
    Tensor<Real> routing_coefficients;
    Tensor<Real> routed_capsules;  // [K x d_out] before flattening
    Tensor<Real> pooled;           // f
    Tensor<Real> joint;            // Z
};

template <class Real>
struct FusionResult {
    VarPtr<Real> joint;   // Z: flattened routed capsules, [K * d_out]
    VarPtr<Real> pooled;  // f: mean attended text || mean attended image, [2 * d_p]
};

// Full inter-modal step: attention, per-modality mean pooling into f (text
// half first), and routing of the stacked attended capsules (text rows first)
// into Z.
template <class Real>
FusionResult<Real> fuse(Tape<Real>* tape, const VarPtr<Real>& text_caps,
                        const VarPtr<Real>& image_caps, const AttentionParamRefs<Real>& attn,
                        const VarPtr<Real>& transform, std::size_t iterations,
                        FusionTrace<Real>* trace = nullptr) {
    auto att = contextual_attention(tape, text_caps, image_caps, attn);
    auto pooled_text = mean_rows(tape, att.text_attended);
    auto pooled_image = mean_rows(tape, att.image_attended);
    auto pooled = concat(tape, pooled_text, pooled_image);

    auto stacked = vstack(tape, att.text_attended, att.image_attended);
    auto routed = dynamic_routing(tape, stacked, transform, iterations);
    const std::size_t flat = routed.capsules->value.numel();
    auto joint = reshape(tape, routed.capsules, {flat});

    if (trace) {
        trace->attn_text_to_image = att.attn_text_to_image->value;
        trace->attn_image_to_text = att.attn_image_to_text->value;
        trace->routing_coefficients = routed.coefficients->value;
        trace->routed_capsules = routed.capsules->value;
        trace->pooled = pooled->value;
        trace->joint = joint->value;
    }
    return {joint, pooled};
}

}  // namespace mmfuse
