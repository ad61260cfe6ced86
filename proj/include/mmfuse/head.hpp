#pragma once

#include "mmfuse/ops.hpp"

// Sentiment head: an Elman recurrence over the routed capsules, one fully
// connected layer with dropout, and a two-class softmax.

namespace mmfuse {

template <class Real>
struct HeadParamRefs {
    VarPtr<Real> rnn_wx;    // [d_out x H_r]
    VarPtr<Real> rnn_wh;    // [H_r x H_r]
    VarPtr<Real> rnn_bias;  // [H_r]
    VarPtr<Real> fc_weight;  // [(H_r + pooled_dim) x fc_units]
    VarPtr<Real> fc_bias;
    VarPtr<Real> out_weight;  // [fc_units x 2]
    VarPtr<Real> out_bias;
};

// h_0 = 0; h_t = tanh(x_t Wx + h_{t-1} Wh + b); returns h_K. The sequence is
// the rows of the routed capsule matrix in index order.
template <class Real>
VarPtr<Real> rnn_integrate(Tape<Real>* tape, const VarPtr<Real>& caps_sequence,
                           const VarPtr<Real>& wx, const VarPtr<Real>& wh,
                           const VarPtr<Real>& bias) {
    detail::require_rank(caps_sequence, 2, "rnn_integrate", "capsule sequence");
    const std::size_t steps = caps_sequence->value.extent(0);
    const std::size_t hidden = wh->value.extent(0);

    auto h = make_var(Tensor<Real>::zeros({hidden}), tape != nullptr);
    for (std::size_t t = 0; t < steps; ++t) {
        auto x_t = row(tape, caps_sequence, t);
        auto pre = add(tape, affine(tape, wx, bias, x_t), matvec(tape, wh, h));
        h = tanh_op(tape, pre);
    }
    return h;
}

// probs = softmax(W2^T dropout(relu(W1^T [h || f] + b1)) + b2)
template <class Real>
VarPtr<Real> head_predict(Tape<Real>* tape, const VarPtr<Real>& joint_caps,
                          const VarPtr<Real>& pooled, const HeadParamRefs<Real>& params,
                          double dropout_rate, RunMode mode, Rng* rng) {
    auto h = rnn_integrate(tape, joint_caps, params.rnn_wx, params.rnn_wh, params.rnn_bias);
    auto u = concat(tape, h, pooled);
    auto hidden = relu(tape, affine(tape, params.fc_weight, params.fc_bias, u));
    auto dropped = dropout(tape, hidden, dropout_rate, mode, rng);
    return softmax(tape, affine(tape, params.out_weight, params.out_bias, dropped));
}

}  // namespace mmfuse
