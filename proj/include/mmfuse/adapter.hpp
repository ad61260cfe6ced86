#pragma once

#include "mmfuse/ops.hpp"

namespace mmfuse {

// Modality adapter: affine map of the raw feature vector into n_caps * caps_dim
// values, reshaped row-major so capsule i holds affine outputs
// [caps_dim * i, caps_dim * (i + 1)).
template <class Real>
VarPtr<Real> adapt_capsules(Tape<Real>* tape, const VarPtr<Real>& weight,
                            const VarPtr<Real>& bias, const VarPtr<Real>& raw,
                            std::size_t n_caps, std::size_t caps_dim) {
    auto flat = affine(tape, weight, bias, raw);
    return reshape(tape, flat, {n_caps, caps_dim});
}

}  // namespace mmfuse
