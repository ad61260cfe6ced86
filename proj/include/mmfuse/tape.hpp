#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

// A value in the computation plus its gradient accumulator. Parameters are
// long-lived Variables owned by a ParamStore; activations are created per
// forward pass and dropped with the tape.
template <class Real>
struct Variable {
    Tensor<Real> value;
    Tensor<Real> grad;  // same shape as value when gradients are tracked, empty otherwise
    std::string name;   // set for parameters, empty for activations

    Variable(Tensor<Real> v, bool with_grad, std::string n = "")
        : value(std::move(v)), name(std::move(n)) {
        if (with_grad) grad = Tensor<Real>::zeros(value.shape());
    }

    bool tracks_grad() const { return !grad.empty(); }
    void zero_grad() { grad.fill(Real(0)); }
};

template <class Real>
using VarPtr = std::shared_ptr<Variable<Real>>;

template <class Real>
VarPtr<Real> make_var(Tensor<Real> value, bool with_grad, std::string name = "") {
    return std::make_shared<Variable<Real>>(std::move(value), with_grad, std::move(name));
}

// Records backward closures in forward order and replays them in reverse.
// Ops that receive a null tape run forward-only and allocate no gradients.
template <class Real>
class Tape {
public:
    void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }

    // Seeds d(out)/d(out) = 1 for a scalar output, then replays the tape.
    void backward(const VarPtr<Real>& out) {
        if (out->value.numel() != 1) {
            throw DimensionError("Tape::backward: output must be scalar, got " +
                                 out->value.shape_string());
        }
        if (!out->tracks_grad()) {
            throw ValidationError("Tape::backward: output does not track gradients");
        }
        out->grad[0] += Real(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

    void clear() { steps_.clear(); }
    std::size_t size() const { return steps_.size(); }

private:
    std::vector<std::function<void()>> steps_;
};

}  // namespace mmfuse
