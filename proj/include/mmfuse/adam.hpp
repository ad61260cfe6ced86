#pragma once

#include <cmath>
#include <map>
#include <string>

#include "mmfuse/param_store.hpp"

namespace mmfuse {

// Adam with bias correction. Moments live per parameter entry and are zero at
// t = 0; gradients are left untouched so the caller decides when to zero them.
template <class Real>
class AdamState {
public:
    explicit AdamState(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
        : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

    double beta1() const { return beta1_; }
    double beta2() const { return beta2_; }
    double epsilon() const { return epsilon_; }
    std::uint64_t timestep() const { return t_; }

    void step(ParamStore<Real>& params, Real lr) {
        if (moments_.empty()) {
            params.for_each([this](const std::string& name, Variable<Real>& v) {
                moments_.emplace(name, Moments{Tensor<Real>::zeros(v.value.shape()),
                                               Tensor<Real>::zeros(v.value.shape())});
            });
        } else if (moments_.size() != params.size()) {
            throw ValidationError("AdamState: parameter set changed between steps");
        }

        t_ += 1;
        const Real b1 = Real(beta1_);
        const Real b2 = Real(beta2_);
        const Real corr1 = Real(1.0 / (1.0 - std::pow(beta1_, double(t_))));
        const Real corr2 = Real(1.0 / (1.0 - std::pow(beta2_, double(t_))));
        const Real eps = Real(epsilon_);

        params.for_each([&](const std::string& name, Variable<Real>& v) {
            auto it = moments_.find(name);
            if (it == moments_.end() || !it->second.m.same_shape(v.value)) {
                throw ValidationError("AdamState: entry '" + name +
                                      "' does not match optimizer state");
            }
            Tensor<Real>& m = it->second.m;
            Tensor<Real>& w = it->second.v;
            const std::size_t n = v.value.numel();
            Real* pd = v.value.data();
            const Real* gd = v.grad.data();
            Real* md = m.data();
            Real* wd = w.data();
            for (std::size_t i = 0; i < n; ++i) {
                const Real g = gd[i];
                md[i] = b1 * md[i] + (Real(1) - b1) * g;
                wd[i] = b2 * wd[i] + (Real(1) - b2) * g * g;
                const Real mhat = md[i] * corr1;
                const Real vhat = wd[i] * corr2;
                pd[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        });
    }

private:
    struct Moments {
        Tensor<Real> m;
        Tensor<Real> v;
    };

    double beta1_;
    double beta2_;
    double epsilon_;
    std::uint64_t t_ = 0;
    std::map<std::string, Moments> moments_;
};

}  // namespace mmfuse
