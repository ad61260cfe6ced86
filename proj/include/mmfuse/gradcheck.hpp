#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "mmfuse/param_store.hpp"
#include "mmfuse/tape.hpp"

namespace mmfuse {

// Finite-difference verification of the backward pass. Runs in double
// precision only; the forward closure must be deterministic and must keep
// dropout in eval mode.

struct GradCheckOptions {
    double step = 1e-5;                      // central-difference h
    std::size_t sample_per_tensor = 200;     // elements checked per large tensor
    std::uint64_t sample_seed = 17;          // which elements get checked
};

struct TensorGradReport {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    bool non_finite = false;  // perturbed loss came back NaN/inf
};

struct GradCheckReport {
    std::vector<TensorGradReport> tensors;
    double max_rel_error = 0.0;
    bool any_non_finite = false;

    bool passes(double tolerance) const {
        return !any_non_finite && max_rel_error < tolerance;
    }
};

// forward: builds the loss on the given tape (or forward-only when null).
inline GradCheckReport grad_check(
    const std::function<VarPtr<double>(Tape<double>*)>& forward, ParamStore<double>& params,
    const GradCheckOptions& opts = {}) {
    GradCheckReport report;

    // Analytic gradients.
    params.zero_grads();
    {
        Tape<double> tape;
        auto loss = forward(&tape);
        if (!loss->value.all_finite()) {
            report.any_non_finite = true;
        }
        tape.backward(loss);
    }
    std::map<std::string, Tensor<double>> analytic;
    params.for_each([&](const std::string& name, Variable<double>& v) {
        analytic.emplace(name, v.grad);
    });
    params.zero_grads();

    const double h = opts.step;
    params.for_each([&](const std::string& name, Variable<double>& v) {
        TensorGradReport tr;
        tr.name = name;
        const std::size_t n = v.value.numel();

        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (n > opts.sample_per_tensor) {
            Rng rng(derive_seed(opts.sample_seed, name));
            shuffle(idx, rng);
            idx.resize(opts.sample_per_tensor);
            std::sort(idx.begin(), idx.end());
        }

        const Tensor<double>& ga = analytic.at(name);
        for (std::size_t i : idx) {
            const double saved = v.value[i];
            v.value[i] = saved + h;
            const double lp = forward(nullptr)->value[0];
            v.value[i] = saved - h;
            const double lm = forward(nullptr)->value[0];
            v.value[i] = saved;
            if (!std::isfinite(lp) || !std::isfinite(lm)) {
                tr.non_finite = true;
                report.any_non_finite = true;
                continue;
            }
            const double gn = (lp - lm) / (2.0 * h);
            const double rel =
                std::abs(ga[i] - gn) / std::max(1e-8, std::abs(ga[i]) + std::abs(gn));
            tr.max_rel_error = std::max(tr.max_rel_error, rel);
        }
        tr.checked = idx.size();
        report.max_rel_error = std::max(report.max_rel_error, tr.max_rel_error);
        report.tensors.push_back(std::move(tr));
    });

    return report;
}

}  // namespace mmfuse
