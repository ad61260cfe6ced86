#include "mmfuse/metrics.hpp"

#include <cmath>

#include "mmfuse/errors.hpp"

namespace mmfuse {

double round2(double percent) { return std::round(percent * 100.0) / 100.0; }

namespace {

// Positive-class F1 given the counts seen from that class's point of view.
double f1_of(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
    const double p = (tp + fp) ? double(tp) / double(tp + fp) : 0.0;
    const double r = (tp + fn) ? double(tp) / double(tp + fn) : 0.0;
    return (p + r > 0.0) ? 2.0 * p * r / (p + r) : 0.0;
}

}  // namespace

Metrics Metrics::from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn,
                             std::uint64_t tn) {
    Metrics m;
    m.tp = tp;
    m.fp = fp;
    m.fn = fn;
    m.tn = tn;
    const std::uint64_t total = m.total();
    if (total == 0) throw ValidationError("Metrics: no observations");

    m.accuracy = 100.0 * double(tp + tn) / double(total);
    if (tp + fp == 0) {
        m.precision = 0.0;
        m.degenerate_precision = true;
    } else {
        m.precision = 100.0 * double(tp) / double(tp + fp);
    }
    if (tp + fn == 0) {
        m.recall = 0.0;
        m.degenerate_recall = true;
    } else {
        m.recall = 100.0 * double(tp) / double(tp + fn);
    }
    m.f1 = (m.precision + m.recall > 0.0)
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    // Class 0 plays the positive role with the counts relabelled.
    m.macro_f1 = 100.0 * (f1_of(tp, fp, fn) + f1_of(tn, fn, fp)) / 2.0;
    return m;
}

Metrics evaluate_predictions(const std::vector<std::pair<int, int>>& pred_label) {
    if (pred_label.empty()) throw ValidationError("evaluate_predictions: no predictions");
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (const auto& [pred, label] : pred_label) {
        if (pred == 1 && label == 1) ++tp;
        else if (pred == 1 && label == 0) ++fp;
        else if (pred == 0 && label == 1) ++fn;
        else if (pred == 0 && label == 0) ++tn;
        else throw ValidationError("evaluate_predictions: labels must be 0 or 1");
    }
    return Metrics::from_counts(tp, fp, fn, tn);
}

}  // namespace mmfuse
