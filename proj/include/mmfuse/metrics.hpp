#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace mmfuse {

// Confusion counts and percentage metrics for the binary task; the positive
// class is informative (label 1). Percentages are kept at full precision here
// and rounded to two decimals at the reporting boundary. F1 is the
// positive-class F1; macro_f1 averages both classes' F1 for transparency.
struct Metrics {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;

    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double macro_f1 = 0.0;

    // Set when a ratio had an empty denominator and was defined as 0.
    bool degenerate_precision = false;
    bool degenerate_recall = false;

    std::uint64_t total() const { return tp + fp + fn + tn; }

    static Metrics from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn,
                               std::uint64_t tn);
};

// Metrics over explicit (predicted, actual) label pairs.
Metrics evaluate_predictions(const std::vector<std::pair<int, int>>& pred_label);

// Rounding convention used everywhere metrics are reported.
double round2(double percent);

}  // namespace mmfuse
