#pragma once

// Independent loop-level reference implementations used to check the library.
// Everything here is deliberately written against the math, not against the
// library's internals, and must stay free of mmfuse fusion/head includes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace oracles {

using Mat = std::vector<std::vector<double>>;

// y = x W + b by explicit double loop.
inline std::vector<double> affine(const std::vector<double>& w, const std::vector<double>& b,
                                  const std::vector<double>& x, std::size_t m, std::size_t n) {
    std::vector<double> y(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double acc = b[j];
        for (std::size_t i = 0; i < m; ++i) acc += x[i] * w[i * n + j];
        y[j] = acc;
    }
    return y;
}

// Scalar Adam with bias correction.
struct ScalarAdam {
    double m = 0.0, v = 0.0;
    int t = 0;
    double step(double param, double grad, double lr, double b1, double b2, double eps) {
        t += 1;
        m = b1 * m + (1.0 - b1) * grad;
        v = b2 * v + (1.0 - b2) * grad * grad;
        const double mhat = m / (1.0 - std::pow(b1, t));
        const double vhat = v / (1.0 - std::pow(b2, t));
        return param - lr * mhat / (std::sqrt(vhat) + eps);
    }
};

// One attention direction by naive triple loop: queries from the first
// capsule set, keys/values from the second, residual added at the end.
struct AttentionOut {
    Mat attended;
    Mat alpha;
};

inline AttentionOut attention(const Mat& queries_in, const Mat& keys_in, const Mat& wq,
                              const Mat& wk, const Mat& wv) {
    const std::size_t nq = queries_in.size();
    const std::size_t nk = keys_in.size();
    const std::size_t d = queries_in[0].size();
    const double scale = 1.0 / std::sqrt(double(d));

    auto project = [&](const std::vector<double>& x, const Mat& w) {
        std::vector<double> y(d, 0.0);
        for (std::size_t j = 0; j < d; ++j) {
            for (std::size_t i = 0; i < d; ++i) y[j] += x[i] * w[i][j];
        }
        return y;
    };

    AttentionOut out;
    out.alpha.assign(nq, std::vector<double>(nk, 0.0));
    out.attended.assign(nq, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < nq; ++i) {
        const auto q = project(queries_in[i], wq);
        std::vector<double> scores(nk, 0.0);
        double mx = -1e300;
        for (std::size_t j = 0; j < nk; ++j) {
            const auto k = project(keys_in[j], wk);
            double s = 0.0;
            for (std::size_t m = 0; m < d; ++m) s += q[m] * k[m];
            scores[j] = s * scale;
            mx = std::max(mx, scores[j]);
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < nk; ++j) denom += std::exp(scores[j] - mx);
        for (std::size_t j = 0; j < nk; ++j) out.alpha[i][j] = std::exp(scores[j] - mx) / denom;

        for (std::size_t j = 0; j < nk; ++j) {
            const auto v = project(keys_in[j], wv);
            for (std::size_t m = 0; m < d; ++m) out.attended[i][m] += out.alpha[i][j] * v[m];
        }
        for (std::size_t m = 0; m < d; ++m) out.attended[i][m] += queries_in[i][m];
    }
    return out;
}

// Agreement routing at loop level; records whether coefficient rows were
// normalized at every iteration (the library only exposes the final ones).
struct RoutingOut {
    Mat outputs;
    Mat coefficients;
    bool rows_normalized_every_iteration = true;
};

inline RoutingOut routing(const Mat& caps, const std::vector<Mat>& transforms, std::size_t K,
                          std::size_t d_out, std::size_t iterations) {
    const std::size_t n_in = caps.size();
    const std::size_t d_in = caps[0].size();

    std::vector<Mat> uhat(n_in, Mat(K, std::vector<double>(d_out, 0.0)));
    for (std::size_t i = 0; i < n_in; ++i) {
        for (std::size_t j = 0; j < K; ++j) {
            for (std::size_t p = 0; p < d_in; ++p) {
                for (std::size_t o = 0; o < d_out; ++o) {
                    uhat[i][j][o] += caps[i][p] * transforms[i * K + j][p][o];
                }
            }
        }
    }

    Mat logits(n_in, std::vector<double>(K, 0.0));
    RoutingOut out;
    out.coefficients.assign(n_in, std::vector<double>(K, 0.0));
    out.outputs.assign(K, std::vector<double>(d_out, 0.0));

    for (std::size_t it = 0; it < iterations; ++it) {
        for (std::size_t i = 0; i < n_in; ++i) {
            double mx = -1e300;
            for (std::size_t j = 0; j < K; ++j) mx = std::max(mx, logits[i][j]);
            double denom = 0.0;
            for (std::size_t j = 0; j < K; ++j) denom += std::exp(logits[i][j] - mx);
            double row_sum = 0.0;
            for (std::size_t j = 0; j < K; ++j) {
                out.coefficients[i][j] = std::exp(logits[i][j] - mx) / denom;
                row_sum += out.coefficients[i][j];
            }
            if (std::abs(row_sum - 1.0) > 1e-6) out.rows_normalized_every_iteration = false;
        }

        for (std::size_t j = 0; j < K; ++j) {
            std::vector<double> s(d_out, 0.0);
            for (std::size_t i = 0; i < n_in; ++i) {
                for (std::size_t o = 0; o < d_out; ++o) {
                    s[o] += out.coefficients[i][j] * uhat[i][j][o];
                }
            }
            double n2 = 0.0;
            for (double v : s) n2 += v * v;
            const double alpha = std::sqrt(n2) / (1.0 + n2);
            for (std::size_t o = 0; o < d_out; ++o) out.outputs[j][o] = alpha * s[o];
        }

        if (it + 1 < iterations) {
            for (std::size_t i = 0; i < n_in; ++i) {
                for (std::size_t j = 0; j < K; ++j) {
                    double agree = 0.0;
                    for (std::size_t o = 0; o < d_out; ++o) {
                        agree += uhat[i][j][o] * out.outputs[j][o];
                    }
                    logits[i][j] += agree;
                }
            }
        }
    }
    return out;
}

// Elman recurrence, step by step.
inline std::vector<double> rnn(const Mat& xs, const Mat& wx, const Mat& wh,
                               const std::vector<double>& bias) {
    const std::size_t hidden = wh.size();
    std::vector<double> h(hidden, 0.0);
    for (const auto& x : xs) {
        std::vector<double> pre = bias;
        for (std::size_t i = 0; i < x.size(); ++i) {
            for (std::size_t j = 0; j < hidden; ++j) pre[j] += x[i] * wx[i][j];
        }
        for (std::size_t k = 0; k < hidden; ++k) {
            for (std::size_t j = 0; j < hidden; ++j) pre[j] += h[k] * wh[k][j];
        }
        for (std::size_t j = 0; j < hidden; ++j) h[j] = std::tanh(pre[j]);
    }
    return h;
}

// Brute-force confusion counts over (predicted, actual) pairs.
struct Confusion {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Confusion confusion(const std::vector<std::pair<int, int>>& pred_label) {
    Confusion c;
    for (const auto& [pred, label] : pred_label) {
        c.tp += (pred == 1 && label == 1);
        c.fp += (pred == 1 && label == 0);
        c.fn += (pred == 0 && label == 1);
        c.tn += (pred == 0 && label == 0);
    }
    return c;
}

}  // namespace oracles
