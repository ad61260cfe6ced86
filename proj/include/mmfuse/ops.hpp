#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mmfuse/rng.hpp"
#include "mmfuse/tape.hpp"

// Differentiable operations. Each op computes its output eagerly and, when a
// tape is supplied, records a closure that accumulates gradients into its
// operands. A null tape runs the op forward-only.

namespace mmfuse {

enum class RunMode { train, eval };

inline constexpr double kLogEps = 1e-12;  // clamp inside cross-entropy log

namespace detail {

template <class Real>
std::string operand_desc(const VarPtr<Real>& v, const char* role) {
    std::string s = role;
    if (!v->name.empty()) s += " '" + v->name + "'";
    s += " " + v->value.shape_string();
    return s;
}

template <class Real>
void require_rank(const VarPtr<Real>& v, std::size_t rank, const char* op, const char* role) {
    if (v->value.rank() != rank) {
        throw DimensionError(std::string(op) + ": " + operand_desc(v, role) + " must have rank " +
                             std::to_string(rank));
    }
}

template <class Real>
[[noreturn]] void mismatch(const char* op, const VarPtr<Real>& a, const char* role_a,
                           const VarPtr<Real>& b, const char* role_b) {
    throw DimensionError(std::string(op) + ": " + operand_desc(a, role_a) +
                         " incompatible with " + operand_desc(b, role_b));
}

// Shared softmax kernel over one contiguous row, max-subtracted for stability.
// Outputs are floored at the smallest normal value so they stay strictly
// positive even when the exponentials underflow; the floor is far below the
// 1e-6 normalization tolerance.
template <class Real>
void softmax_row(const Real* x, Real* p, std::size_t n) {
    Real mx = x[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    Real sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = std::exp(x[i] - mx);
        sum += p[i];
    }
    const Real inv = Real(1) / sum;
    const Real floor = std::numeric_limits<Real>::min();
    for (std::size_t i = 0; i < n; ++i) p[i] = std::max(p[i] * inv, floor);
}

// d(softmax)/dx given output p and upstream g: dx_i = p_i * (g_i - sum_j g_j p_j).
template <class Real>
void softmax_row_backward(const Real* p, const Real* g, Real* dx, std::size_t n) {
    Real dot = 0;
    for (std::size_t i = 0; i < n; ++i) dot += g[i] * p[i];
    for (std::size_t i = 0; i < n; ++i) dx[i] += p[i] * (g[i] - dot);
}

}  // namespace detail

// y[j] = sum_i x[i] * W[i,j] + b[j]
template <class Real>
VarPtr<Real> affine(Tape<Real>* tape, const VarPtr<Real>& W, const VarPtr<Real>& b,
                    const VarPtr<Real>& x) {
    detail::require_rank(W, 2, "affine", "weight");
    detail::require_rank(b, 1, "affine", "bias");
    detail::require_rank(x, 1, "affine", "input");
    const std::size_t m = W->value.extent(0);
    const std::size_t n = W->value.extent(1);
    if (x->value.numel() != m) detail::mismatch("affine", W, "weight", x, "input");
    if (b->value.numel() != n) detail::mismatch("affine", W, "weight", b, "bias");

    Tensor<Real> y({n});
    const Real* wd = W->value.data();
    const Real* xd = x->value.data();
    Real* yd = y.data();
    for (std::size_t j = 0; j < n; ++j) yd[j] = b->value[j];
    for (std::size_t i = 0; i < m; ++i) {
        const Real xi = xd[i];
        const Real* wrow = wd + i * n;
        for (std::size_t j = 0; j < n; ++j) yd[j] += xi * wrow[j];
    }
    require_finite(y, "affine");

    auto out = make_var(std::move(y), tape != nullptr);
    if (tape) {
        tape->record([W, b, x, out, m, n] {
            const Real* g = out->grad.data();
            if (b->tracks_grad()) {
                Real* gb = b->grad.data();
                for (std::size_t j = 0; j < n; ++j) gb[j] += g[j];
            }
            const Real* wd = W->value.data();
            const Real* xd = x->value.data();
            if (W->tracks_grad()) {
                Real* gw = W->grad.data();
                for (std::size_t i = 0; i < m; ++i) {
                    const Real xi = xd[i];
                    Real* growi = gw + i * n;
                    for (std::size_t j = 0; j < n; ++j) growi[j] += xi * g[j];
                }
            }
            if (x->tracks_grad()) {
                Real* gx = x->grad.data();
                for (std::size_t i = 0; i < m; ++i) {
                    const Real* wrow = wd + i * n;
                    Real acc = 0;
                    for (std::size_t j = 0; j < n; ++j) acc += g[j] * wrow[j];
                    gx[i] += acc;
                }
            }
        });
    }
    return out;
}

// y = x * W (affine without bias)
template <class Real>
VarPtr<Real> matvec(Tape<Real>* tape, const VarPtr<Real>& W, const VarPtr<Real>& x) {
    detail::require_rank(W, 2, "matvec", "weight");
    detail::require_rank(x, 1, "matvec", "input");
    const std::size_t m = W->value.extent(0);
    const std::size_t n = W->value.extent(1);
    if (x->value.numel() != m) detail::mismatch("matvec", W, "weight", x, "input");

    Tensor<Real> y({n});
    const Real* wd = W->value.data();
    const Real* xd = x->value.data();
    Real* yd = y.data();
    for (std::size_t i = 0; i < m; ++i) {
        const Real xi = xd[i];
        const Real* wrow = wd + i * n;
        for (std::size_t j = 0; j < n; ++j) yd[j] += xi * wrow[j];
    }
    require_finite(y, "matvec");

    auto out = make_var(std::move(y), tape != nullptr);
    if (tape) {
        tape->record([W, x, out, m, n] {
            const Real* g = out->grad.data();
            const Real* wd = W->value.data();
            const Real* xd = x->value.data();
            if (W->tracks_grad()) {
                Real* gw = W->grad.data();
                for (std::size_t i = 0; i < m; ++i) {
                    const Real xi = xd[i];
                    Real* growi = gw + i * n;
                    for (std::size_t j = 0; j < n; ++j) growi[j] += xi * g[j];
                }
            }
            if (x->tracks_grad()) {
                Real* gx = x->grad.data();
                for (std::size_t i = 0; i < m; ++i) {
                    const Real* wrow = wd + i * n;
                    Real acc = 0;
                    for (std::size_t j = 0; j < n; ++j) acc += g[j] * wrow[j];
                    gx[i] += acc;
                }
            }
        });
    }
    return out;
}

// Y = X * W for row-stacked inputs: [R x m] * [m x n] -> [R x n]
template <class Real>
VarPtr<Real> matmul_rows(Tape<Real>* tape, const VarPtr<Real>& X, const VarPtr<Real>& W) {
    detail::require_rank(X, 2, "matmul_rows", "input");
    detail::require_rank(W, 2, "matmul_rows", "weight");
    const std::size_t R = X->value.extent(0);
    const std::size_t m = X->value.extent(1);
    const std::size_t n = W->value.extent(1);
    if (W->value.extent(0) != m) detail::mismatch("matmul_rows", X, "input", W, "weight");

    Tensor<Real> y({R, n});
    const Real* xd = X->value.data();
    const Real* wd = W->value.data();
    Real* yd = y.data();
    for (std::size_t r = 0; r < R; ++r) {
        const Real* xrow = xd + r * m;
        Real* yrow = yd + r * n;
        for (std::size_t i = 0; i < m; ++i) {
            const Real xi = xrow[i];
            const Real* wrow = wd + i * n;
            for (std::size_t j = 0; j < n; ++j) yrow[j] += xi * wrow[j];
        }
    }
    require_finite(y, "matmul_rows");

    auto out = make_var(std::move(y), tape != nullptr);
    if (tape) {
        tape->record([X, W, out, R, m, n] {
            const Real* g = out->grad.data();
            const Real* xd = X->value.data();
            const Real* wd = W->value.data();
            if (X->tracks_grad()) {
                Real* gx = X->grad.data();
                for (std::size_t r = 0; r < R; ++r) {
                    const Real* grow = g + r * n;
                    Real* gxrow = gx + r * m;
                    for (std::size_t i = 0; i < m; ++i) {
                        const Real* wrow = wd + i * n;
                        Real acc = 0;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * wrow[j];
                        gxrow[i] += acc;
                    }
                }
            }
            if (W->tracks_grad()) {
                Real* gw = W->grad.data();
                for (std::size_t r = 0; r < R; ++r) {
                    const Real* xrow = xd + r * m;
                    const Real* grow = g + r * n;
                    for (std::size_t i = 0; i < m; ++i) {
                        const Real xi = xrow[i];
                        Real* gwrow = gw + i * n;
                        for (std::size_t j = 0; j < n; ++j) gwrow[j] += xi * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

// S[r,c] = scale * <Q[r,:], K[c,:]>
template <class Real>
VarPtr<Real> scaled_scores(Tape<Real>* tape, const VarPtr<Real>& Q, const VarPtr<Real>& K,
                           Real scale) {
    detail::require_rank(Q, 2, "scaled_scores", "queries");
    detail::require_rank(K, 2, "scaled_scores", "keys");
    const std::size_t R = Q->value.extent(0);
    const std::size_t C = K->value.extent(0);
    const std::size_t d = Q->value.extent(1);
    if (K->value.extent(1) != d) detail::mismatch("scaled_scores", Q, "queries", K, "keys");

    Tensor<Real> s({R, C});
    for (std::size_t r = 0; r < R; ++r) {
        const Real* qrow = Q->value.data() + r * d;
        for (std::size_t c = 0; c < C; ++c) {
            const Real* krow = K->value.data() + c * d;
            Real acc = 0;
            for (std::size_t k = 0; k < d; ++k) acc += qrow[k] * krow[k];
            s.at(r, c) = scale * acc;
        }
    }
    require_finite(s, "scaled_scores");

    auto out = make_var(std::move(s), tape != nullptr);
    if (tape) {
        tape->record([Q, K, out, R, C, d, scale] {
            const Real* g = out->grad.data();
            if (Q->tracks_grad()) {
                for (std::size_t r = 0; r < R; ++r) {
                    Real* gq = Q->grad.data() + r * d;
                    for (std::size_t c = 0; c < C; ++c) {
                        const Real gs = scale * g[r * C + c];
                        const Real* krow = K->value.data() + c * d;
                        for (std::size_t k = 0; k < d; ++k) gq[k] += gs * krow[k];
                    }
                }
            }
            if (K->tracks_grad()) {
                for (std::size_t c = 0; c < C; ++c) {
                    Real* gk = K->grad.data() + c * d;
                    for (std::size_t r = 0; r < R; ++r) {
                        const Real gs = scale * g[r * C + c];
                        const Real* qrow = Q->value.data() + r * d;
                        for (std::size_t k = 0; k < d; ++k) gk[k] += gs * qrow[k];
                    }
                }
            }
        });
    }
    return out;
}

// Row-wise softmax over the last axis of a [R x C] tensor.
template <class Real>
VarPtr<Real> softmax_rows(Tape<Real>* tape, const VarPtr<Real>& X) {
    detail::require_rank(X, 2, "softmax_rows", "input");
    const std::size_t R = X->value.extent(0);
    const std::size_t C = X->value.extent(1);
    Tensor<Real> p({R, C});
    for (std::size_t r = 0; r < R; ++r) {
        detail::softmax_row(X->value.data() + r * C, p.data() + r * C, C);
    }
    require_finite(p, "softmax_rows");

    auto out = make_var(std::move(p), tape != nullptr);
    if (tape) {
        tape->record([X, out, R, C] {
            if (!X->tracks_grad()) return;
            for (std::size_t r = 0; r < R; ++r) {
                detail::softmax_row_backward(out->value.data() + r * C, out->grad.data() + r * C,
                                             X->grad.data() + r * C, C);
            }
        });
    }
    return out;
}

// Vector softmax (k >= 1 enforced by tensor construction).
template <class Real>
VarPtr<Real> softmax(Tape<Real>* tape, const VarPtr<Real>& x) {
    detail::require_rank(x, 1, "softmax", "logits");
    const std::size_t n = x->value.numel();
    Tensor<Real> p({n});
    detail::softmax_row(x->value.data(), p.data(), n);
    require_finite(p, "softmax");

    auto out = make_var(std::move(p), tape != nullptr);
    if (tape) {
        tape->record([x, out, n] {
            if (!x->tracks_grad()) return;
            detail::softmax_row_backward(out->value.data(), out->grad.data(), x->grad.data(), n);
        });
    }
    return out;
}

namespace detail {

// v = s * (|s| / (1 + |s|^2)); no division by zero anywhere in the forward.
template <class Real>
void squash_row(const Real* s, Real* v, std::size_t d) {
    Real n2 = 0;
    for (std::size_t i = 0; i < d; ++i) n2 += s[i] * s[i];
    const Real n = std::sqrt(n2);
    const Real alpha = n / (Real(1) + n2);
    for (std::size_t i = 0; i < d; ++i) v[i] = alpha * s[i];
}

template <class Real>
void squash_row_backward(const Real* s, const Real* g, Real* ds, std::size_t d) {
    Real n2 = 0, gdots = 0;
    for (std::size_t i = 0; i < d; ++i) {
        n2 += s[i] * s[i];
        gdots += g[i] * s[i];
    }
    const Real n = std::sqrt(n2);
    if (n < Real(1e-30)) return;  // gradient vanishes at the origin
    const Real one_plus = Real(1) + n2;
    const Real alpha = n / one_plus;
    const Real beta = gdots * (Real(1) - n2) / (n * one_plus * one_plus);
    for (std::size_t i = 0; i < d; ++i) ds[i] += alpha * g[i] + beta * s[i];
}

}  // namespace detail

// Norm-bounding nonlinearity applied per row of a [K x d] tensor.
template <class Real>
VarPtr<Real> squash_rows(Tape<Real>* tape, const VarPtr<Real>& S) {
    detail::require_rank(S, 2, "squash_rows", "input");
    const std::size_t K = S->value.extent(0);
    const std::size_t d = S->value.extent(1);
    Tensor<Real> v({K, d});
    for (std::size_t k = 0; k < K; ++k) {
        detail::squash_row(S->value.data() + k * d, v.data() + k * d, d);
    }
    require_finite(v, "squash_rows");

    auto out = make_var(std::move(v), tape != nullptr);
    if (tape) {
        tape->record([S, out, K, d] {
            if (!S->tracks_grad()) return;
            for (std::size_t k = 0; k < K; ++k) {
                detail::squash_row_backward(S->value.data() + k * d, out->grad.data() + k * d,
                                            S->grad.data() + k * d, d);
            }
        });
    }
    return out;
}

// Vector form of squash.
template <class Real>
VarPtr<Real> squash(Tape<Real>* tape, const VarPtr<Real>& s) {
    detail::require_rank(s, 1, "squash", "input");
    const std::size_t d = s->value.numel();
    Tensor<Real> v({d});
    detail::squash_row(s->value.data(), v.data(), d);
    require_finite(v, "squash");

    auto out = make_var(std::move(v), tape != nullptr);
    if (tape) {
        tape->record([s, out, d] {
            if (!s->tracks_grad()) return;
            detail::squash_row_backward(s->value.data(), out->grad.data(), s->grad.data(), d);
        });
    }
    return out;
}

// Uhat[i,j,:] = U[i,:] * W[i,j,:,:] with W shaped [n_in, K, d_in, d_out].
template <class Real>
VarPtr<Real> routing_uhat(Tape<Real>* tape, const VarPtr<Real>& W, const VarPtr<Real>& U) {
    detail::require_rank(W, 4, "routing_uhat", "transform");
    detail::require_rank(U, 2, "routing_uhat", "capsules");
    const std::size_t n_in = W->value.extent(0);
    const std::size_t K = W->value.extent(1);
    const std::size_t d_in = W->value.extent(2);
    const std::size_t d_out = W->value.extent(3);
    if (U->value.extent(0) != n_in || U->value.extent(1) != d_in) {
        detail::mismatch("routing_uhat", W, "transform", U, "capsules");
    }

    Tensor<Real> uhat({n_in, K, d_out});
    const Real* wd = W->value.data();
    const Real* ud = U->value.data();
    Real* hd = uhat.data();
    for (std::size_t i = 0; i < n_in; ++i) {
        const Real* urow = ud + i * d_in;
        for (std::size_t j = 0; j < K; ++j) {
            const Real* wm = wd + ((i * K + j) * d_in) * d_out;
            Real* hrow = hd + (i * K + j) * d_out;
            for (std::size_t p = 0; p < d_in; ++p) {
                const Real up = urow[p];
                const Real* wrow = wm + p * d_out;
                for (std::size_t o = 0; o < d_out; ++o) hrow[o] += up * wrow[o];
            }
        }
    }
    require_finite(uhat, "routing_uhat");

    auto out = make_var(std::move(uhat), tape != nullptr);
    if (tape) {
        tape->record([W, U, out, n_in, K, d_in, d_out] {
            const Real* g = out->grad.data();
            const Real* wd = W->value.data();
            const Real* ud = U->value.data();
            for (std::size_t i = 0; i < n_in; ++i) {
                const Real* urow = ud + i * d_in;
                Real* gurow = U->tracks_grad() ? U->grad.data() + i * d_in : nullptr;
                for (std::size_t j = 0; j < K; ++j) {
                    const Real* grow = g + (i * K + j) * d_out;
                    const Real* wm = wd + ((i * K + j) * d_in) * d_out;
                    if (W->tracks_grad()) {
                        Real* gwm = W->grad.data() + ((i * K + j) * d_in) * d_out;
                        for (std::size_t p = 0; p < d_in; ++p) {
                            const Real up = urow[p];
                            Real* gwrow = gwm + p * d_out;
                            for (std::size_t o = 0; o < d_out; ++o) gwrow[o] += up * grow[o];
                        }
                    }
                    if (gurow) {
                        for (std::size_t p = 0; p < d_in; ++p) {
                            const Real* wrow = wm + p * d_out;
                            Real acc = 0;
                            for (std::size_t o = 0; o < d_out; ++o) acc += grow[o] * wrow[o];
                            gurow[p] += acc;
                        }
                    }
                }
            }
        });
    }
    return out;
}

// S[j,:] = sum_i C[i,j] * Uhat[i,j,:]
template <class Real>
VarPtr<Real> route_mix(Tape<Real>* tape, const VarPtr<Real>& C, const VarPtr<Real>& Uhat) {
    detail::require_rank(C, 2, "route_mix", "coefficients");
    detail::require_rank(Uhat, 3, "route_mix", "predictions");
    const std::size_t n_in = Uhat->value.extent(0);
    const std::size_t K = Uhat->value.extent(1);
    const std::size_t d = Uhat->value.extent(2);
    if (C->value.extent(0) != n_in || C->value.extent(1) != K) {
        detail::mismatch("route_mix", C, "coefficients", Uhat, "predictions");
    }

    Tensor<Real> s({K, d});
    const Real* cd = C->value.data();
    const Real* hd = Uhat->value.data();
    Real* sd = s.data();
    for (std::size_t i = 0; i < n_in; ++i) {
        for (std::size_t j = 0; j < K; ++j) {
            const Real c = cd[i * K + j];
            const Real* hrow = hd + (i * K + j) * d;
            Real* srow = sd + j * d;
            for (std::size_t o = 0; o < d; ++o) srow[o] += c * hrow[o];
        }
    }
    require_finite(s, "route_mix");

    auto out = make_var(std::move(s), tape != nullptr);
    if (tape) {
        tape->record([C, Uhat, out, n_in, K, d] {
            const Real* g = out->grad.data();
            const Real* cd = C->value.data();
            const Real* hd = Uhat->value.data();
            for (std::size_t i = 0; i < n_in; ++i) {
                for (std::size_t j = 0; j < K; ++j) {
                    const Real* grow = g + j * d;
                    const Real* hrow = hd + (i * K + j) * d;
                    if (C->tracks_grad()) {
                        Real acc = 0;
                        for (std::size_t o = 0; o < d; ++o) acc += grow[o] * hrow[o];
                        C->grad[i * K + j] += acc;
                    }
                    if (Uhat->tracks_grad()) {
                        const Real c = cd[i * K + j];
                        Real* ghrow = Uhat->grad.data() + (i * K + j) * d;
                        for (std::size_t o = 0; o < d; ++o) ghrow[o] += c * grow[o];
                    }
                }
            }
        });
    }
    return out;
}

// A[i,j] = <Uhat[i,j,:], V[j,:]> -- the agreement term of the routing update.
template <class Real>
VarPtr<Real> route_agree(Tape<Real>* tape, const VarPtr<Real>& Uhat, const VarPtr<Real>& V) {
    detail::require_rank(Uhat, 3, "route_agree", "predictions");
    detail::require_rank(V, 2, "route_agree", "outputs");
    const std::size_t n_in = Uhat->value.extent(0);
    const std::size_t K = Uhat->value.extent(1);
    const std::size_t d = Uhat->value.extent(2);
    if (V->value.extent(0) != K || V->value.extent(1) != d) {
        detail::mismatch("route_agree", Uhat, "predictions", V, "outputs");
    }

    Tensor<Real> a({n_in, K});
    const Real* hd = Uhat->value.data();
    const Real* vd = V->value.data();
    for (std::size_t i = 0; i < n_in; ++i) {
        for (std::size_t j = 0; j < K; ++j) {
            const Real* hrow = hd + (i * K + j) * d;
            const Real* vrow = vd + j * d;
            Real acc = 0;
            for (std::size_t o = 0; o < d; ++o) acc += hrow[o] * vrow[o];
            a.at(i, j) = acc;
        }
    }
    require_finite(a, "route_agree");

    auto out = make_var(std::move(a), tape != nullptr);
    if (tape) {
        tape->record([Uhat, V, out, n_in, K, d] {
            const Real* g = out->grad.data();
            const Real* hd = Uhat->value.data();
            const Real* vd = V->value.data();
            for (std::size_t i = 0; i < n_in; ++i) {
                for (std::size_t j = 0; j < K; ++j) {
                    const Real ga = g[i * K + j];
                    if (Uhat->tracks_grad()) {
                        Real* ghrow = Uhat->grad.data() + (i * K + j) * d;
                        const Real* vrow = vd + j * d;
                        for (std::size_t o = 0; o < d; ++o) ghrow[o] += ga * vrow[o];
                    }
                    if (V->tracks_grad()) {
                        Real* gvrow = V->grad.data() + j * d;
                        const Real* hrow = hd + (i * K + j) * d;
                        for (std::size_t o = 0; o < d; ++o) gvrow[o] += ga * hrow[o];
                    }
                }
            }
        });
    }
    return out;
}

// Elementwise sum of two same-shaped tensors.
template <class Real>
VarPtr<Real> add(Tape<Real>* tape, const VarPtr<Real>& a, const VarPtr<Real>& b) {
    if (!a->value.same_shape(b->value)) detail::mismatch("add", a, "lhs", b, "rhs");
    Tensor<Real> y(a->value.shape());
    const std::size_t n = y.numel();
    for (std::size_t i = 0; i < n; ++i) y[i] = a->value[i] + b->value[i];
    require_finite(y, "add");

    auto out = make_var(std::move(y), tape != nullptr);
    if (tape) {
        tape->record([a, b, out, n] {
            const Real* g = out->grad.data();
            if (a->tracks_grad()) {
                for (std::size_t i = 0; i < n; ++i) a->grad[i] += g[i];
            }
            if (b->tracks_grad()) {
                for (std::size_t i = 0; i < n; ++i) b->grad[i] += g[i];
            }
        });
    }
    return out;
}

// Column-wise mean over rows: [R x d] -> [d]
template <class Real>
VarPtr<Real> mean_rows(Tape<Real>* tape, const VarPtr<Real>& X) {
    detail::require_rank(X, 2, "mean_rows", "input");
    const std::size_t R = X->value.extent(0);
    const std::size_t d = X->value.extent(1);
    Tensor<Real> y({d});
    for (std::size_t r = 0; r < R; ++r) {
        const Real* xrow = X->value.data() + r * d;
        for (std::size_t i = 0; i < d; ++i) y[i] += xrow[i];
    }
    const Real inv = Real(1) / static_cast<Real>(R);
    for (std::size_t i = 0; i < d; ++i) y[i] *= inv;
    require_finite(y, "mean_rows");

    auto out = make_var(std::move(y), tape != nullptr);
    if (tape) {
        tape->record([X, out, R, d, inv] {
            if (!X->tracks_grad()) return;
            const Real* g = out->grad.data();
            for (std::size_t r = 0; r < R; ++r) {
                Real* gxrow = X->grad.data() + r * d;
                for (std::size_t i = 0; i < d; ++i) gxrow[i] += inv * g[i];
            }
        });
    }
    return out;
}

// Concatenate two vectors, lhs first.
template <class Real>
VarPtr<Real> concat(Tape<Real>* tape, const VarPtr<Real>& a, const VarPtr<Real>& b) {
    detail::require_rank(a, 1, "concat", "lhs");
    detail::require_rank(b, 1, "concat", "rhs");
    const std::size_t na = a->value.numel();
    const std::size_t nb = b->value.numel();
    Tensor<Real> y({na + nb});
    for (std::size_t i = 0; i < na; ++i) y[i] = a->value[i];
    for (std::size_t i = 0; i < nb; ++i) y[na + i] = b->value[i];

    auto out = make_var(std::move(y), tape != nullptr);
    if (tape) {
        tape->record([a, b, out, na, nb] {
            const Real* g = out->grad.data();
            if (a->tracks_grad()) {
                for (std::size_t i = 0; i < na; ++i) a->grad[i] += g[i];
            }
            if (b->tracks_grad()) {
                for (std::size_t i = 0; i < nb; ++i) b->grad[i] += g[na + i];
            }
        });
    }
    return out;
}

// Stack two row matrices with equal column counts, lhs rows first.
template <class Real>
VarPtr<Real> vstack(Tape<Real>* tape, const VarPtr<Real>& A, const VarPtr<Real>& B) {
    detail::require_rank(A, 2, "vstack", "upper");
    detail::require_rank(B, 2, "vstack", "lower");
    const std::size_t d = A->value.extent(1);
    if (B->value.extent(1) != d) detail::mismatch("vstack", A, "upper", B, "lower");
    const std::size_t ra = A->value.extent(0);
    const std::size_t rb = B->value.extent(0);

    Tensor<Real> y({ra + rb, d});
    for (std::size_t i = 0; i < ra * d; ++i) y[i] = A->value[i];
    for (std::size_t i = 0; i < rb * d; ++i) y[ra * d + i] = B->value[i];

    auto out = make_var(std::move(y), tape != nullptr);
    if (tape) {
        tape->record([A, B, out, ra, rb, d] {
            const Real* g = out->grad.data();
            if (A->tracks_grad()) {
                for (std::size_t i = 0; i < ra * d; ++i) A->grad[i] += g[i];
            }
            if (B->tracks_grad()) {
                for (std::size_t i = 0; i < rb * d; ++i) B->grad[i] += g[ra * d + i];
            }
        });
    }
    return out;
}

// Elementwise scaling by a constant.
template <class Real>
VarPtr<Real> scale(Tape<Real>* tape, const VarPtr<Real>& x, Real factor) {
    Tensor<Real> y(x->value.shape());
    const std::size_t n = y.numel();
    for (std::size_t i = 0; i < n; ++i) y[i] = factor * x->value[i];

    auto out = make_var(std::move(y), tape != nullptr);
    if (tape) {
        tape->record([x, out, n, factor] {
            if (!x->tracks_grad()) return;
            for (std::size_t i = 0; i < n; ++i) x->grad[i] += factor * out->grad[i];
        });
    }
    return out;
}

// Scalar sum of squared elements; handy as a probe loss in verification code.
template <class Real>
VarPtr<Real> sum_squares(Tape<Real>* tape, const VarPtr<Real>& x) {
    const std::size_t n = x->value.numel();
    Real s = 0;
    for (std::size_t i = 0; i < n; ++i) s += x->value[i] * x->value[i];

    auto out = make_var(Tensor<Real>::scalar(s), tape != nullptr);
    if (tape) {
        tape->record([x, out, n] {
            if (!x->tracks_grad()) return;
            const Real g = out->grad[0];
            for (std::size_t i = 0; i < n; ++i) x->grad[i] += Real(2) * x->value[i] * g;
        });
    }
    return out;
}

// Reinterpret the elements under a new shape (same element count).
template <class Real>
VarPtr<Real> reshape(Tape<Real>* tape, const VarPtr<Real>& x, std::vector<std::size_t> shape) {
    Tensor<Real> y(std::move(shape));
    if (y.numel() != x->value.numel()) {
        throw DimensionError("reshape: " + detail::operand_desc(x, "input") +
                             " cannot be reshaped to " + y.shape_string());
    }
    const std::size_t n = y.numel();
    for (std::size_t i = 0; i < n; ++i) y[i] = x->value[i];

    auto out = make_var(std::move(y), tape != nullptr);
    if (tape) {
        tape->record([x, out, n] {
            if (!x->tracks_grad()) return;
            for (std::size_t i = 0; i < n; ++i) x->grad[i] += out->grad[i];
        });
    }
    return out;
}

// Extract row r of a [R x d] tensor as a vector.
template <class Real>
VarPtr<Real> row(Tape<Real>* tape, const VarPtr<Real>& X, std::size_t r) {
    detail::require_rank(X, 2, "row", "input");
    const std::size_t R = X->value.extent(0);
    const std::size_t d = X->value.extent(1);
    if (r >= R) {
        throw DimensionError("row: index " + std::to_string(r) + " out of range for " +
                             detail::operand_desc(X, "input"));
    }
    Tensor<Real> y({d});
    for (std::size_t i = 0; i < d; ++i) y[i] = X->value[r * d + i];

    auto out = make_var(std::move(y), tape != nullptr);
    if (tape) {
        tape->record([X, out, r, d] {
            if (!X->tracks_grad()) return;
            for (std::size_t i = 0; i < d; ++i) X->grad[r * d + i] += out->grad[i];
        });
    }
    return out;
}

template <class Real>
VarPtr<Real> relu(Tape<Real>* tape, const VarPtr<Real>& x) {
    Tensor<Real> y(x->value.shape());
    const std::size_t n = y.numel();
    // max(x, 0) rather than a x>0 branch so NaN propagates instead of being
    // silently zeroed; a poisoned forward must surface at the loss.
    for (std::size_t i = 0; i < n; ++i) y[i] = std::max(x->value[i], Real(0));

    auto out = make_var(std::move(y), tape != nullptr);
    if (tape) {
        tape->record([x, out, n] {
            if (!x->tracks_grad()) return;
            for (std::size_t i = 0; i < n; ++i) {
                if (x->value[i] > Real(0)) x->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

template <class Real>
VarPtr<Real> tanh_op(Tape<Real>* tape, const VarPtr<Real>& x) {
    Tensor<Real> y(x->value.shape());
    const std::size_t n = y.numel();
    for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x->value[i]);
    require_finite(y, "tanh");

    auto out = make_var(std::move(y), tape != nullptr);
    if (tape) {
        tape->record([x, out, n] {
            if (!x->tracks_grad()) return;
            for (std::size_t i = 0; i < n; ++i) {
                const Real t = out->value[i];
                x->grad[i] += out->grad[i] * (Real(1) - t * t);
            }
        });
    }
    return out;
}

// Inverted dropout: eval mode and rate 0 are the exact identity; in train mode
// survivors are scaled by 1/(1-rate) and the mask comes only from the stream
// passed in.
template <class Real>
VarPtr<Real> dropout(Tape<Real>* tape, const VarPtr<Real>& x, double rate, RunMode mode,
                     Rng* rng) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ValidationError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
    }
    if (mode == RunMode::eval || rate == 0.0) return x;
    if (rng == nullptr) throw ValidationError("dropout: train mode requires a random stream");

    const std::size_t n = x->value.numel();
    auto mask = std::make_shared<std::vector<std::uint8_t>>(n);
    const Real scale = Real(1) / Real(1.0 - rate);
    Tensor<Real> y(x->value.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const bool keep = rng->next_double() >= rate;
        (*mask)[i] = keep ? 1 : 0;
        y[i] = keep ? x->value[i] * scale : Real(0);
    }

    auto out = make_var(std::move(y), tape != nullptr);
    if (tape) {
        tape->record([x, out, mask, n, scale] {
            if (!x->tracks_grad()) return;
            for (std::size_t i = 0; i < n; ++i) {
                if ((*mask)[i]) x->grad[i] += out->grad[i] * scale;
            }
        });
    }
    return out;
}

// L = -sum_c y_c * log(max(p_c, kLogEps)) for a one-hot target.
template <class Real>
VarPtr<Real> cross_entropy(Tape<Real>* tape, const VarPtr<Real>& probs,
                           const Tensor<Real>& onehot) {
    detail::require_rank(probs, 1, "cross_entropy", "probs");
    const std::size_t C = probs->value.numel();
    if (onehot.numel() != C || onehot.rank() != 1) {
        throw DimensionError("cross_entropy: target " + onehot.shape_string() +
                             " incompatible with " + detail::operand_desc(probs, "probs"));
    }
    Real psum = 0;
    for (std::size_t c = 0; c < C; ++c) psum += probs->value[c];
    if (std::abs(double(psum) - 1.0) > 1e-5) {
        throw ValidationError("cross_entropy: probs must sum to 1 within 1e-5, got sum " +
                              std::to_string(double(psum)));
    }
    std::size_t active = 0;
    for (std::size_t c = 0; c < C; ++c) {
        if (onehot[c] == Real(1)) {
            ++active;
        } else if (onehot[c] != Real(0)) {
            throw ValidationError("cross_entropy: target entries must be 0 or 1");
        }
    }
    if (active != 1) {
        throw ValidationError("cross_entropy: target must have exactly one active class, got " +
                              std::to_string(active));
    }

    const Real eps = Real(kLogEps);
    Real loss = 0;
    for (std::size_t c = 0; c < C; ++c) {
        if (onehot[c] == Real(1)) loss -= std::log(std::max(probs->value[c], eps));
    }
    require_finite(Tensor<Real>::scalar(loss), "cross_entropy");

    auto target = std::make_shared<Tensor<Real>>(onehot);
    auto out = make_var(Tensor<Real>::scalar(loss), tape != nullptr);
    if (tape) {
        tape->record([probs, target, out, C, eps] {
            if (!probs->tracks_grad()) return;
            const Real g = out->grad[0];
            for (std::size_t c = 0; c < C; ++c) {
                if ((*target)[c] == Real(1) && probs->value[c] >= eps) {
                    probs->grad[c] -= g / probs->value[c];
                }
            }
        });
    }
    return out;
}

// Mean of scalar losses (the per-batch objective).
template <class Real>
VarPtr<Real> mean_of(Tape<Real>* tape, const std::vector<VarPtr<Real>>& xs) {
    if (xs.empty()) throw DimensionError("mean_of: needs at least one term");
    Real sum = 0;
    for (const auto& x : xs) {
        if (x->value.numel() != 1) {
            throw DimensionError("mean_of: terms must be scalar, got " + x->value.shape_string());
        }
        sum += x->value[0];
    }
    const Real inv = Real(1) / static_cast<Real>(xs.size());

    auto out = make_var(Tensor<Real>::scalar(sum * inv), tape != nullptr);
    if (tape) {
        tape->record([xs, out, inv] {
            const Real g = out->grad[0] * inv;
            for (const auto& x : xs) {
                if (x->tracks_grad()) x->grad[0] += g;
            }
        });
    }
    return out;
}

// Identity forward whose backward flips the gradient sign. Exists only so the
// gradient checker can prove it detects a corrupted backward pass.
template <class Real>
VarPtr<Real> corrupt_grad_sign(Tape<Real>* tape, const VarPtr<Real>& x) {
    Tensor<Real> y = x->value;
    auto out = make_var(std::move(y), tape != nullptr);
    if (tape) {
        tape->record([x, out] {
            if (!x->tracks_grad()) return;
            const std::size_t n = x->value.numel();
            for (std::size_t i = 0; i < n; ++i) x->grad[i] -= out->grad[i];
        });
    }
    return out;
}

}  // namespace mmfuse
