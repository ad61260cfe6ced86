#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "mmfuse/errors.hpp"

namespace mmfuse {

// FNV-1a 64-bit over raw bytes. Used both for deterministic mock embeddings
// and for deriving named sub-seeds from a run seed.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= static_cast<std::uint64_t>(c);
        h *= 1099511628211ull;
    }
    return h;
}

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}
}  // namespace detail

// Derive an independent stream seed from (base, tag, indices...). Streams with
// different tags or indices never share state, so call order elsewhere in the
// program cannot perturb them.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
    std::uint64_t s = base ^ fnv1a64(tag);
    return detail::splitmix64(s);
}
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t a) {
    std::uint64_t s = derive_seed(base, tag) ^ (a * 0x9e3779b97f4a7c15ull + 0x7f4a7c15ull);
    return detail::splitmix64(s);
}
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t a,
                                 std::uint64_t b) {
    std::uint64_t s = derive_seed(base, tag, a) ^ (b * 0xbf58476d1ce4e5b9ull + 5);
    return detail::splitmix64(s);
}

// Small self-contained generator (splitmix64 core). We do not use the standard
// distributions because their output is not pinned by the standard; this one
// produces identical streams on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ^ 0x6a09e667f3bcc908ull) {
        // Warm up so trivially related seeds diverge immediately.
        next_u64();
    }

    std::uint64_t next_u64() { return detail::splitmix64(state_); }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Standard normal via Box-Muller; the spare is cached so draw order is
    // reproducible and every uniform pair yields two values.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925287 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    bool bernoulli(double p) { return next_double() < p; }

    // Uniform integer in [0, n). Multiply-shift keeps the map unbiased enough
    // for shuffles at desk scale without rejection loops.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw ValidationError("Rng::below: n must be positive");
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Seeded Fisher-Yates over any random-access container.
template <class Container>
void shuffle(Container& c, Rng& rng) {
    if (c.size() < 2) return;
    for (std::size_t i = c.size() - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
        using std::swap;
        swap(c[i], c[j]);
    }
}

}  // namespace mmfuse
