#pragma once

#include <cmath>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "mmfuse/rng.hpp"
#include "mmfuse/tape.hpp"

namespace mmfuse {

enum class InitKind {
    glorot,    // uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))
    zero,      // biases
    identity,  // square refinement matrices
};

// Named parameter tensors with matching gradient accumulators. Iteration is
// lexicographic by name, which fixes the update and checksum order.
template <class Real>
class ParamStore {
public:
    VarPtr<Real> add(const std::string& name, std::vector<std::size_t> shape, InitKind kind) {
        if (entries_.count(name)) {
            throw ValidationError("ParamStore: duplicate parameter name '" + name + "'");
        }
        auto var = make_var(Tensor<Real>::zeros(std::move(shape)), /*with_grad=*/true, name);
        entries_.emplace(name, Entry{var, kind});
        return var;
    }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    const VarPtr<Real>& var(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) {
            throw ValidationError("ParamStore: unknown parameter '" + name + "'");
        }
        return it->second.var;
    }

    std::size_t size() const { return entries_.size(); }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& [name, entry] : entries_) out.push_back(name);
        return out;
    }

    // Draws every tensor from a stream derived from (seed, name), so values do
    // not depend on registration or iteration order.
    void init(std::uint64_t seed) {
        for (auto& [name, entry] : entries_) {
            Tensor<Real>& t = entry.var->value;
            switch (entry.kind) {
                case InitKind::zero:
                    t.fill(Real(0));
                    break;
                case InitKind::identity: {
                    if (t.rank() != 2 || t.extent(0) != t.extent(1)) {
                        throw ConfigError("ParamStore: identity init needs a square matrix for '" +
                                          name + "'");
                    }
                    t.fill(Real(0));
                    for (std::size_t i = 0; i < t.extent(0); ++i) t.at(i, i) = Real(1);
                    break;
                }
                case InitKind::glorot: {
                    const auto [fan_in, fan_out] = fans(t, name);
                    const double a = std::sqrt(6.0 / double(fan_in + fan_out));
                    Rng rng(derive_seed(seed, name));
                    for (std::size_t i = 0; i < t.numel(); ++i) {
                        t[i] = static_cast<Real>(rng.uniform(-a, a));
                    }
                    break;
                }
            }
            entry.var->zero_grad();
        }
    }

    void zero_grads() {
        for (auto& [name, entry] : entries_) entry.var->zero_grad();
    }

    template <class Fn>
    void for_each(Fn&& fn) {
        for (auto& [name, entry] : entries_) fn(name, *entry.var);
    }
    template <class Fn>
    void for_each(Fn&& fn) const {
        for (const auto& [name, entry] : entries_) fn(name, *entry.var);
    }

    InitKind kind(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) {
            throw ValidationError("ParamStore: unknown parameter '" + name + "'");
        }
        return it->second.kind;
    }

    // FNV-1a over the raw bytes of every value tensor in name order.
    std::uint64_t checksum() const {
        std::uint64_t h = 14695981039346656037ull;
        for (const auto& [name, entry] : entries_) {
            h ^= fnv1a64(name);
            h *= 1099511628211ull;
            const Tensor<Real>& t = entry.var->value;
            const unsigned char* bytes = reinterpret_cast<const unsigned char*>(t.data());
            for (std::size_t i = 0; i < t.numel() * sizeof(Real); ++i) {
                h ^= bytes[i];
                h *= 1099511628211ull;
            }
        }
        return h;
    }

    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& [name, entry] : entries_) n += entry.var->value.numel();
        return n;
    }

private:
    struct Entry {
        VarPtr<Real> var;
        InitKind kind;
    };

    static std::pair<std::size_t, std::size_t> fans(const Tensor<Real>& t,
                                                    const std::string& name) {
        if (t.rank() == 2) return {t.extent(0), t.extent(1)};
        if (t.rank() == 4) return {t.extent(2), t.extent(3)};  // per-slice transforms
        throw ConfigError("ParamStore: no fan convention for rank " + std::to_string(t.rank()) +
                          " tensor '" + name + "'");
    }

    std::map<std::string, Entry> entries_;
};

}  // namespace mmfuse
