#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mmfuse/errors.hpp"

namespace mmfuse {

// Enables per-operation finite checks on tensor outputs. Off by default; tests
// and the gradient checker turn it on.
inline bool& checked_mode() {
    static thread_local bool enabled = false;
    return enabled;
}

// Dense row-major real tensor. The scalar type is the precision switch:
// float for training, double for gradient verification.
template <class Real>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(checked_numel(shape_), Real(0)) {}

    Tensor(std::vector<std::size_t> shape, std::vector<Real> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != checked_numel(shape_)) {
            throw DimensionError("Tensor: data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string());
        }
    }

    static Tensor from_vector(std::vector<Real> values) {
        const std::size_t n = values.size();
        return Tensor({n}, std::move(values));
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor scalar(Real v) { return Tensor({1}, {v}); }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = Real(1);
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    Real* data() { return data_.data(); }
    const Real* data() const { return data_.data(); }

    Real& operator[](std::size_t i) { return data_[i]; }
    Real operator[](std::size_t i) const { return data_[i]; }

    // Row-major 2-d accessors; callers guarantee rank() == 2.
    Real& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    Real at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    Real l2_norm() const {
        Real s = 0;
        for (Real v : data_) s += v * v;
        return std::sqrt(s);
    }

    bool all_finite() const {
        for (Real v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    template <class Other>
    Tensor<Other> cast() const {
        std::vector<Other> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<Other>(data_[i]);
        return Tensor<Other>(shape_, std::move(out));
    }

    std::string shape_string() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) os << "x";
            os << shape_[i];
        }
        os << "]";
        return os.str();
    }

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

private:
    static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
        if (shape.empty()) throw DimensionError("Tensor: shape must have at least one extent");
        std::size_t n = 1;
        for (std::size_t e : shape) {
            if (e == 0) throw DimensionError("Tensor: extents must be positive");
            n *= e;
        }
        return n;
    }

    std::vector<std::size_t> shape_;
    std::vector<Real> data_;
};

template <class Real>
void require_finite(const Tensor<Real>& t, const char* where) {
    if (checked_mode() && !t.all_finite()) {
        throw NumericalError(std::string(where) + ": non-finite value produced", 0, 0);
    }
}

}  // namespace mmfuse
