#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <new>
#include <vector>

#include "veil/errors.hpp"
#include "veil/rng.hpp"

namespace veil {

/// Pins every tensor buffer to one SIMD-register-width alignment so that
/// vectorized kernels peel identically no matter where the heap happens to
/// place a buffer. Without this, repeating a run inside one process can give
/// last-bit differences through address-dependent summation order, breaking
/// the bit-reproducibility guarantee.
template <class T>
struct SimdAlignedAllocator {
    using value_type = T;
    static constexpr std::size_t kAlign = 64;

    SimdAlignedAllocator() = default;
    template <class U>
    SimdAlignedAllocator(const SimdAlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kAlign}));
    }
    void deallocate(T* p, std::size_t n) noexcept {
        ::operator delete(p, n * sizeof(T), std::align_val_t{kAlign});
    }
    template <class U>
    bool operator==(const SimdAlignedAllocator<U>&) const noexcept {
        return true;
    }
};

/// Dense row-major tensor of doubles. Batched image tensors are [B,C,H,W],
/// feature matrices [B,F]. Double precision keeps finite-difference gradient
/// checks well inside their tolerance.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, real fill = 0.0)
        : shape_(std::move(shape)), data_(count(shape_), fill) {}

    static Tensor from(std::vector<std::size_t> shape, const std::vector<real>& values) {
        Tensor t;
        t.shape_ = std::move(shape);
        if (count(t.shape_) != values.size())
            throw ContractError("tensor shape does not match value count");
        t.data_.assign(values.begin(), values.end());
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    real* data() { return data_.data(); }
    const real* data() const { return data_.data(); }

    real& operator[](std::size_t i) { return data_[i]; }
    real operator[](std::size_t i) const { return data_[i]; }

    real& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    real at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    real& at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
        return data_[((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    real at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    void fill(real v) { data_.assign(data_.size(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    /// In-place reshape; element count must be preserved.
    void reshape(std::vector<std::size_t> shape) {
        if (count(shape) != data_.size())
            throw ContractError("reshape changes element count");
        shape_ = std::move(shape);
    }

    Tensor reshaped(std::vector<std::size_t> shape) const {
        Tensor t = *this;
        t.reshape(std::move(shape));
        return t;
    }

    bool all_finite() const {
        for (real v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void add_scaled(const Tensor& other, real scale) {
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
    }

private:
    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = shape.empty() ? 0 : 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }

    std::vector<std::size_t> shape_;
    std::vector<real, SimdAlignedAllocator<real>> data_;
};

}  // namespace veil
