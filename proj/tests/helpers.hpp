#pragma once

#include <functional>

#include "veil/rng.hpp"
#include "veil/tensor.hpp"

namespace veil::test {

inline Tensor rand_uniform(std::vector<std::size_t> shape, RngStream& rs, real lo = -1.0,
                           real hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rs.uniform(lo, hi);
    return t;
}

inline real dot(const Tensor& a, const Tensor& b) {
    real s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
}

inline real l2(const Tensor& t) { return std::sqrt(dot(t, t)); }

/// Norm-relative difference: ||a-b|| / max(||a||, ||b||, 1e-12).
inline real rel_error(const Tensor& a, const Tensor& b) {
    Tensor d = a;
    d.add_scaled(b, -1.0);
    return l2(d) / std::max({l2(a), l2(b), 1e-12});
}

/// Central-difference gradient of a scalar function, element by element.
inline Tensor fd_gradient(const std::function<real(const Tensor&)>& fn, Tensor x,
                          real h = 1e-3) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const real orig = x[i];
        x[i] = orig + h;
        const real fp = fn(x);
        x[i] = orig - h;
        const real fm = fn(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace veil::test
