#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace veil {

using real = double;

/// Derives an independent sub-stream seed from a root seed, a purpose tag and
/// an index. Weight init, shuffling, reparameterization noise and data
/// generation each get their own stream so that changing one consumer does not
/// perturb the others.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag, std::uint64_t index = 0);

/// Seeded random stream. Determinism contract: the same seed and call sequence
/// produce the same values within one build of the toolkit.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : gen_(seed) {}

    real normal() { return normal_(gen_); }
    real uniform() { return uniform_(gen_); }                 // [0,1)
    real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }
    std::uint64_t next_u64() { return gen_(); }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(gen_);
    }

    void fill_normal(real* dst, std::size_t n, real mean = 0.0, real stddev = 1.0) {
        for (std::size_t i = 0; i < n; ++i) dst[i] = mean + stddev * normal();
    }

    /// Seeded Fisher-Yates permutation of [0, n).
    std::vector<std::size_t> permutation(std::size_t n);

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
    std::normal_distribution<real> normal_{0.0, 1.0};
    std::uniform_real_distribution<real> uniform_{0.0, 1.0};
};

}  // namespace veil
