#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "helpers.hpp"
#include "veil/encoder.hpp"
#include "veil/errors.hpp"

using namespace veil;
using namespace veil::test;

namespace {

std::unique_ptr<VariationalEncoder> small_encoder(std::uint64_t seed, std::size_t res = 8,
                                                  std::size_t d = 5) {
    auto enc = std::make_unique<VariationalEncoder>("small3", res, d);
    RngStream w(seed);
    enc->init_weights(w);
    return enc;
}

}  // namespace

TEST_CASE("encode produces matched mu/logvar shapes with clamped logvar") {
    auto enc = small_encoder(3);
    RngStream rs(4);
    const Tensor X = rand_uniform({6, 3, 8, 8}, rs, -1.0, 1.0);
    auto [mu, lv] = enc->encode(X);
    REQUIRE(mu.shape() == std::vector<std::size_t>{6, 5});
    REQUIRE(lv.shape() == std::vector<std::size_t>{6, 5});
    for (std::size_t i = 0; i < lv.numel(); ++i) {
        CHECK(lv[i] >= -VariationalEncoder::kLogVarClamp);
        CHECK(lv[i] <= VariationalEncoder::kLogVarClamp);
    }
}

TEST_CASE("reparameterization statistics match mu and exp(logvar) (Monte Carlo)") {
    // z = mu + exp(logvar/2) * eps with eps ~ N(0,1): over many draws the
    // sample mean approaches mu and the sample variance approaches sigma^2.
    const Tensor mu = Tensor::from({1, 2}, {0.7, -1.2});
    const Tensor lv = Tensor::from({1, 2}, {std::log(0.25), std::log(2.25)});
    RngStream noise(20240817);

    const std::size_t draws = 100000;
    std::vector<real> sum(2, 0.0), sumsq(2, 0.0);
    for (std::size_t t = 0; t < draws; ++t) {
        const Reparam r = reparameterize(mu, lv, noise, false);
        for (std::size_t j = 0; j < 2; ++j) {
            sum[j] += r.z.at(0, j);
            sumsq[j] += r.z.at(0, j) * r.z.at(0, j);
        }
    }
    for (std::size_t j = 0; j < 2; ++j) {
        const real mean = sum[j] / draws;
        const real var = sumsq[j] / draws - mean * mean;
        const real sigma2 = std::exp(lv.at(0, j));
        CHECK(std::abs(mean - mu.at(0, j)) < 0.02);
        CHECK(var / sigma2 > 0.97);
        CHECK(var / sigma2 < 1.03);
    }
}

TEST_CASE("deterministic reparameterization returns mu and leaves the stream untouched") {
    const Tensor mu = Tensor::from({2, 2}, {0.1, -0.2, 0.3, -0.4});
    const Tensor lv = Tensor::from({2, 2}, {1.0, -1.0, 0.5, 2.0});
    RngStream a(55), b(55);
    const Reparam r = reparameterize(mu, lv, a, true);
    for (std::size_t i = 0; i < mu.numel(); ++i) CHECK(r.z[i] == mu[i]);
    // The stream was not consumed: both streams still agree.
    for (int i = 0; i < 10; ++i) CHECK(a.normal() == b.normal());
}

TEST_CASE("identical seeds give bitwise-identical stochastic draws") {
    const Tensor mu = Tensor::from({3, 2}, {0.0, 1.0, -1.0, 0.5, 2.0, -2.0});
    const Tensor lv = Tensor::from({3, 2}, {0.1, 0.2, 0.3, -0.1, -0.2, -0.3});
    RngStream a(7), b(7);
    const Reparam ra = reparameterize(mu, lv, a, false);
    const Reparam rb = reparameterize(mu, lv, b, false);
    for (std::size_t i = 0; i < ra.z.numel(); ++i) {
        CHECK(ra.z[i] == rb.z[i]);
        CHECK(ra.eps[i] == rb.eps[i]);
    }
}

TEST_CASE("reparameterize_backward matches the chain rule and accumulates") {
    RngStream rs(8);
    const Tensor mu = rand_uniform({3, 4}, rs, -1.0, 1.0);
    const Tensor lv = rand_uniform({3, 4}, rs, -1.0, 1.0);
    RngStream noise(9);
    const Reparam r = reparameterize(mu, lv, noise, false);
    const Tensor dz = rand_uniform({3, 4}, rs, -1.0, 1.0);

    Tensor dmu(mu.shape()), dlv(lv.shape());
    dmu.fill(0.5);  // pre-seeded: backward must add, not overwrite
    dlv.fill(0.25);
    reparameterize_backward(dz, lv, r.eps, dmu, dlv);

    for (std::size_t i = 0; i < mu.numel(); ++i) {
        // z = mu + exp(lv/2)*eps: dz/dmu = 1, dz/dlv = 0.5*exp(lv/2)*eps.
        CHECK(dmu[i] == doctest::Approx(0.5 + dz[i]).epsilon(1e-12));
        const real expect = 0.25 + dz[i] * 0.5 * std::exp(0.5 * lv[i]) * r.eps[i];
        CHECK(dlv[i] == doctest::Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("encoder backward matches finite differences through the backbone") {
    auto enc = small_encoder(10);
    RngStream rs(11);
    const Tensor X = rand_uniform({2, 3, 8, 8}, rs, -0.5, 0.5);
    // Scalar head: sum of weighted mu plus weighted logvar entries.
    const Tensor wm = rand_uniform({2, 5}, rs, -1.0, 1.0);
    const Tensor wl = rand_uniform({2, 5}, rs, -1.0, 1.0);

    auto scalar = [&](const Tensor& input) {
        auto [mu, lv] = enc->encode(input);
        return dot(mu, wm) + dot(lv, wl);
    };

    (void)enc->encode(X);
    const Tensor dX = enc->backward(wm, wl);
    // Small step: central differences across ReLU kinks contribute an O(h)
    // error, so the step dominates the comparison accuracy.
    const Tensor fd = fd_gradient(scalar, X, 1e-5);
    CHECK(rel_error(dX, fd) < 1e-5);
}

TEST_CASE("encoder state round-trips and rejects the wrong resolution") {
    auto enc = small_encoder(12);
    const auto st = enc->state();
    CHECK_FALSE(st.empty());
    RngStream rs(13);
    CHECK_THROWS_AS((void)enc->encode(rand_uniform({1, 3, 16, 16}, rs)), ContractError);
}

TEST_CASE("logvar clamp engages on extreme activations") {
    auto enc = small_encoder(14);
    // Blow up the weights so pre-clamp logvar exceeds the bound.
    for (nn::Param* p : enc->params())
        for (std::size_t i = 0; i < p->value.numel(); ++i) p->value[i] *= 50.0;
    RngStream rs(15);
    const Tensor X = rand_uniform({2, 3, 8, 8}, rs, -1.0, 1.0);
    auto [mu, lv] = enc->encode(X);
    real max_abs = 0.0;
    for (std::size_t i = 0; i < lv.numel(); ++i) max_abs = std::max(max_abs, std::abs(lv[i]));
    CHECK(max_abs <= VariationalEncoder::kLogVarClamp);
    CHECK(max_abs == doctest::Approx(VariationalEncoder::kLogVarClamp));  // actually hit the rail
}
