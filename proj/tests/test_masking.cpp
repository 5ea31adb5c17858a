#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "veil/config.hpp"
#include "veil/data.hpp"
#include "veil/decoder.hpp"
#include "veil/encoder.hpp"
#include "veil/errors.hpp"
#include "veil/masking.hpp"
#include "veil/models.hpp"
#include "veil/nn/arch.hpp"
#include "veil/nn/init.hpp"

using namespace veil;
using namespace veil::test;

namespace {

/// Tiny full stack (resolution 8, latent_dim 4, 3 classes) shared by the
/// brute-force recomputation oracles.
struct TinyStack {
    std::size_t res = 8, d = 4, classes = 3, n = 12;
    DatasetHandle data;
    std::unique_ptr<VariationalEncoder> encoder;
    std::unique_ptr<TaskDecoder> decoder;
    std::unique_ptr<FrozenClassifier> target;

    explicit TinyStack(std::uint64_t seed) {
        RngStream img(derive_seed(seed, "images"));
        Tensor images({n, 3, res, res});
        for (std::size_t i = 0; i < images.numel(); ++i) images[i] = img.uniform(0.0, 1.0);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
        data = make_memory_dataset("tiny", images, labels, classes, res, unit_stats());

        encoder = std::make_unique<VariationalEncoder>("small3", res, d);
        decoder = std::make_unique<TaskDecoder>(d, 2, 2, 8, res);
        RngStream w(derive_seed(seed, "weights"));
        encoder->init_weights(w);
        decoder->init_weights(w);

        nn::ArchParams ap;
        ap.resolution = res;
        ap.num_classes = classes;
        auto net = nn::build_arch(nn::preset_arch("linear-softmax", ap));
        RngStream tw(derive_seed(seed, "target"));
        nn::init_he_normal(*net, tw);
        target = std::make_unique<FrozenClassifier>("tiny-linear", std::move(net), classes, res,
                                                    unit_stats());
    }
};

/// Independent saliency: |dL/dz_j| per sample by central differences through
/// decode -> renormalize -> target loss, averaged over the dataset.
std::vector<real> fd_saliency(TinyStack& s, real h = 1e-4) {
    std::vector<real> sal(s.d, 0.0);
    for (std::size_t i = 0; i < s.data.size(); ++i) {
        const Tensor X = assemble_batch(s.data, {i});
        const std::vector<int> y = gather_labels(s.data, {i});
        auto [mu, lv] = s.encoder->encode(X);
        for (std::size_t j = 0; j < s.d; ++j) {
            auto loss_at = [&](real delta) {
                Tensor z = mu;
                z.at(0, j) += delta;
                const Tensor decoded = s.decoder->decode(z);
                const Tensor renorm =
                    renormalize_for_target(decoded, s.target->expected_input_stats());
                return s.target->task_loss_and_input_grad(renorm, y).first;
            };
            sal[j] += std::abs((loss_at(h) - loss_at(-h)) / (2.0 * h));
        }
    }
    for (real& v : sal) v /= static_cast<real>(s.data.size());
    return sal;
}

/// Independent per-dimension KL, averaged over the dataset one sample at a
/// time straight from the closed form.
std::vector<real> direct_kl(TinyStack& s) {
    std::vector<real> kl(s.d, 0.0);
    for (std::size_t i = 0; i < s.data.size(); ++i) {
        const Tensor X = assemble_batch(s.data, {i});
        auto [mu, lv] = s.encoder->encode(X);
        for (std::size_t j = 0; j < s.d; ++j) {
            const real m = mu.at(0, j), l = lv.at(0, j);
            kl[j] += 0.5 * (m * m + std::exp(l) - l - 1.0);
        }
    }
    for (real& v : kl) v /= static_cast<real>(s.data.size());
    return kl;
}

std::vector<real> minmax(const std::vector<real>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    std::vector<real> out(v.size(), 0.0);
    if (*hi - *lo <= 0.0) return out;
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / (*hi - *lo);
    return out;
}

real rel_diff(real a, real b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

RunConfig tiny_config() {
    RunConfig c;
    c.lambda_kl = 0.01;
    c.gamma = 0.5;
    c.threshold = 0.3;
    c.warm_epochs = 2;
    c.mask_epochs = 4;
    c.mask_update_freq = 2;
    c.mask_mode = MaskMode::kDynamic;
    c.seed = 9;
    c.target_model_id = "tiny-linear";
    c.dataset_id = "tiny";
    c.latent_dim = 4;
    c.batch_size = 4;
    c.input_resolution = 8;
    c.encoder_backbone = "small3";
    c.decoder_base_size = 2;
    c.decoder_blocks = 2;
    c.decoder_channels = 8;
    c.mask_at_phase_start = true;
    return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Analytic KL

TEST_CASE("per-dimension kl matches hand-computed values") {
    // KL_i = 0.5 * (mu^2 + sigma^2 - ln sigma^2 - 1)
    const std::vector<real> mu = {0.0, 1.0, 0.0};
    const std::vector<real> lv = {0.0, 0.0, std::log(4.0)};
    const std::vector<real> kl = kl_per_dimension(mu, lv);
    CHECK(std::abs(kl[0]) < 1e-9);
    CHECK(kl[1] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(kl[2] == doctest::Approx(0.5 * (4.0 - std::log(4.0) - 1.0)).epsilon(1e-12));
    CHECK(kl[2] == doctest::Approx(0.80685281944005469).epsilon(1e-10));
}

TEST_CASE("kl is non-negative and zero only at the standard normal") {
    RngStream rs(11);
    for (int t = 0; t < 200; ++t) {
        const std::vector<real> mu = {rs.uniform(-3.0, 3.0)};
        const std::vector<real> lv = {rs.uniform(-4.0, 4.0)};
        const real kl = kl_per_dimension(mu, lv)[0];
        CHECK(kl >= 0.0);
        if (std::abs(mu[0]) > 1e-3 || std::abs(lv[0]) > 1e-3) CHECK(kl > 0.0);
    }
}

TEST_CASE("kl matrix equals rowwise per-dimension kl") {
    RngStream rs(12);
    const Tensor mu = rand_uniform({5, 3}, rs, -2.0, 2.0);
    const Tensor lv = rand_uniform({5, 3}, rs, -2.0, 2.0);
    const Tensor K = kl_matrix(mu, lv);
    for (std::size_t b = 0; b < 5; ++b) {
        const std::vector<real> m = {mu.at(b, 0), mu.at(b, 1), mu.at(b, 2)};
        const std::vector<real> l = {lv.at(b, 0), lv.at(b, 1), lv.at(b, 2)};
        const auto row = kl_per_dimension(m, l);
        for (std::size_t j = 0; j < 3; ++j) CHECK(K.at(b, j) == doctest::Approx(row[j]));
    }
}

TEST_CASE("kl loss value and gradients match finite differences") {
    RngStream rs(13);
    const Tensor mu = rand_uniform({4, 6}, rs, -1.5, 1.5);
    const Tensor lv = rand_uniform({4, 6}, rs, -2.0, 2.0);

    Tensor dmu(mu.shape()), dlv(lv.shape());
    const real loss = kl_loss(mu, lv, &dmu, &dlv);

    // Value: mean over batch of the per-sample KL sum.
    real expect = 0.0;
    const Tensor K = kl_matrix(mu, lv);
    for (std::size_t i = 0; i < K.numel(); ++i) expect += K[i];
    expect /= 4.0;
    CHECK(loss == doctest::Approx(expect).epsilon(1e-12));

    const Tensor fd_mu = fd_gradient([&](const Tensor& m) { return kl_loss(m, lv); }, mu, 1e-5);
    const Tensor fd_lv = fd_gradient([&](const Tensor& l) { return kl_loss(mu, l); }, lv, 1e-5);
    CHECK(rel_error(dmu, fd_mu) < 1e-8);
    CHECK(rel_error(dlv, fd_lv) < 1e-8);
}

// ---------------------------------------------------------------------------
// Fusion and thresholding

TEST_CASE("fused importance matches a hand-worked example") {
    const std::vector<real> kl = {0.0, 2.0, 4.0};   // minmax -> 0, 0.5, 1
    const std::vector<real> sal = {3.0, 1.0, 2.0};  // minmax -> 1, 0, 0.5
    const auto I = fuse_scores(kl, sal, 0.25);
    CHECK(I[0] == doctest::Approx(0.25 * 0.0 + 0.75 * 1.0));
    CHECK(I[1] == doctest::Approx(0.25 * 0.5 + 0.75 * 0.0));
    CHECK(I[2] == doctest::Approx(0.25 * 1.0 + 0.75 * 0.5));

    // Threshold 0.8: cutoff 0.8 * 0.75 = 0.6 keeps dimensions 0 and 2.
    const auto bits = threshold_mask(I, 0.8);
    CHECK(bits == std::vector<std::uint8_t>{1, 0, 1});
    // Threshold 0.9: cutoff 0.675 keeps only dimension 0.
    CHECK(threshold_mask(I, 0.9) == std::vector<std::uint8_t>{1, 0, 0});
}

TEST_CASE("constant score vectors normalize to zero, making the mask fail open") {
    const std::vector<real> flat = {3.0, 3.0, 3.0};
    const std::vector<real> rising = {0.0, 1.0, 2.0};
    const auto I = fuse_scores(flat, rising, 1.0);  // gamma 1: only the flat vector counts
    for (real v : I) CHECK(v == 0.0);
    const auto bits = threshold_mask(I, 0.9);
    CHECK(bits == std::vector<std::uint8_t>{1, 1, 1});
}

TEST_CASE("fusion validates sizes and gamma range") {
    CHECK_THROWS_AS((void)fuse_scores({1.0}, {1.0, 2.0}, 0.5), ContractError);
    CHECK_THROWS_AS((void)fuse_scores({1.0}, {1.0}, -0.1), ContractError);
    CHECK_THROWS_AS((void)fuse_scores({1.0}, {1.0}, 1.5), ContractError);
    CHECK_THROWS_AS((void)threshold_mask({1.0}, -0.2), ContractError);
    CHECK_THROWS_AS((void)threshold_mask({1.0}, 1.2), ContractError);
}

TEST_CASE("mask properties hold over 1000+ random score vectors") {
    RngStream rs(99);
    std::size_t tie_checks = 0;
    for (int t = 0; t < 1100; ++t) {
        const std::size_t d = 1 + static_cast<std::size_t>(rs.index(16));
        std::vector<real> kl(d), sal(d);
        for (std::size_t i = 0; i < d; ++i) {
            kl[i] = rs.uniform(0.0, 5.0);
            sal[i] = rs.uniform(0.0, 5.0);
        }
        const real gamma = rs.uniform(0.0, 1.0);
        const auto I = fuse_scores(kl, sal, gamma);

        // Importance stays in [0,1].
        for (real v : I) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }

        // Monotone nesting: a higher threshold keeps a subset.
        const real t1 = rs.uniform(0.0, 1.0), t2 = rs.uniform(0.0, 1.0);
        const real lo = std::min(t1, t2), hi = std::max(t1, t2);
        const auto keep_lo = threshold_mask(I, lo);
        const auto keep_hi = threshold_mask(I, hi);
        for (std::size_t i = 0; i < d; ++i)
            if (keep_hi[i]) CHECK(keep_lo[i]);

        // T = 0 keeps everything.
        const auto all = threshold_mask(I, 0.0);
        CHECK(std::count(all.begin(), all.end(), 1) == static_cast<long>(d));

        // T = 1 keeps exactly the maxima (argmax only when unique, ties kept).
        const auto top = threshold_mask(I, 1.0);
        const real mx = *std::max_element(I.begin(), I.end());
        for (std::size_t i = 0; i < d; ++i) {
            if (mx == 0.0)
                CHECK(top[i] == 1);  // fail-open
            else
                CHECK(top[i] == static_cast<std::uint8_t>(I[i] == mx ? 1 : 0));
        }

        // Endpoint gammas depend on exactly one score vector.
        if (d >= 2) {
            ++tie_checks;
            const auto only_kl = fuse_scores(kl, sal, 1.0);
            const auto only_kl2 = fuse_scores(kl, std::vector<real>(d, 0.0), 1.0);
            CHECK(only_kl == only_kl2);
            const auto only_sal = fuse_scores(kl, sal, 0.0);
            const auto only_sal2 = fuse_scores(std::vector<real>(d, 0.0), sal, 0.0);
            CHECK(only_sal == only_sal2);
        }
    }
    CHECK(tie_checks > 900);
}

TEST_CASE("exact ties at the threshold boundary are kept") {
    // I = {1.0, 0.5, 0.25}, T = 0.5: cutoff 0.5, and dimension 1 sits on it.
    const auto bits = threshold_mask({1.0, 0.5, 0.25}, 0.5);
    CHECK(bits == std::vector<std::uint8_t>{1, 1, 0});
}

TEST_CASE("apply_mask zeroes masked dimensions and validates shape") {
    Tensor z = Tensor::from({2, 3}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
    const Tensor m = apply_mask(z, {1, 0, 1});
    CHECK(m.at(0, 0) == 1.0);
    CHECK(m.at(0, 1) == 0.0);
    CHECK(m.at(1, 1) == 0.0);
    CHECK(m.at(1, 2) == 6.0);
    CHECK_THROWS_AS((void)apply_mask(z, {1, 0}), ContractError);
    CHECK_THROWS_AS((void)apply_mask(z.reshaped({6}), {1, 0, 1, 1, 0, 1}), ContractError);
}

// ---------------------------------------------------------------------------
// Global scores against independent oracles

TEST_CASE("global saliency matches central finite differences") {
    TinyStack s(21);
    const auto sal = global_saliency(*s.encoder, *s.decoder, *s.target, s.data, 4);
    const auto fd = fd_saliency(s);
    REQUIRE(sal.size() == s.d);
    for (std::size_t j = 0; j < s.d; ++j) CHECK(rel_diff(sal[j], fd[j]) < 1e-3);
}

TEST_CASE("global kl matches the closed form accumulated sample by sample") {
    TinyStack s(22);
    const auto kl = global_kl(*s.encoder, s.data, 4);
    const auto direct = direct_kl(s);
    REQUIRE(kl.size() == s.d);
    for (std::size_t j = 0; j < s.d; ++j) CHECK(rel_diff(kl[j], direct[j]) < 1e-9);
}

TEST_CASE("scores are independent of batch size") {
    TinyStack s(23);
    const auto kl1 = global_kl(*s.encoder, s.data, 1);
    const auto kl5 = global_kl(*s.encoder, s.data, 5);
    const auto kl12 = global_kl(*s.encoder, s.data, 12);
    const auto sal1 = global_saliency(*s.encoder, *s.decoder, *s.target, s.data, 1);
    const auto sal5 = global_saliency(*s.encoder, *s.decoder, *s.target, s.data, 5);
    for (std::size_t j = 0; j < s.d; ++j) {
        CHECK(kl1[j] == doctest::Approx(kl5[j]).epsilon(1e-12));
        CHECK(kl1[j] == doctest::Approx(kl12[j]).epsilon(1e-12));
        CHECK(sal1[j] == doctest::Approx(sal5[j]).epsilon(1e-9));
    }
}

TEST_CASE("duplicating every sample leaves the mean scores unchanged") {
    TinyStack s(24);
    Tensor doubled({2 * s.n, 3, s.res, s.res});
    std::vector<int> labels(2 * s.n);
    for (std::size_t i = 0; i < s.n; ++i) {
        const Tensor img = s.data.raw_image(i);
        for (std::size_t k = 0; k < img.numel(); ++k) {
            doubled[i * img.numel() + k] = img[k];
            doubled[(i + s.n) * img.numel() + k] = img[k];
        }
        labels[i] = labels[i + s.n] = s.data.labels[i];
    }
    const DatasetHandle twice =
        make_memory_dataset("tiny2", doubled, labels, s.classes, s.res, unit_stats());

    const auto kl_once = global_kl(*s.encoder, s.data, 4);
    const auto kl_twice = global_kl(*s.encoder, twice, 4);
    const auto sal_once = global_saliency(*s.encoder, *s.decoder, *s.target, s.data, 4);
    const auto sal_twice = global_saliency(*s.encoder, *s.decoder, *s.target, twice, 4);
    for (std::size_t j = 0; j < s.d; ++j) {
        CHECK(kl_once[j] == doctest::Approx(kl_twice[j]).epsilon(1e-12));
        CHECK(sal_once[j] == doctest::Approx(sal_twice[j]).epsilon(1e-9));
    }
}

TEST_CASE("a latent dimension the decoder ignores has zero saliency") {
    TinyStack s(25);
    // Zero the projection column of dimension 2: the decoder output no longer
    // depends on z_2, so its saliency vanishes while its KL stays positive.
    const std::size_t dead = 2;
    bool zeroed = false;
    for (nn::Param* p : s.decoder->params()) {
        if (p->value.ndim() == 2 && p->value.dim(1) == s.d) {
            for (std::size_t r = 0; r < p->value.dim(0); ++r) p->value.at(r, dead) = 0.0;
            zeroed = true;
            break;
        }
    }
    REQUIRE(zeroed);
    const auto sal = global_saliency(*s.encoder, *s.decoder, *s.target, s.data, 4);
    CHECK(sal[dead] == 0.0);
    bool others_alive = false;
    for (std::size_t j = 0; j < s.d; ++j)
        if (j != dead && sal[j] > 0.0) others_alive = true;
    CHECK(others_alive);
    const auto kl = global_kl(*s.encoder, s.data, 4);
    CHECK(kl[dead] > 0.0);
}

TEST_CASE("global scores reject an empty dataset") {
    TinyStack s(26);
    DatasetHandle empty = make_memory_dataset("empty", Tensor({0, 3, 8, 8}), {}, 3, 8, unit_stats());
    CHECK_THROWS_AS((void)global_kl(*s.encoder, empty, 4), ContractError);
    CHECK_THROWS_AS((void)global_saliency(*s.encoder, *s.decoder, *s.target, empty, 4),
                    ContractError);
}

TEST_CASE("subsampling uses an evenly strided deterministic subset") {
    TinyStack s(27);
    const auto sub_a = global_kl(*s.encoder, s.data, 4, 5);
    const auto sub_b = global_kl(*s.encoder, s.data, 4, 5);
    CHECK(sub_a == sub_b);
    const auto full = global_kl(*s.encoder, s.data, 4, 0);
    const auto capped = global_kl(*s.encoder, s.data, 4, s.n * 3);
    for (std::size_t j = 0; j < s.d; ++j) CHECK(full[j] == doctest::Approx(capped[j]));
}

// ---------------------------------------------------------------------------
// Full recomputation against a brute-force mirror

TEST_CASE("recompute_mask agrees with a from-scratch reimplementation") {
    TinyStack s(31);
    const RunConfig cfg = tiny_config();
    const std::size_t epoch = 3;  // E_warm + 1 with mask_at_phase_start
    REQUIRE(mask_due(cfg, epoch));

    const MaskState st = recompute_mask(*s.encoder, *s.decoder, *s.target, s.data, cfg, epoch);
    CHECK(st.computed_at_epoch == epoch);
    CHECK(st.gamma == doctest::Approx(cfg.gamma));
    CHECK(st.threshold == doctest::Approx(cfg.threshold));
    REQUIRE(st.bits.size() == s.d);

    const auto kl = direct_kl(s);
    const auto sal = fd_saliency(s);
    const auto nk = minmax(kl), ns = minmax(sal);
    std::vector<real> I(s.d);
    for (std::size_t j = 0; j < s.d; ++j) I[j] = cfg.gamma * nk[j] + (1.0 - cfg.gamma) * ns[j];
    const real mx = *std::max_element(I.begin(), I.end());

    for (std::size_t j = 0; j < s.d; ++j) {
        CHECK(rel_diff(st.importance[j], I[j]) < 1e-3);
        // Bits must agree exactly whenever the score is clearly away from the
        // threshold boundary (FD noise could legitimately flip exact ties).
        if (std::abs(I[j] - cfg.threshold * mx) > 1e-4)
            CHECK(st.bits[j] == static_cast<std::uint8_t>(I[j] >= cfg.threshold * mx ? 1 : 0));
    }
    CHECK(st.kept() == static_cast<std::size_t>(
                           std::count(st.bits.begin(), st.bits.end(), std::uint8_t{1})));
}

TEST_CASE("recompute outside the schedule raises ScheduleError") {
    TinyStack s(32);
    RunConfig cfg = tiny_config();  // warm 2, mask 4, freq 2, phase start on
    CHECK_THROWS_AS(
        (void)recompute_mask(*s.encoder, *s.decoder, *s.target, s.data, cfg, 1),
        ScheduleError);
    CHECK_THROWS_AS(
        (void)recompute_mask(*s.encoder, *s.decoder, *s.target, s.data, cfg, 2),
        ScheduleError);
    cfg.mask_mode = MaskMode::kNone;
    CHECK_THROWS_AS(
        (void)recompute_mask(*s.encoder, *s.decoder, *s.target, s.data, cfg, 3),
        ScheduleError);
}

TEST_CASE("gamma endpoints skip the unused scoring pass entirely") {
    TinyStack s(33);
    RunConfig cfg = tiny_config();

    cfg.gamma = 1.0;  // KL-only: the saliency pass must never run
    score_counters().reset();
    (void)recompute_mask(*s.encoder, *s.decoder, *s.target, s.data, cfg, 3);
    CHECK(score_counters().kl_passes == 1);
    CHECK(score_counters().saliency_passes == 0);
    CHECK(score_counters().recomputes == 1);

    cfg.gamma = 0.0;  // saliency-only: the KL pass must never run
    score_counters().reset();
    (void)recompute_mask(*s.encoder, *s.decoder, *s.target, s.data, cfg, 3);
    CHECK(score_counters().kl_passes == 0);
    CHECK(score_counters().saliency_passes == 1);

    cfg.gamma = 0.5;  // both
    score_counters().reset();
    (void)recompute_mask(*s.encoder, *s.decoder, *s.target, s.data, cfg, 3);
    CHECK(score_counters().kl_passes == 1);
    CHECK(score_counters().saliency_passes == 1);
}

TEST_CASE("mask recomputation leaves trainer-side parameter gradients alone") {
    TinyStack s(34);
    // Seed the decoder gradients with sentinels; the saliency pass must
    // restore them bit for bit.
    std::vector<Tensor> before;
    for (nn::Param* p : s.decoder->params()) {
        p->grad.fill(0.0);
        for (std::size_t i = 0; i < p->grad.numel(); ++i) p->grad[i] = 0.125 * (i % 7);
        before.push_back(p->grad);
    }
    (void)global_saliency(*s.encoder, *s.decoder, *s.target, s.data, 4);
    std::size_t k = 0;
    for (nn::Param* p : s.decoder->params()) {
        for (std::size_t i = 0; i < p->grad.numel(); ++i) CHECK(p->grad[i] == before[k][i]);
        ++k;
    }
}

// ---------------------------------------------------------------------------
// Schedule

TEST_CASE("dynamic schedule fires at warm+freq intervals") {
    RunConfig cfg;
    cfg.warm_epochs = 15;
    cfg.mask_epochs = 30;
    cfg.mask_update_freq = 5;
    cfg.mask_mode = MaskMode::kDynamic;
    cfg.mask_at_phase_start = false;
    cfg.target_model_id = "x";
    cfg.dataset_id = "y";

    std::vector<std::size_t> fired;
    for (std::size_t e = 1; e <= cfg.total_epochs(); ++e)
        if (mask_due(cfg, e)) fired.push_back(e);
    CHECK(fired == std::vector<std::size_t>{20, 25, 30, 35, 40, 45});

    cfg.mask_at_phase_start = true;
    fired.clear();
    for (std::size_t e = 1; e <= cfg.total_epochs(); ++e)
        if (mask_due(cfg, e)) fired.push_back(e);
    CHECK(fired == std::vector<std::size_t>{16, 20, 25, 30, 35, 40, 45});
}

TEST_CASE("static schedule fires exactly once, none never") {
    RunConfig cfg;
    cfg.warm_epochs = 4;
    cfg.mask_epochs = 6;
    cfg.mask_update_freq = 2;
    cfg.mask_mode = MaskMode::kStatic;
    cfg.target_model_id = "x";
    cfg.dataset_id = "y";

    std::vector<std::size_t> fired;
    for (std::size_t e = 1; e <= cfg.total_epochs(); ++e)
        if (mask_due(cfg, e)) fired.push_back(e);
    CHECK(fired == std::vector<std::size_t>{5});

    cfg.mask_mode = MaskMode::kNone;
    for (std::size_t e = 1; e <= cfg.total_epochs(); ++e) CHECK_FALSE(mask_due(cfg, e));
}

// ---------------------------------------------------------------------------
// Mask state serialization

TEST_CASE("mask state round-trips through json with a stable bits hash") {
    TinyStack s(35);
    const MaskState st =
        recompute_mask(*s.encoder, *s.decoder, *s.target, s.data, tiny_config(), 3);
    const auto dir = std::filesystem::temp_directory_path() / "veil_test_mask";
    std::filesystem::create_directories(dir);
    save_mask(dir / "mask.json", st);
    const MaskState back = load_mask(dir / "mask.json");
    CHECK(back.bits == st.bits);
    CHECK(back.computed_at_epoch == st.computed_at_epoch);
    CHECK(back.gamma == doctest::Approx(st.gamma));
    CHECK(back.threshold == doctest::Approx(st.threshold));
    CHECK(back.bits_hash() == st.bits_hash());
    REQUIRE(back.kl_score.size() == st.kl_score.size());
    for (std::size_t j = 0; j < st.kl_score.size(); ++j) {
        CHECK(back.kl_score[j] == st.kl_score[j]);
        CHECK(back.sal_score[j] == st.sal_score[j]);
        CHECK(back.importance[j] == st.importance[j]);
    }
    std::filesystem::remove_all(dir);

    MaskState flipped = st;
    flipped.bits[0] ^= 1;
    CHECK(flipped.bits_hash() != st.bits_hash());
}

TEST_CASE("all_ones_mask keeps every dimension") {
    CHECK(all_ones_mask(5) == std::vector<std::uint8_t>(5, 1));
}
