#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "helpers.hpp"
#include "veil/config.hpp"
#include "veil/data.hpp"
#include "veil/errors.hpp"
#include "veil/eval.hpp"
#include "veil/masking.hpp"
#include "veil/models.hpp"
#include "veil/nn/arch.hpp"
#include "veil/nn/checkpoint.hpp"
#include "veil/nn/init.hpp"

using namespace veil;
using namespace veil::test;
namespace fs = std::filesystem;

namespace {

std::unique_ptr<FrozenClassifier> random_classifier(const std::string& id, std::uint64_t seed,
                                                    const std::string& preset = "toy-mlp") {
    nn::ArchParams ap;
    ap.resolution = 8;
    ap.num_classes = 4;
    auto net = nn::build_arch(nn::preset_arch(preset, ap));
    RngStream w(seed);
    nn::init_he_normal(*net, w);
    return std::make_unique<FrozenClassifier>(id, std::move(net), 4, 8, unit_stats());
}

DatasetHandle tiny_dataset(std::size_t n, std::uint64_t seed) {
    RngStream rs(seed);
    Tensor raw = rand_uniform({n, 3, 8, 8}, rs, 0.02, 0.98);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 4);
    return make_memory_dataset("mem", raw, labels, 4, 8, unit_stats());
}

struct TinyTransform {
    VariationalEncoder encoder;
    TaskDecoder decoder;
    std::vector<std::uint8_t> bits;
    TinyTransform(std::uint64_t seed)
        : encoder("small3", 8, 16), decoder(16, 2, 2, 8, 8), bits(16, 1) {
        RngStream w(seed);
        encoder.init_weights(w);
        decoder.init_weights(w);
        encoder.set_training(false);
        decoder.set_training(false);
    }
};

// A 2x2 grid with one strong diagonal row, for arithmetic and report tests.
TransferMatrix hand_matrix() {
    TransferMatrix m;
    m.classifier_ids = {"alpha", "beta", "gamma"};
    m.target_ids = {"alpha"};
    m.top1 = {{72.23, 1.57, 0.47}};
    m.top5 = {{93.10, 5.02, 2.11}};
    m.identity_top1 = {76.13, 71.02, 68.40};
    m.chance = 1.0;
    return m;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("row statistics: diagonal, off-diagonal and suppression ratio") {
    TransferMatrix m = hand_matrix();
    CHECK(m.diagonal_column(0) == 0);
    CHECK(m.diagonal(0) == doctest::Approx(72.23));
    CHECK(m.max_off_diagonal(0) == doctest::Approx(1.57));
    CHECK(m.mean_off_diagonal(0) == doctest::Approx(1.02));
    CHECK(m.suppression_ratio(0) == doctest::Approx(72.23 / 1.57).epsilon(1e-12));

    // When every off-diagonal entry collapses below chance/10, the floor
    // keeps the ratio finite: 72.23 / (1.0/10).
    m.top1[0][1] = 0.05;
    m.top1[0][2] = 0.02;
    CHECK(m.suppression_ratio(0) == doctest::Approx(72.23 / 0.1).epsilon(1e-12));

    // A row whose target is not among the columns is a contract violation.
    m.target_ids[0] = "delta";
    CHECK_THROWS_AS((void)m.diagonal_column(0), ContractError);
}

TEST_CASE("chance band matches the normal approximation by hand") {
    // p = 0.1, n = 2000, 3 sigma: 100*(0.1 + 3*sqrt(0.09/2000)).
    CHECK(chance_upper_band(2000, 10, 3.0) ==
          doctest::Approx(12.012461179749811).epsilon(1e-12));
    // Wider bands for smaller samples.
    CHECK(chance_upper_band(100, 10, 3.0) > chance_upper_band(2000, 10, 3.0));
    CHECK(chance_upper_band(2000, 10, 2.0) < chance_upper_band(2000, 10, 3.0));
}

TEST_CASE("identity evaluation: a constant classifier scores exactly chance") {
    nn::ArchParams ap;
    ap.resolution = 8;
    ap.num_classes = 4;
    auto net = nn::build_arch(nn::preset_arch("linear-softmax", ap));
    for (nn::Param* p : net->params()) p->value.fill(0.0);
    FrozenClassifier clf("const", std::move(net), 4, 8, unit_stats());

    const DatasetHandle data = tiny_dataset(32, 5);  // balanced labels
    const Accuracy acc = evaluate_identity(clf, data, 16);
    CHECK(acc.top1 == doctest::Approx(25.0).epsilon(1e-12));
    CHECK(acc.top5 == doctest::Approx(acc.top1));  // fewer than 5 classes
}

TEST_CASE("an untrained classifier stays inside the chance band") {
    auto clf = random_classifier("untrained", 77);
    const DatasetHandle data = tiny_dataset(512, 6);
    const Accuracy acc = evaluate_identity(*clf, data, 64);
    const real band = chance_upper_band(512, 4, 3.0);
    CHECK(acc.top1 <= band);
    CHECK(acc.top1 >= 50.0 - band);  // symmetric lower edge: 2*25 - band
}

TEST_CASE("transform evaluation is pure and repeatable") {
    TinyTransform t(11);
    auto clf = random_classifier("probe", 12);
    const DatasetHandle data = tiny_dataset(48, 13);

    const std::string enc_before = nn::state_hash(t.encoder.state());
    const std::string dec_before = nn::state_hash(t.decoder.state());
    const std::string clf_before = clf->params_hash();

    const Accuracy a1 = evaluate_transform(t.encoder, t.decoder, t.bits, *clf, data, 16);
    const Accuracy a2 = evaluate_transform(t.encoder, t.decoder, t.bits, *clf, data, 16);

    CHECK(a1.top1 == a2.top1);
    CHECK(a1.top5 == a2.top5);
    CHECK(a1.top1 >= 0.0);
    CHECK(a1.top1 <= 100.0);
    CHECK(nn::state_hash(t.encoder.state()) == enc_before);
    CHECK(nn::state_hash(t.decoder.state()) == dec_before);
    CHECK(clf->params_hash() == clf_before);

    SUBCASE("stochastic mode is seed-deterministic") {
        EvalOptions opt;
        opt.stochastic_samples = 4;
        opt.seed = 99;
        const Accuracy s1 = evaluate_transform(t.encoder, t.decoder, t.bits, *clf, data, 16, opt);
        const Accuracy s2 = evaluate_transform(t.encoder, t.decoder, t.bits, *clf, data, 16, opt);
        CHECK(s1.top1 == s2.top1);
        CHECK(s1.top1 >= 0.0);
        CHECK(s1.top1 <= 100.0);
        CHECK(nn::state_hash(t.encoder.state()) == enc_before);
    }
}

TEST_CASE("a one-by-one matrix reproduces the scalar evaluations") {
    TinyTransform t(21);
    auto clf = random_classifier("solo", 22);
    const DatasetHandle data = tiny_dataset(32, 23);

    TrainedTransform tt;
    tt.target_id = "solo";
    tt.encoder = &t.encoder;
    tt.decoder = &t.decoder;
    tt.mask_bits = t.bits;

    const TransferMatrix m = compute_transfer_matrix({tt}, {clf.get()}, data, 16);
    REQUIRE(m.top1.size() == 1);
    REQUIRE(m.top1[0].size() == 1);
    CHECK(m.chance == doctest::Approx(25.0));
    CHECK(m.classifier_ids == std::vector<std::string>{"solo"});
    CHECK(m.top1[0][0] ==
          doctest::Approx(evaluate_transform(t.encoder, t.decoder, t.bits, *clf, data, 16).top1));
    CHECK(m.identity_top1[0] == doctest::Approx(evaluate_identity(*clf, data, 16).top1));
    CHECK_FALSE(m.row_skipped(0));
}

TEST_CASE("reports render skipped rows and reproduce byte-for-byte") {
    TempDir tmp("veil_test_eval_report");
    TransferMatrix m = hand_matrix();
    m.add_skipped_row("beta");
    REQUIRE(m.target_ids.size() == 2);
    CHECK(m.row_skipped(1));
    CHECK_FALSE(m.row_skipped(0));

    emit_report(tmp.path / "r1", m);
    emit_report(tmp.path / "r2", m);
    for (const char* f : {"transfer_matrix.csv", "report.md", "heatmap.png"}) {
        CHECK(fs::exists(tmp.path / "r1" / f));
        CHECK(slurp(tmp.path / "r1" / f) == slurp(tmp.path / "r2" / f));
    }
    const std::string md = slurp(tmp.path / "r1" / "report.md");
    CHECK(md.find("n/a") != std::string::npos);
    CHECK(md.find("72.23") != std::string::npos);

    SUBCASE("the CSV round-trips through the parser") {
        const TransferMatrix back =
            parse_transfer_csv(tmp.path / "r1" / "transfer_matrix.csv", 100);
        CHECK(back.classifier_ids == m.classifier_ids);
        CHECK(back.target_ids == m.target_ids);
        CHECK(back.chance == doctest::Approx(1.0));
        CHECK_FALSE(back.has_top5);
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(back.top1[0][c] == doctest::Approx(m.top1[0][c]).epsilon(0.005));
            CHECK(back.identity_top1[c] == doctest::Approx(m.identity_top1[c]).epsilon(0.005));
        }
        CHECK(back.row_skipped(1));

        // Regenerating the report from the parsed CSV keeps the CSV stable.
        emit_report(tmp.path / "r3", back);
        CHECK(slurp(tmp.path / "r3" / "transfer_matrix.csv") ==
              slurp(tmp.path / "r1" / "transfer_matrix.csv"));
    }
}

TEST_CASE("missing targets raise instead of silently reordering") {
    TransferMatrix m = hand_matrix();
    m.target_ids = {"gamma"};  // present as a column: fine
    CHECK(m.diagonal_column(0) == 2);
    CHECK(m.max_off_diagonal(0) == doctest::Approx(72.23));
}

TEST_CASE("mean unintended accuracy averages the non-target columns") {
    AblationStage s;
    s.other_top1 = {10.0, 20.0, 33.0};
    CHECK(mean_unintended(s) == doctest::Approx(21.0));
}

TEST_CASE("ablation trains all three stages and reports their masks") {
    TempDir tmp("veil_test_eval_ablation");
    auto target = random_classifier("tiny-target", 31);
    auto other = random_classifier("bystander", 32, "toy-cnn-b");
    DatasetHandle train = tiny_dataset(32, 33);
    DatasetHandle test = tiny_dataset(16, 34);

    RunConfig base;
    base.lambda_kl = 0.01;
    base.gamma = 0.5;
    base.threshold = 0.3;
    base.warm_epochs = 1;
    base.mask_epochs = 2;
    base.mask_update_freq = 1;
    base.mask_mode = MaskMode::kDynamic;
    base.mask_at_phase_start = true;
    base.seed = 35;
    base.target_model_id = "tiny-target";
    base.dataset_id = "mem";
    base.latent_dim = 16;
    base.batch_size = 16;
    base.learning_rate = 1e-3;
    base.weight_decay = 1e-5;
    base.input_resolution = 8;
    base.encoder_backbone = "small3";
    base.decoder_base_size = 2;
    base.decoder_blocks = 2;
    base.decoder_channels = 8;

    const AblationReport rep =
        run_ablation(base, *target, {other.get()}, train, test, tmp.path / "work");

    CHECK(rep.chance == doctest::Approx(25.0));
    CHECK(rep.other_ids == std::vector<std::string>{"bystander"});
    REQUIRE(rep.stages.size() == 3);
    CHECK(rep.stages[0].name == "none");
    CHECK(rep.stages[1].name == "kl_only");
    CHECK(rep.stages[2].name == "integrated");
    for (const AblationStage& s : rep.stages) {
        INFO("stage ", s.name, " error: ", s.error);
        CHECK(s.completed);
        CHECK(s.error.empty());
        CHECK(s.target_top1 >= 0.0);
        CHECK(s.latent_dim == 16);
        REQUIRE(s.other_top1.size() == 1);
        CHECK_FALSE(s.mask_hash.empty());
    }
    // Without masking every dimension survives; the masked stages may drop
    // some but can never exceed the latent width.
    CHECK(rep.stages[0].kept_dimensions == 16);
    CHECK(rep.stages[1].kept_dimensions <= 16);
    CHECK(rep.stages[2].kept_dimensions <= 16);
    CHECK(rep.stages[1].config.gamma == doctest::Approx(1.0));
    CHECK(rep.stages[2].config.gamma == doctest::Approx(0.5));
    CHECK(rep.stages[0].config.mask_mode == MaskMode::kNone);

    emit_ablation(tmp.path / "out", rep);
    CHECK(fs::exists(tmp.path / "out" / "ablation.csv"));
    CHECK(fs::exists(tmp.path / "out" / "ablation.md"));
    const std::string csv = slurp(tmp.path / "out" / "ablation.csv");
    CHECK(csv.find("none") != std::string::npos);
    CHECK(csv.find("kl_only") != std::string::npos);
    CHECK(csv.find("integrated") != std::string::npos);
}
