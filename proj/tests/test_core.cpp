#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <set>

#include "helpers.hpp"
#include "veil/errors.hpp"
#include "veil/serialize.hpp"
#include "veil/tensor.hpp"

using namespace veil;
using namespace veil::test;

TEST_CASE("derived seeds differ across tags and indices but are reproducible") {
    const std::uint64_t root = 1234;
    CHECK(derive_seed(root, "weights") == derive_seed(root, "weights"));
    CHECK(derive_seed(root, "weights") != derive_seed(root, "shuffle"));
    CHECK(derive_seed(root, "shuffle", 0) != derive_seed(root, "shuffle", 1));
    CHECK(derive_seed(root, "weights") != derive_seed(root + 1, "weights"));
}

TEST_CASE("rng streams with equal seeds emit identical sequences") {
    RngStream a(77), b(77);
    for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
    for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());
}

TEST_CASE("permutation covers every index exactly once") {
    RngStream rs(5);
    auto p = rs.permutation(257);
    std::set<std::size_t> seen(p.begin(), p.end());
    CHECK(p.size() == 257);
    CHECK(seen.size() == 257);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == 256);
}

TEST_CASE("tensor reshape preserves elements and rejects bad counts") {
    Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor r = t.reshaped({3, 2});
    CHECK(r.at(2, 1) == 6.0);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ContractError);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0}), ContractError);
}

TEST_CASE("tensor finiteness check catches NaN and infinity") {
    Tensor t({3});
    CHECK(t.all_finite());
    t[1] = std::numeric_limits<real>::quiet_NaN();
    CHECK_FALSE(t.all_finite());
    t[1] = 0.0;
    t[2] = std::numeric_limits<real>::infinity();
    CHECK_FALSE(t.all_finite());
}

TEST_CASE("checkpoint save/load round-trips names, shapes and bits") {
    RngStream rs(9);
    std::vector<NamedTensor> ts;
    ts.push_back({"alpha", rand_uniform({3, 4}, rs)});
    ts.push_back({"beta.gamma", rand_uniform({2, 2, 2, 2}, rs)});
    ts.push_back({"scalarish", rand_uniform({1}, rs)});

    const auto path = std::filesystem::temp_directory_path() / "veil_test_ckpt.bin";
    save_tensors(path, ts);
    auto back = load_tensors(path);
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[i].name == ts[i].name);
        REQUIRE(back[i].tensor.same_shape(ts[i].tensor));
        CHECK(rel_error(back[i].tensor, ts[i].tensor) == 0.0);
    }
    std::filesystem::remove(path);
}

TEST_CASE("truncated checkpoints raise io errors") {
    RngStream rs(10);
    std::vector<NamedTensor> ts{{"w", rand_uniform({8, 8}, rs)}};
    const auto path = std::filesystem::temp_directory_path() / "veil_test_trunc.bin";
    save_tensors(path, ts);
    const auto full = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full / 2);
    CHECK_THROWS_AS(load_tensors(path), IoError);
    std::filesystem::remove(path);
}

TEST_CASE("sha256 matches the published test vectors") {
    CHECK(sha256_hex(std::string("")) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex(std::string("abc")) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("tensor collection hash is order- and bit-sensitive") {
    RngStream rs(11);
    std::vector<NamedTensor> a{{"x", rand_uniform({4}, rs)}};
    std::vector<NamedTensor> b = a;
    CHECK(tensors_hash(a) == tensors_hash(b));
    b[0].tensor[0] += 1e-15;
    CHECK(tensors_hash(a) != tensors_hash(b));
    std::vector<NamedTensor> c = a;
    c[0].name = "y";
    CHECK(tensors_hash(a) != tensors_hash(c));
}
