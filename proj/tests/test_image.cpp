#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "veil/errors.hpp"
#include "veil/image.hpp"

using namespace veil;
using namespace veil::test;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / "veil_test_image") { fs::create_directories(path); }
    ~TempDir() { fs::remove_all(path); }
};

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("png round-trip preserves 8-bit-quantized pixels exactly") {
    TempDir tmp;
    RngStream rs(1);
    Tensor img({3, 9, 7});
    // Values on the 1/255 grid survive the round-trip bit for bit.
    for (std::size_t i = 0; i < img.numel(); ++i)
        img[i] = static_cast<real>(rs.index(256)) / 255.0;
    write_png(tmp.path / "a.png", img);
    const Tensor back = read_png(tmp.path / "a.png");
    REQUIRE(back.shape() == img.shape());
    for (std::size_t i = 0; i < img.numel(); ++i) CHECK(back[i] == doctest::Approx(img[i]).epsilon(1e-12));
}

TEST_CASE("png writes are byte-stable for identical tensors") {
    TempDir tmp;
    RngStream rs(2);
    const Tensor img = rand_uniform({3, 16, 16}, rs, 0.0, 1.0);
    write_png(tmp.path / "x.png", img);
    write_png(tmp.path / "y.png", img);
    CHECK(file_bytes(tmp.path / "x.png") == file_bytes(tmp.path / "y.png"));
    CHECK_FALSE(file_bytes(tmp.path / "x.png").empty());
}

TEST_CASE("reading a missing or corrupt file raises IoError") {
    TempDir tmp;
    CHECK_THROWS_AS((void)read_png(tmp.path / "missing.png"), IoError);
    std::ofstream(tmp.path / "junk.png") << "this is not a png";
    CHECK_THROWS_AS((void)read_png(tmp.path / "junk.png"), IoError);
}

TEST_CASE("write clamps out-of-range values and rejects mis-shaped tensors") {
    TempDir tmp;
    Tensor hot({3, 4, 4});
    hot.fill(1.5);
    hot[0] = -0.5;
    write_png(tmp.path / "hot.png", hot);
    const Tensor back = read_png(tmp.path / "hot.png");
    CHECK(back[0] == doctest::Approx(0.0).scale(1.0));  // clamped low
    CHECK(back[1] == doctest::Approx(1.0));             // clamped high

    Tensor wrong({1, 4, 4});
    CHECK_THROWS_AS(write_png(tmp.path / "wrong.png", wrong), ContractError);
}

TEST_CASE("bilinear resize preserves constant images and downsamples averages") {
    Tensor flat({3, 8, 8});
    flat.fill(0.25);
    const Tensor half = resize_bilinear(flat, 4, 4);
    REQUIRE(half.shape() == std::vector<std::size_t>{3, 4, 4});
    for (std::size_t i = 0; i < half.numel(); ++i) CHECK(half[i] == doctest::Approx(0.25));

    // 2x2 checkerboard upsampled to 4x4 keeps corner values at the corners
    // (half-pixel centers align corners for integer scale factors).
    Tensor board({1, 2, 2});
    board[0] = 0.0;
    board[1] = 1.0;
    board[2] = 1.0;
    board[3] = 0.0;
    const Tensor up = resize_bilinear(board, 4, 4);
    CHECK(up[0 * 4 + 0] == doctest::Approx(0.0).scale(1.0));   // top-left
    CHECK(up[3 * 4 + 3] == doctest::Approx(0.0).scale(1.0));   // bottom-right
    CHECK(up[0 * 4 + 3] == doctest::Approx(1.0));              // top-right
    CHECK(up[3 * 4 + 0] == doctest::Approx(1.0));              // bottom-left
}

TEST_CASE("resize is an identity when the size does not change") {
    RngStream rs(3);
    const Tensor img = rand_uniform({3, 6, 6}, rs, 0.0, 1.0);
    const Tensor same = resize_bilinear(img, 6, 6);
    for (std::size_t i = 0; i < img.numel(); ++i) CHECK(same[i] == doctest::Approx(img[i]));
}
