#include <algorithm>
#include <cmath>

#include "veil/data.hpp"
#include "veil/errors.hpp"

namespace veil {

namespace {

// Dataset identity seed: fixed so every run and machine sees the same data.
constexpr std::uint64_t kToyShapesSeed = 0x705e5a9e501abc01ull;
constexpr std::size_t kTrainSize = 10000;
constexpr std::size_t kTestSize = 2000;
constexpr std::size_t kClasses = 10;

struct ShapeParams {
    real bg[3], fg[3];
    real cx, cy;     // center in pixels
    real radius;     // characteristic half-size in pixels
    real thickness;  // line/outline width in pixels
};

/// True iff pixel (x,y) belongs to the class shape. Classes: 0 disc, 1 ring,
/// 2 filled square, 3 square outline, 4 triangle, 5 horizontal stripes,
/// 6 vertical stripes, 7 diagonal cross, 8 plus, 9 diamond.
bool inside_shape(int cls, real x, real y, const ShapeParams& p) {
    const real dx = x - p.cx, dy = y - p.cy;
    const real dist = std::sqrt(dx * dx + dy * dy);
    const real r = p.radius, t = p.thickness;
    switch (cls) {
        case 0: return dist <= r;
        case 1: return dist <= r && dist >= r - t;
        case 2: return std::abs(dx) <= 0.9 * r && std::abs(dy) <= 0.9 * r;
        case 3: {
            const real m = std::max(std::abs(dx), std::abs(dy));
            return m <= 0.9 * r && m >= 0.9 * r - t;
        }
        case 4: {  // upward triangle: apex at cy - r, base at cy + 0.7r
            const real span = 1.7 * r;
            const real u = (dy + r) / span;
            return u >= 0.0 && u <= 1.0 && std::abs(dx) <= u * 1.1 * r;
        }
        case 5: {
            if (std::abs(dx) > r || std::abs(dy) > r) return false;
            const real period = std::max(2.0 * t, 0.55 * r);
            return std::fmod(dy + r, period) < 0.5 * period;
        }
        case 6: {
            if (std::abs(dx) > r || std::abs(dy) > r) return false;
            const real period = std::max(2.0 * t, 0.55 * r);
            return std::fmod(dx + r, period) < 0.5 * period;
        }
        case 7:
            return std::abs(dx) <= r && std::abs(dy) <= r &&
                   (std::abs(dx - dy) <= 0.8 * t || std::abs(dx + dy) <= 0.8 * t);
        case 8:
            return (std::abs(dx) <= 0.8 * t && std::abs(dy) <= r) ||
                   (std::abs(dy) <= 0.8 * t && std::abs(dx) <= r);
        case 9: return std::abs(dx) + std::abs(dy) <= 1.1 * r;
        default: throw ContractError("toy-shapes class out of range");
    }
}

/// Renders one sample into `dst` (3 planes of side*side pixels in [0,1]).
void render_sample(std::size_t index, const std::string& split, std::size_t side, real* dst) {
    const int cls = static_cast<int>(index % kClasses);
    RngStream rs(derive_seed(kToyShapesSeed,
                             split == "train" ? "toy-train" : "toy-test", index));
    const real s = static_cast<real>(side);
    ShapeParams p{};
    for (real& v : p.bg) v = rs.uniform(0.0, 0.35);
    for (real& v : p.fg) v = rs.uniform(0.55, 1.0);
    p.cx = 0.5 * s + rs.uniform(-0.12, 0.12) * s;
    p.cy = 0.5 * s + rs.uniform(-0.12, 0.12) * s;
    p.radius = rs.uniform(0.22, 0.36) * s;
    p.thickness = rs.uniform(0.08, 0.14) * s;

    const std::size_t plane = side * side;
    for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
            const bool in = inside_shape(cls, static_cast<real>(x) + 0.5,
                                         static_cast<real>(y) + 0.5, p);
            for (std::size_t c = 0; c < 3; ++c)
                dst[c * plane + y * side + x] = in ? p.fg[c] : p.bg[c];
        }
    // Mild additive noise so within-class images are never identical.
    for (std::size_t i = 0; i < 3 * plane; ++i)
        dst[i] = std::clamp(dst[i] + 0.03 * rs.normal(), 0.0, 1.0);
}

}  // namespace

DatasetHandle generate_toy_shapes(const std::string& split, std::size_t resolution) {
    if (split != "train" && split != "test")
        throw DataError("toy-shapes: unknown split '" + split + "'");
    const std::size_t n = split == "train" ? kTrainSize : kTestSize;
    DatasetHandle h;
    h.id = "toy-shapes";
    h.split = split;
    h.num_classes = kClasses;
    h.native_h = h.native_w = resolution;
    h.resolution = resolution;
    h.stats = unit_stats();
    h.labels.resize(n);
    h.raw.resize(n * 3 * resolution * resolution);

    std::vector<real> pix(3 * resolution * resolution);
    for (std::size_t i = 0; i < n; ++i) {
        h.labels[i] = static_cast<int>(i % kClasses);
        render_sample(i, split, resolution, pix.data());
        std::uint8_t* out = h.raw.data() + i * pix.size();
        for (std::size_t j = 0; j < pix.size(); ++j)
            out[j] = static_cast<std::uint8_t>(std::lround(pix[j] * 255.0));
    }
    return h;
}

}  // namespace veil
