#include "veil/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include <png.h>

#include "veil/errors.hpp"

namespace veil {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Tensor read_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open image " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng read-struct allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng info-struct allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed to decode PNG " + path.string());
    }

    png_init_io(png, fp.get());
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);

    // Normalize every input flavor to 8-bit RGB.
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    std::vector<png_byte> row(png_get_rowbytes(png, info));
    Tensor out({3, h, w});
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                out.data()[(c * h + y) * w + x] = static_cast<real>(row[x * 3 + c]) / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw ContractError("write_png expects a [3,H,W] tensor");
    const std::size_t h = image.dim(1), w = image.dim(2);

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot create image " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng write-struct allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng info-struct allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed to encode PNG " + path.string());
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    // Deterministic output: fixed compression settings, no timestamp chunk.
    png_set_compression_level(png, 6);
    png_write_info(png, info);

    std::vector<png_byte> row(w * 3);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const real v = std::clamp(image.data()[(c * h + y) * w + x], 0.0, 1.0);
                row[x * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
    if (image.ndim() != 3) throw ContractError("resize expects a [C,H,W] tensor");
    const std::size_t ch = image.dim(0), ih = image.dim(1), iw = image.dim(2);
    if (ih == out_h && iw == out_w) return image;
    Tensor out({ch, out_h, out_w});
    const real sy = static_cast<real>(ih) / static_cast<real>(out_h);
    const real sx = static_cast<real>(iw) / static_cast<real>(out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        const real fy = std::clamp((static_cast<real>(y) + 0.5) * sy - 0.5, 0.0,
                                   static_cast<real>(ih - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, ih - 1);
        const real wy = fy - static_cast<real>(y0);
        for (std::size_t x = 0; x < out_w; ++x) {
            const real fx = std::clamp((static_cast<real>(x) + 0.5) * sx - 0.5, 0.0,
                                       static_cast<real>(iw - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, iw - 1);
            const real wx = fx - static_cast<real>(x0);
            for (std::size_t c = 0; c < ch; ++c) {
                const real* p = image.data() + c * ih * iw;
                const real top = p[y0 * iw + x0] * (1.0 - wx) + p[y0 * iw + x1] * wx;
                const real bot = p[y1 * iw + x0] * (1.0 - wx) + p[y1 * iw + x1] * wx;
                out.data()[(c * out_h + y) * out_w + x] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return out;
}

}  // namespace veil
