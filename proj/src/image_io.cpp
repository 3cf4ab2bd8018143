#include "vidiff/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace vidiff {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::filesystem::path& path, const TensorF& chw) {
    if (chw.rank() != 3 || (chw.dim(0) != 1 && chw.dim(0) != 3))
        throw ContractError("write_png expects [1|3, H, W], got " + shape_str(chw.shape()));
    const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open " + path.string() + " for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialisation failed");
    }
    std::vector<png_byte> row(static_cast<std::size_t>(w) * c);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, w, h, 8, c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j)
            for (int ch = 0; ch < c; ++ch)
                row[static_cast<std::size_t>(j) * c + ch] = quantize_unit(chw[(static_cast<std::size_t>(ch) * h + i) * w + j]);
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

TensorF read_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open " + path.string());
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw IoError(path.string() + " is not a PNG file");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialisation failed");
    }
    std::vector<png_byte> pixels;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed decoding " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int c = png_get_channels(png, info);
    pixels.resize(static_cast<std::size_t>(w) * h * c);
    rows.resize(static_cast<std::size_t>(h));
    for (int i = 0; i < h; ++i) rows[i] = pixels.data() + static_cast<std::size_t>(i) * w * c;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    if (c != 3) throw IoError(path.string() + ": unsupported channel layout");

    TensorF out({3, h, w});
    for (int ch = 0; ch < 3; ++ch)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                out[(static_cast<std::size_t>(ch) * h + i) * w + j] =
                    pixels[(static_cast<std::size_t>(i) * w + j) * 3 + ch] / 255.f * 2.f - 1.f;
    return out;
}

TensorF resize_bilinear(const TensorF& chw, int height, int width) {
    const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    if (h == height && w == width) return chw;
    TensorF out({c, height, width});
    for (int i = 0; i < height; ++i) {
        const double sy = std::clamp((i + 0.5) * h / height - 0.5, 0.0, h - 1.0);
        const int y0 = static_cast<int>(sy), y1 = std::min(y0 + 1, h - 1);
        const double fy = sy - y0;
        for (int j = 0; j < width; ++j) {
            const double sx = std::clamp((j + 0.5) * w / width - 0.5, 0.0, w - 1.0);
            const int x0 = static_cast<int>(sx), x1 = std::min(x0 + 1, w - 1);
            const double fx = sx - x0;
            for (int ch = 0; ch < c; ++ch) {
                auto px = [&](int y, int x) { return chw[(static_cast<std::size_t>(ch) * h + y) * w + x]; };
                const double v = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x1)) +
                                 fy * ((1 - fx) * px(y1, x0) + fx * px(y1, x1));
                out[(static_cast<std::size_t>(ch) * height + i) * width + j] = static_cast<float>(v);
            }
        }
    }
    return out;
}

}  // namespace vidiff
