#pragma once

// 8-bit RGB images, PNG I/O and conversion to network tensors.

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "ttsr/kernels.hpp"

namespace ttsr {

struct ImageU8 {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> rgb;  // interleaved, row-major

    ImageU8() = default;
    ImageU8(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), rgb(w * h * 3, fill) {}

    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }

    friend bool operator==(const ImageU8&, const ImageU8&) = default;
};

/// Round half away from zero, clamped to [0, 255].
inline std::uint8_t quantize_u8(double v) {
    const double r = std::round(v);
    return static_cast<std::uint8_t>(r < 0 ? 0 : (r > 255 ? 255 : r));
}

// ---------------------------------------------------------------------------
// PNG

namespace detail {
struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

inline ImageU8 read_png(const std::filesystem::path& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open image '" + path.string() + "'");
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
        throw FormatError("'" + path.string() + "' is not a PNG file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng initialization failed");
    }
    ImageU8 img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("corrupt PNG '" + path.string() + "'");
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const png_byte color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
        if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
        png_set_gray_to_rgb(png);
    }
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    if (png_get_rowbytes(png, info) != img.width * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("unsupported PNG layout in '" + path.string() + "'");
    }
    img.rgb.resize(img.width * img.height * 3);
    rows.resize(img.height);
    for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.rgb.data() + y * img.width * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

/// Writes via a temporary file and renames, so failures never leave a
/// partial image at `path`.
inline void write_png(const std::filesystem::path& path, const ImageU8& img) {
    if (img.width == 0 || img.height == 0 || img.rgb.size() != img.width * img.height * 3)
        throw std::invalid_argument("write_png: malformed image");
    const std::filesystem::path tmp = path.string() + ".partial";
    {
        detail::FilePtr fp(std::fopen(tmp.c_str(), "wb"));
        if (!fp) throw std::runtime_error("cannot write image '" + path.string() + "'");
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) {
            png_destroy_write_struct(&png, &info);
            throw std::runtime_error("libpng initialization failed");
        }
        std::vector<png_bytep> rows(img.height);
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            fp.reset();
            std::filesystem::remove(tmp);
            throw std::runtime_error("failed writing PNG '" + path.string() + "'");
        }
        png_init_io(png, fp.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                     PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (std::size_t y = 0; y < img.height; ++y)
            rows[y] = const_cast<png_bytep>(img.rgb.data() + y * img.width * 3);
        png_write_image(png, rows.data());
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    }
    std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Tensor conversion. Network range is [-1, 1] via 2 * (v / 255) - 1.

template <typename T>
Tensor<T> to_tensor(const std::vector<const ImageU8*>& imgs) {
    if (imgs.empty()) throw std::invalid_argument("to_tensor: no images");
    const std::size_t W = imgs[0]->width, H = imgs[0]->height;
    Tensor<T> t({imgs.size(), 3, H, W});
    for (std::size_t n = 0; n < imgs.size(); ++n) {
        if (imgs[n]->width != W || imgs[n]->height != H) throw ShapeError("to_tensor: images differ in size");
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x)
                    t.at(n, c, y, x) = static_cast<T>(2.0 * (imgs[n]->at(y, x, c) / 255.0) - 1.0);
    }
    return t;
}

template <typename T>
Tensor<T> to_tensor(const ImageU8& img) {
    return to_tensor<T>(std::vector<const ImageU8*>{&img});
}

template <typename T>
ImageU8 from_tensor(const Tensor<T>& t, std::size_t n = 0) {
    require_rank(t, 4, "from_tensor");
    if (t.dim(1) != 3) throw ShapeError("from_tensor: expected 3 channels, got " + shape_str(t.shape()));
    ImageU8 img(t.dim(3), t.dim(2));
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < img.height; ++y)
            for (std::size_t x = 0; x < img.width; ++x)
                img.at(y, x, c) = quantize_u8((static_cast<double>(t.at(n, c, y, x)) + 1.0) * 0.5 * 255.0);
    return img;
}

// ---------------------------------------------------------------------------
// Resampling on 8-bit images (computed in double on the [0, 255] scale).

inline Tensor<double> to_raw(const ImageU8& img) {
    Tensor<double> t({1, 3, img.height, img.width});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < img.height; ++y)
            for (std::size_t x = 0; x < img.width; ++x) t.at(0, c, y, x) = img.at(y, x, c);
    return t;
}

inline ImageU8 from_raw(const Tensor<double>& t) {
    ImageU8 img(t.dim(3), t.dim(2));
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < img.height; ++y)
            for (std::size_t x = 0; x < img.width; ++x) img.at(y, x, c) = quantize_u8(t.at(0, c, y, x));
    return img;
}

inline ImageU8 resize_image(const ImageU8& img, std::size_t w, std::size_t h) {
    return from_raw(kernels::resize_bicubic(to_raw(img), h, w));
}

/// Bicubic /4 low-resolution counterpart.
inline ImageU8 make_lr(const ImageU8& hr) {
    if (hr.width % 4 != 0 || hr.height % 4 != 0 || hr.width == 0 || hr.height == 0)
        throw GeometryError("make_lr: extents " + std::to_string(hr.width) + "x" + std::to_string(hr.height) +
                            " not divisible by 4");
    return resize_image(hr, hr.width / 4, hr.height / 4);
}

inline ImageU8 upscale4(const ImageU8& lr) { return resize_image(lr, lr.width * 4, lr.height * 4); }

/// The reference degradation: bicubic /4 then x4, matching LR^'s domain.
inline ImageU8 ref_down_up(const ImageU8& ref) { return upscale4(make_lr(ref)); }

// ---------------------------------------------------------------------------
// Geometric transforms.

inline ImageU8 flip_horizontal(const ImageU8& img) {
    ImageU8 out(img.width, img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
    return out;
}

inline ImageU8 flip_vertical(const ImageU8& img) {
    ImageU8 out(img.width, img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(img.height - 1 - y, x, c);
    return out;
}

/// Counter-clockwise rotation by 90 degrees `quarter_turns` times.
inline ImageU8 rotate90(const ImageU8& img, int quarter_turns) {
    ImageU8 cur = img;
    for (int k = 0; k < ((quarter_turns % 4) + 4) % 4; ++k) {
        ImageU8 out(cur.height, cur.width);
        for (std::size_t y = 0; y < out.height; ++y)
            for (std::size_t x = 0; x < out.width; ++x)
                for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = cur.at(x, cur.width - 1 - y, c);
        cur = std::move(out);
    }
    return cur;
}

inline ImageU8 crop(const ImageU8& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
    if (x0 + w > img.width || y0 + h > img.height) throw GeometryError("crop: window outside image");
    ImageU8 out(w, h);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
    return out;
}

}  // namespace ttsr
