#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "itl/tensor.hpp"

namespace itl {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    require(f != nullptr, "cannot open file: " + path);
    return f;
}

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReader() { if (png) png_destroy_read_struct(&png, &info, nullptr); }
};

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriter() { if (png) png_destroy_write_struct(&png, &info); }
};

}  // namespace detail

// Grayscale PNG, any bit depth up to 16, expanded to 16-bit values.
inline Image read_png_gray(const std::string& path) {
    auto f = detail::open_file(path, "rb");
    png_byte header[8];
    require(std::fread(header, 1, 8, f.get()) == 8 && !png_sig_cmp(header, 0, 8),
            "not a PNG file: " + path);

    detail::PngReader r;
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(r.png != nullptr, "png_create_read_struct failed");
    r.info = png_create_info_struct(r.png);
    require(r.info != nullptr, "png_create_info_struct failed");
    if (setjmp(png_jmpbuf(r.png))) throw std::runtime_error("PNG decode error: " + path);

    png_init_io(r.png, f.get());
    png_set_sig_bytes(r.png, 8);
    png_read_info(r.png, r.info);

    const int w = static_cast<int>(png_get_image_width(r.png, r.info));
    const int h = static_cast<int>(png_get_image_height(r.png, r.info));
    const int color = png_get_color_type(r.png, r.info);
    const int depth = png_get_bit_depth(r.png, r.info);
    require(color == PNG_COLOR_TYPE_GRAY, "expected single-channel grayscale PNG: " + path);
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
    png_read_update_info(r.png, r.info);

    const int bytes_per_sample = depth == 16 ? 2 : 1;
    std::vector<png_byte> row(static_cast<std::size_t>(w) * bytes_per_sample);
    Image img(h, w);
    for (int y = 0; y < h; ++y) {
        png_read_row(r.png, row.data(), nullptr);
        for (int x = 0; x < w; ++x) {
            if (bytes_per_sample == 2) {
                // PNG is big-endian
                img.at(y, x) = static_cast<double>((row[2 * x] << 8) | row[2 * x + 1]);
            } else {
                img.at(y, x) = static_cast<double>(row[x]);
            }
        }
    }
    png_read_end(r.png, nullptr);
    return img;
}

// 16-bit grayscale PNG; values clamped to [0, 65535] and rounded.
inline void write_png_gray16(const std::string& path, const Image& img) {
    auto f = detail::open_file(path, "wb");
    detail::PngWriter wr;
    wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(wr.png != nullptr, "png_create_write_struct failed");
    wr.info = png_create_info_struct(wr.png);
    require(wr.info != nullptr, "png_create_info_struct failed");
    if (setjmp(png_jmpbuf(wr.png))) throw std::runtime_error("PNG encode error: " + path);

    png_init_io(wr.png, f.get());
    png_set_IHDR(wr.png, wr.info, img.w, img.h, 16, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wr.png, wr.info);

    std::vector<png_byte> row(static_cast<std::size_t>(img.w) * 2);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            double d = img.at(y, x);
            if (d < 0) d = 0;
            if (d > 65535) d = 65535;
            const auto u = static_cast<std::uint16_t>(d + 0.5);
            row[2 * x] = static_cast<png_byte>(u >> 8);
            row[2 * x + 1] = static_cast<png_byte>(u & 0xff);
        }
        png_write_row(wr.png, row.data());
    }
    png_write_end(wr.png, nullptr);
}

// 8-bit mask PNG with values {0, 255} <-> {0, 1}. Anything else is rejected.
inline Mask read_png_mask(const std::string& path) {
    Image raw = read_png_gray(path);
    Mask m(raw.h, raw.w);
    for (std::size_t i = 0; i < raw.v.size(); ++i) {
        const double d = raw.v[i];
        if (d == 0.0) m.v[i] = 0;
        else if (d == 255.0) m.v[i] = 1;
        else throw std::runtime_error("non-binary mask (value " + std::to_string(d) +
                                      ") in " + path);
    }
    return m;
}

inline void write_png_mask(const std::string& path, const Mask& m) {
    auto f = detail::open_file(path, "wb");
    detail::PngWriter wr;
    wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(wr.png != nullptr, "png_create_write_struct failed");
    wr.info = png_create_info_struct(wr.png);
    require(wr.info != nullptr, "png_create_info_struct failed");
    if (setjmp(png_jmpbuf(wr.png))) throw std::runtime_error("PNG encode error: " + path);

    png_init_io(wr.png, f.get());
    png_set_IHDR(wr.png, wr.info, m.w, m.h, 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wr.png, wr.info);

    std::vector<png_byte> row(static_cast<std::size_t>(m.w));
    for (int y = 0; y < m.h; ++y) {
        for (int x = 0; x < m.w; ++x) row[x] = m.at(y, x) ? 255 : 0;
        png_write_row(wr.png, row.data());
    }
    png_write_end(wr.png, nullptr);
}

// Raw float32 slice: header of three little-endian int32 (H, W, 1) followed
// by H*W little-endian float32 row-major samples.
inline Image read_raw_f32(const std::string& path) {
    auto f = detail::open_file(path, "rb");
    std::int32_t hdr[3];
    require(std::fread(hdr, sizeof(std::int32_t), 3, f.get()) == 3,
            "truncated raw header: " + path);
    require(hdr[0] > 0 && hdr[1] > 0 && hdr[2] == 1,
            "bad raw header (want H,W,1): " + path);
    const int h = hdr[0], w = hdr[1];
    std::vector<float> buf(static_cast<std::size_t>(h) * w);
    require(std::fread(buf.data(), sizeof(float), buf.size(), f.get()) == buf.size(),
            "truncated raw data: " + path);
    Image img(h, w);
    for (std::size_t i = 0; i < buf.size(); ++i) img.v[i] = static_cast<double>(buf[i]);
    return img;
}

inline void write_raw_f32(const std::string& path, const Image& img) {
    auto f = detail::open_file(path, "wb");
    const std::int32_t hdr[3] = {img.h, img.w, 1};
    require(std::fwrite(hdr, sizeof(std::int32_t), 3, f.get()) == 3, "write failed: " + path);
    std::vector<float> buf(img.v.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(img.v[i]);
    require(std::fwrite(buf.data(), sizeof(float), buf.size(), f.get()) == buf.size(),
            "write failed: " + path);
}

}  // namespace itl
