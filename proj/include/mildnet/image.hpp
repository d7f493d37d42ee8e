#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "mildnet/errors.hpp"
#include "mildnet/tensor.hpp"

// Plain (non-graph) image containers and file I/O. Images are 8-bit RGB PNG
// on disk and float [0,1] in memory; instance/lumen label maps are 16-bit
// single-channel PNG with the pixel value as the instance id. Float grids
// (uncertainty maps) round-trip through a small raw format: the magic bytes
// "MGRD", u32 height, u32 width (little-endian), then row-major f32 values.

namespace mild {

struct ImageRGB {
    int h = 0, w = 0;
    std::vector<float> v;  // h*w*3 interleaved, [0,1]

    float& at(int y, int x, int c) { return v[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    float at(int y, int x, int c) const { return v[(static_cast<size_t>(y) * w + x) * 3 + c]; }
};

struct Grid {
    int h = 0, w = 0;
    std::vector<float> v;  // h*w

    float& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    float at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

// 0 = background, k >= 1 = instance id. Ids may be sparse.
struct InstanceMap {
    int h = 0, w = 0;
    std::vector<int32_t> v;

    int32_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    int32_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

inline ImageRGB make_image(int h, int w, float r = 0, float g = 0, float b = 0) {
    ImageRGB im;
    im.h = h;
    im.w = w;
    im.v.resize(static_cast<size_t>(h) * w * 3);
    for (size_t i = 0; i < im.v.size(); i += 3) {
        im.v[i] = r;
        im.v[i + 1] = g;
        im.v[i + 2] = b;
    }
    return im;
}

inline Grid make_grid(int h, int w, float fill = 0.0f) {
    return Grid{h, w, std::vector<float>(static_cast<size_t>(h) * w, fill)};
}

inline InstanceMap make_instance_map(int h, int w) {
    return InstanceMap{h, w, std::vector<int32_t>(static_cast<size_t>(h) * w, 0)};
}

// --- tensor bridges ----------------------------------------------------------

inline TensorPtr image_to_tensor(const ImageRGB& im) {
    auto t = make_tensor({1, 3, im.h, im.w});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < im.h; ++y)
            for (int x = 0; x < im.w; ++x) t->at(0, c, y, x) = im.at(y, x, c);
    return t;
}

// one channel of one batch sample
inline Grid tensor_channel_to_grid(const Tensor& t, int n, int c) {
    Grid g = make_grid(t.shape[2], t.shape[3]);
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x) g.at(y, x) = t.at(n, c, y, x);
    return g;
}

// --- PNG I/O ------------------------------------------------------------------

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline uint8_t to_u8(float v) {
    float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    return static_cast<uint8_t>(c * 255.0f + 0.5f);
}

}  // namespace detail

inline ImageRGB read_image_png(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open image: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw DataError("libpng init failed for " + path);
    std::vector<std::vector<uint8_t>> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("failed to decode PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int w = static_cast<int>(png_get_image_width(png, info));
    rows.assign(static_cast<size_t>(h), std::vector<uint8_t>(png_get_rowbytes(png, info)));
    std::vector<png_bytep> row_ptrs(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y) row_ptrs[static_cast<size_t>(y)] = rows[static_cast<size_t>(y)].data();
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    ImageRGB im = make_image(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                im.at(y, x, c) = rows[static_cast<size_t>(y)][static_cast<size_t>(x) * 3 + c] / 255.0f;
    return im;
}

inline void write_image_png(const std::string& path, const ImageRGB& im) {
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot write image: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw DataError("libpng init failed for " + path);
    std::vector<std::vector<uint8_t>> rows(static_cast<size_t>(im.h), std::vector<uint8_t>(static_cast<size_t>(im.w) * 3));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("failed to encode PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(im.w), static_cast<png_uint_32>(im.h), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < im.h; ++y) {
        auto& row = rows[static_cast<size_t>(y)];
        for (int x = 0; x < im.w; ++x)
            for (int c = 0; c < 3; ++c) row[static_cast<size_t>(x) * 3 + c] = detail::to_u8(im.at(y, x, c));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline InstanceMap read_label_png(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open label map: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw DataError("libpng init failed for " + path);
    std::vector<std::vector<uint8_t>> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("failed to decode PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const int color_type = png_get_color_type(png, info);
    if (color_type != PNG_COLOR_TYPE_GRAY) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("label map must be single-channel grayscale PNG: " + path);
    }
    if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int depth = png_get_bit_depth(png, info);
    rows.assign(static_cast<size_t>(h), std::vector<uint8_t>(png_get_rowbytes(png, info)));
    std::vector<png_bytep> row_ptrs(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y) row_ptrs[static_cast<size_t>(y)] = rows[static_cast<size_t>(y)].data();
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    InstanceMap m = make_instance_map(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto& row = rows[static_cast<size_t>(y)];
            m.at(y, x) = depth == 16 ? (row[static_cast<size_t>(x) * 2] << 8) | row[static_cast<size_t>(x) * 2 + 1]
                                     : row[static_cast<size_t>(x)];
        }
    return m;
}

inline void write_label_png(const std::string& path, const InstanceMap& m) {
    for (int32_t id : m.v)
        if (id < 0 || id > 65535) throw DataError("instance id " + std::to_string(id) + " out of 16-bit range: " + path);
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot write label map: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw DataError("libpng init failed for " + path);
    std::vector<std::vector<uint8_t>> rows(static_cast<size_t>(m.h), std::vector<uint8_t>(static_cast<size_t>(m.w) * 2));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("failed to encode PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(m.w), static_cast<png_uint_32>(m.h), 16, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < m.h; ++y) {
        auto& row = rows[static_cast<size_t>(y)];
        for (int x = 0; x < m.w; ++x) {
            uint16_t id = static_cast<uint16_t>(m.at(y, x));
            row[static_cast<size_t>(x) * 2] = static_cast<uint8_t>(id >> 8);  // PNG is big-endian
            row[static_cast<size_t>(x) * 2 + 1] = static_cast<uint8_t>(id & 0xff);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// 16-bit visualization of a float grid; returns the scale used so the caller
// can record it in a sidecar file (value = pixel / scale).
inline double write_grid_png16(const std::string& path, const Grid& g) {
    float maxv = 0.0f;
    for (float v : g.v) maxv = std::max(maxv, v);
    const double scale = maxv > 0.0f ? 65535.0 / maxv : 1.0;
    InstanceMap q = make_instance_map(g.h, g.w);
    for (size_t i = 0; i < g.v.size(); ++i)
        q.v[i] = static_cast<int32_t>(std::min(65535.0, std::max(0.0, g.v[i] * scale + 0.5)));
    write_label_png(path, q);
    return scale;
}

// --- raw float grids ----------------------------------------------------------

inline void write_grid_f32(const std::string& path, const Grid& g) {
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot write grid: " + path);
    uint32_t h = static_cast<uint32_t>(g.h), w = static_cast<uint32_t>(g.w);
    if (std::fwrite("MGRD", 1, 4, fp.get()) != 4 || std::fwrite(&h, 4, 1, fp.get()) != 1 ||
        std::fwrite(&w, 4, 1, fp.get()) != 1 ||
        std::fwrite(g.v.data(), 4, g.v.size(), fp.get()) != g.v.size())
        throw DataError("short write: " + path);
}

inline Grid read_grid_f32(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open grid: " + path);
    char magic[4];
    uint32_t h = 0, w = 0;
    if (std::fread(magic, 1, 4, fp.get()) != 4 || std::memcmp(magic, "MGRD", 4) != 0)
        throw DataError("bad grid magic: " + path);
    if (std::fread(&h, 4, 1, fp.get()) != 1 || std::fread(&w, 4, 1, fp.get()) != 1)
        throw DataError("truncated grid header: " + path);
    Grid g = make_grid(static_cast<int>(h), static_cast<int>(w));
    if (std::fread(g.v.data(), 4, g.v.size(), fp.get()) != g.v.size())
        throw DataError("truncated grid data: " + path);
    return g;
}

}  // namespace mild
