#pragma once

#include <dugm/errors.hpp>

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace dugm {

/// Planar float image: channel 0 occupies the first width*height values,
/// channel 1 the next, and so on. Rows are stored top to bottom.
struct Raster {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint32_t channels = 0;
    std::vector<float> data;

    Raster() = default;
    Raster(std::uint32_t w, std::uint32_t h, std::uint32_t c = 1, float fill = 0.0f)
        : width(w), height(h), channels(c), data(std::size_t(w) * h * c, fill) {}

    std::size_t plane_size() const { return std::size_t(width) * height; }
    std::size_t size() const { return data.size(); }

    float& at(std::uint32_t x, std::uint32_t y, std::uint32_t c = 0) {
        return data[c * plane_size() + std::size_t(y) * width + x];
    }
    float at(std::uint32_t x, std::uint32_t y, std::uint32_t c = 0) const {
        return data[c * plane_size() + std::size_t(y) * width + x];
    }

    std::span<float> plane(std::uint32_t c) { return {data.data() + c * plane_size(), plane_size()}; }
    std::span<const float> plane(std::uint32_t c) const {
        return {data.data() + c * plane_size(), plane_size()};
    }

    bool same_shape(const Raster& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
    bool same_extent(const Raster& o) const { return width == o.width && height == o.height; }

    Raster channel(std::uint32_t c) const {
        Raster r(width, height, 1);
        auto src = plane(c);
        std::copy(src.begin(), src.end(), r.data.begin());
        return r;
    }

    friend bool operator==(const Raster&, const Raster&) = default;
};

inline void require_same_extent(const Raster& a, const Raster& b, const char* what) {
    if (!a.same_extent(b))
        throw DimensionError(std::string(what) + ": raster dimensions differ (" + std::to_string(a.width) + "x" +
                             std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                             std::to_string(b.height) + ")");
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xffu));
}

inline std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + path.string());
}

} // namespace detail

inline constexpr std::size_t kFrasHeaderSize = 16;

inline std::string encode_fras(const Raster& r) {
    if (r.data.size() != r.plane_size() * r.channels) throw FormatError("raster payload size mismatch");
    std::string out;
    out.reserve(kFrasHeaderSize + 4 * r.data.size());
    out.append("FRAS", 4);
    detail::put_u32(out, r.width);
    detail::put_u32(out, r.height);
    detail::put_u32(out, r.channels);
    for (std::size_t i = 0; i < r.data.size(); ++i) {
        if (!std::isfinite(r.data[i])) throw FormatError("FRAS: non-finite value at index " + std::to_string(i));
        detail::put_u32(out, std::bit_cast<std::uint32_t>(r.data[i]));
    }
    return out;
}

inline Raster decode_fras(std::string_view bytes) {
    if (bytes.size() < kFrasHeaderSize) throw FormatError("FRAS: truncated header");
    if (bytes.substr(0, 4) != "FRAS") throw FormatError("FRAS: bad magic");
    auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    Raster r;
    r.width = detail::get_u32(p + 4);
    r.height = detail::get_u32(p + 8);
    r.channels = detail::get_u32(p + 12);
    std::uint64_t count = std::uint64_t(r.width) * r.height * r.channels;
    if (bytes.size() - kFrasHeaderSize != count * 4) throw FormatError("FRAS: truncated or oversized payload");
    r.data.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        float v = std::bit_cast<float>(detail::get_u32(p + kFrasHeaderSize + 4 * i));
        if (!std::isfinite(v)) throw FormatError("FRAS: non-finite value at index " + std::to_string(i));
        r.data[i] = v;
    }
    return r;
}

inline void save_fras(const Raster& r, const std::filesystem::path& path) {
    detail::write_file(path, encode_fras(r));
}

inline Raster load_fras(const std::filesystem::path& path) { return decode_fras(detail::read_file(path)); }

/// Quantizes a [0,1] value to a byte with round-half-up.
inline std::uint8_t quantize_unit(float v) {
    if (!(v >= 0.0f && v <= 1.0f)) throw RangeError("value outside [0,1]: " + std::to_string(v));
    return std::uint8_t(std::floor(double(v) * 255.0 + 0.5));
}

/// Encodes a single-channel [0,1] raster as an 8-bit grayscale PNG in memory.
inline std::string encode_png8(const Raster& r) {
    if (r.channels != 1) throw DimensionError("encode_png8: expected 1 channel");
    std::vector<std::uint8_t> bytes(r.data.size());
    std::transform(r.data.begin(), r.data.end(), bytes.begin(), quantize_unit);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng: allocation failed");
    }
    std::string out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng: encode failed");
    }
    png_set_write_fn(
        png, &out,
        [](png_structp p, png_bytep data, png_size_t n) {
            static_cast<std::string*>(png_get_io_ptr(p))->append(reinterpret_cast<const char*>(data), n);
        },
        nullptr);
    png_set_IHDR(png, info, r.width, r.height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::uint32_t y = 0; y < r.height; ++y) png_write_row(png, bytes.data() + std::size_t(y) * r.width);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

inline void save_png8(const Raster& r, const std::filesystem::path& path) {
    detail::write_file(path, encode_png8(r));
}

/// Decodes an 8-bit grayscale PNG into raw bytes (row-major). Used for
/// verifying written files.
inline std::vector<std::uint8_t> decode_png8(const std::string& bytes, std::uint32_t& width, std::uint32_t& height) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        throw FormatError(std::string("PNG: ") + image.message);
    image.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
        png_image_free(&image);
        throw FormatError(std::string("PNG: ") + image.message);
    }
    width = image.width;
    height = image.height;
    return pixels;
}

/// Min-max normalizes a single-channel raster into [0,1] for display.
/// Non-finite values map to 1; a constant raster maps to 0.
inline Raster normalize_for_display(const Raster& r) {
    float lo = INFINITY, hi = -INFINITY;
    for (float v : r.data)
        if (std::isfinite(v)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    Raster out(r.width, r.height, r.channels);
    for (std::size_t i = 0; i < r.data.size(); ++i) {
        float v = r.data[i];
        if (!std::isfinite(v))
            out.data[i] = 1.0f;
        else if (hi > lo)
            out.data[i] = std::clamp((v - lo) / (hi - lo), 0.0f, 1.0f);
        else
            out.data[i] = 0.0f;
    }
    return out;
}

} // namespace dugm
