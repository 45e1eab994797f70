#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "dswinir/error.hpp"
#include "dswinir/tensor.hpp"

namespace dswinir {

/// Planar image with values in [0, 1]; channels is 1 (PGM) or 3 (PPM).
struct Image {
    std::size_t width = 0, height = 0, channels = 3;
    std::vector<float> data;  // [channels, height, width]

    float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
};

inline std::uint8_t quantize(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// Parses binary PPM (P6) or PGM (P5) bytes with maxval 255.
inline Image decode_pnm(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5'))
        throw IoError("bad magic: expected P6 or P5", 0);
    Image img;
    img.channels = bytes[1] == '6' ? 3 : 1;
    std::size_t pos = 2;
    auto skip = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto number = [&](const char* what) {
        skip();
        const std::size_t start = pos;
        std::size_t v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + std::size_t(bytes[pos] - '0');
            if (v > (std::size_t(1) << 24)) throw IoError(std::string(what) + " too large", start);
            ++pos;
        }
        if (pos == start) throw IoError(std::string("expected ") + what, start);
        return v;
    };
    img.width = number("width");
    img.height = number("height");
    const std::size_t maxval_at = (skip(), pos);
    const std::size_t maxval = number("maxval");
    if (maxval != 255) throw IoError("maxval " + std::to_string(maxval) + " is not 255", maxval_at);
    if (img.width == 0 || img.height == 0) throw IoError("zero image extent", maxval_at);
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw IoError("expected whitespace after header", pos);
    ++pos;
    const std::size_t n = img.width * img.height * img.channels;
    if (bytes.size() - pos < n)
        throw IoError("truncated payload: missing " + std::to_string(n - (bytes.size() - pos)) + " bytes", bytes.size());
    img.data.resize(n);
    const std::size_t plane = img.width * img.height;
    for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t c = 0; c < img.channels; ++c)
            img.data[c * plane + p] = float(bytes[pos + p * img.channels + c]) / 255.0f;
    return img;
}

inline std::vector<std::uint8_t> encode_pnm(const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw IoError("images must have 1 or 3 channels", 0);
    const std::string header = std::string(img.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(img.width) + " " +
                               std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    const std::size_t plane = img.width * img.height;
    out.reserve(out.size() + plane * img.channels);
    for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t c = 0; c < img.channels; ++c) out.push_back(quantize(img.data[c * plane + p]));
    return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string(), 0);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string(), 0);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string(), 0);
}

inline Image load_image(const std::filesystem::path& path) { return decode_pnm(read_file(path)); }
inline void save_image(const Image& img, const std::filesystem::path& path) { write_file(path, encode_pnm(img)); }

/// [1, 3, H, W] tensor; grayscale is replicated into three channels.
template <Scalar T = float>
Tensor<T> image_to_tensor(const Image& img) {
    const std::size_t plane = img.width * img.height;
    Tensor<T> t({1, 3, img.height, img.width});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < plane; ++p)
            t[c * plane + p] = static_cast<T>(img.data[(img.channels == 3 ? c : 0) * plane + p]);
    return t;
}

/// Inverse of image_to_tensor for batch item `b`; `channels` 1 averages RGB.
template <Scalar T>
Image tensor_to_image(const Tensor<T>& t, std::size_t channels = 3, std::size_t b = 0) {
    if (t.rank() != 4 || t.dim(1) != 3) throw ShapeError("expected [B,3,H,W], got " + shape_str(t.shape()));
    Image img{t.dim(3), t.dim(2), channels, {}};
    const std::size_t plane = img.width * img.height;
    img.data.resize(plane * channels);
    const T* src = t.ptr() + b * 3 * plane;
    for (std::size_t p = 0; p < plane; ++p) {
        if (channels == 3) {
            for (std::size_t c = 0; c < 3; ++c) img.data[c * plane + p] = std::clamp(float(src[c * plane + p]), 0.0f, 1.0f);
        } else {
            const double m = (double(src[p]) + double(src[plane + p]) + double(src[2 * plane + p])) / 3.0;
            img.data[p] = std::clamp(float(m), 0.0f, 1.0f);
        }
    }
    return img;
}

}  // namespace dswinir
