#pragma once

/// @file image.hpp
/// @brief Dense interleaved image buffer and the sRGB transfer function.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace splatw {

/// Row-major, channel-interleaved image: value(x, y, c) = data[(y*width + x)*channels + c].
template <typename T>
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<T> data;

    Image() = default;
    Image(int w, int h, int c, T fill = T(0)) : width(w), height(h), channels(c) {
        if (w <= 0 || h <= 0 || c <= 0) throw std::invalid_argument("Image: dimensions must be positive");
        data.assign(static_cast<std::size_t>(w) * h * c, fill);
    }

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    std::size_t index(int x, int y, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    T& operator()(int x, int y, int c = 0) { return data[index(x, y, c)]; }
    T operator()(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }

    template <typename U>
    Image<U> cast() const {
        Image<U> out;
        out.width = width;
        out.height = height;
        out.channels = channels;
        out.data.assign(data.begin(), data.end());
        return out;
    }

    bool all_finite() const {
        return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
    }
};

using RgbImage = Image<float>;

template <typename T>
void require_same_shape(const Image<T>& a, const Image<T>& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": image shape mismatch (" +
                                    std::to_string(a.width) + "x" + std::to_string(a.height) + "x" +
                                    std::to_string(a.channels) + " vs " + std::to_string(b.width) +
                                    "x" + std::to_string(b.height) + "x" +
                                    std::to_string(b.channels) + ")");
    }
}

/// IEC 61966-2-1 decoding: 8-bit sRGB code value -> linear [0,1].
inline double srgb_to_linear(double s) {
    return s <= 0.04045 ? s / 12.92 : std::pow((s + 0.055) / 1.055, 2.4);
}

inline double linear_to_srgb(double l) {
    l = std::clamp(l, 0.0, 1.0);
    return l <= 0.0031308 ? l * 12.92 : 1.055 * std::pow(l, 1.0 / 2.4) - 0.055;
}

inline std::uint8_t linear_to_srgb8(double l) {
    return static_cast<std::uint8_t>(std::lround(linear_to_srgb(l) * 255.0));
}

/// Lookup table of the 256 linear values an 8-bit sRGB code decodes to.
inline const std::vector<float>& srgb8_decode_table() {
    static const std::vector<float> table = [] {
        std::vector<float> t(256);
        for (int i = 0; i < 256; ++i) t[i] = static_cast<float>(srgb_to_linear(i / 255.0));
        return t;
    }();
    return table;
}

/// Snaps linear values to the nearest value representable by an 8-bit sRGB PNG.
template <typename T>
void quantize_to_srgb8(Image<T>& img) {
    const auto& table = srgb8_decode_table();
    for (auto& v : img.data) v = static_cast<T>(table[linear_to_srgb8(static_cast<double>(v))]);
}

}  // namespace splatw
