#pragma once

/// @file tensor_file.hpp
/// @brief Binary tensor blobs.
///
/// Layout (all integers little-endian):
///   bytes 0..7   magic "SPWTNSR1"
///   uint32       dtype code (1 float32, 2 float64, 3 uint64, 4 uint8)
///   uint32       ndim
///   uint64[ndim] shape
///   payload      prod(shape) elements, little-endian, row-major

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace splatw::io {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class DType : std::uint32_t { f32 = 1, f64 = 2, u64 = 3, u8 = 4 };

inline std::size_t dtype_size(DType d) {
    switch (d) {
        case DType::f32: return 4;
        case DType::f64: return 8;
        case DType::u64: return 8;
        case DType::u8: return 1;
    }
    throw FormatError("unknown dtype code " + std::to_string(static_cast<std::uint32_t>(d)));
}

template <typename T>
constexpr DType dtype_of() {
    if constexpr (std::is_same_v<T, float>) return DType::f32;
    else if constexpr (std::is_same_v<T, double>) return DType::f64;
    else if constexpr (std::is_same_v<T, std::uint64_t>) return DType::u64;
    else {
        static_assert(std::is_same_v<T, std::uint8_t>, "unsupported tensor element type");
        return DType::u8;
    }
}

inline constexpr std::array<char, 8> kTensorMagic = {'S', 'P', 'W', 'T', 'N', 'S', 'R', '1'};

/// Raw tensor: element bytes are stored little-endian.
struct Tensor {
    DType dtype = DType::f32;
    std::vector<std::uint64_t> shape;
    std::vector<unsigned char> bytes;

    std::size_t numel() const {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                               [](std::size_t a, std::uint64_t b) { return a * static_cast<std::size_t>(b); });
    }

    template <typename T>
    static Tensor from(const T* data, std::vector<std::uint64_t> shape) {
        static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
        Tensor t;
        t.dtype = dtype_of<T>();
        t.shape = std::move(shape);
        t.bytes.resize(t.numel() * sizeof(T));
        if (!t.bytes.empty()) std::memcpy(t.bytes.data(), data, t.bytes.size());
        return t;
    }

    template <typename T>
    static Tensor from(const std::vector<T>& v) {
        return from(v.data(), {static_cast<std::uint64_t>(v.size())});
    }

    template <typename T>
    std::vector<T> as() const {
        if (dtype != dtype_of<T>()) {
            throw FormatError("tensor dtype code " + std::to_string(static_cast<std::uint32_t>(dtype)) +
                              " does not match the requested element type");
        }
        std::vector<T> out(numel());
        if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
        return out;
    }

    void expect_shape(const std::vector<std::uint64_t>& want, const std::string& what) const {
        if (shape != want) {
            auto fmt = [](const std::vector<std::uint64_t>& s) {
                std::string r = "[";
                for (std::size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
                return r + "]";
            };
            throw FormatError(what + ": shape " + fmt(shape) + ", expected " + fmt(want));
        }
    }
};

namespace detail {
template <typename U>
void put_le(std::ostream& os, U v) {
    unsigned char b[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), sizeof(U));
}
template <typename U>
U get_le(std::istream& is, const std::string& what) {
    unsigned char b[sizeof(U)];
    if (!is.read(reinterpret_cast<char*>(b), sizeof(U))) throw FormatError(what + ": truncated header");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
    return v;
}
}  // namespace detail

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    os.write(kTensorMagic.data(), kTensorMagic.size());
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.dtype));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) detail::put_le<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
    if (!os) throw FormatError("write failed: " + path.string());
}

inline Tensor read_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("missing tensor file " + path.string());
    const std::string what = path.string();
    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size())) throw FormatError(what + ": truncated header");
    if (magic != kTensorMagic) throw FormatError(what + ": bad magic");
    Tensor t;
    t.dtype = static_cast<DType>(detail::get_le<std::uint32_t>(is, what));
    const std::size_t esize = dtype_size(t.dtype);
    const auto ndim = detail::get_le<std::uint32_t>(is, what);
    if (ndim > 8) throw FormatError(what + ": implausible rank " + std::to_string(ndim));
    for (std::uint32_t i = 0; i < ndim; ++i) t.shape.push_back(detail::get_le<std::uint64_t>(is, what));
    t.bytes.resize(t.numel() * esize);
    if (!t.bytes.empty() && !is.read(reinterpret_cast<char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()))) {
        throw FormatError(what + ": truncated payload");
    }
    if (is.peek() != std::char_traits<char>::eof()) throw FormatError(what + ": trailing bytes after payload");
    return t;
}

}  // namespace splatw::io
