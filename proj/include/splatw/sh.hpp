#pragma once

/// @file sh.hpp
/// @brief Real spherical-harmonics basis (degree <= 3) and sigmoid color recovery.
///
/// Basis functions are the real SH with Condon-Shortley signs folded into the
/// constants, the table used by most splatting renderers. Coefficients are
/// flattened band by band: (0,0), (1,-1), (1,0), (1,1), (2,-2), ... , (3,3).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace splatw {

inline constexpr int kMaxShDegree = 3;
inline constexpr std::size_t kMaxShBasis = 16;

constexpr std::size_t sh_basis_count(int degree) {
    return static_cast<std::size_t>((degree + 1) * (degree + 1));
}

namespace sh_const {
inline constexpr double C0 = 0.28209479177387814;  // 1/(2 sqrt(pi))
inline constexpr double C1 = 0.4886025119029199;   // sqrt(3/(4 pi))
inline constexpr double C2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                 -1.0925484305920792, 0.5462742152960396};
inline constexpr double C3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                                 0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                                 -0.5900435899266435};
}  // namespace sh_const

/// Unit vector. Construction normalizes; a zero vector is rejected.
template <typename T>
class Direction {
public:
    Direction(T x, T y, T z) {
        const T n = std::sqrt(x * x + y * y + z * z);
        if (!(n > T(0)) || !std::isfinite(n)) {
            throw std::invalid_argument("Direction: vector must be finite and nonzero");
        }
        x_ = x / n;
        y_ = y / n;
        z_ = z / n;
    }

    T x() const { return x_; }
    T y() const { return y_; }
    T z() const { return z_; }

    Direction operator-() const { return Direction(-x_, -y_, -z_); }

private:
    T x_{}, y_{}, z_{1};
};

inline void check_sh_degree(int degree) {
    if (degree < 0 || degree > kMaxShDegree) {
        throw std::invalid_argument("SH degree must be in [0, 3], got " + std::to_string(degree));
    }
}

/// Writes Y_l^m(x,y,z) for all l <= degree into `out` (size >= (degree+1)^2).
/// (x,y,z) is assumed unit length.
template <typename T>
inline void eval_sh_basis_into(T x, T y, T z, int degree, std::span<T> out) {
    using namespace sh_const;
    out[0] = T(C0);
    if (degree < 1) return;
    out[1] = T(-C1) * y;
    out[2] = T(C1) * z;
    out[3] = T(-C1) * x;
    if (degree < 2) return;
    const T xx = x * x, yy = y * y, zz = z * z;
    const T xy = x * y, yz = y * z, xz = x * z;
    out[4] = T(C2[0]) * xy;
    out[5] = T(C2[1]) * yz;
    out[6] = T(C2[2]) * (T(2) * zz - xx - yy);
    out[7] = T(C2[3]) * xz;
    out[8] = T(C2[4]) * (xx - yy);
    if (degree < 3) return;
    out[9] = T(C3[0]) * y * (T(3) * xx - yy);
    out[10] = T(C3[1]) * xy * z;
    out[11] = T(C3[2]) * y * (T(4) * zz - xx - yy);
    out[12] = T(C3[3]) * z * (T(2) * zz - T(3) * xx - T(3) * yy);
    out[13] = T(C3[4]) * x * (T(4) * zz - xx - yy);
    out[14] = T(C3[5]) * z * (xx - yy);
    out[15] = T(C3[6]) * x * (xx - T(3) * yy);
}

/// d Y_l^m / d(x, y, z) of the polynomial form above (no unit-norm
/// projection), written as out[3 * i + axis] for basis index i.
template <typename T>
inline void eval_sh_basis_jacobian_into(T x, T y, T z, int degree, std::span<T> out) {
    using namespace sh_const;
    std::fill(out.begin(), out.begin() + 3 * static_cast<std::ptrdiff_t>(sh_basis_count(degree)), T(0));
    if (degree < 1) return;
    auto set = [&](int i, T dx, T dy, T dz) {
        out[3 * i] = dx;
        out[3 * i + 1] = dy;
        out[3 * i + 2] = dz;
    };
    const T c1 = T(C1);
    set(1, 0, -c1, 0);
    set(2, 0, 0, c1);
    set(3, -c1, 0, 0);
    if (degree < 2) return;
    const T xx = x * x, yy = y * y, zz = z * z;
    set(4, T(C2[0]) * y, T(C2[0]) * x, 0);
    set(5, 0, T(C2[1]) * z, T(C2[1]) * y);
    set(6, T(-2 * C2[2]) * x, T(-2 * C2[2]) * y, T(4 * C2[2]) * z);
    set(7, T(C2[3]) * z, 0, T(C2[3]) * x);
    set(8, T(2 * C2[4]) * x, T(-2 * C2[4]) * y, 0);
    if (degree < 3) return;
    set(9, T(6 * C3[0]) * x * y, T(C3[0]) * (T(3) * xx - T(3) * yy), 0);
    set(10, T(C3[1]) * y * z, T(C3[1]) * x * z, T(C3[1]) * x * y);
    set(11, T(-2 * C3[2]) * x * y, T(C3[2]) * (T(4) * zz - xx - T(3) * yy), T(8 * C3[2]) * y * z);
    set(12, T(-6 * C3[3]) * x * z, T(-6 * C3[3]) * y * z, T(C3[3]) * (T(6) * zz - T(3) * xx - T(3) * yy));
    set(13, T(C3[4]) * (T(4) * zz - T(3) * xx - yy), T(-2 * C3[4]) * x * y, T(8 * C3[4]) * x * z);
    set(14, T(2 * C3[5]) * x * z, T(-2 * C3[5]) * y * z, T(C3[5]) * (xx - yy));
    set(15, T(C3[6]) * (T(3) * xx - T(3) * yy), T(-6 * C3[6]) * x * y, 0);
}

/// Real SH basis values for `dir`, length (degree+1)^2.
template <typename T>
std::vector<T> eval_sh_basis(const Direction<T>& dir, int degree) {
    check_sh_degree(degree);
    std::vector<T> out(sh_basis_count(degree));
    eval_sh_basis_into<T>(dir.x(), dir.y(), dir.z(), degree, out);
    return out;
}

template <typename T>
inline T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

/// SH coefficients for three color channels, channel-major:
/// values[c * (degree+1)^2 + k].
template <typename T>
struct ShCoefficients {
    int degree = 0;
    std::vector<T> values;

    ShCoefficients() : values(3, T(0)) {}
    explicit ShCoefficients(int deg) : degree(deg) {
        check_sh_degree(deg);
        values.assign(3 * sh_basis_count(deg), T(0));
    }
    ShCoefficients(int deg, std::vector<T> v) : degree(deg), values(std::move(v)) {
        check_sh_degree(deg);
        if (values.size() != 3 * sh_basis_count(deg)) {
            throw std::invalid_argument("ShCoefficients: expected " +
                                        std::to_string(3 * sh_basis_count(deg)) + " values, got " +
                                        std::to_string(values.size()));
        }
        for (T v_i : values) {
            if (!std::isfinite(v_i)) throw std::invalid_argument("ShCoefficients: non-finite value");
        }
    }

    std::size_t per_channel() const { return sh_basis_count(degree); }
    T& at(int channel, std::size_t k) { return values[channel * per_channel() + k]; }
    T at(int channel, std::size_t k) const { return values[channel * per_channel() + k]; }
};

/// Per-channel logits: dot product of each channel's coefficients with `basis`.
/// `coeffs` holds 3 * basis.size() values, channel-major.
template <typename T>
inline std::array<T, 3> sh_logits(std::span<const T> coeffs, std::span<const T> basis) {
    const std::size_t k = basis.size();
    std::array<T, 3> logit{};
    for (int c = 0; c < 3; ++c) {
        T acc = 0;
        const T* row = coeffs.data() + c * k;
        for (std::size_t i = 0; i < k; ++i) acc += row[i] * basis[i];
        logit[c] = acc;
    }
    return logit;
}

template <typename T>
inline std::array<T, 3> sh_color(std::span<const T> coeffs, std::span<const T> basis) {
    auto l = sh_logits(coeffs, basis);
    return {sigmoid(l[0]), sigmoid(l[1]), sigmoid(l[2])};
}

/// Accumulates d(loss)/d(coeffs) into `grad` given the recovered color and
/// d(loss)/d(color).
template <typename T>
inline void sh_color_backward(std::span<const T> basis, const std::array<T, 3>& color,
                              const std::array<T, 3>& upstream, std::span<T> grad) {
    const std::size_t k = basis.size();
    for (int c = 0; c < 3; ++c) {
        const T dlogit = upstream[c] * color[c] * (T(1) - color[c]);
        T* row = grad.data() + c * k;
        for (std::size_t i = 0; i < k; ++i) row[i] += dlogit * basis[i];
    }
}

/// Sigmoid(sum_lm b_lm Y_lm(dir)) per channel.
template <typename T>
std::array<T, 3> sh_to_color(const ShCoefficients<T>& coeffs, const Direction<T>& dir) {
    std::array<T, kMaxShBasis> basis{};
    const std::size_t k = coeffs.per_channel();
    eval_sh_basis_into<T>(dir.x(), dir.y(), dir.z(), coeffs.degree, basis);
    return sh_color<T>(coeffs.values, std::span<const T>(basis.data(), k));
}

/// d(loss)/d(coeffs) for sh_to_color given d(loss)/d(color).
template <typename T>
std::vector<T> sh_to_color_gradient(const ShCoefficients<T>& coeffs, const Direction<T>& dir,
                                    const std::array<T, 3>& upstream) {
    std::array<T, kMaxShBasis> basis{};
    const std::size_t k = coeffs.per_channel();
    eval_sh_basis_into<T>(dir.x(), dir.y(), dir.z(), coeffs.degree, basis);
    std::span<const T> b(basis.data(), k);
    const auto color = sh_color<T>(coeffs.values, b);
    std::vector<T> grad(coeffs.values.size(), T(0));
    sh_color_backward<T>(b, color, upstream, grad);
    return grad;
}

}  // namespace splatw
