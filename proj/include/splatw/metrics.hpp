#pragma once

/// @file metrics.hpp
/// @brief PSNR and SSIM (11x11 Gaussian window, sigma 1.5, dynamic range 1).
///
/// SSIM averages the local index over every window position that fits
/// entirely inside the image, and over channels. Images smaller than the
/// window fall back to one global window with uniform weights.

#include "splatw/image.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace splatw {

template <typename T>
double mse(const Image<T>& a, const Image<T>& b) {
    require_same_shape(a, b, "mse");
    double s = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = double(a.data[i]) - double(b.data[i]);
        s += d * d;
    }
    return s / double(a.data.size());
}

/// 10 log10(1 / MSE); +infinity for identical images.
template <typename T>
double psnr(const Image<T>& a, const Image<T>& b) {
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

/// PSNR restricted to pixels where mask != 0 (all channels).
template <typename T>
double masked_psnr(const Image<T>& a, const Image<T>& b, const Image<std::uint8_t>& mask) {
    require_same_shape(a, b, "masked_psnr");
    double s = 0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < a.pixel_count(); ++p) {
        if (!mask.data[p]) continue;
        for (int c = 0; c < a.channels; ++c) {
            const double d = double(a.data[p * a.channels + c]) - double(b.data[p * a.channels + c]);
            s += d * d;
            ++n;
        }
    }
    if (n == 0) throw std::invalid_argument("masked_psnr: empty mask");
    if (s == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(double(n) / s);
}

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;
};

inline std::vector<double> gaussian_window_1d(int size, double sigma) {
    std::vector<double> w(size);
    double s = 0;
    for (int i = 0; i < size; ++i) {
        const double x = i - (size - 1) / 2.0;
        w[i] = std::exp(-x * x / (2 * sigma * sigma));
        s += w[i];
    }
    for (auto& v : w) v /= s;
    return w;
}

namespace detail {

// out[p] = sum_k w[k] in[p + k] along one axis ("valid" correlation).
inline void correlate_valid_rows(const std::vector<double>& in, int w, int h, const std::vector<double>& k,
                                 std::vector<double>& out) {
    const int n = static_cast<int>(k.size());
    const int ow = w - n + 1;
    out.assign(static_cast<std::size_t>(ow) * h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0;
            for (int i = 0; i < n; ++i) s += k[i] * in[static_cast<std::size_t>(y) * w + x + i];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
}

inline void correlate_valid_cols(const std::vector<double>& in, int w, int h, const std::vector<double>& k,
                                 std::vector<double>& out) {
    const int n = static_cast<int>(k.size());
    const int oh = h - n + 1;
    out.assign(static_cast<std::size_t>(w) * oh, 0.0);
    for (int y = 0; y < oh; ++y)
        for (int i = 0; i < n; ++i) {
            const double kv = k[i];
            const double* src = in.data() + static_cast<std::size_t>(y + i) * w;
            double* dst = out.data() + static_cast<std::size_t>(y) * w;
            for (int x = 0; x < w; ++x) dst[x] += kv * src[x];
        }
}

// 2D valid correlation with the separable window: (h - n + 1) x (w - n + 1).
inline std::vector<double> filter_valid(const std::vector<double>& in, int w, int h, const std::vector<double>& k) {
    std::vector<double> tmp, out;
    correlate_valid_rows(in, w, h, k, tmp);
    correlate_valid_cols(tmp, w - static_cast<int>(k.size()) + 1, h, k, out);
    return out;
}

// Transpose of filter_valid: scatters a (h-n+1) x (w-n+1) map back to h x w.
inline std::vector<double> filter_valid_transpose(const std::vector<double>& map, int w, int h,
                                                  const std::vector<double>& k) {
    const int n = static_cast<int>(k.size());
    const int ow = w - n + 1, oh = h - n + 1;
    std::vector<double> tmp(static_cast<std::size_t>(ow) * h, 0.0);
    for (int y = 0; y < oh; ++y)
        for (int i = 0; i < n; ++i)
            for (int x = 0; x < ow; ++x)
                tmp[static_cast<std::size_t>(y + i) * ow + x] += k[i] * map[static_cast<std::size_t>(y) * ow + x];
    std::vector<double> out(static_cast<std::size_t>(w) * h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            const double v = tmp[static_cast<std::size_t>(y) * ow + x];
            for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(y) * w + x + i] += k[i] * v;
        }
    return out;
}

struct SsimTerms {
    double s, d_mu_x, d_var_x, d_cov;
};

inline SsimTerms ssim_terms(double mx, double my, double vx, double vy, double cxy, const SsimParams& p) {
    const double n1 = 2 * mx * my + p.c1, n2 = 2 * cxy + p.c2;
    const double d1 = mx * mx + my * my + p.c1, d2 = vx + vy + p.c2;
    const double s = (n1 * n2) / (d1 * d2);
    return {s, 2 * my * n2 / (d1 * d2) - 2 * mx * s / d1, -s / d2, 2 * n1 / (d1 * d2)};
}

}  // namespace detail

/// SSIM(a, b) and, when `grad_a` is non-null, d SSIM / d a (same shape as a).
template <typename T>
double ssim_with_gradient(const Image<T>& a, const Image<T>& b, Image<T>* grad_a, const SsimParams& prm = {}) {
    require_same_shape(a, b, "ssim");
    const int w = a.width, h = a.height, ch = a.channels;
    const std::size_t np = a.pixel_count();
    if (grad_a) *grad_a = Image<T>(w, h, ch);
    double total = 0;
    const bool global = w < prm.window || h < prm.window;
    const auto k1 = gaussian_window_1d(prm.window, prm.sigma);

    for (int c = 0; c < ch; ++c) {
        std::vector<double> x(np), y(np);
        for (std::size_t p = 0; p < np; ++p) {
            x[p] = double(a.data[p * ch + c]);
            y[p] = double(b.data[p * ch + c]);
        }
        if (global) {
            double mx = 0, my = 0;
            for (std::size_t p = 0; p < np; ++p) {
                mx += x[p];
                my += y[p];
            }
            mx /= double(np);
            my /= double(np);
            double vx = 0, vy = 0, cxy = 0;
            for (std::size_t p = 0; p < np; ++p) {
                vx += (x[p] - mx) * (x[p] - mx);
                vy += (y[p] - my) * (y[p] - my);
                cxy += (x[p] - mx) * (y[p] - my);
            }
            vx /= double(np);
            vy /= double(np);
            cxy /= double(np);
            const auto t = detail::ssim_terms(mx, my, vx, vy, cxy, prm);
            total += t.s;
            if (grad_a) {
                for (std::size_t p = 0; p < np; ++p) {
                    const double g = (t.d_mu_x + 2 * t.d_var_x * (x[p] - mx) + t.d_cov * (y[p] - my)) / double(np);
                    grad_a->data[p * ch + c] = T(g / ch);
                }
            }
            continue;
        }

        std::vector<double> xx(np), yy(np), xy(np);
        for (std::size_t p = 0; p < np; ++p) {
            xx[p] = x[p] * x[p];
            yy[p] = y[p] * y[p];
            xy[p] = x[p] * y[p];
        }
        const auto mu_x = detail::filter_valid(x, w, h, k1);
        const auto mu_y = detail::filter_valid(y, w, h, k1);
        const auto e_xx = detail::filter_valid(xx, w, h, k1);
        const auto e_yy = detail::filter_valid(yy, w, h, k1);
        const auto e_xy = detail::filter_valid(xy, w, h, k1);
        const std::size_t nw = mu_x.size();
        std::vector<double> m_const, m_x, m_y;
        if (grad_a) {
            m_const.resize(nw);
            m_x.resize(nw);
            m_y.resize(nw);
        }
        double sum = 0;
        for (std::size_t i = 0; i < nw; ++i) {
            const double vx = e_xx[i] - mu_x[i] * mu_x[i];
            const double vy = e_yy[i] - mu_y[i] * mu_y[i];
            const double cxy = e_xy[i] - mu_x[i] * mu_y[i];
            const auto t = detail::ssim_terms(mu_x[i], mu_y[i], vx, vy, cxy, prm);
            sum += t.s;
            if (grad_a) {
                m_const[i] = t.d_mu_x - 2 * t.d_var_x * mu_x[i] - t.d_cov * mu_y[i];
                m_x[i] = 2 * t.d_var_x;
                m_y[i] = t.d_cov;
            }
        }
        total += sum / double(nw);
        if (grad_a) {
            const auto g0 = detail::filter_valid_transpose(m_const, w, h, k1);
            const auto gx = detail::filter_valid_transpose(m_x, w, h, k1);
            const auto gy = detail::filter_valid_transpose(m_y, w, h, k1);
            const double scale = 1.0 / (double(nw) * ch);
            for (std::size_t p = 0; p < np; ++p) {
                grad_a->data[p * ch + c] = T((g0[p] + gx[p] * x[p] + gy[p] * y[p]) * scale);
            }
        }
    }
    return total / ch;
}

template <typename T>
double ssim(const Image<T>& a, const Image<T>& b, const SsimParams& prm = {}) {
    return ssim_with_gradient<T>(a, b, nullptr, prm);
}

}  // namespace splatw
