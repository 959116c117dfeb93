#pragma once

/// @file loss.hpp
/// @brief Photometric loss terms under a per-pixel inlier mask W.

#include "splatw/image.hpp"
#include "splatw/metrics.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace splatw {

template <typename T>
struct LossValue {
    double value = 0;
    Image<T> grad;  // d(value)/d(pred)
};

namespace detail {
inline void require_mask(const Image<std::uint8_t>& w, int width, int height, const char* what) {
    if (w.width != width || w.height != height || w.channels != 1) {
        throw std::invalid_argument(std::string(what) + ": mask shape mismatch");
    }
}
}  // namespace detail

/// sum_r W(r) |pred - gt| / (3 H W): masked pixels contribute zero but
/// still count in the normalization, so the loss scale does not jump when
/// the mask fraction changes.
template <typename T>
LossValue<T> masked_l1(const Image<T>& pred, const Image<T>& gt, const Image<std::uint8_t>& w) {
    require_same_shape(pred, gt, "masked_l1");
    detail::require_mask(w, pred.width, pred.height, "masked_l1");
    LossValue<T> out;
    out.grad = Image<T>(pred.width, pred.height, pred.channels);
    const int ch = pred.channels;
    const double norm = 1.0 / double(pred.data.size());
    double s = 0;
    for (std::size_t p = 0; p < pred.pixel_count(); ++p) {
        if (!w.data[p]) continue;
        for (int c = 0; c < ch; ++c) {
            const std::size_t i = p * ch + c;
            const double d = double(pred.data[i]) - double(gt.data[i]);
            s += std::abs(d);
            out.grad.data[i] = T(d > 0 ? norm : (d < 0 ? -norm : 0.0));
        }
    }
    out.value = s * norm;
    return out;
}

/// Unmasked mean absolute error.
template <typename T>
double mean_l1(const Image<T>& a, const Image<T>& b) {
    require_same_shape(a, b, "mean_l1");
    double s = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += std::abs(double(a.data[i]) - double(b.data[i]));
    return s / double(a.data.size());
}

/// D-SSIM = (1 - SSIM(pred, gt'))/2 with gt' = W gt + (1 - W) pred: outlier
/// pixels of the target are replaced by the prediction itself. The gradient
/// is the exact derivative, including the path through gt'.
template <typename T>
LossValue<T> masked_dssim(const Image<T>& pred, const Image<T>& gt, const Image<std::uint8_t>& w,
                          const SsimParams& prm = {}) {
    require_same_shape(pred, gt, "masked_dssim");
    detail::require_mask(w, pred.width, pred.height, "masked_dssim");
    const int ch = pred.channels;
    Image<T> target = gt;
    for (std::size_t p = 0; p < pred.pixel_count(); ++p)
        if (!w.data[p])
            for (int c = 0; c < ch; ++c) target.data[p * ch + c] = pred.data[p * ch + c];

    LossValue<T> out;
    Image<T> g_pred, g_target;
    const double s = ssim_with_gradient<T>(pred, target, &g_pred, prm);
    ssim_with_gradient<T>(target, pred, &g_target, prm);
    out.value = (1.0 - s) / 2.0;
    out.grad = Image<T>(pred.width, pred.height, ch);
    for (std::size_t p = 0; p < pred.pixel_count(); ++p) {
        for (int c = 0; c < ch; ++c) {
            const std::size_t i = p * ch + c;
            const T g = g_pred.data[i] + (w.data[p] ? T(0) : g_target.data[i]);
            out.grad.data[i] = T(-0.5) * g;
        }
    }
    return out;
}

}  // namespace splatw
