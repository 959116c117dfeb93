#pragma once

/// @file robust_mask.hpp
/// @brief Transient-pixel masking driven by per-image L1 statistics.
///
/// The fraction k of pixels to reject is interpolated between Per_min and
/// Per_max by where the image's current pre-mask L1 sits between its
/// historical minimum and maximum. Pixels whose residual exceeds the (1-k)
/// quantile are outliers unless they lie in the upper band of the image;
/// the labels are then smoothed by a 5x5 box and thresholded at T_*.

#include "splatw/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace splatw {

struct MaskConfig {
    double per_min = 0.05;
    double per_max = 0.40;
    double upper_fraction = 0.4;  // rows with y <= upper_fraction * H are always inliers
    int blur_size = 5;
    double t_star = 0.4;

    void validate() const {
        if (!(per_min >= 0.0 && per_min <= per_max && per_max <= 1.0)) {
            throw std::invalid_argument("mask config: need 0 <= per_min <= per_max <= 1");
        }
        if (blur_size < 1 || blur_size % 2 == 0) throw std::invalid_argument("mask config: blur size must be odd");
    }
};

struct ImageLossStats {
    double l1_min = 0, l1_max = 0, l1_current = 0;
    bool initialized = false;
};

class MaskState {
public:
    MaskState() = default;
    MaskState(std::size_t num_images, const MaskConfig& cfg) : config_(cfg), stats_(num_images) {
        cfg.validate();
    }

    const MaskConfig& config() const { return config_; }
    std::size_t size() const { return stats_.size(); }
    const ImageLossStats& stats(std::size_t j) const { return stats_.at(j); }
    std::vector<ImageLossStats>& all_stats() { return stats_; }
    const std::vector<ImageLossStats>& all_stats() const { return stats_; }

    /// Records image j's pre-mask L1.
    void update_stats(std::size_t j, double l1) {
        if (!std::isfinite(l1) || l1 < 0) throw std::invalid_argument("update_stats: L1 must be finite and >= 0");
        ImageLossStats& s = stats_.at(j);
        s.l1_current = l1;
        if (!s.initialized) {
            s.l1_min = s.l1_max = l1;
            s.initialized = true;
            return;
        }
        s.l1_min = std::min(s.l1_min, l1);
        s.l1_max = std::max(s.l1_max, l1);
    }

    /// k = (cur - min)/(max - min) * (Per_max - Per_min) + Per_min; Per_min when max == min.
    double mask_fraction(std::size_t j) const {
        const ImageLossStats& s = stats_.at(j);
        if (!s.initialized) throw std::logic_error("mask_fraction: no statistics for image " + std::to_string(j));
        const double span = s.l1_max - s.l1_min;
        if (!(span > 0.0)) return config_.per_min;
        const double t = (s.l1_current - s.l1_min) / span;
        return t * (config_.per_max - config_.per_min) + config_.per_min;
    }

private:
    MaskConfig config_;
    std::vector<ImageLossStats> stats_;
};

/// Per-pixel residual: channel mean of |a - b|.
template <typename T>
Image<T> mean_abs_residual(const Image<T>& a, const Image<T>& b) {
    require_same_shape(a, b, "mean_abs_residual");
    Image<T> r(a.width, a.height, 1);
    const int ch = a.channels;
    for (std::size_t p = 0; p < a.pixel_count(); ++p) {
        T s = 0;
        for (int c = 0; c < ch; ++c) s += std::abs(a.data[p * ch + c] - b.data[p * ch + c]);
        r.data[p] = s / T(ch);
    }
    return r;
}

/// Lower-interpolated quantile: sorted[floor(q * (n - 1))].
template <typename T>
T lower_quantile(std::vector<T> values, double q) {
    if (values.empty()) throw std::invalid_argument("lower_quantile: empty input");
    q = std::clamp(q, 0.0, 1.0);
    const auto idx = static_cast<std::size_t>(std::floor(q * double(values.size() - 1)));
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(idx), values.end());
    return values[idx];
}

template <typename T>
struct RobustMask {
    Image<std::uint8_t> weights;   // W: 1 inlier (learn), 0 outlier (ignore)
    Image<std::uint8_t> raw;       // labels before smoothing
    T threshold = 0;               // T_epsilon
    double k = 0;

    double outlier_fraction() const {
        std::size_t n = 0;
        for (auto v : weights.data) n += v ? 0 : 1;
        return double(n) / double(weights.data.size());
    }
};

/// Builds W from residuals eps (1 channel) and reject fraction k.
///
/// The box average at the border is taken over in-image pixels only, so a
/// field of inliers stays an inlier field everywhere after smoothing.
template <typename T>
RobustMask<T> build_mask(const Image<T>& residuals, double k, const MaskConfig& cfg = {}) {
    if (residuals.channels != 1) throw std::invalid_argument("build_mask: residuals must have one channel");
    const int w = residuals.width, h = residuals.height;
    RobustMask<T> m;
    m.k = k;
    m.threshold = lower_quantile<T>(residuals.data, 1.0 - k);
    m.raw = Image<std::uint8_t>(w, h, 1);
    const double upper = cfg.upper_fraction * double(h);
    for (int y = 0; y < h; ++y) {
        const bool in_upper = double(y) <= upper;
        for (int x = 0; x < w; ++x) m.raw(x, y) = (residuals(x, y) <= m.threshold || in_upper) ? 1 : 0;
    }

    // Separable box sums of labels and of in-image counts.
    const int r = cfg.blur_size / 2;
    std::vector<int> row_sum(static_cast<std::size_t>(w) * h), row_cnt(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int s = 0, c = 0;
            for (int dx = -r; dx <= r; ++dx) {
                const int xx = x + dx;
                if (xx < 0 || xx >= w) continue;
                s += m.raw(xx, y);
                ++c;
            }
            row_sum[static_cast<std::size_t>(y) * w + x] = s;
            row_cnt[static_cast<std::size_t>(y) * w + x] = c;
        }
    }
    m.weights = Image<std::uint8_t>(w, h, 1);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int s = 0, c = 0;
            for (int dy = -r; dy <= r; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= h) continue;
                s += row_sum[static_cast<std::size_t>(yy) * w + x];
                c += row_cnt[static_cast<std::size_t>(yy) * w + x];
            }
            m.weights(x, y) = (double(s) / double(c) >= cfg.t_star) ? 1 : 0;
        }
    }
    return m;
}

}  // namespace splatw
