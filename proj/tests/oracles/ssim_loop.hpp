#pragma once

/// Sliding-window SSIM: for every 11x11 window fully inside the image,
/// Gaussian-weighted (sigma 1.5) means, variances and covariance computed
/// directly from the window pixels; averaged over windows and channels.
/// Images smaller than the window use one uniform global window.

#include "splatw/image.hpp"

#include <cmath>
#include <vector>

namespace oracle {

template <typename T>
double ssim(const splatw::Image<T>& a, const splatw::Image<T>& b) {
    const double c1 = 1e-4, c2 = 9e-4;
    const int n = 11;
    auto index = [](double mx, double my, double vx, double vy, double cxy, double c1_, double c2_) {
        return ((2 * mx * my + c1_) * (2 * cxy + c2_)) / ((mx * mx + my * my + c1_) * (vx + vy + c2_));
    };
    double total = 0;
    for (int c = 0; c < a.channels; ++c) {
        if (a.width < n || a.height < n) {
            const double np = double(a.pixel_count());
            double mx = 0, my = 0;
            for (int y = 0; y < a.height; ++y)
                for (int x = 0; x < a.width; ++x) {
                    mx += a(x, y, c) / np;
                    my += b(x, y, c) / np;
                }
            double vx = 0, vy = 0, cxy = 0;
            for (int y = 0; y < a.height; ++y)
                for (int x = 0; x < a.width; ++x) {
                    vx += (a(x, y, c) - mx) * (a(x, y, c) - mx) / np;
                    vy += (b(x, y, c) - my) * (b(x, y, c) - my) / np;
                    cxy += (a(x, y, c) - mx) * (b(x, y, c) - my) / np;
                }
            total += index(mx, my, vx, vy, cxy, c1, c2);
            continue;
        }
        std::vector<double> g(n);
        double gs = 0;
        for (int i = 0; i < n; ++i) {
            g[i] = std::exp(-double((i - 5) * (i - 5)) / (2 * 1.5 * 1.5));
            gs += g[i];
        }
        double acc = 0;
        int count = 0;
        for (int y0 = 0; y0 + n <= a.height; ++y0)
            for (int x0 = 0; x0 + n <= a.width; ++x0) {
                double mx = 0, my = 0;
                for (int j = 0; j < n; ++j)
                    for (int i = 0; i < n; ++i) {
                        const double wgt = g[i] * g[j] / (gs * gs);
                        mx += wgt * a(x0 + i, y0 + j, c);
                        my += wgt * b(x0 + i, y0 + j, c);
                    }
                double vx = 0, vy = 0, cxy = 0;
                for (int j = 0; j < n; ++j)
                    for (int i = 0; i < n; ++i) {
                        const double wgt = g[i] * g[j] / (gs * gs);
                        const double dx = a(x0 + i, y0 + j, c) - mx, dy = b(x0 + i, y0 + j, c) - my;
                        vx += wgt * dx * dx;
                        vy += wgt * dy * dy;
                        cxy += wgt * dx * dy;
                    }
                acc += index(mx, my, vx, vy, cxy, c1, c2);
                ++count;
            }
        total += acc / count;
    }
    return total / a.channels;
}

}  // namespace oracle
