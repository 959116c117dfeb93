#pragma once

/// @file rasterizer.hpp
/// @brief Tiled, differentiable Gaussian splatting on the CPU.
///
/// Forward: project every Gaussian to a 2D ellipse, bin it into 16x16 tiles
/// by the bounding box of its 3-sigma ellipse, sort by (depth, index) and
/// alpha-blend front to back per pixel. Backward: exact reverse mode through
/// blending, the 2D conic, the affine projection Jacobian and the
/// quaternion/log-scale covariance factorization.
///
/// A Gaussian's footprint is truncated at Mahalanobis distance 3 so that the
/// tiled renderer and a global, untiled renderer agree exactly.

#include "splatw/camera.hpp"
#include "splatw/gaussians.hpp"
#include "splatw/image.hpp"
#include "splatw/sh.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

namespace splatw {

template <typename T>
struct RasterConfig {
    int tile_size = 16;
    T blur = T(0.3);                   // px^2 added to the 2D covariance diagonal
    T near_plane = T(0.01);
    T max_sigma = T(0.999);
    T min_transmittance = T(1e-4);
    T cutoff_mahalanobis_sq = T(9);    // 3-sigma footprint
};

template <typename T>
Mat3<T> quat_to_rotation(const Eigen::Matrix<T, 4, 1>& q_unit) {
    const T w = q_unit(0), x = q_unit(1), y = q_unit(2), z = q_unit(3);
    Mat3<T> r;
    r << T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y),
        T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x),
        T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y);
    return r;
}

/// d(loss)/d(q) for a unit quaternion given d(loss)/d(R).
template <typename T>
Eigen::Matrix<T, 4, 1> quat_to_rotation_backward(const Eigen::Matrix<T, 4, 1>& q, const Mat3<T>& g) {
    const T w = q(0), x = q(1), y = q(2), z = q(3);
    Eigen::Matrix<T, 4, 1> out;
    out(0) = T(2) * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    out(1) = T(2) * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - T(2) * x * g(1, 1) - w * g(1, 2) +
                     z * g(2, 0) + w * g(2, 1) - T(2) * x * g(2, 2));
    out(2) = T(2) * (-T(2) * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
                     w * g(2, 0) + z * g(2, 1) - T(2) * y * g(2, 2));
    out(3) = T(2) * (-T(2) * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - T(2) * z * g(1, 1) +
                     y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    return out;
}

/// Sigma = R diag(exp(2 s)) R^T with R from the normalized quaternion.
template <typename T>
Mat3<T> compute_cov3d(const Eigen::Matrix<T, 4, 1>& quat, const Vec3<T>& log_scale) {
    const T n = quat.norm();
    if (!(n > T(0))) throw std::invalid_argument("compute_cov3d: zero quaternion");
    const Mat3<T> r = quat_to_rotation<T>(quat / n);
    const Vec3<T> s = log_scale.array().exp().matrix();
    const Mat3<T> m = r * s.asDiagonal();
    return m * m.transpose();
}

template <typename T>
struct ProjectedGaussian {
    T mean_x = 0, mean_y = 0;                 // pixels
    T cov_xx = 0, cov_xy = 0, cov_yy = 0;     // includes blur floor
    T conic_a = 0, conic_b = 0, conic_c = 0;  // inverse of the 2D covariance
    T depth = 0;
    T opacity = 0;
    std::array<T, 3> color{};
    std::uint32_t source = 0;
    bool valid = false;
    int tile_x0 = 0, tile_x1 = 0, tile_y0 = 0, tile_y1 = 0;  // half-open tile ranges
};

/// Geometry of one projected Gaussian; std::nullopt when it is behind the
/// near plane or its 2D covariance is numerically degenerate (culled, not
/// an error).
template <typename T>
std::optional<ProjectedGaussian<T>> project_gaussian(const Vec3<T>& mean, const Mat3<T>& cov3d,
                                                      const CameraView<T>& cam,
                                                      const RasterConfig<T>& cfg = {}) {
    const Vec3<T> t = cam.to_camera(mean);
    if (!(t.z() > cfg.near_plane)) return std::nullopt;
    const T iz = T(1) / t.z();
    Eigen::Matrix<T, 2, 3> j;
    j << cam.fx * iz, T(0), -cam.fx * t.x() * iz * iz, T(0), cam.fy * iz, -cam.fy * t.y() * iz * iz;
    const Eigen::Matrix<T, 2, 3> tm = j * cam.rotation;
    const Eigen::Matrix<T, 2, 2> cov2 = tm * cov3d * tm.transpose();

    ProjectedGaussian<T> p;
    p.mean_x = cam.fx * t.x() * iz + cam.cx;
    p.mean_y = cam.fy * t.y() * iz + cam.cy;
    p.cov_xx = cov2(0, 0) + cfg.blur;
    p.cov_xy = T(0.5) * (cov2(0, 1) + cov2(1, 0));
    p.cov_yy = cov2(1, 1) + cfg.blur;
    const T det = p.cov_xx * p.cov_yy - p.cov_xy * p.cov_xy;
    // det >= blur^2 in exact arithmetic; huge footprints can cancel to <= 0 in float.
    if (!(det > T(0)) || !std::isfinite(det)) return std::nullopt;
    const T idet = T(1) / det;
    p.conic_a = p.cov_yy * idet;
    p.conic_b = -p.cov_xy * idet;
    p.conic_c = p.cov_xx * idet;
    p.depth = t.z();
    p.valid = true;
    return p;
}

template <typename T>
struct RenderOutput {
    Image<T> rgb;    // 3 channels
    Image<T> alpha;  // 1 channel, 1 - final transmittance

    // Retained for the backward pass.
    std::vector<ProjectedGaussian<T>> projected;          // one per source Gaussian
    std::vector<std::vector<std::uint32_t>> tile_lists;   // sorted source indices per tile
    std::vector<T> final_transmittance;                   // per pixel
    std::vector<std::uint32_t> entries_processed;         // per pixel, prefix of its tile list
    CameraView<T> camera;
    RasterConfig<T> config;
    int tiles_x = 0, tiles_y = 0;

    std::size_t gaussian_count() const { return projected.size(); }
};

/// Projects every Gaussian and attaches its color. Invisible ones keep valid = false.
template <typename T>
std::vector<ProjectedGaussian<T>> project_cloud(const GaussianCloud<T>& cloud, const RowMatrix<T>& colors,
                                                const CameraView<T>& cam, const RasterConfig<T>& cfg = {}) {
    const std::size_t n = cloud.size();
    if (static_cast<std::size_t>(colors.rows()) != n || colors.cols() != 3) {
        throw std::invalid_argument("project_cloud: colors must be N x 3");
    }
    std::vector<ProjectedGaussian<T>> out(n);
    const int tiles_x = (cam.width + cfg.tile_size - 1) / cfg.tile_size;
    const int tiles_y = (cam.height + cfg.tile_size - 1) / cfg.tile_size;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
        const auto i = static_cast<Eigen::Index>(ii);
        const Eigen::Matrix<T, 4, 1> q = cloud.quats.row(i).transpose();
        const Vec3<T> s = cloud.log_scales.row(i).transpose();
        const Vec3<T> mu = cloud.means.row(i).transpose();
        auto p = project_gaussian<T>(mu, compute_cov3d<T>(q, s), cam, cfg);
        ProjectedGaussian<T>& dst = out[ii];
        dst.source = static_cast<std::uint32_t>(ii);
        if (!p) continue;
        dst = *p;
        dst.source = static_cast<std::uint32_t>(ii);
        dst.opacity = sigmoid(cloud.opacity_logits(i));
        dst.color = {colors(i, 0), colors(i, 1), colors(i, 2)};
        const T rx = std::sqrt(dst.cov_xx * cfg.cutoff_mahalanobis_sq);
        const T ry = std::sqrt(dst.cov_yy * cfg.cutoff_mahalanobis_sq);
        const T ts = T(cfg.tile_size);
        auto clamp_tile = [](T v, int hi) {
            if (!(v > T(0))) return 0;
            if (v >= T(hi)) return hi;
            return static_cast<int>(v);
        };
        dst.tile_x0 = clamp_tile(std::floor((dst.mean_x - rx) / ts), tiles_x);
        dst.tile_x1 = clamp_tile(std::floor((dst.mean_x + rx) / ts) + T(1), tiles_x);
        dst.tile_y0 = clamp_tile(std::floor((dst.mean_y - ry) / ts), tiles_y);
        dst.tile_y1 = clamp_tile(std::floor((dst.mean_y + ry) / ts) + T(1), tiles_y);
    }
    return out;
}

namespace detail {

/// Squared Mahalanobis distance of pixel center (px, py) to a projected Gaussian.
template <typename T>
inline T mahalanobis_sq(const ProjectedGaussian<T>& g, T px, T py, T& dx, T& dy) {
    dx = px - g.mean_x;
    dy = py - g.mean_y;
    return g.conic_a * dx * dx + T(2) * g.conic_b * dx * dy + g.conic_c * dy * dy;
}

}  // namespace detail

/// Alpha-blends pre-projected Gaussians. Colors are taken from `projected`.
template <typename T>
RenderOutput<T> render_forward(std::vector<ProjectedGaussian<T>> projected, const CameraView<T>& cam,
                               const RasterConfig<T>& cfg = {}) {
    RenderOutput<T> out;
    out.camera = cam;
    out.config = cfg;
    out.rgb = Image<T>(cam.width, cam.height, 3);
    out.alpha = Image<T>(cam.width, cam.height, 1);
    out.tiles_x = (cam.width + cfg.tile_size - 1) / cfg.tile_size;
    out.tiles_y = (cam.height + cfg.tile_size - 1) / cfg.tile_size;
    out.final_transmittance.assign(out.rgb.pixel_count(), T(1));
    out.entries_processed.assign(out.rgb.pixel_count(), 0);
    out.tile_lists.assign(static_cast<std::size_t>(out.tiles_x) * out.tiles_y, {});

    // Global (depth, index) order, then stable distribution into tiles.
    std::vector<std::uint32_t> order;
    order.reserve(projected.size());
    for (const auto& g : projected)
        if (g.valid && g.tile_x0 < g.tile_x1 && g.tile_y0 < g.tile_y1) order.push_back(g.source);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (projected[a].depth != projected[b].depth) return projected[a].depth < projected[b].depth;
        return a < b;
    });
    for (std::uint32_t idx : order) {
        const auto& g = projected[idx];
        for (int ty = g.tile_y0; ty < g.tile_y1; ++ty)
            for (int tx = g.tile_x0; tx < g.tile_x1; ++tx)
                out.tile_lists[static_cast<std::size_t>(ty) * out.tiles_x + tx].push_back(idx);
    }
    out.projected = std::move(projected);

    const int ntiles = out.tiles_x * out.tiles_y;
#pragma omp parallel for schedule(dynamic)
    for (int tile = 0; tile < ntiles; ++tile) {
        const int tx = tile % out.tiles_x, ty = tile / out.tiles_x;
        const auto& list = out.tile_lists[tile];
        const int x_end = std::min(cam.width, (tx + 1) * cfg.tile_size);
        const int y_end = std::min(cam.height, (ty + 1) * cfg.tile_size);
        for (int y = ty * cfg.tile_size; y < y_end; ++y) {
            for (int x = tx * cfg.tile_size; x < x_end; ++x) {
                const T px = T(x) + T(0.5), py = T(y) + T(0.5);
                T trans = 1;
                std::array<T, 3> c{};
                std::uint32_t processed = static_cast<std::uint32_t>(list.size());
                for (std::size_t k = 0; k < list.size(); ++k) {
                    const auto& g = out.projected[list[k]];
                    T dx, dy;
                    const T q = detail::mahalanobis_sq(g, px, py, dx, dy);
                    if (q > cfg.cutoff_mahalanobis_sq) continue;
                    const T sigma = std::min(g.opacity * std::exp(T(-0.5) * q), cfg.max_sigma);
                    const T w = sigma * trans;
                    c[0] += g.color[0] * w;
                    c[1] += g.color[1] * w;
                    c[2] += g.color[2] * w;
                    trans *= (T(1) - sigma);
                    if (trans < cfg.min_transmittance) {
                        processed = static_cast<std::uint32_t>(k + 1);
                        break;
                    }
                }
                const std::size_t p = static_cast<std::size_t>(y) * cam.width + x;
                out.rgb.data[p * 3 + 0] = c[0];
                out.rgb.data[p * 3 + 1] = c[1];
                out.rgb.data[p * 3 + 2] = c[2];
                out.alpha.data[p] = T(1) - trans;
                out.final_transmittance[p] = trans;
                out.entries_processed[p] = processed;
            }
        }
    }
    return out;
}

/// Projects and renders `cloud` with per-Gaussian `colors` (N x 3).
template <typename T>
RenderOutput<T> render(const GaussianCloud<T>& cloud, const RowMatrix<T>& colors, const CameraView<T>& cam,
                       const RasterConfig<T>& cfg = {}) {
    return render_forward<T>(project_cloud<T>(cloud, colors, cam, cfg), cam, cfg);
}

template <typename T>
struct RasterGradients {
    CloudGradients<T> cloud;      // features left at zero
    RowMatrix<T> colors;          // N x 3
    std::vector<T> mean2d_ndc;    // |dL/d mean2d| in normalized device units, per Gaussian
    std::vector<bool> visible;    // binned into at least one tile
};

/// d(loss)/d(mean, quat, log_scale) of one projected Gaussian given gradients on
/// its 2D mean and on its (full, symmetric) 2D covariance.
template <typename T>
void project_gaussian_backward(const Vec3<T>& mean, const Eigen::Matrix<T, 4, 1>& quat, const Vec3<T>& log_scale,
                               const CameraView<T>& cam, T g_mean_x, T g_mean_y,
                               const Eigen::Matrix<T, 2, 2>& g_cov2, Vec3<T>& g_mean,
                               Eigen::Matrix<T, 4, 1>& g_quat, Vec3<T>& g_log_scale) {
    const Vec3<T> t = cam.to_camera(mean);
    const T iz = T(1) / t.z();
    const T iz2 = iz * iz;
    Eigen::Matrix<T, 2, 3> j;
    j << cam.fx * iz, T(0), -cam.fx * t.x() * iz2, T(0), cam.fy * iz, -cam.fy * t.y() * iz2;
    const Eigen::Matrix<T, 2, 3> tm = j * cam.rotation;

    const T qn = quat.norm();
    const Eigen::Matrix<T, 4, 1> qu = quat / qn;
    const Mat3<T> rq = quat_to_rotation<T>(qu);
    const Vec3<T> s = log_scale.array().exp().matrix();
    const Mat3<T> m = rq * s.asDiagonal();
    const Mat3<T> cov3 = m * m.transpose();

    // Sigma' = Tm Sigma Tm^T + blur I
    const Mat3<T> g_cov3 = tm.transpose() * g_cov2 * tm;
    const Eigen::Matrix<T, 2, 3> g_tm = T(2) * g_cov2 * tm * cov3;
    const Eigen::Matrix<T, 2, 3> g_j = g_tm * cam.rotation.transpose();

    Vec3<T> g_t;
    g_t.x() = g_j(0, 2) * (-cam.fx * iz2);
    g_t.y() = g_j(1, 2) * (-cam.fy * iz2);
    g_t.z() = g_j(0, 0) * (-cam.fx * iz2) + g_j(0, 2) * (T(2) * cam.fx * t.x() * iz2 * iz) +
              g_j(1, 1) * (-cam.fy * iz2) + g_j(1, 2) * (T(2) * cam.fy * t.y() * iz2 * iz);
    g_t.x() += g_mean_x * cam.fx * iz;
    g_t.y() += g_mean_y * cam.fy * iz;
    g_t.z() += -g_mean_x * cam.fx * t.x() * iz2 - g_mean_y * cam.fy * t.y() * iz2;
    g_mean = cam.rotation.transpose() * g_t;

    // Sigma = M M^T, M = R diag(s)
    const Mat3<T> g_m = T(2) * g_cov3 * m;
    const Mat3<T> g_r = g_m * s.asDiagonal();
    for (int k = 0; k < 3; ++k) g_log_scale(k) = rq.col(k).dot(g_m.col(k)) * s(k);
    const Eigen::Matrix<T, 4, 1> g_qu = quat_to_rotation_backward<T>(qu, g_r);
    g_quat = (g_qu - qu * qu.dot(g_qu)) / qn;
}

/// Reverse-mode gradients of a render given d(loss)/d(rgb) (3 channels) and,
/// optionally, d(loss)/d(alpha) (1 channel; pass an empty image to skip).
template <typename T>
RasterGradients<T> render_backward(const GaussianCloud<T>& cloud, const RenderOutput<T>& fwd,
                                   const Image<T>& grad_rgb, const Image<T>& grad_alpha) {
    const auto& cam = fwd.camera;
    const auto& cfg = fwd.config;
    if (grad_rgb.width != cam.width || grad_rgb.height != cam.height || grad_rgb.channels != 3) {
        throw std::logic_error("render_backward: rgb gradient shape mismatch");
    }
    const bool has_alpha = !grad_alpha.data.empty();
    if (has_alpha &&
        (grad_alpha.width != cam.width || grad_alpha.height != cam.height || grad_alpha.channels != 1)) {
        throw std::logic_error("render_backward: alpha gradient shape mismatch");
    }
    const std::size_t n = cloud.size();
    if (fwd.projected.size() != n) throw std::logic_error("render_backward: cloud does not match forward pass");

    struct Partial {
        T mean_x = 0, mean_y = 0, conic_a = 0, conic_b = 0, conic_c = 0, opacity = 0;
        T color[3] = {0, 0, 0};
    };
    const int ntiles = fwd.tiles_x * fwd.tiles_y;
    std::vector<std::vector<Partial>> partials(ntiles);

#pragma omp parallel for schedule(dynamic)
    for (int tile = 0; tile < ntiles; ++tile) {
        const auto& list = fwd.tile_lists[tile];
        auto& part = partials[tile];
        part.assign(list.size(), Partial{});
        if (list.empty()) continue;
        const int tx = tile % fwd.tiles_x, ty = tile / fwd.tiles_x;
        const int x_end = std::min(cam.width, (tx + 1) * cfg.tile_size);
        const int y_end = std::min(cam.height, (ty + 1) * cfg.tile_size);
        for (int y = ty * cfg.tile_size; y < y_end; ++y) {
            for (int x = tx * cfg.tile_size; x < x_end; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * cam.width + x;
                const T gc[3] = {grad_rgb.data[p * 3], grad_rgb.data[p * 3 + 1], grad_rgb.data[p * 3 + 2]};
                const T ga = has_alpha ? grad_alpha.data[p] : T(0);
                if (gc[0] == T(0) && gc[1] == T(0) && gc[2] == T(0) && ga == T(0)) continue;
                const T px = T(x) + T(0.5), py = T(y) + T(0.5);
                const T t_final = fwd.final_transmittance[p];
                T trans = t_final;
                T behind[3] = {0, 0, 0};
                for (std::size_t kk = fwd.entries_processed[p]; kk-- > 0;) {
                    const auto& g = fwd.projected[list[kk]];
                    T dx, dy;
                    const T q = detail::mahalanobis_sq(g, px, py, dx, dy);
                    if (q > cfg.cutoff_mahalanobis_sq) continue;
                    const T falloff = std::exp(T(-0.5) * q);
                    const T raw = g.opacity * falloff;
                    const T sigma = std::min(raw, cfg.max_sigma);
                    const T one_minus = T(1) - sigma;
                    const T t_before = trans / one_minus;
                    const T w = sigma * t_before;
                    Partial& acc = part[kk];
                    T dsigma = ga * t_final / one_minus;
                    for (int c = 0; c < 3; ++c) {
                        acc.color[c] += gc[c] * w;
                        dsigma += gc[c] * (g.color[c] * t_before - behind[c] / one_minus);
                        behind[c] += g.color[c] * w;
                    }
                    trans = t_before;
                    if (raw < cfg.max_sigma) {
                        acc.opacity += dsigma * falloff;
                        const T dq = T(-0.5) * dsigma * sigma;
                        acc.mean_x += dq * (T(-2) * (g.conic_a * dx + g.conic_b * dy));
                        acc.mean_y += dq * (T(-2) * (g.conic_b * dx + g.conic_c * dy));
                        acc.conic_a += dq * dx * dx;
                        acc.conic_b += dq * dx * dy;
                        acc.conic_c += dq * dy * dy;
                    }
                }
            }
        }
    }

    // Fixed-order reduction over tiles keeps results independent of scheduling.
    std::vector<Partial> total(n);
    for (int tile = 0; tile < ntiles; ++tile) {
        const auto& list = fwd.tile_lists[tile];
        const auto& part = partials[tile];
        for (std::size_t k = 0; k < list.size(); ++k) {
            Partial& d = total[list[k]];
            const Partial& s = part[k];
            d.mean_x += s.mean_x;
            d.mean_y += s.mean_y;
            d.conic_a += s.conic_a;
            d.conic_b += s.conic_b;
            d.conic_c += s.conic_c;
            d.opacity += s.opacity;
            for (int c = 0; c < 3; ++c) d.color[c] += s.color[c];
        }
    }

    RasterGradients<T> out;
    out.cloud.reset(n, cloud.feature_dim());
    out.colors.setZero(static_cast<Eigen::Index>(n), 3);
    out.mean2d_ndc.assign(n, T(0));
    out.visible.assign(n, false);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
        const auto i = static_cast<Eigen::Index>(ii);
        const auto& g = fwd.projected[ii];
        if (!g.valid || g.tile_x0 >= g.tile_x1 || g.tile_y0 >= g.tile_y1) continue;
        out.visible[ii] = true;
        const Partial& d = total[ii];
        for (int c = 0; c < 3; ++c) out.colors(i, c) = d.color[c];
        out.cloud.opacity_logits(i) = d.opacity * g.opacity * (T(1) - g.opacity);

        // G_cov2 = -P G_P P with P the conic.
        Eigen::Matrix<T, 2, 2> conic, g_conic;
        conic << g.conic_a, g.conic_b, g.conic_b, g.conic_c;
        g_conic << d.conic_a, d.conic_b, d.conic_b, d.conic_c;
        const Eigen::Matrix<T, 2, 2> g_cov2 = -conic * g_conic * conic;

        Vec3<T> g_mean, g_ls;
        Eigen::Matrix<T, 4, 1> g_q;
        project_gaussian_backward<T>(cloud.means.row(i).transpose(), cloud.quats.row(i).transpose(),
                                     cloud.log_scales.row(i).transpose(), cam, d.mean_x, d.mean_y, g_cov2,
                                     g_mean, g_q, g_ls);
        out.cloud.means.row(i) = g_mean.transpose();
        out.cloud.quats.row(i) = g_q.transpose();
        out.cloud.log_scales.row(i) = g_ls.transpose();
        const T nx = d.mean_x * T(cam.width) * T(0.5);
        const T ny = d.mean_y * T(cam.height) * T(0.5);
        out.mean2d_ndc[ii] = std::sqrt(nx * nx + ny * ny);
    }
    return out;
}

}  // namespace splatw
