#pragma once

/// Central finite differences of the full training objective (masked L1 +
/// masked D-SSIM + alpha loss, masks held fixed) against the analytic
/// reverse pass, per parameter class, in float64.

#include "splatw/pipeline.hpp"
#include "splatw/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace oracle {

inline double central_difference(double& param, double h, const std::function<double()>& f) {
    const double orig = param;
    param = orig + h;
    const double fp = f();
    param = orig - h;
    const double fm = f();
    param = orig;
    return (fp - fm) / (2 * h);
}

struct ClassError {
    double max_rel = 0;
    double max_abs_grad = 0;
    int checked = 0;
};

/// A small scene with well separated depths: camera at the origin looking
/// down +z, Gaussians at distinct depths in [2, 4], all projecting inside
/// the image; networks with non-zero output layers so every path carries
/// gradient.
struct GradientScene {
    splatw::SceneModel<double> model;
    splatw::CameraView<double> cam;
    splatw::Image<double> gt;
    splatw::Image<std::uint8_t> w, selected;
};

inline GradientScene make_gradient_scene(std::uint64_t seed, int n_gaussians = 8, int size = 8) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    GradientScene s;
    s.cam.fx = s.cam.fy = size;
    s.cam.cx = s.cam.cy = size / 2.0;
    s.cam.width = s.cam.height = size;

    auto& m = s.model;
    m.cloud = splatw::GaussianCloud<double>(static_cast<std::size_t>(n_gaussians));
    std::vector<double> depths(n_gaussians);
    for (int i = 0; i < n_gaussians; ++i) depths[i] = 2.0 + 2.0 * (i + 0.2 + 0.6 * u(rng)) / n_gaussians;
    std::shuffle(depths.begin(), depths.end(), rng);
    for (int i = 0; i < n_gaussians; ++i) {
        const double z = depths[i];
        m.cloud.means.row(i) << (u(rng) - 0.5) * 0.6 * z, (u(rng) - 0.5) * 0.6 * z, z;
        Eigen::Vector4d q(1.0 + u(rng), u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5);
        m.cloud.quats.row(i) = q.transpose();
        for (int a = 0; a < 3; ++a) m.cloud.log_scales(i, a) = std::log(0.12 * z / 2.5 * (0.6 + 0.8 * u(rng)));
        m.cloud.opacity_logits(i) = -0.8 + 1.6 * u(rng);  // alpha in (0.31, 0.69)
        for (int k = 0; k < m.cloud.features.cols(); ++k) m.cloud.features(i, k) = 2.0 * u(rng) - 1.0;
    }
    splatw::AppearanceConfig ac;
    ac.hidden_width = 32;  // narrower than the default; same code path
    m.appearance = splatw::AppearanceModel<double>(2, ac);
    m.appearance.mlp.init_he(rng, false);
    for (auto& layer : m.appearance.mlp.layers()) {
        for (Eigen::Index k = 0; k < layer.bias.size(); ++k) layer.bias(k) = 0.1 * (u(rng) - 0.5);
    }
    for (Eigen::Index k = 0; k < m.appearance.embeddings.size(); ++k) m.appearance.embeddings.data()[k] = u(rng) - 0.5;
    splatw::BackgroundConfig bc;
    bc.hidden_width = 16;
    m.background = splatw::BackgroundModel<double>(bc);
    m.background.mlp.init_he(rng, false);
    m.use_background = true;

    s.gt = splatw::Image<double>(size, size, 3);
    for (auto& v : s.gt.data) v = u(rng);
    s.w = splatw::Image<std::uint8_t>(size, size, 1);
    s.selected = splatw::Image<std::uint8_t>(size, size, 1);
    for (auto& v : s.w.data) v = u(rng) < 0.8 ? 1 : 0;
    for (auto& v : s.selected.data) v = u(rng) < 0.4 ? 1 : 0;
    return s;
}

/// Runs the check; returns the worst element-wise relative error per class.
/// Relative error = |analytic - numeric| / max(|analytic|, |numeric|, 1e-3 * class scale),
/// where class scale is the largest numeric gradient magnitude in the class.
inline std::map<std::string, ClassError> check_gradients(GradientScene& s, std::uint64_t seed,
                                                         int samples_per_class = 24, double h = 1e-5) {
    const double lambda_ssim = 0.2, lambda_alpha = 0.05;
    const std::size_t j = 1;
    auto& m = s.model;
    auto objective = [&]() {
        const auto f = splatw::frame_forward<double>(m, m.appearance.embedding(j), s.cam);
        return splatw::composite_loss<double>(f.final, f.raster.alpha, s.gt, s.w, &s.selected, lambda_ssim,
                                              lambda_alpha)
            .value;
    };
    // The embedding row is read through a span, so the forward pass must be
    // rerun after every perturbation (it is: objective() calls frame_forward).
    const auto f = splatw::frame_forward<double>(m, m.appearance.embedding(j), s.cam);
    const auto loss =
        splatw::composite_loss<double>(f.final, f.raster.alpha, s.gt, s.w, &s.selected, lambda_ssim, lambda_alpha);
    const auto g = splatw::frame_backward<double>(m, f, loss.grad_final, loss.grad_alpha);

    struct Entry {
        double* param;
        double analytic;
    };
    std::map<std::string, std::vector<Entry>> classes;
    auto add_matrix = [&](const std::string& name, splatw::RowMatrix<double>& p, const splatw::RowMatrix<double>& a) {
        for (Eigen::Index k = 0; k < p.size(); ++k) classes[name].push_back({p.data() + k, a.data()[k]});
    };
    add_matrix("means", m.cloud.means, g.cloud.means);
    add_matrix("rotations", m.cloud.quats, g.cloud.quats);
    add_matrix("scales", m.cloud.log_scales, g.cloud.log_scales);
    for (Eigen::Index k = 0; k < m.cloud.opacity_logits.size(); ++k)
        classes["opacities"].push_back({m.cloud.opacity_logits.data() + k, g.cloud.opacity_logits(k)});
    add_matrix("features", m.cloud.features, g.cloud.features);
    for (Eigen::Index k = 0; k < m.appearance.embeddings.cols(); ++k)
        classes["embeddings"].push_back({&m.appearance.embeddings(static_cast<Eigen::Index>(j), k),
                                         g.embedding[static_cast<std::size_t>(k)]});
    auto add_mlp = [&](const std::string& name, splatw::Mlp<double>& p, const splatw::Mlp<double>& a) {
        for (std::size_t l = 0; l < p.depth(); ++l) {
            add_matrix(name, p.layers()[l].weight, a.layers()[l].weight);
            for (Eigen::Index k = 0; k < p.layers()[l].bias.size(); ++k)
                classes[name].push_back({p.layers()[l].bias.data() + k, a.layers()[l].bias(k)});
        }
    };
    add_mlp("appearance_mlp", m.appearance.mlp, g.appearance_mlp);
    add_mlp("background_mlp", m.background.mlp, g.background_mlp);

    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::map<std::string, ClassError> out;
    for (auto& [name, entries] : classes) {
        // Prefer entries with non-trivial gradient so the check is informative.
        std::shuffle(entries.begin(), entries.end(), rng);
        std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
            return (std::abs(a.analytic) > 1e-9) > (std::abs(b.analytic) > 1e-9);
        });
        const std::size_t n = std::min<std::size_t>(entries.size(), static_cast<std::size_t>(samples_per_class));
        std::vector<double> numeric(n);
        double scale = 0;
        for (std::size_t i = 0; i < n; ++i) {
            numeric[i] = central_difference(*entries[i].param, h, objective);
            scale = std::max(scale, std::abs(numeric[i]));
        }
        ClassError e;
        e.max_abs_grad = scale;
        for (std::size_t i = 0; i < n; ++i) {
            const double a = entries[i].analytic, b = numeric[i];
            const double denom = std::max({std::abs(a), std::abs(b), 1e-3 * scale, 1e-12});
            e.max_rel = std::max(e.max_rel, std::abs(a - b) / denom);
            ++e.checked;
        }
        out[name] = e;
    }
    return out;
}

}  // namespace oracle
