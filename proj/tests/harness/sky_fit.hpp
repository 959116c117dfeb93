#pragma once

/// Fits the background model alone (MLP + one embedding per condition) to
/// pure-sky images with Adam on the mean squared error.

#include "splatw/adam.hpp"
#include "splatw/background.hpp"
#include "splatw/metrics.hpp"

#include <random>
#include <vector>

namespace harness {

struct SkyView {
    splatw::Image<double> target;
    splatw::CameraView<double> camera;
    int condition = 0;
};

struct SkyFit {
    splatw::BackgroundModel<double> model;
    splatw::RowMatrix<double> embeddings;
    std::vector<double> psnr;  // per view, after fitting
};

inline SkyFit fit_sky(const std::vector<SkyView>& views, int n_conditions, int iterations, std::uint64_t seed,
                      double lr = 3e-3) {
    std::mt19937_64 rng(seed);
    SkyFit f{splatw::BackgroundModel<double>(splatw::BackgroundConfig{}), {}, {}};
    f.model.init(rng);
    f.embeddings.resize(n_conditions, splatw::kEmbeddingDim);
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    for (Eigen::Index k = 0; k < f.embeddings.size(); ++k) f.embeddings.data()[k] = u(rng);

    std::vector<splatw::AdamState<double>> w, b;
    for (const auto& l : f.model.mlp.layers()) {
        w.emplace_back(1, static_cast<std::size_t>(l.weight.size()));
        b.emplace_back(1, static_cast<std::size_t>(l.bias.size()));
    }
    splatw::AdamState<double> emb(static_cast<std::size_t>(n_conditions), splatw::kEmbeddingDim);
    const splatw::AdamHyper h{lr, 0.9, 0.999, 1e-8};

    for (int it = 0; it < iterations; ++it) {
        const SkyView& v = views[static_cast<std::size_t>(it) % views.size()];
        std::span<const double> e(f.embeddings.data() + v.condition * splatw::kEmbeddingDim, splatw::kEmbeddingDim);
        splatw::MlpTrace<double> trace;
        const auto coeffs = f.model.predict(e, &trace);
        const auto img = splatw::background_image<double>(coeffs, v.camera);
        splatw::Image<double> grad(img.width, img.height, 3);
        const double norm = 2.0 / double(img.data.size());
        for (std::size_t i = 0; i < img.data.size(); ++i) grad.data[i] = norm * (img.data[i] - v.target.data[i]);
        const auto g = splatw::background_backward<double>(f.model, trace, coeffs, v.camera, grad);
        for (std::size_t l = 0; l < f.model.mlp.depth(); ++l) {
            auto& p = f.model.mlp.layers()[l];
            const auto& gl = g.mlp.layers()[l];
            w[l].step({p.weight.data(), static_cast<std::size_t>(p.weight.size())},
                      {gl.weight.data(), static_cast<std::size_t>(gl.weight.size())}, h);
            b[l].step({p.bias.data(), static_cast<std::size_t>(p.bias.size())},
                      {gl.bias.data(), static_cast<std::size_t>(gl.bias.size())}, h);
        }
        std::vector<double> full(f.embeddings.size(), 0.0);
        std::copy(g.embedding.begin(), g.embedding.end(), full.begin() + v.condition * splatw::kEmbeddingDim);
        emb.step_row({f.embeddings.data(), static_cast<std::size_t>(f.embeddings.size())}, full,
                     static_cast<std::size_t>(v.condition), h);
    }
    for (const auto& v : views) {
        std::span<const double> e(f.embeddings.data() + v.condition * splatw::kEmbeddingDim, splatw::kEmbeddingDim);
        f.psnr.push_back(splatw::psnr(splatw::background_image<double>(f.model.predict(e), v.camera), v.target));
    }
    return f;
}

}  // namespace harness
