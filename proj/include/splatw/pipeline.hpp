#pragma once

/// @file pipeline.hpp
/// @brief The full image formation model and its reverse pass:
/// embedding -> appearance MLP -> per-Gaussian colors -> rasterizer ->
/// composite over the SH background.

#include "splatw/appearance.hpp"
#include "splatw/background.hpp"
#include "splatw/gaussians.hpp"
#include "splatw/rasterizer.hpp"

#include <optional>
#include <span>
#include <vector>

namespace splatw {

/// Everything that is optimized: Gaussians, appearance model (embeddings
/// shared with the background), background model.
template <typename T>
struct SceneModel {
    GaussianCloud<T> cloud;
    AppearanceModel<T> appearance;
    BackgroundModel<T> background;
    bool use_background = true;  // false: constant black background (no SH model)

    std::size_t num_images() const { return appearance.num_images(); }

    template <typename U>
    SceneModel<U> cast() const {
        SceneModel<U> m;
        m.cloud = cloud.template cast<U>();
        m.appearance = appearance.template cast<U>();
        m.background = background.template cast<U>();
        m.use_background = use_background;
        return m;
    }
};

template <typename T>
struct FrameForward {
    AppearanceForward<T> appearance;
    RenderOutput<T> raster;
    ShCoefficients<T> bg_coeffs;
    MlpTrace<T> bg_trace;
    Image<T> background;  // zero when the background model is disabled
    Image<T> final;
};

template <typename T>
FrameForward<T> frame_forward(const SceneModel<T>& model, std::span<const T> embedding, const CameraView<T>& cam,
                              const RasterConfig<T>& rcfg = {}) {
    FrameForward<T> f;
    f.appearance = appearance_forward<T>(model.appearance, model.cloud, embedding, cam);
    f.raster = render<T>(model.cloud, f.appearance.view.colors, cam, rcfg);
    if (model.use_background) {
        f.bg_coeffs = model.background.predict(embedding, &f.bg_trace);
        f.background = background_image<T>(f.bg_coeffs, cam);
    } else {
        f.background = Image<T>(cam.width, cam.height, 3);
    }
    f.final = composite<T>(f.raster.rgb, f.raster.alpha, f.background);
    return f;
}

/// Gradients of one frame's loss with respect to every trainable quantity.
template <typename T>
struct FrameGradients {
    CloudGradients<T> cloud;         // includes features
    Mlp<T> appearance_mlp;
    Mlp<T> background_mlp;
    std::vector<T> embedding;        // appearance + background contributions
    std::vector<T> mean2d_ndc;
    std::vector<bool> visible;
};

/// Reverse pass given d(loss)/d(final image) and an extra d(loss)/d(alpha)
/// (empty image for none).
template <typename T>
FrameGradients<T> frame_backward(const SceneModel<T>& model, const FrameForward<T>& f, const Image<T>& grad_final,
                                 const Image<T>& grad_alpha_extra) {
    const CompositeGradients<T> cg = composite_backward<T>(grad_final, f.raster.alpha, f.background);
    Image<T> grad_alpha = cg.alpha;
    if (!grad_alpha_extra.data.empty()) {
        for (std::size_t p = 0; p < grad_alpha.data.size(); ++p) grad_alpha.data[p] += grad_alpha_extra.data[p];
    }
    RasterGradients<T> rg = render_backward<T>(model.cloud, f.raster, cg.foreground, grad_alpha);
    AppearanceGradients<T> ag = appearance_backward<T>(model.appearance, f.appearance, rg.colors);

    FrameGradients<T> g;
    g.cloud = std::move(rg.cloud);
    g.cloud.features = std::move(ag.features);
    g.cloud.means += ag.means;
    g.appearance_mlp = std::move(ag.mlp);
    g.embedding = std::move(ag.embedding);
    g.mean2d_ndc = std::move(rg.mean2d_ndc);
    g.visible = std::move(rg.visible);
    if (model.use_background) {
        BackgroundGradients<T> bg =
            background_backward<T>(model.background, f.bg_trace, f.bg_coeffs, f.raster.camera, cg.background);
        g.background_mlp = std::move(bg.mlp);
        for (std::size_t k = 0; k < g.embedding.size(); ++k) g.embedding[k] += bg.embedding[k];
    } else {
        g.background_mlp = model.background.mlp.zeros_like();
    }
    return g;
}

/// Renders with a prebuilt appearance cache: no MLP evaluation for the foreground.
template <typename T>
Image<T> render_cached(const SceneModel<T>& model, const CachedAppearance<T>& cache,
                       const std::optional<ShCoefficients<T>>& bg_coeffs, const CameraView<T>& cam,
                       const RasterConfig<T>& rcfg = {}) {
    if (!cache.valid_for(model.appearance)) throw std::logic_error("render_cached: cache is stale");
    const ViewColors<T> vc = colors_for_view<T>(model.cloud.means, cache.table, model.appearance.sh_degree(), cam);
    const RenderOutput<T> r = render<T>(model.cloud, vc.colors, cam, rcfg);
    const Image<T> bg = (model.use_background && bg_coeffs) ? background_image<T>(*bg_coeffs, cam)
                                                            : Image<T>(cam.width, cam.height, 3);
    return composite<T>(r.rgb, r.alpha, bg);
}

/// Live path: predicts the appearance table on the fly.
template <typename T>
Image<T> render_live(const SceneModel<T>& model, std::span<const T> embedding, const CameraView<T>& cam,
                     const RasterConfig<T>& rcfg = {}) {
    return frame_forward<T>(model, embedding, cam, rcfg).final;
}

/// Column split of the evaluation protocol: left = [0, floor(W/2)), right = rest.
inline int left_half_end(int width) { return width / 2; }

}  // namespace splatw
