#pragma once

/// @file background.hpp
/// @brief Background at infinity: an MLP maps the image embedding to SH
/// coefficients evaluated along every pixel ray, composited behind the
/// Gaussians. Also the residual mask selecting well-explained background
/// pixels and the alpha loss applied on them.

#include "splatw/camera.hpp"
#include "splatw/gaussians.hpp"
#include "splatw/image.hpp"
#include "splatw/mlp.hpp"
#include "splatw/sh.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace splatw {

struct BackgroundConfig {
    int sh_degree = 2;
    int embedding_dim = kEmbeddingDim;
    int hidden_width = 128;
    int layers = 3;
};

template <typename T>
class BackgroundModel {
public:
    BackgroundModel() = default;
    explicit BackgroundModel(const BackgroundConfig& cfg) : config_(cfg) {
        check_sh_degree(cfg.sh_degree);
        std::vector<int> widths{cfg.embedding_dim};
        for (int l = 0; l + 1 < cfg.layers; ++l) widths.push_back(cfg.hidden_width);
        widths.push_back(3 * static_cast<int>(sh_basis_count(cfg.sh_degree)));
        mlp = Mlp<T>(widths);
    }

    Mlp<T> mlp;

    const BackgroundConfig& config() const { return config_; }
    int sh_degree() const { return config_.sh_degree; }

    template <typename Rng>
    void init(Rng& rng) {
        mlp.init_he(rng, true);
    }

    /// b = MLP(embedding).
    ShCoefficients<T> predict(std::span<const T> embedding, MlpTrace<T>* trace = nullptr) const {
        if (static_cast<int>(embedding.size()) != config_.embedding_dim) {
            throw std::invalid_argument("background: embedding has " + std::to_string(embedding.size()) +
                                        " entries, expected " + std::to_string(config_.embedding_dim));
        }
        RowMatrix<T> x(1, config_.embedding_dim);
        for (int k = 0; k < config_.embedding_dim; ++k) x(0, k) = embedding[k];
        const RowMatrix<T> y = mlp.forward(x, trace);
        return ShCoefficients<T>(config_.sh_degree, std::vector<T>(y.data(), y.data() + y.size()));
    }

    template <typename U>
    BackgroundModel<U> cast() const {
        BackgroundModel<U> out(config_);
        out.mlp = mlp.template cast<U>();
        return out;
    }

private:
    BackgroundConfig config_;
};

/// Sigmoid-SH color along the ray through pixel (x, y).
template <typename T>
std::array<T, 3> background_color(const ShCoefficients<T>& coeffs, const CameraView<T>& cam, int x, int y) {
    if (x < 0 || y < 0 || x >= cam.width || y >= cam.height) throw std::out_of_range("background_color: pixel");
    const Vec3<T> r = cam.pixel_ray(x, y);
    return sh_to_color<T>(coeffs, Direction<T>(r.x(), r.y(), r.z()));
}

/// Per-pixel SH basis of the ray directions, pixel-major: (H*W) x (l_max+1)^2.
template <typename T>
std::vector<T> ray_basis(const CameraView<T>& cam, int sh_degree) {
    const std::size_t k = sh_basis_count(sh_degree);
    std::vector<T> basis(static_cast<std::size_t>(cam.width) * cam.height * k);
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const Direction<T> d = [&] {
                const Vec3<T> r = cam.pixel_ray(x, y);
                return Direction<T>(r.x(), r.y(), r.z());
            }();
            const std::size_t p = static_cast<std::size_t>(y) * cam.width + x;
            eval_sh_basis_into<T>(d.x(), d.y(), d.z(), sh_degree, std::span<T>(basis.data() + p * k, k));
        }
    }
    return basis;
}

template <typename T>
Image<T> background_image(const ShCoefficients<T>& coeffs, const CameraView<T>& cam) {
    const std::vector<T> basis = ray_basis<T>(cam, coeffs.degree);
    const std::size_t k = coeffs.per_channel();
    Image<T> out(cam.width, cam.height, 3);
    for (std::size_t p = 0; p < out.pixel_count(); ++p) {
        const auto c = sh_color<T>(coeffs.values, std::span<const T>(basis.data() + p * k, k));
        out.data[p * 3] = c[0];
        out.data[p * 3 + 1] = c[1];
        out.data[p * 3 + 2] = c[2];
    }
    return out;
}

/// C_final = C + (1 - alpha) C_background.
template <typename T>
Image<T> composite(const Image<T>& foreground, const Image<T>& alpha, const Image<T>& background) {
    require_same_shape(foreground, background, "composite");
    if (alpha.width != foreground.width || alpha.height != foreground.height || alpha.channels != 1) {
        throw std::invalid_argument("composite: alpha shape mismatch");
    }
    Image<T> out = foreground;
    const int ch = foreground.channels;
    for (std::size_t p = 0; p < out.pixel_count(); ++p) {
        const T t = T(1) - alpha.data[p];
        for (int c = 0; c < ch; ++c) out.data[p * ch + c] += t * background.data[p * ch + c];
    }
    return out;
}

template <typename T>
struct CompositeGradients {
    Image<T> foreground;  // equals the upstream gradient
    Image<T> alpha;
    Image<T> background;
};

template <typename T>
CompositeGradients<T> composite_backward(const Image<T>& grad_final, const Image<T>& alpha,
                                         const Image<T>& background) {
    CompositeGradients<T> g;
    g.foreground = grad_final;
    g.alpha = Image<T>(alpha.width, alpha.height, 1);
    g.background = Image<T>(grad_final.width, grad_final.height, grad_final.channels);
    const int ch = grad_final.channels;
    for (std::size_t p = 0; p < alpha.pixel_count(); ++p) {
        T ga = 0;
        for (int c = 0; c < ch; ++c) {
            const T gf = grad_final.data[p * ch + c];
            ga -= gf * background.data[p * ch + c];
            g.background.data[p * ch + c] = gf * (T(1) - alpha.data[p]);
        }
        g.alpha.data[p] = ga;
    }
    return g;
}

/// 3x3 box average with zero padding outside the image.
template <typename T>
Image<T> box_filter3_zero_pad(const Image<std::uint8_t>& m) {
    Image<T> out(m.width, m.height, 1);
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            int sum = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int xx = x + dx, yy = y + dy;
                    if (xx < 0 || yy < 0 || xx >= m.width || yy >= m.height) continue;
                    sum += m(xx, yy);
                }
            }
            out(x, y) = T(sum) / T(9);
        }
    }
    return out;
}

template <typename T>
struct BackgroundResidualMask {
    Image<std::uint8_t> matches;   // M: residual below threshold
    Image<T> smoothed;             // M' = M * B_3x3
    Image<std::uint8_t> selected;  // p_i: M' > 0.6
    T threshold = 0;
    std::size_t selected_count = 0;
};

inline constexpr double kBackgroundSelectLevel = 0.6;

/// Residual per pixel is the channel mean of |gt - background|.
template <typename T>
BackgroundResidualMask<T> residual_mask(const Image<T>& gt, const Image<T>& background, T threshold) {
    require_same_shape(gt, background, "residual_mask");
    BackgroundResidualMask<T> r;
    r.threshold = threshold;
    r.matches = Image<std::uint8_t>(gt.width, gt.height, 1);
    const int ch = gt.channels;
    for (std::size_t p = 0; p < gt.pixel_count(); ++p) {
        T res = 0;
        for (int c = 0; c < ch; ++c) res += std::abs(gt.data[p * ch + c] - background.data[p * ch + c]);
        res /= T(ch);
        r.matches.data[p] = res < threshold ? 1 : 0;
    }
    r.smoothed = box_filter3_zero_pad<T>(r.matches);
    r.selected = Image<std::uint8_t>(gt.width, gt.height, 1);
    for (std::size_t p = 0; p < gt.pixel_count(); ++p) {
        const bool s = r.smoothed.data[p] > T(kBackgroundSelectLevel);
        r.selected.data[p] = s ? 1 : 0;
        r.selected_count += s ? 1 : 0;
    }
    return r;
}

template <typename T>
struct AlphaLoss {
    T loss = 0;
    Image<T> grad;  // d(loss)/d(alpha)
};

/// L_alpha = lambda * sum over selected pixels of alpha.
template <typename T>
AlphaLoss<T> alpha_loss(const Image<T>& alpha, const Image<std::uint8_t>& selected, T lambda) {
    if (alpha.width != selected.width || alpha.height != selected.height) {
        throw std::invalid_argument("alpha_loss: shape mismatch");
    }
    AlphaLoss<T> out;
    out.grad = Image<T>(alpha.width, alpha.height, 1);
    T sum = 0;
    for (std::size_t p = 0; p < alpha.pixel_count(); ++p) {
        if (!selected.data[p]) continue;
        sum += alpha.data[p];
        out.grad.data[p] = lambda;
    }
    out.loss = lambda * sum;
    return out;
}

template <typename T>
struct BackgroundGradients {
    Mlp<T> mlp;
    std::vector<T> embedding;
};

/// Reverse mode from d(loss)/d(background image) to the MLP and the embedding.
template <typename T>
BackgroundGradients<T> background_backward(const BackgroundModel<T>& model, const MlpTrace<T>& trace,
                                           const ShCoefficients<T>& coeffs, const CameraView<T>& cam,
                                           const Image<T>& grad_background) {
    if (grad_background.width != cam.width || grad_background.height != cam.height ||
        grad_background.channels != 3) {
        throw std::invalid_argument("background_backward: gradient shape mismatch");
    }
    const std::vector<T> basis = ray_basis<T>(cam, coeffs.degree);
    const std::size_t k = coeffs.per_channel();
    std::vector<T> gcoeff(coeffs.values.size(), T(0));
    for (std::size_t p = 0; p < grad_background.pixel_count(); ++p) {
        const std::array<T, 3> up{grad_background.data[p * 3], grad_background.data[p * 3 + 1],
                                  grad_background.data[p * 3 + 2]};
        if (up[0] == T(0) && up[1] == T(0) && up[2] == T(0)) continue;
        std::span<const T> b(basis.data() + p * k, k);
        const auto col = sh_color<T>(coeffs.values, b);
        sh_color_backward<T>(b, col, up, gcoeff);
    }
    BackgroundGradients<T> g;
    g.mlp = model.mlp.zeros_like();
    RowMatrix<T> gy(1, static_cast<Eigen::Index>(gcoeff.size()));
    for (std::size_t i = 0; i < gcoeff.size(); ++i) gy(0, static_cast<Eigen::Index>(i)) = gcoeff[i];
    RowMatrix<T> gx;
    model.mlp.backward(trace, gy, g.mlp, &gx);
    g.embedding.assign(gx.data(), gx.data() + gx.size());
    return g;
}

}  // namespace splatw
