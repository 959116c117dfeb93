#pragma once

/// @file appearance.hpp
/// @brief Latent appearance model: per-image embeddings and per-Gaussian
/// features feed an MLP that predicts each Gaussian's SH color coefficients.
///
/// The viewing direction never enters the MLP, so for a fixed embedding the
/// coefficient table can be computed once (CachedAppearance) and reused for
/// any camera.

#include "splatw/camera.hpp"
#include "splatw/gaussians.hpp"
#include "splatw/mlp.hpp"
#include "splatw/sh.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace splatw {

struct AppearanceConfig {
    int sh_degree = 3;
    int embedding_dim = kEmbeddingDim;
    int feature_dim = kFeatureDim;
    int hidden_width = 256;
    int layers = 3;
    double init_range = 0.1;            // features ~ U(-r, r)
    double embedding_init_range = 1e-3;  // embeddings ~ U(-r, r)
};

template <typename T>
class AppearanceModel {
public:
    AppearanceModel() = default;
    AppearanceModel(std::size_t num_images, const AppearanceConfig& cfg) : config_(cfg) {
        check_sh_degree(cfg.sh_degree);
        if (cfg.layers < 1) throw std::invalid_argument("AppearanceModel: need at least one layer");
        embeddings.setZero(static_cast<Eigen::Index>(num_images), cfg.embedding_dim);
        std::vector<int> widths{cfg.embedding_dim + cfg.feature_dim};
        for (int l = 0; l + 1 < cfg.layers; ++l) widths.push_back(cfg.hidden_width);
        widths.push_back(coeff_count());
        mlp = Mlp<T>(widths);
    }

    RowMatrix<T> embeddings;  // N_img x embedding_dim
    Mlp<T> mlp;

    const AppearanceConfig& config() const { return config_; }
    int sh_degree() const { return config_.sh_degree; }
    int embedding_dim() const { return config_.embedding_dim; }
    int feature_dim() const { return config_.feature_dim; }
    int basis_count() const { return static_cast<int>(sh_basis_count(config_.sh_degree)); }
    int coeff_count() const { return 3 * basis_count(); }
    std::size_t num_images() const { return static_cast<std::size_t>(embeddings.rows()); }

    /// Identifies the (MLP weights, Gaussian features) state; bump after any update.
    std::uint64_t version() const { return version_; }
    void bump_version() { ++version_; }
    void set_version(std::uint64_t v) { version_ = v; }

    std::span<const T> embedding(std::size_t j) const {
        if (j >= num_images()) throw std::out_of_range("appearance embedding index " + std::to_string(j));
        return {embeddings.data() + j * embeddings.cols(), static_cast<std::size_t>(embeddings.cols())};
    }

    std::vector<T> mean_embedding() const {
        std::vector<T> out(static_cast<std::size_t>(embedding_dim()), T(0));
        if (num_images() == 0) return out;
        const RowVector<T> m = embeddings.colwise().mean();
        for (int k = 0; k < embedding_dim(); ++k) out[k] = m(k);
        return out;
    }

    /// He init for hidden layers, zero output layer, small uniform embeddings.
    template <typename Rng>
    void init(Rng& rng) {
        mlp.init_he(rng, true);
        std::uniform_real_distribution<double> u(-config_.embedding_init_range, config_.embedding_init_range);
        for (Eigen::Index k = 0; k < embeddings.size(); ++k) embeddings.data()[k] = T(u(rng));
        bump_version();
    }

    /// Small uniform initial appearance features for a cloud.
    template <typename Rng>
    void init_features(GaussianCloud<T>& cloud, Rng& rng) const {
        std::uniform_real_distribution<double> u(-config_.init_range, config_.init_range);
        cloud.features.resize(static_cast<Eigen::Index>(cloud.size()), config_.feature_dim);
        for (Eigen::Index k = 0; k < cloud.features.size(); ++k) cloud.features.data()[k] = T(u(rng));
    }

    template <typename U>
    AppearanceModel<U> cast() const {
        AppearanceModel<U> out(num_images(), config_);
        out.embeddings = embeddings.template cast<U>();
        out.mlp = mlp.template cast<U>();
        out.set_version(version_);
        return out;
    }

private:
    AppearanceConfig config_;
    std::uint64_t version_ = 0;
};

/// b_i = MLP(embedding, f_i) for every Gaussian; returns N x (3 (l_max+1)^2),
/// channel-major per row. One batched MLP pass.
template <typename T>
RowMatrix<T> predict_sh(const AppearanceModel<T>& model, std::span<const T> embedding,
                        const RowMatrix<T>& features, MlpTrace<T>* trace = nullptr) {
    const int ed = model.embedding_dim(), fd = model.feature_dim();
    if (static_cast<int>(embedding.size()) != ed) {
        throw std::invalid_argument("predict_sh: embedding has " + std::to_string(embedding.size()) +
                                    " entries, expected " + std::to_string(ed));
    }
    if (features.cols() != fd) {
        throw std::invalid_argument("predict_sh: features have " + std::to_string(features.cols()) +
                                    " columns, expected " + std::to_string(fd));
    }
    RowMatrix<T> x(features.rows(), ed + fd);
    const Eigen::Map<const RowVector<T>> e(embedding.data(), ed);
    x.leftCols(ed).rowwise() = e;
    x.rightCols(fd) = features;
    return model.mlp.forward(x, trace);
}

/// Per-Gaussian view directions (camera center -> mean), +z when degenerate.
template <typename T>
RowMatrix<T> view_directions(const RowMatrix<T>& means, const CameraView<T>& cam) {
    const Vec3<T> c = cam.center();
    RowMatrix<T> dirs(means.rows(), 3);
    for (Eigen::Index i = 0; i < means.rows(); ++i) {
        Vec3<T> d = means.row(i).transpose() - c;
        const T n = d.norm();
        if (n < T(1e-12)) d = Vec3<T>(0, 0, 1);
        else d /= n;
        dirs.row(i) = d.transpose();
    }
    return dirs;
}

template <typename T>
struct ViewColors {
    RowMatrix<T> colors;  // N x 3
    RowMatrix<T> basis;   // N x (l_max+1)^2
    RowMatrix<T> dirs;    // N x 3 unit view directions
    std::vector<T> dist;  // |mean - camera center|; 0 when degenerate
};

/// c_i = sigmoid(sum_lm b_i,lm Y_lm(d_i)).
template <typename T>
ViewColors<T> colors_for_view(const RowMatrix<T>& means, const RowMatrix<T>& table, int sh_degree,
                              const CameraView<T>& cam) {
    check_sh_degree(sh_degree);
    const int k = static_cast<int>(sh_basis_count(sh_degree));
    if (table.rows() != means.rows() || table.cols() != 3 * k) {
        throw std::invalid_argument("colors_for_view: coefficient table shape mismatch");
    }
    ViewColors<T> out;
    out.dirs = view_directions<T>(means, cam);
    const RowMatrix<T>& dirs = out.dirs;
    const Vec3<T> center = cam.center();
    out.dist.resize(static_cast<std::size_t>(means.rows()));
    for (Eigen::Index i = 0; i < means.rows(); ++i) {
        const T n = (means.row(i).transpose() - center).norm();
        out.dist[static_cast<std::size_t>(i)] = n < T(1e-12) ? T(0) : n;
    }
    out.colors.resize(means.rows(), 3);
    out.basis.resize(means.rows(), k);
    for (Eigen::Index i = 0; i < means.rows(); ++i) {
        std::span<T> b(out.basis.data() + i * k, static_cast<std::size_t>(k));
        eval_sh_basis_into<T>(dirs(i, 0), dirs(i, 1), dirs(i, 2), sh_degree, b);
        const auto c = sh_color<T>(std::span<const T>(table.data() + i * 3 * k, 3 * static_cast<std::size_t>(k)),
                                   std::span<const T>(b.data(), b.size()));
        out.colors(i, 0) = c[0];
        out.colors(i, 1) = c[1];
        out.colors(i, 2) = c[2];
    }
    return out;
}

/// Everything the live (trainable) path keeps for its backward pass.
template <typename T>
struct AppearanceForward {
    std::vector<T> embedding;
    MlpTrace<T> trace;
    RowMatrix<T> table;
    ViewColors<T> view;
    std::uint64_t model_version = 0;
};

template <typename T>
AppearanceForward<T> appearance_forward(const AppearanceModel<T>& model, const GaussianCloud<T>& cloud,
                                        std::span<const T> embedding, const CameraView<T>& cam) {
    AppearanceForward<T> f;
    f.embedding.assign(embedding.begin(), embedding.end());
    f.table = predict_sh<T>(model, embedding, cloud.features, &f.trace);
    f.view = colors_for_view<T>(cloud.means, f.table, model.sh_degree(), cam);
    f.model_version = model.version();
    return f;
}

template <typename T>
struct AppearanceGradients {
    Mlp<T> mlp;
    std::vector<T> embedding;
    RowMatrix<T> features;
    RowMatrix<T> means;  // through the view direction of the SH evaluation
};

/// Reverse mode through sigmoid-SH color recovery and the MLP. Refuses a
/// forward record produced by an older model version.
template <typename T>
AppearanceGradients<T> appearance_backward(const AppearanceModel<T>& model, const AppearanceForward<T>& fwd,
                                           const RowMatrix<T>& grad_colors) {
    if (fwd.model_version != model.version()) {
        throw std::logic_error("appearance_backward: forward record is stale (model version " +
                               std::to_string(fwd.model_version) + " vs " + std::to_string(model.version()) + ")");
    }
    const Eigen::Index n = fwd.table.rows();
    if (grad_colors.rows() != n || grad_colors.cols() != 3) {
        throw std::invalid_argument("appearance_backward: color gradient must be N x 3");
    }
    const int k = model.basis_count();
    RowMatrix<T> grad_table = RowMatrix<T>::Zero(n, 3 * k);
    RowMatrix<T> grad_means = RowMatrix<T>::Zero(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const std::array<T, 3> up{grad_colors(i, 0), grad_colors(i, 1), grad_colors(i, 2)};
        if (up[0] == T(0) && up[1] == T(0) && up[2] == T(0)) continue;
        const std::array<T, 3> col{fwd.view.colors(i, 0), fwd.view.colors(i, 1), fwd.view.colors(i, 2)};
        sh_color_backward<T>(std::span<const T>(fwd.view.basis.data() + i * k, static_cast<std::size_t>(k)), col,
                             up, std::span<T>(grad_table.data() + i * 3 * k, 3 * static_cast<std::size_t>(k)));
        const T dist = fwd.view.dist[static_cast<std::size_t>(i)];
        if (k == 1 || dist == T(0)) continue;
        // d(loss)/d(basis) -> d(loss)/d(dir) -> d(loss)/d(mean) via d/|d|.
        std::array<T, 3 * kMaxShBasis> jac{};
        eval_sh_basis_jacobian_into<T>(fwd.view.dirs(i, 0), fwd.view.dirs(i, 1), fwd.view.dirs(i, 2),
                                       model.sh_degree(), std::span<T>(jac.data(), jac.size()));
        Vec3<T> gdir = Vec3<T>::Zero();
        for (int b = 1; b < k; ++b) {
            T gb = 0;
            for (int c = 0; c < 3; ++c) gb += up[c] * col[c] * (T(1) - col[c]) * fwd.table(i, c * k + b);
            gdir += gb * Vec3<T>(jac[3 * b], jac[3 * b + 1], jac[3 * b + 2]);
        }
        const Vec3<T> d = fwd.view.dirs.row(i).transpose();
        grad_means.row(i) = ((gdir - d * d.dot(gdir)) / dist).transpose();
    }
    AppearanceGradients<T> g;
    g.mlp = model.mlp.zeros_like();
    RowMatrix<T> grad_x;
    model.mlp.backward(fwd.trace, grad_table, g.mlp, &grad_x);
    const int ed = model.embedding_dim();
    g.embedding.assign(static_cast<std::size_t>(ed), T(0));
    if (n > 0) {
        const RowVector<T> ge = grad_x.leftCols(ed).colwise().sum();
        for (int c = 0; c < ed; ++c) g.embedding[c] = ge(c);
    }
    g.features = grad_x.rightCols(model.feature_dim());
    g.means = std::move(grad_means);
    return g;
}

/// Per-Gaussian SH table for one embedding, valid for the model version it was built from.
template <typename T>
struct CachedAppearance {
    std::vector<T> embedding;
    RowMatrix<T> table;
    std::uint64_t model_version = 0;

    bool valid_for(const AppearanceModel<T>& model) const { return model_version == model.version(); }
};

template <typename T>
CachedAppearance<T> build_cache(const AppearanceModel<T>& model, const GaussianCloud<T>& cloud,
                                std::span<const T> embedding) {
    CachedAppearance<T> c;
    c.embedding.assign(embedding.begin(), embedding.end());
    c.table = predict_sh<T>(model, embedding, cloud.features);
    c.model_version = model.version();
    return c;
}

}  // namespace splatw
