#pragma once

/// @file gaussians.hpp
/// @brief Per-Gaussian optimizable state, stored structure-of-arrays.

#include "splatw/sh.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace splatw {

inline constexpr int kFeatureDim = 72;
inline constexpr int kEmbeddingDim = 48;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// Covariance is factored as rotation quaternion (w, x, y, z) and per-axis
/// log scale, Sigma = R diag(exp(2 s)) R^T. Opacity is stored as a logit.
template <typename T>
struct GaussianCloud {
    RowMatrix<T> means;           // N x 3
    RowMatrix<T> quats;           // N x 4, (w, x, y, z), not necessarily unit
    RowMatrix<T> log_scales;      // N x 3
    Eigen::Matrix<T, Eigen::Dynamic, 1> opacity_logits;  // N
    RowMatrix<T> features;        // N x feature_dim

    GaussianCloud() : GaussianCloud(0) {}
    explicit GaussianCloud(std::size_t n, int feature_dim = kFeatureDim) { resize(n, feature_dim); }

    std::size_t size() const { return static_cast<std::size_t>(means.rows()); }
    int feature_dim() const { return static_cast<int>(features.cols()); }

    void resize(std::size_t n, int feature_dim = kFeatureDim) {
        const auto rows = static_cast<Eigen::Index>(n);
        means.setZero(rows, 3);
        quats.setZero(rows, 4);
        quats.col(0).setOnes();
        log_scales.setZero(rows, 3);
        opacity_logits.setZero(rows);
        features.setZero(rows, feature_dim);
    }

    T opacity(std::size_t i) const { return sigmoid(opacity_logits(static_cast<Eigen::Index>(i))); }

    /// Keeps rows whose flag is true, preserving order.
    void keep_rows(const std::vector<bool>& keep) {
        std::vector<Eigen::Index> idx;
        for (std::size_t i = 0; i < keep.size(); ++i)
            if (keep[i]) idx.push_back(static_cast<Eigen::Index>(i));
        means = RowMatrix<T>(means(idx, Eigen::all));
        quats = RowMatrix<T>(quats(idx, Eigen::all));
        log_scales = RowMatrix<T>(log_scales(idx, Eigen::all));
        opacity_logits = Eigen::Matrix<T, Eigen::Dynamic, 1>(opacity_logits(idx));
        features = RowMatrix<T>(features(idx, Eigen::all));
    }

    /// Appends `count` rows; returns the index of the first new row.
    std::size_t append_rows(std::size_t count) {
        const auto n = means.rows();
        const auto m = n + static_cast<Eigen::Index>(count);
        means.conservativeResize(m, Eigen::NoChange);
        quats.conservativeResize(m, Eigen::NoChange);
        log_scales.conservativeResize(m, Eigen::NoChange);
        opacity_logits.conservativeResize(m);
        features.conservativeResize(m, Eigen::NoChange);
        return static_cast<std::size_t>(n);
    }

    void copy_row(std::size_t from, std::size_t to) {
        const auto f = static_cast<Eigen::Index>(from), t = static_cast<Eigen::Index>(to);
        means.row(t) = means.row(f);
        quats.row(t) = quats.row(f);
        log_scales.row(t) = log_scales.row(f);
        opacity_logits(t) = opacity_logits(f);
        features.row(t) = features.row(f);
    }

    template <typename U>
    GaussianCloud<U> cast() const {
        GaussianCloud<U> c(0, feature_dim());
        c.means = means.template cast<U>();
        c.quats = quats.template cast<U>();
        c.log_scales = log_scales.template cast<U>();
        c.opacity_logits = opacity_logits.template cast<U>();
        c.features = features.template cast<U>();
        return c;
    }

    bool all_finite() const {
        return means.allFinite() && quats.allFinite() && log_scales.allFinite() &&
               opacity_logits.allFinite() && features.allFinite();
    }

    /// Throws std::invalid_argument naming the first violated invariant.
    void validate(int expected_feature_dim = kFeatureDim) const {
        const auto n = means.rows();
        if (quats.rows() != n || log_scales.rows() != n || opacity_logits.rows() != n ||
            features.rows() != n) {
            throw std::invalid_argument("gaussian cloud: parameter arrays disagree on count");
        }
        if (features.cols() != expected_feature_dim) {
            throw std::invalid_argument("gaussian cloud: feature dimension " +
                                        std::to_string(features.cols()) + ", expected " +
                                        std::to_string(expected_feature_dim));
        }
        if (!all_finite()) throw std::invalid_argument("gaussian cloud: non-finite parameter");
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!(quats.row(i).norm() > T(0))) {
                throw std::invalid_argument("gaussian cloud: zero quaternion at row " + std::to_string(i));
            }
        }
    }
};

/// Gradient buffers shaped like the geometric parameters of a cloud.
template <typename T>
struct CloudGradients {
    RowMatrix<T> means, quats, log_scales, features;
    Eigen::Matrix<T, Eigen::Dynamic, 1> opacity_logits;

    void reset(std::size_t n, int feature_dim) {
        const auto rows = static_cast<Eigen::Index>(n);
        means.setZero(rows, 3);
        quats.setZero(rows, 4);
        log_scales.setZero(rows, 3);
        opacity_logits.setZero(rows);
        features.setZero(rows, feature_dim);
    }
};

}  // namespace splatw
