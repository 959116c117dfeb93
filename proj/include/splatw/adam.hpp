#pragma once

/// @file adam.hpp
/// @brief Adam over flat parameter spans, with optional row-sparse updates.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace splatw {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
};

/// Moment buffers for one parameter group laid out as `rows` x `row_len`.
/// Dense steps share one step counter; row steps keep a counter per row so
/// rows that rarely receive gradients (per-image embeddings) get their own
/// bias correction.
template <typename T>
class AdamState {
public:
    AdamState() = default;
    AdamState(std::size_t rows, std::size_t row_len) { reset(rows, row_len); }

    void reset(std::size_t rows, std::size_t row_len) {
        row_len_ = row_len;
        m_.assign(rows * row_len, T(0));
        v_.assign(rows * row_len, T(0));
        steps_.assign(rows, 0);
    }

    std::size_t rows() const { return steps_.size(); }
    std::size_t row_len() const { return row_len_; }
    std::vector<T>& first_moment() { return m_; }
    std::vector<T>& second_moment() { return v_; }
    std::vector<std::uint64_t>& steps() { return steps_; }
    const std::vector<T>& first_moment() const { return m_; }
    const std::vector<T>& second_moment() const { return v_; }
    const std::vector<std::uint64_t>& steps() const { return steps_; }

    /// Updates every element.
    void step(std::span<T> params, std::span<const T> grads, const AdamHyper& h) {
        check(params, grads);
        for (std::size_t r = 0; r < steps_.size(); ++r) step_row_impl(params, grads, r, h);
    }

    /// Updates only row `r`.
    void step_row(std::span<T> params, std::span<const T> grads, std::size_t r, const AdamHyper& h) {
        check(params, grads);
        if (r >= steps_.size()) throw std::out_of_range("AdamState::step_row");
        step_row_impl(params, grads, r, h);
    }

    /// Keeps rows whose flag is set, then appends `added` zero-initialized rows.
    void remap_rows(const std::vector<bool>& keep, std::size_t added) {
        std::vector<T> m, v;
        std::vector<std::uint64_t> s;
        for (std::size_t r = 0; r < keep.size(); ++r) {
            if (!keep[r]) continue;
            m.insert(m.end(), m_.begin() + r * row_len_, m_.begin() + (r + 1) * row_len_);
            v.insert(v.end(), v_.begin() + r * row_len_, v_.begin() + (r + 1) * row_len_);
            s.push_back(steps_[r]);
        }
        m.resize(m.size() + added * row_len_, T(0));
        v.resize(v.size() + added * row_len_, T(0));
        s.resize(s.size() + added, 0);
        m_ = std::move(m);
        v_ = std::move(v);
        steps_ = std::move(s);
    }

private:
    void check(std::span<T> params, std::span<const T> grads) const {
        if (params.size() != m_.size() || grads.size() != m_.size()) {
            throw std::invalid_argument("AdamState: parameter/gradient size does not match moment buffers");
        }
    }

    void step_row_impl(std::span<T> params, std::span<const T> grads, std::size_t r, const AdamHyper& h) {
        const std::uint64_t t = ++steps_[r];
        const double bc1 = 1.0 - std::pow(h.beta1, double(t));
        const double bc2 = 1.0 - std::pow(h.beta2, double(t));
        const T step_size = T(h.lr / bc1);
        const T inv_sqrt_bc2 = T(1.0 / std::sqrt(bc2));
        const T b1 = T(h.beta1), b2 = T(h.beta2), eps = T(h.eps);
        const std::size_t begin = r * row_len_, end = begin + row_len_;
        for (std::size_t k = begin; k < end; ++k) {
            const T g = grads[k];
            m_[k] = b1 * m_[k] + (T(1) - b1) * g;
            v_[k] = b2 * v_[k] + (T(1) - b2) * g * g;
            params[k] -= step_size * m_[k] / (std::sqrt(v_[k]) * inv_sqrt_bc2 + eps);
        }
    }

    std::size_t row_len_ = 0;
    std::vector<T> m_, v_;
    std::vector<std::uint64_t> steps_;
};

}  // namespace splatw
