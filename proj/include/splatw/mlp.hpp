#pragma once

/// @file mlp.hpp
/// @brief Batched fully-connected network: ReLU hidden layers, linear output.

#include "splatw/gaussians.hpp"

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace splatw {

template <typename T>
struct DenseLayer {
    RowMatrix<T> weight;  // out x in
    RowVector<T> bias;    // 1 x out

    int in() const { return static_cast<int>(weight.cols()); }
    int out() const { return static_cast<int>(weight.rows()); }
};

/// Activations retained by a forward pass: inputs[l] is the input of layer l.
template <typename T>
struct MlpTrace {
    std::vector<RowMatrix<T>> inputs;
};

template <typename T>
class Mlp {
public:
    Mlp() = default;

    /// widths = {input, hidden..., output}; all layers start at zero.
    explicit Mlp(const std::vector<int>& widths) {
        if (widths.size() < 2) throw std::invalid_argument("Mlp: need at least input and output widths");
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            DenseLayer<T> layer;
            layer.weight.setZero(widths[l + 1], widths[l]);
            layer.bias.setZero(widths[l + 1]);
            layers_.push_back(std::move(layer));
        }
    }

    Mlp(const Mlp& o) : layers_(o.layers_), batches_(o.batches_.load()) {}
    Mlp& operator=(const Mlp& o) {
        layers_ = o.layers_;
        batches_.store(o.batches_.load());
        return *this;
    }

    int input_dim() const { return layers_.front().in(); }
    int output_dim() const { return layers_.back().out(); }
    std::size_t depth() const { return layers_.size(); }
    std::vector<DenseLayer<T>>& layers() { return layers_; }
    const std::vector<DenseLayer<T>>& layers() const { return layers_; }

    /// Number of batched forward passes run so far.
    std::size_t batches_run() const { return batches_.load(); }

    /// He-normal hidden layers; the output layer is zeroed when `zero_output` is set.
    template <typename Rng>
    void init_he(Rng& rng, bool zero_output = true) {
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            auto& layer = layers_[l];
            layer.bias.setZero();
            if (zero_output && l + 1 == layers_.size()) {
                layer.weight.setZero();
                continue;
            }
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / layer.in()));
            for (Eigen::Index k = 0; k < layer.weight.size(); ++k) layer.weight.data()[k] = T(dist(rng));
        }
    }

    /// Y = f(X) for a batch X (rows are samples). Fills `trace` when given.
    RowMatrix<T> forward(const RowMatrix<T>& x, MlpTrace<T>* trace = nullptr) const {
        if (x.cols() != input_dim()) {
            throw std::invalid_argument("Mlp: input has " + std::to_string(x.cols()) + " columns, expected " +
                                        std::to_string(input_dim()));
        }
        ++batches_;
        if (trace) trace->inputs.clear();
        RowMatrix<T> a = x;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& layer = layers_[l];
            RowMatrix<T> z(a.rows(), layer.out());
            z.noalias() = a * layer.weight.transpose();
            z.rowwise() += layer.bias;
            if (l + 1 < layers_.size()) z = z.cwiseMax(T(0));
            if (trace) trace->inputs.push_back(std::move(a));
            a = std::move(z);
        }
        return a;
    }

    /// Accumulates parameter gradients into `grads` (same shapes as this
    /// network) and optionally writes d(loss)/d(X) into `grad_input`.
    void backward(const MlpTrace<T>& trace, const RowMatrix<T>& grad_output, Mlp& grads,
                  RowMatrix<T>* grad_input = nullptr) const {
        if (trace.inputs.size() != layers_.size()) throw std::logic_error("Mlp::backward: trace does not match");
        RowMatrix<T> dz = grad_output;
        for (std::size_t l = layers_.size(); l-- > 0;) {
            const auto& layer = layers_[l];
            const auto& in = trace.inputs[l];
            grads.layers_[l].weight.noalias() += dz.transpose() * in;
            grads.layers_[l].bias += dz.colwise().sum();
            if (l == 0 && !grad_input) break;
            RowMatrix<T> da(dz.rows(), layer.in());
            da.noalias() = dz * layer.weight;
            if (l > 0) {
                // in = relu(z_prev): pass gradient where the unit was active
                da = (in.array() > T(0)).select(da, T(0));
                dz = std::move(da);
            } else {
                *grad_input = std::move(da);
            }
        }
    }

    /// Same architecture with every parameter zeroed (a gradient accumulator).
    Mlp zeros_like() const {
        Mlp g = *this;
        for (auto& layer : g.layers_) {
            layer.weight.setZero();
            layer.bias.setZero();
        }
        g.batches_ = 0;
        return g;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
        return n;
    }

    template <typename U>
    Mlp<U> cast() const {
        std::vector<int> widths{input_dim()};
        for (const auto& layer : layers_) widths.push_back(layer.out());
        Mlp<U> out(widths);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            out.layers()[l].weight = layers_[l].weight.template cast<U>();
            out.layers()[l].bias = layers_[l].bias.template cast<U>();
        }
        return out;
    }

private:
    std::vector<DenseLayer<T>> layers_;
    mutable std::atomic<std::size_t> batches_{0};
};

}  // namespace splatw
