#pragma once

/// Plain-loop MLP forward: out = W x + b per layer, ReLU between layers.

#include "splatw/mlp.hpp"

#include <vector>

namespace oracle {

template <typename T>
std::vector<double> mlp_forward(const splatw::Mlp<T>& mlp, std::vector<double> x) {
    const auto& layers = mlp.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& L = layers[l];
        std::vector<double> y(static_cast<std::size_t>(L.out()));
        for (int o = 0; o < L.out(); ++o) {
            double s = double(L.bias(o));
            for (int i = 0; i < L.in(); ++i) s += double(L.weight(o, i)) * x[static_cast<std::size_t>(i)];
            y[static_cast<std::size_t>(o)] = (l + 1 < layers.size() && s < 0) ? 0.0 : s;
        }
        x = std::move(y);
    }
    return x;
}

}  // namespace oracle
