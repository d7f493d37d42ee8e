#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mildnet/rng.hpp"
#include "mildnet/tensor.hpp"

namespace mild {

// Gaussian init with mean 0 and variance 1/fan_in. For conv kernels
// (out, in, kh, kw) the fan-in is in*kh*kw; for anything else, the product of
// all extents but the first.
inline TensorPtr xavier_init(const std::vector<int>& shape, Rng& rng) {
    auto t = make_tensor(shape, /*requires_grad=*/true);
    size_t fan_in = 1;
    for (size_t i = 1; i < shape.size(); ++i) fan_in *= static_cast<size_t>(shape[i]);
    if (fan_in == 0) fan_in = 1;
    const double stddev = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (auto& v : t->data) v = static_cast<float>(rng.gaussian(0.0, stddev));
    return t;
}

inline TensorPtr xavier_init(const std::vector<int>& shape, uint64_t seed) {
    Rng rng(seed);
    return xavier_init(shape, rng);
}

inline TensorPtr zero_init(const std::vector<int>& shape) {
    return make_tensor(shape, /*requires_grad=*/true);
}

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t t = 0;
    std::vector<std::vector<float>> m, v;  // first/second moments per parameter
};

// One Adam update over an ordered parameter list. Gradients are read from the
// tensors' grad buffers; a non-finite gradient aborts the step and names the
// offending parameter.
inline void adam_step(const std::vector<std::pair<std::string, TensorPtr>>& params, AdamState& state, double lr) {
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), {});
        state.v.assign(params.size(), {});
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].second->numel(), 0.0f);
            state.v[i].assign(params[i].second->numel(), 0.0f);
        }
    }
    for (auto& [name, p] : params) {
        if (p->grad.empty()) continue;
        for (float g : p->grad)
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + name + "'");
    }

    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        TensorPtr p = params[i].second;
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (size_t j = 0; j < p->numel(); ++j) {
            const double g = p->grad.empty() ? 0.0 : static_cast<double>(p->grad[j]);
            m[j] = static_cast<float>(state.beta1 * m[j] + (1.0 - state.beta1) * g);
            v[j] = static_cast<float>(state.beta2 * v[j] + (1.0 - state.beta2) * g * g);
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p->data[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

}  // namespace mild
