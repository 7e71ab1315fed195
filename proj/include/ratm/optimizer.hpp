#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>

#include "tensor.hpp"

namespace ratm {

// Ordered by name so reductions and updates are deterministic.
using ParamMap = std::map<std::string, Tensor>;

inline double global_grad_norm(const ParamMap& grads) {
    double ss = 0.0;
    for (const auto& [name, g] : grads)
        for (double v : g.data) ss += v * v;
    return std::sqrt(ss);
}

// Global-norm clipping: if ||g|| > c, scale every gradient by c/||g||.
inline void clip_gradients(ParamMap& grads, double threshold) {
    for (const auto& [name, g] : grads)
        if (!g.all_finite())
            throw std::runtime_error("clip_gradients: non-finite gradient in '" + name + "'");
    double norm = global_grad_norm(grads);
    if (norm <= threshold) return;
    double scale = threshold / norm;
    for (auto& [name, g] : grads)
        for (double& v : g.data) v *= scale;
}

struct OptimizerState {
    double learning_rate = 0.01;
    double momentum = 0.0;
    double clip_threshold = std::numeric_limits<double>::infinity();
    std::uint64_t step = 0;
    ParamMap velocity;
};

// Classical momentum: v <- mu*v - eta*g;  p <- p + v.
inline void sgd_step(OptimizerState& opt, ParamMap& params, const ParamMap& grads) {
    for (auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const Tensor& g = git->second;
        if (!g.same_shape(p))
            throw std::runtime_error("sgd_step: gradient shape mismatch for '" + name + "'");
        Tensor& v = opt.velocity.try_emplace(name, Tensor::zeros(p.shape)).first->second;
        for (std::size_t i = 0; i < p.numel(); ++i) {
            v.data[i] = opt.momentum * v.data[i] - opt.learning_rate * g.data[i];
            p.data[i] += v.data[i];
        }
    }
    ++opt.step;
}

inline void accumulate_grads(ParamMap& into, const ParamMap& grads, double scale = 1.0) {
    for (const auto& [name, g] : grads) {
        auto it = into.try_emplace(name, Tensor::zeros(g.shape)).first;
        for (std::size_t i = 0; i < g.numel(); ++i) it->second.data[i] += scale * g.data[i];
    }
}

}  // namespace ratm
