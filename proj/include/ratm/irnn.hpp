#pragma once

#include <cstdint>

#include "graph.hpp"
#include "rng.hpp"

namespace ratm {

constexpr std::size_t kNumAttentionParams = 6;  // gx gy sx sy dx dy; no intensity scalar

// ReLU RNN with identity-initialized recurrent weights, plus an affine output
// head mapping the hidden state to raw attention parameters.
struct IRNNCell {
    Tensor w_in;   // (H, D)
    Tensor w_rec;  // (H, H)
    Tensor w_out;  // (6, H)
    Tensor b_y;    // (6)

    std::size_t input_dim() const { return w_in.cols(); }
    std::size_t hidden_dim() const { return w_in.rows(); }
};

inline IRNNCell init_irnn(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed,
                          double identity_scale = 1.0, double init_stddev = 0.01) {
    Rng rng(seed);
    IRNNCell c;
    c.w_in = rng.gaussian_tensor({hidden_dim, input_dim}, 0.0, init_stddev);
    c.w_rec = Tensor::identity(hidden_dim, identity_scale);
    c.w_out = rng.gaussian_tensor({kNumAttentionParams, hidden_dim}, 0.0, init_stddev);
    c.b_y = Tensor::zeros({kNumAttentionParams});
    return c;
}

// Node handles for one graph's view of the cell parameters.
struct IRNNNodes {
    int w_in = -1, w_rec = -1, w_out = -1, b_y = -1;
};

inline IRNNNodes add_irnn_leaves(Graph& g, const IRNNCell& c, bool trainable = true) {
    return {g.add_leaf(c.w_in, trainable), g.add_leaf(c.w_rec, trainable),
            g.add_leaf(c.w_out, trainable), g.add_leaf(c.b_y, trainable)};
}

struct IRNNStep {
    int h = -1;  // (H)
    int y = -1;  // (6) raw attention params
};

// h_t = relu(W_in x_t + W_rec h_{t-1});  y_t = W_out h_t + b_y
inline IRNNStep irnn_step(Graph& g, const IRNNNodes& cell, int h_prev, int x) {
    IRNNStep s;
    s.h = g.relu(g.add(g.matmul(cell.w_in, x), g.matmul(cell.w_rec, h_prev)));
    s.y = g.add(g.matmul(cell.w_out, s.h), cell.b_y);
    return s;
}

}  // namespace ratm
