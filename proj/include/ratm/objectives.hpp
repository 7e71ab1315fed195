#pragma once

#include <string>
#include <vector>

#include "graph.hpp"

namespace ratm {

// A named scalar cost; the training loss is the weighted sum of all terms.
struct CostTerm {
    std::string name;
    int node = -1;
    double weight = 1.0;
};

// Re-enters a value as a constant leaf so no gradient flows into its branch.
inline int detach(Graph& g, int node) { return g.constant(g.value(node)); }

// Mean over batch samples of the squared Euclidean norm of the difference.
// Rank-2 inputs are (samples, features); anything else is a single sample.
inline int mse(Graph& g, int pred, int target) {
    const Tensor& p = g.value(pred);
    const Tensor& t = g.value(target);
    if (!p.same_shape(t))
        throw GraphError("mse: shape mismatch " + Tensor::shape_str(p.shape) + " vs " +
                         Tensor::shape_str(t.shape));
    std::size_t n = p.rank() == 2 ? p.rows() : 1;
    int ss = g.sum(g.square(g.sub(pred, target)));
    return n == 1 ? ss : g.scalar_mul(1.0 / static_cast<double>(n), ss);
}

// Squared Euclidean distance between glimpse content and a ground-truth patch.
// The glimpse is one image, not a batch, so no normalization is applied.
inline int pixel_loss(Graph& g, int glimpse, int target_patch) {
    const Tensor& p = g.value(glimpse);
    const Tensor& t = g.value(target_patch);
    if (!p.same_shape(t))
        throw GraphError("pixel_loss: shape mismatch " + Tensor::shape_str(p.shape) + " vs " +
                         Tensor::shape_str(t.shape));
    return g.sum(g.square(g.sub(glimpse, target_patch)));
}

// Same distance in feature space; the target branch is detached, only the
// predicted glimpse receives gradient.
inline int feature_loss(Graph& g, int feat_glimpse, int feat_target) {
    return mse(g, feat_glimpse, detach(g, feat_target));
}

// Squared distance between the grid center (pixels) and a target center.
inline int loc_loss(Graph& g, int pred_cx, int pred_cy, double target_x, double target_y) {
    int dx = g.sub(pred_cx, g.constant(target_x));
    int dy = g.sub(pred_cy, g.constant(target_y));
    return g.add(g.square(dx), g.square(dy));
}

// Sum of squared Frobenius norms.
inline int weight_decay(Graph& g, const std::vector<int>& matrices) {
    int total = g.constant(0.0);
    for (int m : matrices) total = g.add(total, g.sum(g.square(m)));
    return total;
}

inline int total_loss(Graph& g, const std::vector<CostTerm>& terms) {
    int total = g.constant(0.0);
    for (const CostTerm& t : terms) total = g.add(total, g.scalar_mul(t.weight, t.node));
    return total;
}

}  // namespace ratm
