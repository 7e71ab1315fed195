#pragma once

#include <cmath>
#include <functional>

#include "graph.hpp"

namespace ratm {

// Builds a scalar loss on top of a leaf; called once for the analytic pass and
// 2*numel times for central differences.
using ScalarBuilder = std::function<int(Graph&, int)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0, numeric = 0.0;
};

// `denom_floor` guards the relative error against roundoff noise in the
// central differences: entries whose gradient magnitude falls below the floor
// are effectively judged by absolute error (floor * tolerance). For losses of
// order 1 the difference noise is ~1e-10, so wide inputs with many near-zero
// gradient entries (images, full models) need a floor around 1e-4.
inline GradCheckResult finite_diff_check(const ScalarBuilder& build, const Tensor& x,
                                         double h = 1e-6, double denom_floor = 1e-8) {
    Graph g;
    int xid = g.add_leaf(x, /*requires_grad=*/true);
    int loss = build(g, xid);
    g.backward(loss);
    Tensor analytic = g.has_grad(xid) ? g.grad(xid) : Tensor::zeros(x.shape);

    auto eval = [&](const Tensor& t) {
        Graph gg;
        int id = gg.add_leaf(t, false);
        return gg.value(build(gg, id)).scalar();
    };

    GradCheckResult r;
    Tensor xp = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        xp.data[i] = x.data[i] + h;
        double fp = eval(xp);
        xp.data[i] = x.data[i] - h;
        double fm = eval(xp);
        xp.data[i] = x.data[i];
        double num = (fp - fm) / (2.0 * h);
        double ana = analytic.data[i];
        double rel = std::fabs(ana - num) / std::max(denom_floor, std::fabs(ana) + std::fabs(num));
        if (rel > r.max_rel_error) {
            r.max_rel_error = rel;
            r.worst_index = i;
            r.analytic = ana;
            r.numeric = num;
        }
    }
    return r;
}

// Nudges entries away from relu/abs kinks so central differences stay one-sided.
inline Tensor perturb_off_kinks(Tensor x, double margin = 1e-3) {
    for (double& v : x.data)
        if (std::fabs(v) < margin) v = v < 0 ? -margin : margin;
    return x;
}

}  // namespace ratm
