#pragma once

#include <cstddef>

#include "bbox.hpp"
#include "graph.hpp"

namespace ratm {

// Attention grid geometry: an M x N grid of Gaussian filters over a B x A image.
struct GlimpseSpec {
    std::size_t grid_cols = 1;  // M
    std::size_t grid_rows = 1;  // N
    std::size_t img_cols = 2;   // A
    std::size_t img_rows = 2;   // B
};

// Normalized window parameters as graph nodes (each a scalar node).
// Centers are fractions of the image extent; strides and sigmas are in pixels.
struct AttentionNodes {
    int g_x = -1, g_y = -1;
    int sigma_x = -1, sigma_y = -1;
    int delta_x = -1, delta_y = -1;
};

// Plain numeric view, for bookkeeping outside the graph.
struct AttentionParams {
    double g_x = 0, g_y = 0;
    double sigma_x = 0, sigma_y = 0;
    double delta_x = 0, delta_y = 0;
};

inline AttentionParams read_params(const Graph& g, const AttentionNodes& n) {
    return {g.value(n.g_x).scalar(),     g.value(n.g_y).scalar(),
            g.value(n.sigma_x).scalar(), g.value(n.sigma_y).scalar(),
            g.value(n.delta_x).scalar(), g.value(n.delta_y).scalar()};
}

constexpr double kSigmaFloor = 0.1;      // pixels; keeps filter rows alive when sigma -> 0
constexpr double kRowNormEps = 1e-8;

inline double stride_factor(std::size_t grid_dim, std::size_t img_dim) {
    // (A-1)/(M-1); a single-filter grid has no stride and sits at the center
    return grid_dim > 1
               ? static_cast<double>(img_dim - 1) / static_cast<double>(grid_dim - 1)
               : 0.0;
}

// Raw RNN outputs (a 6-vector node, order gx gy sx sy dx dy) -> normalized params.
// g = (g~+1)/2, sigma = |sigma~|, delta = (A-1)/(M-1)*|delta~|.
inline AttentionNodes normalize_params(Graph& g, int raw6, const GlimpseSpec& spec) {
    auto pick = [&](std::size_t i) { return g.slice(raw6, {i}, {1}); };
    AttentionNodes out;
    int one = g.constant(1.0);
    out.g_x = g.scalar_mul(0.5, g.add(pick(0), one));
    out.g_y = g.scalar_mul(0.5, g.add(pick(1), one));
    out.sigma_x = g.abs(pick(2));
    out.sigma_y = g.abs(pick(3));
    out.delta_x = g.scalar_mul(stride_factor(spec.grid_cols, spec.img_cols), g.abs(pick(4)));
    out.delta_y = g.scalar_mul(stride_factor(spec.grid_rows, spec.img_rows), g.abs(pick(5)));
    return out;
}

inline double grid_offset(std::size_t i, std::size_t grid_dim) {
    // filter index i in 1..M; offset (i - M/2 - 0.5) grid steps from the center
    return static_cast<double>(i) - static_cast<double>(grid_dim) / 2.0 - 0.5;
}

// Filter mean in pixels for 1-based grid index i.
inline double filter_mu(double g_frac, double delta, std::size_t i, std::size_t grid_dim,
                        std::size_t img_dim) {
    return g_frac * static_cast<double>(img_dim - 1) + grid_offset(i, grid_dim) * delta;
}

namespace detail {

// One axis of the filter bank: rows of exp(-(a-mu_i)^2 / (2 sigma^2)),
// each normalized to sum to one. Returns a (grid_dim x img_dim) node.
inline int filterbank_axis(Graph& g, int g_frac, int sigma, int delta, std::size_t grid_dim,
                           std::size_t img_dim) {
    std::size_t M = grid_dim, A = img_dim;
    Tensor offs({M, 1});
    for (std::size_t i = 0; i < M; ++i) offs.data[i] = grid_offset(i + 1, M);
    Tensor coords({M, A});
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t a = 0; a < A; ++a) coords.at(i, a) = static_cast<double>(a);

    int center_px = g.scalar_mul(static_cast<double>(A - 1), g_frac);
    int mu = g.add(g.mul(g.constant(offs), delta), center_px);      // (M,1)
    int mu_grid = g.matmul(mu, g.constant(Tensor::ones({1, A})));   // (M,A)
    int diff = g.sub(g.constant(coords), mu_grid);

    // sigma floor as 0.1 + relu(sigma - 0.1), differentiable max
    int sig = g.add(g.constant(kSigmaFloor),
                    g.relu(g.sub(sigma, g.constant(kSigmaFloor))));
    int inv_two_sig2 = g.scalar_mul(0.5, g.reciprocal(g.square(sig)));
    int unnorm = g.exp(g.negate(g.mul(g.square(diff), inv_two_sig2)));

    int row_sum = g.matmul(unnorm, g.constant(Tensor::ones({A, 1})));  // (M,1)
    int inv_sum = g.reciprocal(g.add(row_sum, g.constant(kRowNormEps)));
    int inv_grid = g.matmul(inv_sum, g.constant(Tensor::ones({1, A})));
    return g.mul(unnorm, inv_grid);
}

}  // namespace detail

struct FilterBanks {
    int fx = -1;  // (M, A)
    int fy = -1;  // (N, B)
};

inline FilterBanks build_filterbanks(Graph& g, const AttentionNodes& p, const GlimpseSpec& spec) {
    FilterBanks fb;
    fb.fx = detail::filterbank_axis(g, p.g_x, p.sigma_x, p.delta_x, spec.grid_cols, spec.img_cols);
    fb.fy = detail::filterbank_axis(g, p.g_y, p.sigma_y, p.delta_y, spec.grid_rows, spec.img_rows);
    return fb;
}

// p = F_Y x F_X^T : (N,B)(B,A)(A,M) -> (N,M)
inline int extract_glimpse(Graph& g, int image, const FilterBanks& fb) {
    return g.matmul(g.matmul(fb.fy, image), g.transpose(fb.fx));
}

// Rectangle spanned by the outermost filter means of the grid.
inline BBox grid_bbox(const AttentionParams& p, const GlimpseSpec& spec) {
    BBox b;
    b.x_min = filter_mu(p.g_x, p.delta_x, 1, spec.grid_cols, spec.img_cols);
    b.x_max = filter_mu(p.g_x, p.delta_x, spec.grid_cols, spec.grid_cols, spec.img_cols);
    b.y_min = filter_mu(p.g_y, p.delta_y, 1, spec.grid_rows, spec.img_rows);
    b.y_max = filter_mu(p.g_y, p.delta_y, spec.grid_rows, spec.grid_rows, spec.img_rows);
    return b;
}

}  // namespace ratm
