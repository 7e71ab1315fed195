#pragma once

#include <optional>
#include <string>
#include <vector>

#include "attention.hpp"
#include "convnet.hpp"
#include "datasets.hpp"
#include "graph.hpp"
#include "irnn.hpp"
#include "objectives.hpp"

namespace ratm {

enum class InitPolicy {
    RandomGlimpse,     // bouncing balls: random window in the first frame
    FullFrame,         // single digit: learnable bias, initial glimpse covers the frame
    CenteredOnTarget,  // multi digit: fixed per-video bias centered on the target
    GroundTruthBox,    // window matches the first frame's ground-truth box
};

enum class LossPlacement { LastFrame, AllFrames };

struct RATMConfig {
    GlimpseSpec glimpse;
    std::size_t hidden = 64;
    InitPolicy init = InitPolicy::RandomGlimpse;
    LossPlacement placement = LossPlacement::LastFrame;
    double pixel_weight = 0.0;   // glimpse vs target patch
    double class_weight = 0.0;   // CNN class probabilities vs label (every frame)
    double loc_weight = 0.0;     // grid center vs gt box center (every frame)
    double feat_weight = 0.0;    // CNN features of glimpse vs gt-sized window (every frame)
    double size_weight = 0.0;    // window extent vs gt box extent (every frame)
    double decay_weight = 0.0;   // Frobenius penalty on W_in and W_out
    Tensor target_patch;         // required when pixel_weight > 0
    std::size_t train_len = 32;
    double full_frame_coverage = 0.9;      // FullFrame: grid span as frame fraction
    double centered_coverage = 0.8;        // CenteredOnTarget: width/height frame fraction
    double bbox_scale = 1.0;               // optional gt-box scale factor, 1 = off
};

// Raw (pre-normalization) parameters whose window matches the given box.
inline Tensor raw_params_for_box(const BBox& b, const GlimpseSpec& sp) {
    auto g_tilde = [](double center_px, std::size_t extent) {
        return 2.0 * center_px / static_cast<double>(extent - 1) - 1.0;
    };
    Tensor raw({kNumAttentionParams});
    raw.data[0] = g_tilde(b.cx(), sp.img_cols);
    raw.data[1] = g_tilde(b.cy(), sp.img_rows);
    double dx = sp.grid_cols > 1 ? b.width() / (sp.grid_cols - 1) : 0.0;
    double dy = sp.grid_rows > 1 ? b.height() / (sp.grid_rows - 1) : 0.0;
    raw.data[2] = 0.5 * std::max(dx, kSigmaFloor);
    raw.data[3] = 0.5 * std::max(dy, kSigmaFloor);
    raw.data[4] = sp.grid_cols > 1 ? b.width() / (sp.img_cols - 1) : 0.0;
    raw.data[5] = sp.grid_rows > 1 ? b.height() / (sp.img_rows - 1) : 0.0;
    return raw;
}

// The glimpse a tracker would read through `box` (no gradients kept).
inline Tensor read_box_glimpse(const Tensor& image, const BBox& box, const GlimpseSpec& sp) {
    Graph g;
    AttentionNodes p = normalize_params(g, g.constant(raw_params_for_box(box, sp)), sp);
    return g.value(extract_glimpse(g, g.constant(image), build_filterbanks(g, p, sp)));
}

// Raw (pre-normalization) parameter vector for a given init policy. For
// FullFrame the caller uses the learnable bias node instead.
inline Tensor init_raw_params(const RATMConfig& cfg, InitPolicy policy,
                              const VideoSequence& seq, std::uint64_t seed) {
    const GlimpseSpec& sp = cfg.glimpse;
    Tensor raw({kNumAttentionParams});
    auto g_tilde = [](double center_px, std::size_t extent) {
        return 2.0 * center_px / static_cast<double>(extent - 1) - 1.0;
    };
    switch (policy) {
        case InitPolicy::RandomGlimpse: {
            Rng rng(derive_seed(seed, 0x1417u));
            raw.data[0] = rng.uniform(-1.0, 1.0);
            raw.data[1] = rng.uniform(-1.0, 1.0);
            raw.data[2] = std::fabs(rng.normal());
            raw.data[3] = std::fabs(rng.normal());
            raw.data[4] = std::fabs(rng.normal());
            raw.data[5] = std::fabs(rng.normal());
            break;
        }
        case InitPolicy::FullFrame: {
            raw.data[0] = raw.data[1] = 0.0;  // centered
            double span = cfg.full_frame_coverage;
            double step_x = span * stride_factor(sp.grid_cols, sp.img_cols);
            double step_y = span * stride_factor(sp.grid_rows, sp.img_rows);
            raw.data[2] = 0.5 * step_x;
            raw.data[3] = 0.5 * step_y;
            raw.data[4] = raw.data[5] = span;
            break;
        }
        case InitPolicy::CenteredOnTarget: {
            const BBox& b = seq.gt_boxes.at(0);
            raw.data[0] = g_tilde(b.cx(), sp.img_cols);
            raw.data[1] = g_tilde(b.cy(), sp.img_rows);
            double span = cfg.centered_coverage;
            raw.data[2] = 0.5 * span * stride_factor(sp.grid_cols, sp.img_cols);
            raw.data[3] = 0.5 * span * stride_factor(sp.grid_rows, sp.img_rows);
            raw.data[4] = raw.data[5] = span;
            break;
        }
        case InitPolicy::GroundTruthBox: {
            BBox b = seq.gt_boxes.at(0);
            if (cfg.bbox_scale != 1.0) {
                double w = b.width() * cfg.bbox_scale, h = b.height() * cfg.bbox_scale;
                b = {b.cx() - w / 2, b.cy() - h / 2, b.cx() + w / 2, b.cy() + h / 2};
            }
            raw = raw_params_for_box(b, sp);
            break;
        }
    }
    return raw;
}

// Seed the output bias so untrained steps emit a window covering the whole
// frame. With b_y = 0 the early windows collapse to a point (the stride and
// sigma raw outputs start near zero), the glimpse lands on empty background,
// and the pixel loss has no gradient. A full-frame starting window keeps the
// target inside the glimpse so training can get off the ground; for the
// FullFrame init policy it doubles as the learnable first-frame window.
inline void seed_full_frame_bias(IRNNCell& cell, const RATMConfig& cfg) {
    cell.b_y = init_raw_params(cfg, InitPolicy::FullFrame, VideoSequence{}, 0);
}

struct TrackOutput {
    IRNNNodes cell_nodes;
    std::vector<AttentionNodes> params;  // window used to read frame t
    std::vector<int> glimpses;           // (N,M) nodes
    std::vector<int> hidden;
    std::vector<CostTerm> terms;
    int loss = -1;
};

// Unrolls the model over sequence frames 0..T-1. The window for frame 0 comes
// from the init policy; each RNN step then emits the window for the next frame.
inline TrackOutput ratm_forward(Graph& g, const RATMConfig& cfg, const IRNNCell& cell,
                                const VideoSequence& seq, std::size_t T, bool trainable) {
    const GlimpseSpec& sp = cfg.glimpse;
    if (seq.rows() != sp.img_rows || seq.cols() != sp.img_cols)
        throw GraphError("ratm_forward: sequence frame size does not match glimpse spec");
    if (T < 1 || T > seq.length())
        throw GraphError("ratm_forward: bad unroll length");
    if (cell.input_dim() != sp.grid_cols * sp.grid_rows)
        throw GraphError("ratm_forward: RNN input dim does not match glimpse size");

    TrackOutput out;
    out.cell_nodes = add_irnn_leaves(g, cell, trainable);

    int raw_prev;
    if (cfg.init == InitPolicy::FullFrame) {
        raw_prev = out.cell_nodes.b_y;  // learnable init window
    } else {
        raw_prev = g.constant(init_raw_params(cfg, cfg.init, seq, seq.seed));
    }
    AttentionNodes params_prev = normalize_params(g, raw_prev, sp);

    int h = g.add_leaf(Tensor::zeros({cell.hidden_dim()}), false);
    std::size_t px = seq.rows() * seq.cols();
    for (std::size_t t = 0; t < T; ++t) {
        Tensor frame({seq.rows(), seq.cols()});
        std::copy(seq.frames.data.begin() + t * px, seq.frames.data.begin() + (t + 1) * px,
                  frame.data.begin());
        int frame_node = g.constant(std::move(frame));
        FilterBanks fb = build_filterbanks(g, params_prev, sp);
        int glimpse = extract_glimpse(g, frame_node, fb);

        out.params.push_back(params_prev);
        out.glimpses.push_back(glimpse);

        int x = g.reshape(glimpse, {sp.grid_cols * sp.grid_rows});  // identity features
        IRNNStep step = irnn_step(g, out.cell_nodes, h, x);
        h = step.h;
        out.hidden.push_back(h);
        params_prev = normalize_params(g, step.y, sp);
    }
    return out;
}

// Attaches the configured cost terms and the summed loss to a forward pass.
// `net` is required when class_weight > 0; its parameters stay frozen.
inline void ratm_loss(Graph& g, const RATMConfig& cfg, TrackOutput& out,
                      const VideoSequence& seq, const ConvNet* net = nullptr) {
    std::size_t T = out.glimpses.size();
    const GlimpseSpec& sp = cfg.glimpse;

    if (cfg.pixel_weight > 0.0) {
        if (cfg.target_patch.numel() == 0)
            throw GraphError("ratm_loss: pixel term configured without a target patch");
        int target = g.constant(cfg.target_patch);
        int term;
        if (cfg.placement == LossPlacement::LastFrame) {
            term = pixel_loss(g, out.glimpses.back(), target);
        } else {
            term = g.constant(0.0);
            for (std::size_t t = 0; t < T; ++t)
                term = g.add(term, pixel_loss(g, out.glimpses[t], target));
            term = g.scalar_mul(1.0 / static_cast<double>(T), term);
        }
        out.terms.push_back({"pixel", term, cfg.pixel_weight});
    }

    if (cfg.class_weight > 0.0) {
        if (!net) throw GraphError("ratm_loss: class term configured without a ConvNet");
        if (seq.label < 0) throw GraphError("ratm_loss: class term needs a labeled sequence");
        ConvNetNodes nodes = add_convnet_leaves(g, *net, /*trainable=*/false);
        int target = g.constant(one_hot(static_cast<std::size_t>(seq.label)));
        int term = g.constant(0.0);
        for (std::size_t t = 0; t < T; ++t) {
            ConvNetOutput feat = cnn_forward(g, nodes, out.glimpses[t], /*training=*/false);
            term = g.add(term, mse(g, feat.probs, target));
        }
        term = g.scalar_mul(1.0 / static_cast<double>(T), term);
        out.terms.push_back({"class", term, cfg.class_weight});
    }

    if (cfg.feat_weight > 0.0) {
        if (!net) throw GraphError("ratm_loss: feature term configured without a ConvNet");
        if (seq.gt_boxes.size() < T)
            throw GraphError("ratm_loss: feature term needs ground-truth boxes for every frame");
        // Match the CNN representation of each glimpse against the (frozen)
        // representation of the same frame read through a ground-truth-sized
        // window placed at the *predicted* center. Centering the target on the
        // prediction makes this a pure scale/content signal: it teaches the
        // window to shrink to object size without fighting the loc term over
        // the center (a gt-centered target adds a noisy center pull that
        // destabilizes tracking whenever the window drifts). The target goes
        // through the same read mechanism so both sides share the filter
        // statistics, and is treated as a constant.
        ConvNetNodes nodes = add_convnet_leaves(g, *net, /*trainable=*/false);
        std::size_t px = sp.img_rows * sp.img_cols;
        int term = g.constant(0.0);
        for (std::size_t t = 0; t < T; ++t) {
            Tensor frame({sp.img_rows, sp.img_cols});
            std::copy(seq.frames.data.begin() + t * px, seq.frames.data.begin() + (t + 1) * px,
                      frame.data.begin());
            const AttentionNodes& pn = out.params[t];
            double cx = g.value(pn.g_x).scalar() * static_cast<double>(sp.img_cols - 1);
            double cy = g.value(pn.g_y).scalar() * static_cast<double>(sp.img_rows - 1);
            double hw = 0.5 * seq.gt_boxes[t].width(), hh = 0.5 * seq.gt_boxes[t].height();
            BBox tb{cx - hw, cy - hh, cx + hw, cy + hh};
            int target_glimpse = g.constant(read_box_glimpse(frame, tb, sp));
            ConvNetOutput target = cnn_forward(g, nodes, target_glimpse, /*training=*/false);
            ConvNetOutput pred = cnn_forward(g, nodes, out.glimpses[t], /*training=*/false);
            term = g.add(term, mse(g, pred.penultimate, g.constant(g.value(target.penultimate))));
        }
        term = g.scalar_mul(1.0 / static_cast<double>(T), term);
        out.terms.push_back({"feat", term, cfg.feat_weight});
    }

    if (cfg.loc_weight > 0.0) {
        if (seq.gt_boxes.size() < T)
            throw GraphError("ratm_loss: loc term needs ground-truth boxes for every frame");
        int term = g.constant(0.0);
        for (std::size_t t = 0; t < T; ++t) {
            // window emitted for frame t (predicted after seeing frame t) is
            // params[t+1]; the final emission has no frame to score against,
            // so penalize each frame's reading window against that frame's box
            const AttentionNodes& pn = out.params[t];
            int cx = g.scalar_mul(static_cast<double>(sp.img_cols - 1), pn.g_x);
            int cy = g.scalar_mul(static_cast<double>(sp.img_rows - 1), pn.g_y);
            const BBox& b = seq.gt_boxes[t];
            term = g.add(term, loc_loss(g, cx, cy, b.cx(), b.cy()));
        }
        term = g.scalar_mul(1.0 / static_cast<double>(T), term);
        out.terms.push_back({"loc", term, cfg.loc_weight});
    }

    if (cfg.size_weight > 0.0) {
        if (seq.gt_boxes.size() < T)
            throw GraphError("ratm_loss: size term needs ground-truth boxes for every frame");
        // Squared distance between the window extent and the gt box extent,
        // in pixels. Quadratic in the gap, so it dominates while the window is
        // far too wide and fades as it closes in, letting the loc term keep
        // control of the center throughout.
        int term = g.constant(0.0);
        for (std::size_t t = 0; t < T; ++t) {
            const AttentionNodes& pn = out.params[t];
            int w = g.scalar_mul(static_cast<double>(sp.grid_cols - 1), pn.delta_x);
            int h = g.scalar_mul(static_cast<double>(sp.grid_rows - 1), pn.delta_y);
            const BBox& b = seq.gt_boxes[t];
            term = g.add(term, loc_loss(g, w, h, b.width(), b.height()));
        }
        term = g.scalar_mul(1.0 / static_cast<double>(T), term);
        out.terms.push_back({"size", term, cfg.size_weight});
    }

    if (cfg.decay_weight > 0.0) {
        int term = weight_decay(g, {out.cell_nodes.w_in, out.cell_nodes.w_out});
        out.terms.push_back({"decay", term, cfg.decay_weight});
    }

    if (out.terms.empty()) throw GraphError("ratm_loss: no cost terms configured");
    out.loss = total_loss(g, out.terms);
}

// Predicted boxes for IoU evaluation: the window used to read each frame.
inline std::vector<BBox> predicted_boxes(const Graph& g, const RATMConfig& cfg,
                                         const TrackOutput& out) {
    std::vector<BBox> boxes;
    boxes.reserve(out.params.size());
    for (const AttentionNodes& pn : out.params) {
        BBox b = grid_bbox(read_params(g, pn), cfg.glimpse);
        if (cfg.bbox_scale != 1.0) {
            double w = b.width() / cfg.bbox_scale, h = b.height() / cfg.bbox_scale;
            b = {b.cx() - w / 2, b.cy() - h / 2, b.cx() + w / 2, b.cy() + h / 2};
        }
        boxes.push_back(b);
    }
    return boxes;
}

}  // namespace ratm
