#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "attention.hpp"
#include "convnet.hpp"
#include "gradcheck.hpp"
#include "irnn.hpp"
#include "tracker.hpp"

namespace ratm {

// One finite-difference check: a named scalar builder, its input, and the
// tolerance its max relative error must stay under.
struct GradCheckCase {
    std::string name;
    double max_rel_error = 0.0;
    double tolerance = 1e-5;
    double seconds = 0.0;
    bool passed = false;
};

// Runs the full gradient-check battery: every primitive op, the attention
// pipeline, unrolled RNNs, the end-to-end tracker, and the CNN path (which
// gets a looser tolerance because of its longer float chains).
inline std::vector<GradCheckCase> run_gradcheck_suite() {
    std::vector<GradCheckCase> results;
    auto run = [&](const std::string& name, const Tensor& x, const ScalarBuilder& build,
                   double tol = 1e-5, double denom_floor = 1e-8) {
        auto t0 = std::chrono::steady_clock::now();
        GradCheckResult r = finite_diff_check(build, x, 1e-6, denom_floor);
        auto t1 = std::chrono::steady_clock::now();
        results.push_back({name, r.max_rel_error, tol,
                           std::chrono::duration<double>(t1 - t0).count(),
                           r.max_rel_error < tol});
    };

    Rng rng(20240917);
    auto randt = [&](std::vector<std::size_t> s) {
        return perturb_off_kinks(rng.gaussian_tensor(std::move(s), 0.0, 1.0), 1e-2);
    };

    // ---- primitive ops, each reduced to a scalar through sum ----
    Tensor a23 = randt({2, 3}), b23 = randt({2, 3}), m34 = randt({3, 4});
    run("matmul", a23, [&](Graph& g, int x) { return g.sum(g.matmul(x, g.constant(m34))); });
    run("add", a23, [&](Graph& g, int x) { return g.sum(g.add(x, g.constant(b23))); });
    run("sub", a23, [&](Graph& g, int x) { return g.sum(g.sub(g.constant(b23), x)); });
    run("mul", a23, [&](Graph& g, int x) { return g.sum(g.mul(x, g.constant(b23))); });
    run("scalar-broadcast", randt({1}), [&](Graph& g, int x) {
        return g.sum(g.mul(g.add(x, g.constant(b23)), g.constant(a23)));
    });
    run("scalar_mul", a23, [&](Graph& g, int x) { return g.sum(g.scalar_mul(-2.5, x)); });
    run("relu", a23, [&](Graph& g, int x) { return g.sum(g.relu(x)); });
    run("abs", a23, [&](Graph& g, int x) { return g.sum(g.abs(x)); });
    run("exp", a23, [&](Graph& g, int x) { return g.sum(g.exp(x)); });
    run("negate", a23, [&](Graph& g, int x) { return g.sum(g.negate(x)); });
    run("square", a23, [&](Graph& g, int x) { return g.sum(g.square(x)); });
    run("reciprocal", Tensor({4}, {1.5, -2.0, 0.7, 3.0}),
        [&](Graph& g, int x) { return g.sum(g.reciprocal(x)); });
    run("mean", a23, [&](Graph& g, int x) { return g.mean(x); });
    Tensor m22 = randt({2, 2}), v2 = randt({2}), m25 = randt({2, 5});
    Tensor img55 = randt({2, 5, 5}), ker = randt({3, 2, 3, 3}), sm_target = randt({2, 5});
    run("transpose", a23, [&](Graph& g, int x) {
        return g.sum(g.matmul(g.transpose(x), g.constant(m22)));
    });
    run("slice", randt({6}), [&](Graph& g, int x) { return g.sum(g.square(g.slice(x, {1}, {3}))); });
    run("concat", randt({3}), [&](Graph& g, int x) {
        return g.sum(g.square(g.concat({x, g.constant(v2)})));
    });
    run("reshape", a23, [&](Graph& g, int x) {
        return g.sum(g.matmul(g.reshape(x, {3, 2}), g.constant(m25)));
    });
    run("bias_add", randt({2, 3, 3}), [&](Graph& g, int x) {
        return g.sum(g.square(g.bias_add(x, g.constant(v2))));
    });
    run("conv2d-input", img55, [&](Graph& g, int x) {
        return g.sum(g.square(g.conv2d(x, g.constant(ker))));
    });
    run("conv2d-weights", ker, [&](Graph& g, int w) {
        return g.sum(g.square(g.conv2d(g.constant(img55), w)));
    });
    run("maxpool2x2", randt({2, 4, 4}),
        [&](Graph& g, int x) { return g.sum(g.square(g.maxpool2x2(x))); });
    run("softmax_rows", randt({2, 5}), [&](Graph& g, int x) {
        return g.sum(g.square(g.sub(g.softmax_rows(x), g.constant(sm_target))));
    });
    Tensor dmask = dropout_mask({2, 3}, 0.25, 7);
    run("dropout", a23,
        [&](Graph& g, int x) { return g.sum(g.square(g.dropout_mask_apply(x, dmask))); });

    // ---- attention pipeline: raw params -> filterbanks -> glimpse -> loss ----
    GlimpseSpec spec{4, 4, 14, 14};
    Tensor image = rng.gaussian_tensor({14, 14}, 0.5, 0.2);
    Tensor target = rng.gaussian_tensor({4, 4}, 0.5, 0.2);
    Tensor raw = perturb_off_kinks(Tensor({6}, {0.2, -0.3, 0.9, 1.1, 0.7, 0.8}), 1e-2);
    run("attention-pipeline", raw, [&](Graph& g, int x) {
        AttentionNodes p = normalize_params(g, x, spec);
        FilterBanks fb = build_filterbanks(g, p, spec);
        int glimpse = extract_glimpse(g, g.constant(image), fb);
        return pixel_loss(g, glimpse, g.constant(target));
    });
    run("attention-image", image, [&](Graph& g, int x) {
        AttentionNodes p = normalize_params(g, g.constant(raw), spec);
        FilterBanks fb = build_filterbanks(g, p, spec);
        return pixel_loss(g, extract_glimpse(g, x, fb), g.constant(target));
    }, 1e-5, 1e-4);

    // ---- IRNN unrolled over T steps, loss on every output ----
    for (std::size_t T : {1ul, 3ul, 10ul}) {
        std::size_t D = 4, H = 5;
        IRNNCell cell = init_irnn(D, H, 3, 1.0, 0.3);
        std::vector<Tensor> xs;
        for (std::size_t t = 0; t < T; ++t) xs.push_back(rng.gaussian_tensor({D}, 0.0, 1.0));
        // pack all cell params into a single leaf and rebuild nodes by slicing
        std::vector<double> flat;
        for (const Tensor* p : {&cell.w_in, &cell.w_rec, &cell.w_out, &cell.b_y})
            flat.insert(flat.end(), p->data.begin(), p->data.end());
        Tensor packed = perturb_off_kinks(Tensor({flat.size()}, flat), 1e-2);
        run("irnn-T" + std::to_string(T), packed, [&, D, H](Graph& g, int x) {
            std::size_t o = 0;
            auto take = [&](std::vector<std::size_t> s) {
                std::size_t n = Tensor::numel_of(s);
                int id = g.reshape(g.slice(x, {o}, {n}), s);
                o += n;
                return id;
            };
            IRNNNodes nodes{take({H, D}), take({H, H}), take({kNumAttentionParams, H}),
                            take({kNumAttentionParams})};
            int h = g.constant(Tensor::zeros({H}));
            int loss = g.constant(0.0);
            for (std::size_t t = 0; t < xs.size(); ++t) {
                IRNNStep st = irnn_step(g, nodes, h, g.constant(xs[t]));
                h = st.h;
                loss = g.add(loss, g.sum(g.square(st.y)));
            }
            return loss;
        });
    }

    // ---- end-to-end tracker (checked against finite differences in-place) ----
    {
        RATMConfig cfg;
        cfg.glimpse = {3, 3, 12, 12};
        cfg.hidden = 4;
        cfg.init = InitPolicy::GroundTruthBox;
        cfg.placement = LossPlacement::AllFrames;
        cfg.pixel_weight = 1.0;
        cfg.target_patch = ball_target_patch(3, 1.0);
        BallConfig bc;
        bc.frames = 3;
        bc.size = 12;
        bc.radius = 1.5;
        VideoSequence seq = gen_bouncing_ball_sequence(13, bc);
        IRNNCell cell = init_irnn(9, 4, 21, 1.0, 0.3);
        for (double& v : cell.b_y.data) v = 0.31;  // keep raw params off kinks
        std::vector<double> flat;
        for (const Tensor* p : {&cell.w_in, &cell.w_rec, &cell.w_out, &cell.b_y})
            flat.insert(flat.end(), p->data.begin(), p->data.end());
        run("ratm-end-to-end", Tensor({flat.size()}, flat), [&](Graph& g, int x) {
            std::size_t o = 0, D = 9, H = 4;
            auto take = [&](std::vector<std::size_t> s) {
                std::size_t n = Tensor::numel_of(s);
                int id = g.reshape(g.slice(x, {o}, {n}), s);
                o += n;
                return id;
            };
            IRNNNodes nodes{take({H, D}), take({H, H}), take({kNumAttentionParams, H}),
                            take({kNumAttentionParams})};
            int raw0 = g.constant(init_raw_params(cfg, cfg.init, seq, seq.seed));
            AttentionNodes params = normalize_params(g, raw0, cfg.glimpse);
            int h = g.constant(Tensor::zeros({H}));
            int loss = g.constant(0.0);
            for (std::size_t t = 0; t < 3; ++t) {
                Tensor frame({12, 12});
                std::copy(seq.frames.data.begin() + t * 144,
                          seq.frames.data.begin() + (t + 1) * 144, frame.data.begin());
                FilterBanks fb = build_filterbanks(g, params, cfg.glimpse);
                int glimpse = extract_glimpse(g, g.constant(frame), fb);
                loss = g.add(loss, pixel_loss(g, glimpse, g.constant(cfg.target_patch)));
                IRNNStep st = irnn_step(g, nodes, h, g.reshape(glimpse, {D}));
                h = st.h;
                params = normalize_params(g, st.y, cfg.glimpse);
            }
            return g.scalar_mul(1.0 / 3.0, loss);
        }, 1e-5, 1e-4);
    }

    // ---- CNN path: grad wrt the input image and the biases ----
    {
        ConvNet net = init_convnet(5);
        Tensor img = rng.gaussian_tensor({28, 28}, 0.5, 0.2);
        Tensor onehot = one_hot(3);
        auto cnn_loss = [&](Graph& g, const ConvNetNodes& nodes, int img_node) {
            ConvNetOutput out = cnn_forward(g, nodes, img_node, /*training=*/false);
            return mse(g, out.probs, g.constant(onehot));
        };
        run("cnn-input", img, [&](Graph& g, int x) {
            ConvNetNodes nodes = add_convnet_leaves(g, net, false);
            return cnn_loss(g, nodes, x);
        }, 1e-4, 1e-4);
        auto param_case = [&](const std::string& key) {
            run("cnn-" + key, net.params.at(key), [&, key](Graph& g, int x) {
                ConvNetNodes nodes;
                auto leaf = [&](const std::string& k) {
                    return k == key ? x : g.constant(net.params.at(k));
                };
                nodes = {leaf("conv1.w"), leaf("conv1.b"), leaf("conv2.w"),
                         leaf("conv2.b"), leaf("dense.w"), leaf("dense.b")};
                return cnn_loss(g, nodes, g.constant(img));
            }, 1e-4);
        };
        param_case("conv1.b");
        param_case("conv2.b");
        param_case("dense.b");
    }

    return results;
}

}  // namespace ratm
