#pragma once

#include <cstdint>
#include <vector>

#include "graph.hpp"
#include "objectives.hpp"
#include "optimizer.hpp"
#include "rng.hpp"

namespace ratm {

// Digit classifier: conv(32x5x5) -> pool -> relu -> dropout ->
// conv(32x5x5) -> pool -> relu -> dropout -> dense softmax(10).
// Valid convolutions, so 28 -> 24 -> 12 -> 8 -> 4 and the dense input is 512.
struct ConvNet {
    ParamMap params;
    static constexpr std::size_t kInput = 28;
    static constexpr std::size_t kClasses = 10;
    static constexpr std::size_t kFilters = 32;
    static constexpr std::size_t kKernel = 5;
    static constexpr std::size_t kFlat = 512;  // 32*4*4
    static constexpr double kDropoutRate = 0.25;
};

inline ConvNet init_convnet(std::uint64_t seed, double init_stddev = 0.1) {
    Rng rng(seed);
    ConvNet net;
    auto& p = net.params;
    p["conv1.w"] = rng.gaussian_tensor({ConvNet::kFilters, 1, ConvNet::kKernel, ConvNet::kKernel},
                                       0.0, init_stddev);
    p["conv1.b"] = Tensor::zeros({ConvNet::kFilters});
    p["conv2.w"] = rng.gaussian_tensor(
        {ConvNet::kFilters, ConvNet::kFilters, ConvNet::kKernel, ConvNet::kKernel}, 0.0,
        init_stddev / 5.0);
    p["conv2.b"] = Tensor::zeros({ConvNet::kFilters});
    p["dense.w"] = rng.gaussian_tensor({ConvNet::kClasses, ConvNet::kFlat}, 0.0, init_stddev);
    p["dense.b"] = Tensor::zeros({ConvNet::kClasses});
    return net;
}

struct ConvNetNodes {
    int conv1_w = -1, conv1_b = -1, conv2_w = -1, conv2_b = -1, dense_w = -1, dense_b = -1;
};

inline ConvNetNodes add_convnet_leaves(Graph& g, const ConvNet& net, bool trainable) {
    const auto& p = net.params;
    return {g.add_leaf(p.at("conv1.w"), trainable), g.add_leaf(p.at("conv1.b"), trainable),
            g.add_leaf(p.at("conv2.w"), trainable), g.add_leaf(p.at("conv2.b"), trainable),
            g.add_leaf(p.at("dense.w"), trainable), g.add_leaf(p.at("dense.b"), trainable)};
}

// Tap points exposed to objective modules.
struct ConvNetOutput {
    int probs = -1;      // (10), sums to 1
    int penultimate = -1;  // (512) flattened pool2 activations
};

inline Tensor dropout_mask(const std::vector<std::size_t>& shape, double rate,
                           std::uint64_t seed) {
    Rng rng(seed);
    Tensor mask(shape);
    double keep_scale = 1.0 / (1.0 - rate);
    for (double& v : mask.data) v = rng.uniform() < rate ? 0.0 : keep_scale;
    return mask;
}

// glimpse: rank-2 (28,28) or rank-3 (1,28,28) node. Dropout is active only
// when training=true; masks are derived from `seed` so runs replay exactly.
inline ConvNetOutput cnn_forward(Graph& g, const ConvNetNodes& net, int glimpse, bool training,
                                 std::uint64_t seed = 0) {
    const Tensor& in = g.value(glimpse);
    std::size_t S = ConvNet::kInput;
    if (!(in.shape == std::vector<std::size_t>{S, S} ||
          in.shape == std::vector<std::size_t>{1, S, S}))
        throw GraphError("cnn_forward: expected 28x28 input, got " + Tensor::shape_str(in.shape));
    int x = in.rank() == 2 ? g.reshape(glimpse, {1, S, S}) : glimpse;

    auto block = [&](int input, int w, int b, std::uint64_t mask_tag) {
        int act = g.relu(g.maxpool2x2(g.bias_add(g.conv2d(input, w), b)));
        if (!training) return act;
        return g.dropout_mask_apply(
            act, dropout_mask(g.value(act).shape, ConvNet::kDropoutRate,
                              derive_seed(seed, 0xD0u, mask_tag)));
    };

    int h1 = block(x, net.conv1_w, net.conv1_b, 1);   // (32,12,12)
    int h2 = block(h1, net.conv2_w, net.conv2_b, 2);  // (32,4,4)
    ConvNetOutput out;
    out.penultimate = g.reshape(h2, {ConvNet::kFlat});
    out.probs = g.softmax_rows(
        g.add(g.matmul(net.dense_w, out.penultimate), net.dense_b));
    return out;
}

inline Tensor one_hot(std::size_t cls, std::size_t n = ConvNet::kClasses) {
    Tensor t({n});
    t.data.at(cls) = 1.0;
    return t;
}

inline double cnn_accuracy(const ConvNet& net, const Tensor& images, const Tensor& labels);

struct PretrainConfig {
    std::size_t batch_size = 128;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double clip_threshold = 5.0;
    std::size_t epochs = 3;
    std::uint64_t seed = 0;
    bool use_dropout = true;
};

// images: (n,28,28) in [0,1]; labels: (n) in 0..9. Returns final accuracy on
// (eval_images, eval_labels).
inline double pretrain_cnn(ConvNet& net, const Tensor& images, const Tensor& labels,
                           const Tensor& eval_images, const Tensor& eval_labels,
                           const PretrainConfig& cfg,
                           std::vector<double>* loss_log = nullptr) {
    std::size_t n = images.shape.at(0);
    if (n == 0 || labels.shape.at(0) != n)
        throw std::runtime_error("pretrain_cnn: empty or mismatched dataset");
    std::size_t S = ConvNet::kInput;

    OptimizerState opt;
    opt.learning_rate = cfg.learning_rate;
    opt.momentum = cfg.momentum;
    opt.clip_threshold = cfg.clip_threshold;

    auto example_image = [&](const Tensor& set, std::size_t i) {
        Tensor img({S, S});
        std::copy(set.data.begin() + i * S * S, set.data.begin() + (i + 1) * S * S,
                  img.data.begin());
        return img;
    };

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, 0x5F00u, epoch));
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start + cfg.batch_size <= n; start += cfg.batch_size) {
            ParamMap batch_grads;
            double batch_loss = 0.0;
            for (std::size_t k = 0; k < cfg.batch_size; ++k) {
                std::size_t idx = order[start + k];
                Graph g;
                ConvNetNodes nodes = add_convnet_leaves(g, net, true);
                int img = g.constant(example_image(images, idx));
                ConvNetOutput out = cnn_forward(g, nodes, img, cfg.use_dropout,
                                                derive_seed(cfg.seed, opt.step, k));
                int target = g.constant(one_hot(static_cast<std::size_t>(
                    labels.data[idx])));
                int loss = mse(g, out.probs, target);
                batch_loss += g.value(loss).scalar();
                g.backward(loss);
                ParamMap gm;
                gm["conv1.w"] = g.grad(nodes.conv1_w);
                gm["conv1.b"] = g.grad(nodes.conv1_b);
                gm["conv2.w"] = g.grad(nodes.conv2_w);
                gm["conv2.b"] = g.grad(nodes.conv2_b);
                gm["dense.w"] = g.grad(nodes.dense_w);
                gm["dense.b"] = g.grad(nodes.dense_b);
                accumulate_grads(batch_grads, gm, 1.0 / static_cast<double>(cfg.batch_size));
            }
            if (loss_log) loss_log->push_back(batch_loss / static_cast<double>(cfg.batch_size));
            clip_gradients(batch_grads, cfg.clip_threshold);
            sgd_step(opt, net.params, batch_grads);
        }
    }
    return cnn_accuracy(net, eval_images, eval_labels);
}

inline std::size_t cnn_predict(const ConvNet& net, const Tensor& image28) {
    Graph g;
    ConvNetNodes nodes = add_convnet_leaves(g, net, false);
    ConvNetOutput out = cnn_forward(g, nodes, g.constant(image28), false);
    const Tensor& p = g.value(out.probs);
    return static_cast<std::size_t>(
        std::max_element(p.data.begin(), p.data.end()) - p.data.begin());
}

inline double cnn_accuracy(const ConvNet& net, const Tensor& images, const Tensor& labels) {
    std::size_t n = images.shape.at(0), S = ConvNet::kInput;
    if (n == 0) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        Tensor img({S, S});
        std::copy(images.data.begin() + i * S * S, images.data.begin() + (i + 1) * S * S,
                  img.data.begin());
        if (cnn_predict(net, img) == static_cast<std::size_t>(labels.data[i])) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace ratm
