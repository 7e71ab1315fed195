#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <ratm/convnet.hpp>
#include <ratm/gradcheck.hpp>

using namespace ratm;

namespace {

// small synthetic "digit" images: class k = horizontal bar at row 2k+4
Tensor bar_image(std::size_t cls, double jitter, Rng& rng) {
    Tensor img({28, 28});
    std::size_t row = 2 * cls + 4;
    for (std::size_t c = 4; c < 24; ++c) {
        img.at(row, c) = 1.0;
        img.at(row + 1, c) = 0.8;
    }
    for (double& v : img.data) v = std::clamp(v + jitter * rng.normal(), 0.0, 1.0);
    return img;
}

}  // namespace

TEST_CASE("cnn_forward shapes and softmax") {
    ConvNet net = init_convnet(5);
    Graph g;
    ConvNetNodes nodes = add_convnet_leaves(g, net, false);
    Rng rng(1);
    int img = g.constant(rng.gaussian_tensor({28, 28}, 0.5, 0.2));
    ConvNetOutput out = cnn_forward(g, nodes, img, false);

    const Tensor& probs = g.value(out.probs);
    CHECK(probs.shape == std::vector<std::size_t>{10});
    double s = 0;
    for (double v : probs.data) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(g.value(out.penultimate).shape == std::vector<std::size_t>{512});

    SUBCASE("wrong input shape is an error") {
        int bad = g.constant(Tensor::zeros({27, 27}));
        CHECK_THROWS_AS(cnn_forward(g, nodes, bad, false), GraphError);
    }
    SUBCASE("eval mode is deterministic") {
        Graph g2;
        ConvNetNodes n2 = add_convnet_leaves(g2, net, false);
        int i2 = g2.constant(g.value(img));
        CHECK(g2.value(cnn_forward(g2, n2, i2, false).probs).data == probs.data);
    }
}

TEST_CASE("zero-weight net gives uniform probabilities") {
    ConvNet net = init_convnet(5);
    for (auto& [name, t] : net.params)
        for (double& v : t.data) v = 0.0;
    Graph g;
    ConvNetNodes nodes = add_convnet_leaves(g, net, false);
    Rng rng(2);
    ConvNetOutput out =
        cnn_forward(g, nodes, g.constant(rng.gaussian_tensor({28, 28}, 0.5, 0.2)), false);
    for (double v : g.value(out.probs).data) CHECK(std::fabs(v - 0.1) < 0.05);
}

TEST_CASE("maxpool backward routes gradient to argmax only") {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = rng.gaussian_tensor({1, 4, 4}, 0, 1);
        Tensor w = rng.gaussian_tensor({1, 2, 2}, 0, 1);  // weights on the 2x2 output
        Graph g;
        int xn = g.add_leaf(x, true);
        int pooled = g.maxpool2x2(xn);
        g.backward(g.sum(g.mul(pooled, g.constant(Tensor({1, 2, 2}, w.data)))));
        const Tensor& grad = g.grad(xn);
        // brute force: per 2x2 cell, gradient sits on the max element
        for (std::size_t cy = 0; cy < 2; ++cy)
            for (std::size_t cx = 0; cx < 2; ++cx) {
                std::size_t best_idx = 0;
                double best = -1e300;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        std::size_t idx = (cy * 2 + dy) * 4 + cx * 2 + dx;
                        if (x.data[idx] > best) {
                            best = x.data[idx];
                            best_idx = idx;
                        }
                    }
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        std::size_t idx = (cy * 2 + dy) * 4 + cx * 2 + dx;
                        double expect = idx == best_idx ? w.data[cy * 2 + cx] : 0.0;
                        CHECK(grad.data[idx] == doctest::Approx(expect));
                    }
            }
    }
}

TEST_CASE("input gradient matches finite differences") {
    // this pathway trains the attention module, so it gets its own check
    ConvNet net = init_convnet(7);
    Rng rng(3);
    Tensor img = rng.gaussian_tensor({28, 28}, 0.5, 0.2);
    Tensor target = one_hot(4);
    auto r = finite_diff_check(
        [&](Graph& g, int x) {
            ConvNetNodes nodes = add_convnet_leaves(g, net, false);
            ConvNetOutput out = cnn_forward(g, nodes, x, false);
            return mse(g, out.probs, g.constant(target));
        },
        img, 1e-5);
    INFO("max rel err " << r.max_rel_error);
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("overfit one batch: loss strictly decreases") {
    ConvNet net = init_convnet(11);
    Rng rng(6);
    std::size_t n = 8;
    Tensor images({n, 28, 28});
    Tensor labels({n});
    for (std::size_t i = 0; i < n; ++i) {
        Tensor img = bar_image(i % 4, 0.02, rng);
        std::copy(img.data.begin(), img.data.end(), images.data.begin() + i * 28 * 28);
        labels.data[i] = static_cast<double>(i % 4);
    }
    PretrainConfig cfg;
    cfg.batch_size = n;
    cfg.epochs = 5;
    cfg.learning_rate = 0.05;
    cfg.seed = 1;
    cfg.use_dropout = false;  // keep the descent check deterministic
    std::vector<double> losses;
    pretrain_cnn(net, images, labels, images, labels, cfg, &losses);
    REQUIRE(losses.size() == 5);
    for (std::size_t i = 1; i < losses.size(); ++i) CHECK(losses[i] < losses[i - 1]);
}

TEST_CASE("empty dataset is an error") {
    ConvNet net = init_convnet(1);
    Tensor imgs({1, 28, 28});
    Tensor labels({2});
    PretrainConfig cfg;
    CHECK_THROWS(pretrain_cnn(net, imgs, labels, imgs, labels, cfg));
}
