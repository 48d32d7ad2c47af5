#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "coughnet/errors.hpp"
#include "coughnet/nn.hpp"
#include "coughnet/resnet.hpp"
#include "coughnet/rng.hpp"
#include "coughnet/tensor.hpp"

#include "helpers.hpp"

using namespace coughnet;

namespace {

// reference convolution written scatter-style: walk input cells and push their
// contribution into every output they touch, the reverse of the library's
// gather loops
Tensor<double> scatter_conv(const Tensor<double>& x, const Tensor<double>& w,
                            size_t stride, size_t pad) {
    const size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const size_t O = w.dim(0), kH = w.dim(2), kW = w.dim(3);
    const size_t Ho = (H + 2 * pad - kH) / stride + 1;
    const size_t Wo = (W + 2 * pad - kW) / stride + 1;
    Tensor<double> y({B, O, Ho, Wo});
    for (size_t b = 0; b < B; ++b)
        for (size_t c = 0; c < C; ++c)
            for (size_t ih = 0; ih < H; ++ih)
                for (size_t iw = 0; iw < W; ++iw)
                    for (size_t o = 0; o < O; ++o)
                        for (size_t i = 0; i < kH; ++i)
                            for (size_t j = 0; j < kW; ++j) {
                                // output row covering padded input row ih via kernel row i
                                const long num_h = static_cast<long>(ih + pad) - static_cast<long>(i);
                                const long num_w = static_cast<long>(iw + pad) - static_cast<long>(j);
                                if (num_h < 0 || num_w < 0) continue;
                                if (num_h % static_cast<long>(stride) || num_w % static_cast<long>(stride)) continue;
                                const size_t oh = static_cast<size_t>(num_h) / stride;
                                const size_t ow = static_cast<size_t>(num_w) / stride;
                                if (oh >= Ho || ow >= Wo) continue;
                                y.at4(b, o, oh, ow) += x.at4(b, c, ih, iw) * w.at4(o, c, i, j);
                            }
    return y;
}

Tensor<double> rand_tensor(std::vector<size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// central finite difference of a scalar function at x[i]
double fd(std::function<double()> f, double& slot, double h = 1e-4) {
    const double keep = slot;
    slot = keep + h;
    const double up = f();
    slot = keep - h;
    const double down = f();
    slot = keep;
    return (up - down) / (2.0 * h);
}

double weighted_sum(const Tensor<double>& y, const Tensor<double>& r) {
    double acc = 0.0;
    for (size_t i = 0; i < y.data.size(); ++i) acc += y.data[i] * r.data[i];
    return acc;
}

}  // namespace

TEST_CASE("conv2d forward matches a scatter-style reference on random configs") {
    Rng rng(101);
    for (int trial = 0; trial < 100; ++trial) {
        const size_t B = 1 + rng.below(2), C = 1 + rng.below(3), O = 1 + rng.below(3);
        const size_t k = 1 + rng.below(3);
        const size_t stride = 1 + rng.below(2);
        const size_t pad = rng.below(k);  // keeps every window partly on the input
        const size_t H = k + rng.below(5), W = k + rng.below(5);

        const Tensor<double> x = rand_tensor({B, C, H, W}, rng);
        const Tensor<double> w = rand_tensor({O, C, k, k}, rng);
        const Tensor<double> got = conv2d(x, w, stride, pad);
        const Tensor<double> want = scatter_conv(x, w, stride, pad);

        REQUIRE(got.shape == want.shape);
        for (size_t i = 0; i < got.data.size(); ++i) {
            REQUIRE(testutil::rel_err(got.data[i], want.data[i]) < 1e-12);
        }
    }
}

TEST_CASE("conv2d rejects mismatched shapes") {
    Rng rng(3);
    const Tensor<double> x = rand_tensor({1, 2, 4, 4}, rng);
    const Tensor<double> w3 = rand_tensor({1, 3, 3, 3}, rng);
    REQUIRE_THROWS_AS(conv2d(x, w3, 1, 0), ShapeMismatch);
    const Tensor<double> big = rand_tensor({1, 2, 7, 7}, rng);
    REQUIRE_THROWS_AS(conv2d(x, big, 1, 0), ShapeMismatch);
}

TEST_CASE("maxpool forward matches a reference on random configs") {
    Rng rng(202);
    for (int trial = 0; trial < 60; ++trial) {
        const size_t B = 1 + rng.below(2), C = 1 + rng.below(3);
        const size_t k = 2 + rng.below(2);
        const size_t stride = 1 + rng.below(2);
        const size_t pad = rng.below(k);
        const size_t H = k + rng.below(5), W = k + rng.below(5);
        const Tensor<double> x = rand_tensor({B, C, H, W}, rng);

        const Tensor<double> got = maxpool2d(x, k, stride, pad);
        const size_t Ho = (H + 2 * pad - k) / stride + 1;
        const size_t Wo = (W + 2 * pad - k) / stride + 1;
        REQUIRE((got.shape == std::vector<size_t>{B, C, Ho, Wo}));

        for (size_t b = 0; b < B; ++b)
            for (size_t c = 0; c < C; ++c)
                for (size_t oh = 0; oh < Ho; ++oh)
                    for (size_t ow = 0; ow < Wo; ++ow) {
                        double best = -1e300;
                        for (size_t i = 0; i < k; ++i)
                            for (size_t j = 0; j < k; ++j) {
                                const long ih = static_cast<long>(oh * stride + i) - static_cast<long>(pad);
                                const long iw = static_cast<long>(ow * stride + j) - static_cast<long>(pad);
                                if (ih < 0 || iw < 0 || ih >= static_cast<long>(H) ||
                                    iw >= static_cast<long>(W)) {
                                    continue;
                                }
                                best = std::max(best,
                                                x.at4(b, c, static_cast<size_t>(ih),
                                                      static_cast<size_t>(iw)));
                            }
                        REQUIRE(got.at4(b, c, oh, ow) == best);
                    }
    }
}

TEST_CASE("conv2d layer gradients match finite differences") {
    Rng rng(7);
    Conv2d<double> layer(2, 3, 3, 2, 1, rng);
    Tensor<double> x = rand_tensor({2, 2, 5, 4}, rng);
    const Tensor<double> y0 = layer.forward(x);
    const Tensor<double> r = rand_tensor(y0.shape, rng);

    layer.weight.ensure_grad();
    layer.weight.zero_grad();
    const Tensor<double> gx = layer.backward(r);

    auto loss = [&]() {
        Conv2d<double> probe = layer;
        return weighted_sum(probe.forward(x), r);
    };
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double want = fd(loss, x.data[i]);
        REQUIRE(testutil::rel_err(gx.data[i], want) < 1e-3);
    }
    for (size_t i = 0; i < layer.weight.data.size(); ++i) {
        const double want = fd(loss, layer.weight.data[i]);
        REQUIRE(testutil::rel_err(layer.weight.grad[i], want) < 1e-3);
    }
}

TEST_CASE("batchnorm gradients match finite differences in train mode") {
    Rng rng(8);
    BatchNorm2d<double> layer(3);
    for (double& v : layer.gamma.data) v = rng.uniform(0.5, 1.5);
    for (double& v : layer.beta.data) v = rng.uniform(-0.5, 0.5);

    Tensor<double> x = rand_tensor({2, 3, 3, 4}, rng);
    const Tensor<double> y0 = layer.forward(x, true);
    const Tensor<double> r = rand_tensor(y0.shape, rng);

    layer.gamma.zero_grad();
    layer.beta.zero_grad();
    const Tensor<double> gx = layer.backward(r);

    auto loss = [&]() {
        BatchNorm2d<double> probe = layer;
        return weighted_sum(probe.forward(x, true), r);
    };
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double want = fd(loss, x.data[i]);
        REQUIRE(testutil::rel_err(gx.data[i], want) < 1e-3);
    }
    for (size_t i = 0; i < 3; ++i) {
        REQUIRE(testutil::rel_err(layer.gamma.grad[i], fd(loss, layer.gamma.data[i])) < 1e-3);
        REQUIRE(testutil::rel_err(layer.beta.grad[i], fd(loss, layer.beta.data[i])) < 1e-3);
    }
}

TEST_CASE("batchnorm eval mode uses running statistics and scales gradients") {
    Rng rng(9);
    BatchNorm2d<double> layer(2);
    layer.running_mean.data = {0.3, -0.2};
    layer.running_var.data = {0.8, 1.7};
    layer.gamma.data = {1.2, 0.7};
    layer.beta.data = {0.1, -0.4};

    Tensor<double> x = rand_tensor({1, 2, 2, 2}, rng);
    const Tensor<double> y = layer.forward(x, false);
    for (size_t c = 0; c < 2; ++c) {
        const double inv = 1.0 / std::sqrt(layer.running_var.data[c] + layer.eps);
        for (size_t h = 0; h < 2; ++h)
            for (size_t w = 0; w < 2; ++w) {
                const double want = layer.gamma.data[c] *
                                        (x.at4(0, c, h, w) - layer.running_mean.data[c]) * inv +
                                    layer.beta.data[c];
                REQUIRE(y.at4(0, c, h, w) == Catch::Approx(want).epsilon(1e-12));
            }
    }

    const Tensor<double> r = rand_tensor(y.shape, rng);
    layer.gamma.zero_grad();
    layer.beta.zero_grad();
    const Tensor<double> gx = layer.backward(r);
    auto loss = [&]() {
        BatchNorm2d<double> probe = layer;
        return weighted_sum(probe.forward(x, false), r);
    };
    for (size_t i = 0; i < x.data.size(); ++i) {
        REQUIRE(testutil::rel_err(gx.data[i], fd(loss, x.data[i])) < 1e-3);
    }
}

TEST_CASE("relu gradients match finite differences away from the kink") {
    Rng rng(10);
    Relu<double> layer;
    Tensor<double> x({2, 3, 2, 2});
    for (double& v : x.data) {
        v = rng.uniform(0.2, 1.0) * (rng.below(2) ? 1.0 : -1.0);
    }
    const Tensor<double> y0 = layer.forward(x);
    const Tensor<double> r = rand_tensor(y0.shape, rng);
    const Tensor<double> gx = layer.backward(r);
    auto loss = [&]() {
        Relu<double> probe;
        return weighted_sum(probe.forward(x), r);
    };
    for (size_t i = 0; i < x.data.size(); ++i) {
        REQUIRE(testutil::rel_err(gx.data[i], fd(loss, x.data[i])) < 1e-3);
    }
}

TEST_CASE("maxpool gradients match finite differences on well-separated values") {
    MaxPool2d<double> layer(3, 2, 1);
    Tensor<double> x({1, 2, 5, 5});
    Rng rng(11);
    std::vector<size_t> perm(x.data.size());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    for (size_t i = 0; i < x.data.size(); ++i) {
        x.data[i] = 0.01 * static_cast<double>(perm[i]) - 0.25;  // distinct, gaps >> 2h
    }
    const Tensor<double> y0 = layer.forward(x);
    const Tensor<double> r = rand_tensor(y0.shape, rng);
    const Tensor<double> gx = layer.backward(r);
    auto loss = [&]() {
        MaxPool2d<double> probe(3, 2, 1);
        return weighted_sum(probe.forward(x), r);
    };
    for (size_t i = 0; i < x.data.size(); ++i) {
        REQUIRE(gx.data[i] == Catch::Approx(fd(loss, x.data[i])).margin(1e-9));
    }
}

TEST_CASE("global average pool gradients match finite differences") {
    Rng rng(12);
    GlobalAvgPool<double> layer;
    Tensor<double> x = rand_tensor({2, 3, 2, 4}, rng);
    const Tensor<double> y0 = layer.forward(x);
    REQUIRE((y0.shape == std::vector<size_t>{2, 3}));
    REQUIRE(y0.at2(0, 0) ==
            Catch::Approx(std::accumulate(x.data.begin(), x.data.begin() + 8, 0.0) / 8.0)
                .epsilon(1e-12));

    const Tensor<double> r = rand_tensor(y0.shape, rng);
    const Tensor<double> gx = layer.backward(r);
    auto loss = [&]() {
        GlobalAvgPool<double> probe;
        return weighted_sum(probe.forward(x), r);
    };
    for (size_t i = 0; i < x.data.size(); ++i) {
        REQUIRE(testutil::rel_err(gx.data[i], fd(loss, x.data[i])) < 1e-3);
    }
}

TEST_CASE("dense gradients match finite differences") {
    Rng rng(13);
    Dense<double> layer(5, 3, rng);
    Tensor<double> x = rand_tensor({2, 5}, rng);
    const Tensor<double> y0 = layer.forward(x);
    const Tensor<double> r = rand_tensor(y0.shape, rng);

    layer.weight.zero_grad();
    layer.bias.zero_grad();
    const Tensor<double> gx = layer.backward(r);

    auto loss = [&]() {
        Dense<double> probe = layer;
        return weighted_sum(probe.forward(x), r);
    };
    for (size_t i = 0; i < x.data.size(); ++i) {
        REQUIRE(testutil::rel_err(gx.data[i], fd(loss, x.data[i])) < 1e-3);
    }
    for (size_t i = 0; i < layer.weight.data.size(); ++i) {
        REQUIRE(testutil::rel_err(layer.weight.grad[i], fd(loss, layer.weight.data[i])) < 1e-3);
    }
    for (size_t i = 0; i < layer.bias.data.size(); ++i) {
        REQUIRE(testutil::rel_err(layer.bias.grad[i], fd(loss, layer.bias.data[i])) < 1e-3);
    }
}

TEST_CASE("softmax plus cross entropy gradient matches the closed form and finite differences") {
    Rng rng(14);
    Tensor<double> logits = rand_tensor({3, 4}, rng, -2.0, 2.0);
    const std::vector<int> labels = {2, 0, 3};

    Softmax<double> sm;
    const Tensor<double> probs = sm.forward(logits);
    for (size_t b = 0; b < 3; ++b) {
        double row = 0.0;
        for (size_t j = 0; j < 4; ++j) row += probs.at2(b, j);
        REQUIRE(row == Catch::Approx(1.0).epsilon(1e-12));
    }

    const auto [loss0, gprobs] = cross_entropy_with_grad(probs, labels);
    const Tensor<double> glogits = sm.backward(gprobs);

    // d(loss)/d(logit) = (p - onehot) / batch
    for (size_t b = 0; b < 3; ++b)
        for (size_t j = 0; j < 4; ++j) {
            const double want = (probs.at2(b, j) - (static_cast<int>(j) == labels[b] ? 1.0 : 0.0)) / 3.0;
            REQUIRE(glogits.at2(b, j) == Catch::Approx(want).margin(1e-12));
        }

    auto loss = [&]() {
        Softmax<double> probe;
        return static_cast<double>(cross_entropy(probe.forward(logits), labels));
    };
    for (size_t i = 0; i < logits.data.size(); ++i) {
        REQUIRE(glogits.data[i] == Catch::Approx(fd(loss, logits.data[i])).margin(1e-6));
    }
}

TEST_CASE("cross entropy hand values") {
    Tensor<double> probs({2, 2});
    probs.at2(0, 0) = 0.9;
    probs.at2(0, 1) = 0.1;
    probs.at2(1, 0) = 0.2;
    probs.at2(1, 1) = 0.8;
    REQUIRE(cross_entropy(probs, {0, 1}) == Catch::Approx(0.164252033486018).epsilon(1e-12));
    REQUIRE(cross_entropy(probs, {0, 1}, std::vector<double>{1.0, 2.0}) ==
            Catch::Approx(0.2758238091431229).epsilon(1e-12));

    Tensor<double> zero({1, 2});
    zero.at2(0, 0) = 0.0;
    zero.at2(0, 1) = 1.0;
    REQUIRE(cross_entropy(zero, {0}) == Catch::Approx(27.631021115928547).epsilon(1e-12));

    REQUIRE_THROWS_AS(cross_entropy(probs, {0}), ShapeMismatch);
    REQUIRE_THROWS_AS(cross_entropy(probs, {0, 2}), ShapeMismatch);
}

TEST_CASE("softmax is stable for extreme logits") {
    Tensor<double> logits({2, 2});
    logits.at2(0, 0) = 1000.0;
    logits.at2(0, 1) = 1000.0 + 1.0986122886681098;  // ln 3
    logits.at2(1, 0) = -1000.0;
    logits.at2(1, 1) = 0.0;
    const Tensor<double> p = softmax(logits);
    REQUIRE(p.at2(0, 0) == Catch::Approx(0.25).epsilon(1e-12));
    REQUIRE(p.at2(0, 1) == Catch::Approx(0.75).epsilon(1e-12));
    REQUIRE(std::isfinite(p.at2(1, 0)));
    REQUIRE(p.at2(1, 1) == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("backward before forward raises GraphNotBuilt") {
    Rng rng(15);
    Tensor<double> g({1, 1, 1, 1});
    Tensor<double> g2({1, 2});

    Conv2d<double> conv(1, 1, 1, 1, 0, rng);
    REQUIRE_THROWS_AS(conv.backward(g), GraphNotBuilt);
    BatchNorm2d<double> bn(1);
    REQUIRE_THROWS_AS(bn.backward(g), GraphNotBuilt);
    Relu<double> rl;
    REQUIRE_THROWS_AS(rl.backward(g), GraphNotBuilt);
    MaxPool2d<double> mp(2, 2, 0);
    REQUIRE_THROWS_AS(mp.backward(g), GraphNotBuilt);
    GlobalAvgPool<double> gap;
    REQUIRE_THROWS_AS(gap.backward(g2), GraphNotBuilt);
    Dense<double> dense(2, 2, rng);
    REQUIRE_THROWS_AS(dense.backward(g2), GraphNotBuilt);
    Softmax<double> sm;
    REQUIRE_THROWS_AS(sm.backward(g2), GraphNotBuilt);
}

TEST_CASE("adam first step has magnitude lr and converges on a quadratic") {
    std::vector<double> w = {10.0};
    AdamState<double> state;
    state.lr = 0.05;

    std::vector<double> g = {w[0] - 3.0};
    adam_step(w, g, state);
    REQUIRE(std::abs(10.0 - w[0]) == Catch::Approx(0.05).epsilon(1e-6));

    for (int i = 0; i < 2000; ++i) {
        g[0] = w[0] - 3.0;
        adam_step(w, g, state);
    }
    REQUIRE(w[0] == Catch::Approx(3.0).margin(1e-3));
}

TEST_CASE("adam ignores zero gradients from a fresh state") {
    std::vector<double> w = {1.0, -2.0};
    AdamState<double> state;
    adam_step(w, {0.0, 0.0}, state);
    REQUIRE((w == std::vector<double>{1.0, -2.0}));
}

TEST_CASE("adam validates gradient length") {
    std::vector<double> w = {1.0, 2.0};
    AdamState<double> state;
    std::vector<double> g = {1.0};
    REQUIRE_THROWS_AS(adam_step(w, g, state), LengthMismatch);
}

TEST_CASE("adam optimizer steps every registered tensor") {
    Rng rng(16);
    Tensor<double> a = rand_tensor({2, 2}, rng);
    Tensor<double> b = rand_tensor({3}, rng);
    const std::vector<double> a0 = a.data, b0 = b.data;

    Adam<double> opt({&a, &b}, 0.01);
    opt.zero_grad();
    for (double& v : a.grad) v = 1.0;
    for (double& v : b.grad) v = -1.0;
    opt.step();
    for (size_t i = 0; i < a.data.size(); ++i) {
        REQUIRE(a0[i] - a.data[i] == Catch::Approx(0.01).epsilon(1e-6));
    }
    for (size_t i = 0; i < b.data.size(); ++i) {
        REQUIRE(b.data[i] - b0[i] == Catch::Approx(0.01).epsilon(1e-6));
    }

    opt.zero_grad();
    for (const double v : a.grad) REQUIRE(v == 0.0);
}

TEST_CASE("two block residual network gradients match finite differences") {
    ResNetConfig cfg;
    cfg.input_mels = 8;
    cfg.input_frames = 9;
    cfg.stage_depths = {1, 1, 0, 0};
    cfg.width_factor = 0.125;

    ResNet<double> model(cfg, 99);
    Rng rng(17);
    Tensor<double> x = rand_tensor({2, 1, 8, 9}, rng, -0.8, 0.8);
    const std::vector<int> labels = {1, 0};

    auto loss_now = [&]() {
        return static_cast<double>(cross_entropy(model.forward(x, true), labels));
    };

    const Tensor<double> probs = model.forward(x, true);
    const auto [loss0, gprobs] = cross_entropy_with_grad(probs, labels);
    for (Tensor<double>* p : model.parameters()) {
        p->ensure_grad();
        p->zero_grad();
    }
    model.backward(gprobs);

    // spot check a spread of parameters across every layer kind
    Rng pick(18);
    auto params = model.parameters();
    size_t checked = 0;
    for (Tensor<double>* p : params) {
        const size_t probes = std::min<size_t>(3, p->data.size());
        for (size_t t = 0; t < probes; ++t) {
            const size_t i = pick.below(p->data.size());
            const double want = fd(loss_now, p->data[i]);
            if (std::abs(want) < 1e-7 && std::abs(p->grad[i]) < 1e-7) continue;
            REQUIRE(testutil::rel_err(p->grad[i], want) < 2e-3);
            ++checked;
        }
    }
    REQUIRE(checked > 30);
}
