#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "ppgstress/nn.hpp"
#include "ppgstress/util.hpp"

using namespace ppgstress;
using namespace ppgstress::nn;

namespace {

std::vector<double> random_vector(Rng& rng, size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

double rel_error(double a, double b) {
    const double denom = std::max(std::abs(a), std::abs(b));
    if (denom < 1e-6) return 0.0;
    return std::abs(a - b) / denom;
}

ConvLayer random_conv(Rng& rng, int in_maps, int out_maps, int kernel_len) {
    auto layer = ConvLayer::zeros(in_maps, out_maps, kernel_len, 1);
    for (double& w : layer.kernels) w = rng.uniform(-1.0, 1.0);
    for (double& b : layer.biases) b = rng.uniform(-0.5, 0.5);
    return layer;
}

}  // namespace

TEST_SUITE("nn_core") {

TEST_CASE("length-1 kernel scales the signal") {
    Rng rng(1);
    const auto x = random_vector(rng, 40);
    const auto y = conv1d_valid(x, std::vector<double>{2.0});
    REQUIRE(y.size() == x.size());
    for (size_t i = 0; i < x.size(); ++i) CHECK(y[i] == 2.0 * x[i]);
}

TEST_CASE("small correlation example") {
    const auto y = conv1d_valid(std::vector<double>{1, 2, 3}, std::vector<double>{1, 1});
    CHECK(y == std::vector<double>{3.0, 5.0});
    CHECK(y == oracle::conv_valid({1, 2, 3}, {1, 1}));
}

TEST_CASE("valid-mode output length") {
    Rng rng(2);
    const auto x = random_vector(rng, 1024);
    const auto w = random_vector(rng, 512);
    CHECK(conv1d_valid(x, w).size() == 513);
}

TEST_CASE("kernel longer than input is an error") {
    CHECK_THROWS_WITH_AS(conv1d_valid(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}),
                         "kernel longer than input", std::invalid_argument);
}

TEST_CASE("correlation matches the naive oracle exactly") {
    for (uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(seed);
        const size_t L = 2 + rng.below(60);
        const size_t K = 1 + rng.below(L);
        const auto x = random_vector(rng, L, -2.0, 2.0);
        const auto w = random_vector(rng, K, -2.0, 2.0);
        CHECK(conv1d_valid(x, w) == oracle::conv_valid(x, w));
    }
}

TEST_CASE("correlation is linear") {
    Rng rng(3);
    const auto x = random_vector(rng, 50);
    const auto w1 = random_vector(rng, 9);
    const auto w2 = random_vector(rng, 9);
    const double a = 2.5;

    auto ax = x;
    for (double& v : ax) v *= a;
    const auto lhs = conv1d_valid(ax, w1);
    const auto rhs = conv1d_valid(x, w1);
    for (size_t i = 0; i < lhs.size(); ++i) CHECK(std::abs(lhs[i] - a * rhs[i]) <= 1e-12);

    auto w12 = w1;
    for (size_t i = 0; i < w12.size(); ++i) w12[i] += w2[i];
    const auto sum = conv1d_valid(x, w12);
    const auto s1 = conv1d_valid(x, w1);
    const auto s2 = conv1d_valid(x, w2);
    for (size_t i = 0; i < sum.size(); ++i) CHECK(std::abs(sum[i] - (s1[i] + s2[i])) <= 1e-12);
}

TEST_CASE("bias-only conv layer emits a constant map") {
    auto layer = ConvLayer::zeros(1, 1, 4, 1);
    layer.biases[0] = 3.0;
    Rng rng(4);
    const auto out = conv_layer_forward({random_vector(rng, 16)}, layer);
    REQUIRE(out.size() == 1);
    for (double v : out[0]) CHECK(v == 3.0);
}

TEST_CASE("conv layer sums contributions over input maps") {
    auto layer = ConvLayer::zeros(2, 1, 1, 1);
    layer.kernel_at(0, 0, 0) = 1.0;
    layer.kernel_at(0, 1, 0) = 1.0;
    const auto out = conv_layer_forward({{1.0, 2.0}, {3.0, 4.0}}, layer);
    CHECK(out[0] == std::vector<double>{4.0, 6.0});
}

TEST_CASE("conv layer matches the naive oracle exactly") {
    for (uint64_t seed = 0; seed < 120; ++seed) {
        Rng rng(seed + 1000);
        const int in_maps = 1 + static_cast<int>(rng.below(3));
        const int out_maps = 1 + static_cast<int>(rng.below(3));
        const size_t L = 8 + rng.below(24);
        const int K = 1 + static_cast<int>(rng.below(7));
        auto layer = random_conv(rng, in_maps, out_maps, K);

        std::vector<std::vector<double>> inputs;
        for (int i = 0; i < in_maps; ++i) inputs.push_back(random_vector(rng, L));

        std::vector<std::vector<std::vector<double>>> kernels(
            static_cast<size_t>(out_maps),
            std::vector<std::vector<double>>(static_cast<size_t>(in_maps)));
        for (int k = 0; k < out_maps; ++k) {
            for (int i = 0; i < in_maps; ++i) {
                for (int j = 0; j < K; ++j) {
                    kernels[static_cast<size_t>(k)][static_cast<size_t>(i)].push_back(
                        layer.kernel_at(k, i, j));
                }
            }
        }
        CHECK(conv_layer_forward(inputs, layer) ==
              oracle::conv_layer(inputs, kernels, layer.biases));
    }
}

TEST_CASE("conv layer rejects mismatched input lengths") {
    auto layer = ConvLayer::zeros(2, 1, 2, 1);
    CHECK_THROWS_AS(conv_layer_forward({{1.0, 2.0, 3.0}, {1.0, 2.0}}, layer),
                    std::invalid_argument);
}

TEST_CASE("tanh activation basics") {
    CHECK(activate_tanh(std::vector<double>{0.0}) == std::vector<double>{0.0});
    CHECK(std::abs(activate_tanh(std::vector<double>{100.0})[0] - 1.0) <= 1e-12);
    const auto g = tanh_backward(std::vector<double>{0.0}, std::vector<double>{1.75});
    CHECK(g[0] == 1.75);
}

TEST_CASE("average subsampling") {
    CHECK(subsample_avg(std::vector<double>{1, 3, 5, 7}, 2) == std::vector<double>{2.0, 6.0});
    Rng rng(5);
    const auto x = random_vector(rng, 513);
    CHECK(subsample_avg(x, 2).size() == 256);
    CHECK(subsample_avg(x, 1) == std::vector<double>(x.begin(), x.end()));
}

TEST_CASE("subsampling matches the naive oracle exactly") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed + 2000);
        const size_t L = 1 + rng.below(80);
        const int rate = 1 + static_cast<int>(rng.below(8));
        if (L < static_cast<size_t>(rate)) continue;
        const auto x = random_vector(rng, L);
        CHECK(subsample_avg(x, rate) == oracle::subsample(x, rate));
    }
}

TEST_CASE("collapse is the mean") {
    CHECK(global_collapse(std::vector<double>{5.0}) == 5.0);
    CHECK(global_collapse(std::vector<double>{1, 2, 3}) == 2.0);
    CHECK_THROWS_AS(global_collapse(std::vector<double>{}), std::invalid_argument);

    Rng rng(6);
    const auto x = random_vector(rng, 37);
    auto ax = x;
    for (double& v : ax) v *= -4.0;
    CHECK(std::abs(global_collapse(ax) + 4.0 * global_collapse(x)) <= 1e-12);
}

TEST_CASE("subsample then collapse equals direct collapse on exact bins") {
    Rng rng(7);
    for (int rate : {2, 4, 6, 8}) {
        const auto x = random_vector(rng, static_cast<size_t>(rate) * 23);
        const double direct = global_collapse(x);
        const double pooled = global_collapse(subsample_avg(x, rate));
        CHECK(std::abs(direct - pooled) <= 1e-12);
    }
}

TEST_CASE("dense layer basics") {
    auto layer = DenseLayer::zeros(3, 2);
    layer.biases = {0.5, -0.5};
    CHECK(dense_forward(std::vector<double>{1, 2, 3}, layer) == std::vector<double>{0.5, -0.5});

    auto id = DenseLayer::zeros(2, 2);
    id.weights = {1, 0, 0, 1};
    CHECK(dense_forward(std::vector<double>{3.5, -1.25}, id) ==
          std::vector<double>{3.5, -1.25});

    CHECK_THROWS_AS(dense_forward(std::vector<double>{1.0}, layer), std::invalid_argument);
}

TEST_CASE("dense layer matches the naive oracle exactly") {
    for (uint64_t seed = 0; seed < 150; ++seed) {
        Rng rng(seed + 3000);
        const int in = 1 + static_cast<int>(rng.below(12));
        const int out = 1 + static_cast<int>(rng.below(8));
        auto layer = DenseLayer::zeros(in, out);
        for (double& w : layer.weights) w = rng.uniform(-2.0, 2.0);
        for (double& b : layer.biases) b = rng.uniform(-1.0, 1.0);
        const auto x = random_vector(rng, static_cast<size_t>(in), -2.0, 2.0);

        std::vector<std::vector<double>> weights(static_cast<size_t>(out));
        for (int o = 0; o < out; ++o) {
            for (int i = 0; i < in; ++i) {
                weights[static_cast<size_t>(o)].push_back(
                    layer.weights[static_cast<size_t>(o) * in + i]);
            }
        }
        CHECK(dense_forward(x, layer) == oracle::dense(x, weights, layer.biases));
    }
}

TEST_CASE("softmax cross-entropy examples") {
    const auto uniform = softmax_xent(std::vector<double>{0.0, 0.0}, 0);
    CHECK(uniform.loss == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(uniform.grad[0] == doctest::Approx(-0.5).epsilon(1e-14));
    CHECK(uniform.grad[1] == doctest::Approx(0.5).epsilon(1e-14));

    const auto confident = softmax_xent(std::vector<double>{100.0, 0.0}, 0);
    CHECK(confident.loss >= 0.0);
    CHECK(confident.loss < 1e-12);
}

TEST_CASE("softmax gradient sums to zero and probs form a simplex") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed + 4000);
        const size_t n = 2 + rng.below(5);
        const auto logits = random_vector(rng, n, -30.0, 30.0);
        const int label = static_cast<int>(rng.below(n));
        const auto res = softmax_xent(logits, label);

        double grad_sum = 0.0, prob_sum = 0.0;
        for (size_t i = 0; i < n; ++i) {
            grad_sum += res.grad[i];
            prob_sum += res.probs[i];
            CHECK(res.probs[i] >= 0.0);
        }
        CHECK(std::abs(grad_sum) <= 1e-12);
        CHECK(std::abs(prob_sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("finite differences recover simple derivatives") {
    const auto square = [](std::span<const double> p) { return p[0] * p[0]; };
    const auto g = finite_diff_gradient(square, std::vector<double>{3.0}, 1e-5);
    CHECK(std::abs(g[0] - 6.0) <= 1e-6);

    const auto constant = [](std::span<const double>) { return 4.2; };
    const auto gc = finite_diff_gradient(constant, std::vector<double>{1.0, 2.0}, 1e-5);
    CHECK(std::abs(gc[0]) <= 1e-9);
    CHECK(std::abs(gc[1]) <= 1e-9);
}

TEST_CASE("conv backward with zero upstream yields zero gradients") {
    Rng rng(8);
    auto layer = random_conv(rng, 2, 3, 4);
    std::vector<std::vector<double>> inputs = {random_vector(rng, 16), random_vector(rng, 16)};
    ConvTrace trace;
    const auto out = conv_layer_forward(inputs, layer, &trace);
    std::vector<std::vector<double>> upstream(out.size(),
                                              std::vector<double>(out[0].size(), 0.0));
    std::vector<std::vector<double>> input_grads;
    const auto grads = conv_layer_backward(layer, trace, upstream, &input_grads);
    for (double g : grads.kernels) CHECK(g == 0.0);
    for (double g : grads.biases) CHECK(g == 0.0);
    for (const auto& gi : input_grads) {
        for (double g : gi) CHECK(g == 0.0);
    }
}

TEST_CASE("single-map length-1 kernel reduces to the scalar chain rule") {
    Rng rng(9);
    auto layer = random_conv(rng, 1, 1, 1);
    std::vector<std::vector<double>> inputs = {random_vector(rng, 10)};
    ConvTrace trace;
    conv_layer_forward(inputs, layer, &trace);
    std::vector<std::vector<double>> upstream = {random_vector(rng, 10)};
    const auto grads = conv_layer_backward(layer, trace, upstream);

    double expect = 0.0;
    for (size_t t = 0; t < 10; ++t) expect += upstream[0][t] * inputs[0][t];
    CHECK(grads.kernels[0] == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("conv backward rejects a mismatched trace") {
    Rng rng(10);
    auto layer = random_conv(rng, 1, 2, 3);
    ConvTrace trace;
    const auto out = conv_layer_forward({random_vector(rng, 12)}, layer, &trace);
    auto other = random_conv(rng, 2, 2, 3);
    CHECK_THROWS_AS(conv_layer_backward(other, trace, out), std::invalid_argument);
}

// Gradient of sum(c .* f(x)) checked against central differences for every
// backward pass, over at least 100 random instances each.
TEST_CASE("conv layer backward agrees with finite differences") {
    for (uint64_t seed = 0; seed < 110; ++seed) {
        Rng rng(seed + 5000);
        const int in_maps = 1 + static_cast<int>(rng.below(2));
        const int out_maps = 1 + static_cast<int>(rng.below(2));
        const size_t L = 6 + rng.below(10);
        const int K = 1 + static_cast<int>(rng.below(4));
        auto layer = random_conv(rng, in_maps, out_maps, K);

        std::vector<std::vector<double>> inputs;
        for (int i = 0; i < in_maps; ++i) inputs.push_back(random_vector(rng, L));
        const size_t out_len = L - static_cast<size_t>(K) + 1;
        std::vector<std::vector<double>> weights_c;
        for (int k = 0; k < out_maps; ++k) weights_c.push_back(random_vector(rng, out_len));

        ConvTrace trace;
        conv_layer_forward(inputs, layer, &trace);
        std::vector<std::vector<double>> input_grads;
        const auto analytic = conv_layer_backward(layer, trace, weights_c, &input_grads);

        // Pack (kernels, biases, inputs) into one parameter vector.
        std::vector<double> params = layer.kernels;
        params.insert(params.end(), layer.biases.begin(), layer.biases.end());
        for (const auto& in : inputs) params.insert(params.end(), in.begin(), in.end());

        const auto f = [&](std::span<const double> p) {
            ConvLayer probe = layer;
            size_t pos = 0;
            for (double& w : probe.kernels) w = p[pos++];
            for (double& b : probe.biases) b = p[pos++];
            std::vector<std::vector<double>> xs(inputs.size());
            for (auto& x : xs) {
                x.resize(L);
                for (double& v : x) v = p[pos++];
            }
            const auto out = conv_layer_forward(xs, probe);
            double loss = 0.0;
            for (size_t k = 0; k < out.size(); ++k) {
                for (size_t t = 0; t < out[k].size(); ++t) loss += weights_c[k][t] * out[k][t];
            }
            return loss;
        };
        const auto numeric = finite_diff_gradient(f, params, 1e-5);

        size_t pos = 0;
        for (double g : analytic.kernels) CHECK(rel_error(g, numeric[pos++]) < 1e-4);
        for (double g : analytic.biases) CHECK(rel_error(g, numeric[pos++]) < 1e-4);
        for (const auto& gi : input_grads) {
            for (double g : gi) CHECK(rel_error(g, numeric[pos++]) < 1e-4);
        }
    }
}

TEST_CASE("dense backward agrees with finite differences") {
    for (uint64_t seed = 0; seed < 110; ++seed) {
        Rng rng(seed + 6000);
        const int in = 1 + static_cast<int>(rng.below(6));
        const int out = 1 + static_cast<int>(rng.below(4));
        auto layer = DenseLayer::zeros(in, out);
        for (double& w : layer.weights) w = rng.uniform(-1.0, 1.0);
        for (double& b : layer.biases) b = rng.uniform(-0.5, 0.5);
        const auto x = random_vector(rng, static_cast<size_t>(in));
        const auto c = random_vector(rng, static_cast<size_t>(out));

        std::vector<double> input_grad;
        const auto analytic = dense_backward(x, layer, c, &input_grad);

        std::vector<double> params = layer.weights;
        params.insert(params.end(), layer.biases.begin(), layer.biases.end());
        params.insert(params.end(), x.begin(), x.end());
        const auto f = [&](std::span<const double> p) {
            DenseLayer probe = layer;
            size_t pos = 0;
            for (double& w : probe.weights) w = p[pos++];
            for (double& b : probe.biases) b = p[pos++];
            std::vector<double> xs(static_cast<size_t>(in));
            for (double& v : xs) v = p[pos++];
            const auto y = dense_forward(xs, probe);
            double loss = 0.0;
            for (size_t o = 0; o < y.size(); ++o) loss += c[o] * y[o];
            return loss;
        };
        const auto numeric = finite_diff_gradient(f, params, 1e-5);

        size_t pos = 0;
        for (double g : analytic.weights) CHECK(rel_error(g, numeric[pos++]) < 1e-4);
        for (double g : analytic.biases) CHECK(rel_error(g, numeric[pos++]) < 1e-4);
        for (double g : input_grad) CHECK(rel_error(g, numeric[pos++]) < 1e-4);
    }
}

TEST_CASE("tanh, subsampling, collapse and softmax backwards agree with finite differences") {
    for (uint64_t seed = 0; seed < 110; ++seed) {
        Rng rng(seed + 7000);
        const size_t L = 4 + rng.below(12);
        const auto x = random_vector(rng, L);
        const auto c = random_vector(rng, L);

        {  // tanh
            const auto y = activate_tanh(x);
            std::vector<double> upstream(c.begin(), c.end());
            const auto analytic = tanh_backward(y, upstream);
            const auto f = [&](std::span<const double> p) {
                const auto yy = activate_tanh(p);
                double loss = 0.0;
                for (size_t i = 0; i < yy.size(); ++i) loss += c[i] * yy[i];
                return loss;
            };
            const auto numeric = finite_diff_gradient(f, x, 1e-5);
            for (size_t i = 0; i < L; ++i) CHECK(rel_error(analytic[i], numeric[i]) < 1e-4);
        }

        {  // subsample
            const int rate = 1 + static_cast<int>(rng.below(4));
            const size_t out_len = L / static_cast<size_t>(rate);
            if (out_len > 0) {
                const auto analytic = subsample_backward(
                    L, rate, std::span<const double>(c.data(), out_len));
                const auto f = [&](std::span<const double> p) {
                    const auto y = subsample_avg(p, rate);
                    double loss = 0.0;
                    for (size_t i = 0; i < y.size(); ++i) loss += c[i] * y[i];
                    return loss;
                };
                const auto numeric = finite_diff_gradient(f, x, 1e-5);
                for (size_t i = 0; i < L; ++i) CHECK(rel_error(analytic[i], numeric[i]) < 1e-4);
            }
        }

        {  // collapse
            const double upstream = c[0];
            const auto analytic = collapse_backward(L, upstream);
            const auto f = [&](std::span<const double> p) {
                return c[0] * global_collapse(p);
            };
            const auto numeric = finite_diff_gradient(f, x, 1e-5);
            for (size_t i = 0; i < L; ++i) CHECK(rel_error(analytic[i], numeric[i]) < 1e-4);
        }

        {  // softmax cross-entropy
            const size_t n = 2 + rng.below(4);
            const auto logits = random_vector(rng, n, -3.0, 3.0);
            const int label = static_cast<int>(rng.below(n));
            const auto analytic = softmax_xent(logits, label);
            const auto f = [&](std::span<const double> p) {
                return softmax_xent(p, label).loss;
            };
            const auto numeric = finite_diff_gradient(f, logits, 1e-5);
            for (size_t i = 0; i < n; ++i) CHECK(rel_error(analytic.grad[i], numeric[i]) < 1e-4);
        }
    }
}

TEST_CASE("shape algebra holds for every feasible grid combination") {
    Rng rng(77);
    for (int frame_len : {64, 128, 256, 512, 1024, 2048}) {
        for (int kernel : {32, 64, 128}) {
            for (int rate : {2, 4, 6, 8}) {
                if (kernel > frame_len) continue;
                const auto x = random_vector(rng, static_cast<size_t>(frame_len));
                const auto w = random_vector(rng, static_cast<size_t>(kernel));
                const auto pooled = subsample_avg(conv1d_valid(x, w), rate);
                CHECK(pooled.size() ==
                      static_cast<size_t>((frame_len - kernel + 1) / rate));
            }
        }
    }
}

}  // TEST_SUITE
