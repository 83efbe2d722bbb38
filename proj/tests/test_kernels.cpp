#include <doctest.h>

#include <cmath>

#include "ocular/kernels.hpp"
#include "oracles.hpp"

using namespace ocular;

namespace {

template <typename T>
ConvParams<T> make_conv(int out_c, int in_c, int k, Rng& rng, double scale = 0.5) {
    ConvParams<T> p;
    p.out_channels = out_c;
    p.in_channels = in_c;
    p.kernel = k;
    p.weights = Tensor<T>(out_c, in_c, k, k);
    for (int64_t i = 0; i < p.weights.size(); ++i)
        p.weights[i] = static_cast<T>(rng.uniform(-scale, scale));
    p.bias.resize(static_cast<size_t>(out_c));
    for (auto& b : p.bias) b = static_cast<T>(rng.uniform(-scale, scale));
    return p;
}

}  // namespace

TEST_CASE("conv2d 1x1 filter scales the input") {
    Tensor<float> in(1, 1, 2, 2);
    in.at(0, 0, 0, 0) = 1;
    in.at(0, 0, 0, 1) = 2;
    in.at(0, 0, 1, 0) = 3;
    in.at(0, 0, 1, 1) = 4;
    ConvParams<float> p;
    p.out_channels = 1;
    p.in_channels = 1;
    p.kernel = 1;
    p.weights = Tensor<float>(1, 1, 1, 1);
    p.weights[0] = 2;
    p.bias = {0};
    Tensor<float> out = conv2d_forward(in, p);
    CHECK(out.at(0, 0, 0, 0) == 2);
    CHECK(out.at(0, 0, 0, 1) == 4);
    CHECK(out.at(0, 0, 1, 0) == 6);
    CHECK(out.at(0, 0, 1, 1) == 8);
}

TEST_CASE("conv2d all-ones 3x3 matches the direct oracle") {
    Tensor<double> in(1, 1, 3, 3);
    for (int64_t i = 0; i < in.size(); ++i) in[i] = 1;
    ConvParams<double> p;
    p.out_channels = 1;
    p.in_channels = 1;
    p.kernel = 3;
    p.weights = Tensor<double>(1, 1, 3, 3);
    for (int64_t i = 0; i < 9; ++i) p.weights[i] = 1;
    p.bias = {0};

    Tensor<double> out = conv2d_forward(in, p);
    Tensor<double> ref = oracle::conv_reference(in, p.weights, p.bias, 1);
    for (int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(ref[i]));
    // center 9, edge midpoints 6, corners 4
    CHECK(out.at(0, 0, 1, 1) == 9);
    CHECK(out.at(0, 0, 0, 1) == 6);
    CHECK(out.at(0, 0, 0, 0) == 4);
}

TEST_CASE("conv2d random instances match the direct oracle") {
    Rng rng(11);
    for (int t = 0; t < 8; ++t) {
        const int in_c = 1 + static_cast<int>(rng.next_below(3));
        const int out_c = 1 + static_cast<int>(rng.next_below(4));
        const int k = rng.next_below(2) ? 3 : 1;
        const int h = 2 + 2 * static_cast<int>(rng.next_below(4));
        Tensor<double> in = oracle::random_tensor(rng, 2, in_c, h, h);
        ConvParams<double> p = make_conv<double>(out_c, in_c, k, rng);
        Tensor<double> out = conv2d_forward(in, p);
        Tensor<double> ref = oracle::conv_reference(in, p.weights, p.bias, k / 2);
        CHECK(oracle::rel_error(out, ref) < 1e-12);
    }
}

TEST_CASE("conv2d shape errors name both shapes") {
    Rng rng(3);
    Tensor<float> in(1, 2, 4, 4);
    ConvParams<float> p = make_conv<float>(4, 3, 3, rng);
    CHECK_THROWS_WITH_AS(conv2d_forward(in, p),
                         doctest::Contains("channel mismatch"), Error);
    ConvParams<float> q = make_conv<float>(4, 2, 3, rng);
    Tensor<float> wrong_grad(1, 4, 3, 4);
    CHECK_THROWS_AS(conv2d_backward(in, q, wrong_grad), Error);
}

TEST_CASE("conv2d backward: zero grad_out gives zero gradients") {
    Rng rng(5);
    Tensor<float> in(1, 2, 4, 4);
    for (int64_t i = 0; i < in.size(); ++i) in[i] = static_cast<float>(rng.uniform(-1, 1));
    ConvParams<float> p = make_conv<float>(3, 2, 3, rng);
    Tensor<float> zero(1, 3, 4, 4);
    ConvGrads<float> g = conv2d_backward(in, p, zero);
    for (int64_t i = 0; i < g.input.size(); ++i) CHECK(g.input[i] == 0);
    for (int64_t i = 0; i < g.weights.size(); ++i) CHECK(g.weights[i] == 0);
    for (float b : g.bias) CHECK(b == 0);
}

TEST_CASE("conv2d backward: 1x1 single-pixel chain rule") {
    Tensor<float> in(1, 1, 2, 2);
    in.at(0, 0, 0, 1) = 3.0f;  // x
    ConvParams<float> p;
    p.out_channels = 1;
    p.in_channels = 1;
    p.kernel = 1;
    p.weights = Tensor<float>(1, 1, 1, 1);
    p.weights[0] = 2.0f;  // w
    p.bias = {0};
    Tensor<float> grad(1, 1, 2, 2);
    grad.at(0, 0, 0, 1) = 5.0f;  // g
    ConvGrads<float> g = conv2d_backward(in, p, grad);
    CHECK(g.weights[0] == doctest::Approx(15.0f));        // g*x
    CHECK(g.input.at(0, 0, 0, 1) == doctest::Approx(10.0f));  // g*w
    CHECK(g.bias[0] == doctest::Approx(5.0f));
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(7);
    Tensor<double> in = oracle::random_tensor(rng, 1, 4, 8, 8);
    ConvParams<double> p = make_conv<double>(3, 4, 3, rng);
    Tensor<double> cot = oracle::random_tensor(rng, 1, 3, 8, 8);  // fixed cotangent

    ConvGrads<double> g = conv2d_backward(in, p, cot);

    auto loss_of_input = [&](const Tensor<double>& x) {
        Tensor<double> y = conv2d_forward(x, p);
        double s = 0;
        for (int64_t i = 0; i < y.size(); ++i) s += y[i] * cot[i];
        return s;
    };
    CHECK(oracle::rel_error(g.input, oracle::finite_diff(loss_of_input, in)) < 1e-5);

    auto loss_of_weights = [&](const Tensor<double>& w) {
        ConvParams<double> q = p;
        q.weights = w;
        Tensor<double> y = conv2d_forward(in, q);
        double s = 0;
        for (int64_t i = 0; i < y.size(); ++i) s += y[i] * cot[i];
        return s;
    };
    CHECK(oracle::rel_error(g.weights, oracle::finite_diff(loss_of_weights, p.weights)) < 1e-5);
}

TEST_CASE("batchnorm identity parameters in inference mode") {
    Rng rng(9);
    Tensor<float> in(2, 3, 4, 4);
    for (int64_t i = 0; i < in.size(); ++i) in[i] = static_cast<float>(rng.uniform(-2, 2));
    BatchNormParams<float> p;
    p.gamma.assign(3, 1.0f);
    p.beta.assign(3, 0.0f);
    p.running_mean.assign(3, 0.0f);
    p.running_var.assign(3, 1.0f);
    Tensor<float> out = batchnorm_apply(in, p, /*training=*/false);
    for (int64_t i = 0; i < in.size(); ++i)
        CHECK(out[i] == doctest::Approx(in[i]).epsilon(1e-4));
}

TEST_CASE("batchnorm constant batch in training mode collapses to beta") {
    Tensor<float> in(2, 1, 3, 3);
    in.fill(4.5f);
    BatchNormParams<float> p;
    p.gamma.assign(1, 1.0f);
    p.beta.assign(1, 7.0f);
    p.running_mean.assign(1, 0.0f);
    p.running_var.assign(1, 1.0f);
    Tensor<float> out = batchnorm_apply(in, p, /*training=*/true);
    for (int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(7.0f));
}

TEST_CASE("batchnorm training output has mean beta and variance gamma^2") {
    Rng rng(13);
    Tensor<double> in = oracle::random_tensor(rng, 4, 2, 6, 6, -3, 5);
    BatchNormParams<double> p;
    p.gamma = {1.5, 0.7};
    p.beta = {-0.25, 2.0};
    p.running_mean.assign(2, 0.0);
    p.running_var.assign(2, 1.0);
    Tensor<double> out = batchnorm_apply(in, p, /*training=*/true);

    // Recompute the output moments directly.
    const int64_t per_channel = 4 * 6 * 6;
    for (int c = 0; c < 2; ++c) {
        double mean = 0;
        for (int n = 0; n < 4; ++n) {
            const double* q = out.plane(n, c);
            for (int64_t j = 0; j < 36; ++j) mean += q[j];
        }
        mean /= static_cast<double>(per_channel);
        double var = 0;
        for (int n = 0; n < 4; ++n) {
            const double* q = out.plane(n, c);
            for (int64_t j = 0; j < 36; ++j) var += (q[j] - mean) * (q[j] - mean);
        }
        var /= static_cast<double>(per_channel);
        CHECK(mean == doctest::Approx(p.beta[static_cast<size_t>(c)]).epsilon(1e-4));
        CHECK(var ==
              doctest::Approx(p.gamma[static_cast<size_t>(c)] * p.gamma[static_cast<size_t>(c)])
                  .epsilon(1e-4));
    }
}

TEST_CASE("batchnorm updates running statistics with the configured momentum") {
    Tensor<float> in(1, 1, 2, 2);
    in.at(0, 0, 0, 0) = 2;
    in.at(0, 0, 0, 1) = 2;
    in.at(0, 0, 1, 0) = 6;
    in.at(0, 0, 1, 1) = 6;  // mean 4, var 4
    BatchNormParams<float> p;
    p.gamma.assign(1, 1.0f);
    p.beta.assign(1, 0.0f);
    p.running_mean.assign(1, 0.0f);
    p.running_var.assign(1, 1.0f);
    p.momentum = 0.9f;
    batchnorm_apply(in, p, /*training=*/true);
    CHECK(p.running_mean[0] == doctest::Approx(0.4f));
    CHECK(p.running_var[0] == doctest::Approx(0.9f * 1.0f + 0.1f * 4.0f));
}

TEST_CASE("batchnorm rejects zero channels and channel mismatch") {
    BatchNormParams<float> empty;
    Tensor<float> in(1, 2, 2, 2);
    CHECK_THROWS_AS(batchnorm_apply(in, empty, false), Error);
    BatchNormParams<float> p;
    p.gamma.assign(3, 1.0f);
    p.beta.assign(3, 0.0f);
    p.running_mean.assign(3, 0.0f);
    p.running_var.assign(3, 1.0f);
    CHECK_THROWS_AS(batchnorm_apply(in, p, false), Error);
}

TEST_CASE("batchnorm gradient matches finite differences") {
    Rng rng(17);
    Tensor<double> in = oracle::random_tensor(rng, 2, 3, 4, 4);
    BatchNormParams<double> p;
    p.gamma = {1.2, 0.8, -0.5};
    p.beta = {0.1, -0.3, 0.7};
    p.running_mean.assign(3, 0.0);
    p.running_var.assign(3, 1.0);
    Tensor<double> cot = oracle::random_tensor(rng, 2, 3, 4, 4);

    BatchNormStats<double> stats;
    BatchNormParams<double> scratch = p;
    batchnorm_apply(in, scratch, true, &stats);
    BatchNormGrads<double> g = batchnorm_backward(in, p, stats, cot);

    auto loss_of_input = [&](const Tensor<double>& x) {
        BatchNormParams<double> q = p;  // running-stat updates must not leak between evals
        Tensor<double> y = batchnorm_apply(x, q, true);
        double s = 0;
        for (int64_t i = 0; i < y.size(); ++i) s += y[i] * cot[i];
        return s;
    };
    CHECK(oracle::rel_error(g.input, oracle::finite_diff(loss_of_input, in)) < 1e-5);
}

TEST_CASE("leaky_relu values and backward") {
    Tensor<float> in(1, 1, 1, 3);
    in.at(0, 0, 0, 0) = 5;
    in.at(0, 0, 0, 1) = -10;
    in.at(0, 0, 0, 2) = -3;
    Tensor<float> out = leaky_relu(in, 0.1f);
    CHECK(out.at(0, 0, 0, 0) == doctest::Approx(5.0f));
    CHECK(out.at(0, 0, 0, 1) == doctest::Approx(-1.0f));

    Tensor<float> grad(1, 1, 1, 3);
    grad.at(0, 0, 0, 2) = 2.0f;
    Tensor<float> gin = leaky_relu_backward(in, 0.1f, grad);
    CHECK(gin.at(0, 0, 0, 2) == doctest::Approx(0.2f));

    CHECK_THROWS_AS(leaky_relu(in, 1.5f), Error);
}

TEST_CASE("leaky_relu is monotone and identity on non-negative input") {
    Rng rng(19);
    Tensor<float> a(1, 1, 1, 64), b(1, 1, 1, 64);
    for (int64_t i = 0; i < 64; ++i) {
        a[i] = static_cast<float>(rng.uniform(-4, 4));
        b[i] = a[i] + static_cast<float>(rng.uniform(0, 2));
    }
    Tensor<float> fa = leaky_relu(a, 0.1f), fb = leaky_relu(b, 0.1f);
    for (int64_t i = 0; i < 64; ++i) {
        CHECK(fa[i] <= fb[i]);
        if (a[i] >= 0) CHECK(fa[i] == a[i]);
    }
}

TEST_CASE("maxpool2 basics, argmax routing and errors") {
    Tensor<float> in(1, 1, 2, 2);
    in.at(0, 0, 0, 0) = 1;
    in.at(0, 0, 0, 1) = 2;
    in.at(0, 0, 1, 0) = 3;
    in.at(0, 0, 1, 1) = 4;
    std::vector<int64_t> argmax;
    Tensor<float> out = maxpool2(in, &argmax);
    CHECK(out.shape() == Shape4{1, 1, 1, 1});
    CHECK(out[0] == 4);

    Tensor<float> grad(1, 1, 1, 1);
    grad[0] = 5;
    Tensor<float> gin = maxpool2_backward(in.shape(), argmax, grad);
    CHECK(gin.at(0, 0, 0, 0) == 0);
    CHECK(gin.at(0, 0, 1, 1) == 5);

    Tensor<float> odd(1, 1, 3, 4);
    CHECK_THROWS_AS(maxpool2(odd), Error);
}

TEST_CASE("maxpool2 ties route to the first index in row-major scan") {
    Tensor<float> in(1, 1, 2, 2);
    in.fill(1.0f);
    std::vector<int64_t> argmax;
    maxpool2(in, &argmax);
    CHECK(argmax[0] == 0);
}

TEST_CASE("maxpool2 outputs are members of their input window") {
    Rng rng(23);
    Tensor<float> in(2, 3, 8, 8);
    for (int64_t i = 0; i < in.size(); ++i) in[i] = static_cast<float>(rng.uniform(-5, 5));
    Tensor<float> out = maxpool2(in);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 4; ++x) {
                    const float v = out.at(n, c, y, x);
                    bool found = false;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            if (in.at(n, c, 2 * y + dy, 2 * x + dx) == v) found = true;
                    CHECK(found);
                }
}

TEST_CASE("maxpool2 gradient matches finite differences away from ties") {
    Rng rng(29);
    // Keep window values well separated so the finite-difference step cannot
    // flip an argmax.
    Tensor<double> in(1, 2, 4, 4);
    std::vector<double> values;
    for (int64_t i = 0; i < in.size(); ++i) values.push_back(0.01 * static_cast<double>(i));
    oracle::Rng shuffle_rng(31);
    ocular::deterministic_shuffle(values, shuffle_rng);
    for (int64_t i = 0; i < in.size(); ++i) in[i] = values[static_cast<size_t>(i)];

    Tensor<double> cot = oracle::random_tensor(rng, 1, 2, 2, 2);
    std::vector<int64_t> argmax;
    maxpool2(in, &argmax);
    Tensor<double> g = maxpool2_backward(in.shape(), argmax, cot);

    auto loss = [&](const Tensor<double>& x) {
        Tensor<double> y = maxpool2(x);
        double s = 0;
        for (int64_t i = 0; i < y.size(); ++i) s += y[i] * cot[i];
        return s;
    };
    CHECK(oracle::rel_error(g, oracle::finite_diff(loss, in)) < 1e-5);
}

TEST_CASE("kernels are deterministic") {
    Rng rng(37);
    Tensor<float> in(2, 3, 8, 8);
    for (int64_t i = 0; i < in.size(); ++i) in[i] = static_cast<float>(rng.uniform(-1, 1));
    ConvParams<float> p = make_conv<float>(4, 3, 3, rng);
    CHECK(conv2d_forward(in, p) == conv2d_forward(in, p));
    CHECK(leaky_relu(in, 0.1f) == leaky_relu(in, 0.1f));
    CHECK(maxpool2(in) == maxpool2(in));
}
