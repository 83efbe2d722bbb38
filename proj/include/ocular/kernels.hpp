#pragma once

#include <vector>

#include "ocular/tensor.hpp"

namespace ocular {

// Convolution is implemented as cross-correlation (no filter flip), the
// convention of single-shot detector lineages. Stride is fixed at 1 and
// padding at kernel/2, so spatial size is preserved; the only kernel sizes
// in the architecture are 3x3 (external group) and 1x1 (internal group).
template <typename T>
struct ConvParams {
    int out_channels = 0;
    int in_channels = 0;
    int kernel = 3;              // 1 or 3
    Tensor<T> weights;           // (out, in, k, k)
    std::vector<T> bias;         // length out_channels

    int padding() const { return kernel / 2; }
};

template <typename T>
struct BatchNormParams {
    std::vector<T> gamma, beta, running_mean, running_var;  // one entry per channel
    T epsilon = static_cast<T>(1e-5);
    T momentum = static_cast<T>(0.99);  // running = momentum*running + (1-momentum)*batch

    int channels() const { return static_cast<int>(gamma.size()); }
};

template <typename T>
struct ConvGrads {
    Tensor<T> input;
    Tensor<T> weights;
    std::vector<T> bias;
};

// Batch statistics captured by the training-mode forward pass; the backward
// pass needs them, and the trainer folds them into the running estimates.
template <typename T>
struct BatchNormStats {
    std::vector<T> mean, inv_std;
};

template <typename T>
struct BatchNormGrads {
    Tensor<T> input;
    std::vector<T> gamma, beta;
};

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvParams<T>& params);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& params,
                             const Tensor<T>& grad_out);

// training=true normalizes with batch statistics and updates the running
// estimates by exponential moving average; training=false uses the stored
// running statistics. Variance is the biased (1/N) moment in both roles.
template <typename T>
Tensor<T> batchnorm_apply(const Tensor<T>& input, BatchNormParams<T>& params, bool training,
                          BatchNormStats<T>* stats_out = nullptr);

// Gradient of the training-mode forward map (batch-statistics derivation).
template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& input, const BatchNormParams<T>& params,
                                     const BatchNormStats<T>& stats, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, T slope);

template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& input, T slope, const Tensor<T>& grad_out);

// 2x2 window, stride 2. Height and width must be even. argmax_out, when
// given, records for every output element the flat input index that won the
// window (first index in row-major scan on ties); the backward pass routes
// the upstream gradient to exactly those indices.
template <typename T>
Tensor<T> maxpool2(const Tensor<T>& input, std::vector<int64_t>* argmax_out = nullptr);

template <typename T>
Tensor<T> maxpool2_backward(const Shape4& input_shape, const std::vector<int64_t>& argmax,
                            const Tensor<T>& grad_out);

}  // namespace ocular
