#include "ocular/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace ocular {

namespace {

// Y[m][0..n) += a * X[0..n). The inner loop carries no reduction, so the
// compiler vectorizes it without relaxed floating-point flags and the result
// stays bit-deterministic.
template <typename T>
inline void axpy(T a, const T* x, T* y, int64_t n) {
    for (int64_t j = 0; j < n; ++j) y[j] += a * x[j];
}

// Dot product with eight fixed accumulators combined in a fixed order.
template <typename T>
inline T dot8(const T* a, const T* b, int64_t n) {
    T s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
    int64_t j = 0;
    for (; j + 8 <= n; j += 8) {
        s0 += a[j + 0] * b[j + 0];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
        s4 += a[j + 4] * b[j + 4];
        s5 += a[j + 5] * b[j + 5];
        s6 += a[j + 6] * b[j + 6];
        s7 += a[j + 7] * b[j + 7];
    }
    T tail = 0;
    for (; j < n; ++j) tail += a[j] * b[j];
    return (((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))) + tail;
}

template <typename T>
void check_conv_shapes(const Tensor<T>& input, const ConvParams<T>& params) {
    const Shape4& is = input.shape();
    const Shape4& ws = params.weights.shape();
    if (ws.n != params.out_channels || ws.c != params.in_channels ||
        ws.h != params.kernel || ws.w != params.kernel)
        throw Error("conv2d: weight tensor " + ws.str() + " does not match params (out=" +
                    std::to_string(params.out_channels) + ", in=" +
                    std::to_string(params.in_channels) + ", k=" + std::to_string(params.kernel) + ")");
    if (params.kernel != 1 && params.kernel != 3)
        throw Error("conv2d: kernel must be 1 or 3, got " + std::to_string(params.kernel));
    if (is.c != params.in_channels)
        throw Error("conv2d: input shape " + is.str() + " incompatible with weight shape " +
                    ws.str() + " (channel mismatch)");
    if (is.h < params.kernel || is.w < params.kernel)
        throw Error("conv2d: spatial dims of input " + is.str() + " smaller than kernel " +
                    std::to_string(params.kernel));
    if (static_cast<int>(params.bias.size()) != params.out_channels)
        throw Error("conv2d: bias length " + std::to_string(params.bias.size()) +
                    " != out_channels " + std::to_string(params.out_channels));
}

// Patch matrix for one image: rows indexed by (c, ky, kx), columns by output
// pixel. Only used for 3x3; 1x1 convolutions multiply the input directly.
template <typename T>
void im2col3(const T* img, int c_in, int h, int w, T* cols) {
    const int64_t hw = static_cast<int64_t>(h) * w;
    for (int c = 0; c < c_in; ++c) {
        const T* src = img + static_cast<int64_t>(c) * hw;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                T* dst = cols + ((static_cast<int64_t>(c) * 3 + ky) * 3 + kx) * hw;
                for (int y = 0; y < h; ++y) {
                    int sy = y + ky - 1;
                    T* drow = dst + static_cast<int64_t>(y) * w;
                    if (sy < 0 || sy >= h) {
                        std::memset(drow, 0, sizeof(T) * static_cast<size_t>(w));
                        continue;
                    }
                    const T* srow = src + static_cast<int64_t>(sy) * w;
                    int x0 = std::max(0, 1 - kx);           // first x with sx in range
                    int x1 = std::min(w, w + 1 - kx);       // one past last
                    if (x0 > 0) drow[0] = 0;
                    for (int x = x0; x < x1; ++x) drow[x] = srow[x + kx - 1];
                    if (x1 < w) drow[w - 1] = 0;
                }
            }
        }
    }
}

template <typename T>
void col2im3_acc(const T* cols, int c_in, int h, int w, T* img) {
    const int64_t hw = static_cast<int64_t>(h) * w;
    for (int c = 0; c < c_in; ++c) {
        T* dst = img + static_cast<int64_t>(c) * hw;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const T* src = cols + ((static_cast<int64_t>(c) * 3 + ky) * 3 + kx) * hw;
                for (int y = 0; y < h; ++y) {
                    int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    T* drow = dst + static_cast<int64_t>(sy) * w;
                    const T* srow = src + static_cast<int64_t>(y) * w;
                    int x0 = std::max(0, 1 - kx);
                    int x1 = std::min(w, w + 1 - kx);
                    for (int x = x0; x < x1; ++x) drow[x + kx - 1] += srow[x];
                }
            }
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvParams<T>& params) {
    check_conv_shapes(input, params);
    const Shape4& is = input.shape();
    const int h = is.h, w = is.w;
    const int64_t hw = static_cast<int64_t>(h) * w;
    const int k2 = params.in_channels * params.kernel * params.kernel;

    Tensor<T> out(is.n, params.out_channels, h, w);
    std::vector<T> cols;
    if (params.kernel == 3) cols.resize(static_cast<size_t>(k2) * hw);

    for (int n = 0; n < is.n; ++n) {
        const T* x = (params.kernel == 3) ? cols.data() : input.plane(n, 0);
        if (params.kernel == 3) im2col3(input.plane(n, 0), params.in_channels, h, w, cols.data());
        for (int o = 0; o < params.out_channels; ++o) {
            T* yrow = out.plane(n, o);
            std::fill(yrow, yrow + hw, params.bias[o]);
            const T* wrow = params.weights.data() + static_cast<int64_t>(o) * k2;
            for (int r = 0; r < k2; ++r) axpy(wrow[r], x + static_cast<int64_t>(r) * hw, yrow, hw);
        }
    }
    return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& params,
                             const Tensor<T>& grad_out) {
    check_conv_shapes(input, params);
    const Shape4& is = input.shape();
    Shape4 expect{is.n, params.out_channels, is.h, is.w};
    if (!(grad_out.shape() == expect))
        throw Error("conv2d_backward: grad_out shape " + grad_out.shape().str() +
                    " != forward output shape " + expect.str());

    const int h = is.h, w = is.w;
    const int64_t hw = static_cast<int64_t>(h) * w;
    const int k2 = params.in_channels * params.kernel * params.kernel;

    ConvGrads<T> g;
    g.input = Tensor<T>(is);
    g.weights = Tensor<T>(params.weights.shape());
    g.bias.assign(static_cast<size_t>(params.out_channels), T(0));

    std::vector<T> cols, dcols;
    if (params.kernel == 3) {
        cols.resize(static_cast<size_t>(k2) * hw);
        dcols.resize(static_cast<size_t>(k2) * hw);
    }

    for (int n = 0; n < is.n; ++n) {
        const T* x = (params.kernel == 3) ? cols.data() : input.plane(n, 0);
        if (params.kernel == 3) im2col3(input.plane(n, 0), params.in_channels, h, w, cols.data());

        for (int o = 0; o < params.out_channels; ++o) {
            const T* dy = grad_out.plane(n, o);
            T* dwrow = g.weights.data() + static_cast<int64_t>(o) * k2;
            for (int r = 0; r < k2; ++r)
                dwrow[r] += dot8(dy, x + static_cast<int64_t>(r) * hw, hw);
            T bs = 0;
            for (int64_t j = 0; j < hw; ++j) bs += dy[j];
            g.bias[static_cast<size_t>(o)] += bs;
        }

        // grad wrt input: dXcol = W^T * dY, then scatter patches back.
        T* dx = (params.kernel == 3) ? dcols.data() : g.input.plane(n, 0);
        if (params.kernel == 3) std::fill(dcols.begin(), dcols.end(), T(0));
        for (int o = 0; o < params.out_channels; ++o) {
            const T* dy = grad_out.plane(n, o);
            const T* wrow = params.weights.data() + static_cast<int64_t>(o) * k2;
            for (int r = 0; r < k2; ++r) axpy(wrow[r], dy, dx + static_cast<int64_t>(r) * hw, hw);
        }
        if (params.kernel == 3)
            col2im3_acc(dcols.data(), params.in_channels, h, w, g.input.plane(n, 0));
    }
    return g;
}

template <typename T>
Tensor<T> batchnorm_apply(const Tensor<T>& input, BatchNormParams<T>& params, bool training,
                          BatchNormStats<T>* stats_out) {
    const Shape4& is = input.shape();
    const int c = params.channels();
    if (c == 0) throw Error("batchnorm: zero channels");
    if (is.c != c || static_cast<int>(params.beta.size()) != c ||
        static_cast<int>(params.running_mean.size()) != c ||
        static_cast<int>(params.running_var.size()) != c)
        throw Error("batchnorm: input shape " + is.str() + " incompatible with " +
                    std::to_string(c) + "-channel parameters");

    const int64_t hw = static_cast<int64_t>(is.h) * is.w;
    const int64_t per_channel = static_cast<int64_t>(is.n) * hw;
    Tensor<T> out(is);

    std::vector<T> mean(static_cast<size_t>(c)), var(static_cast<size_t>(c));
    if (training) {
        if (per_channel == 0) throw Error("batchnorm: empty batch in training mode");
        for (int ch = 0; ch < c; ++ch) {
            T s = 0;
            for (int n = 0; n < is.n; ++n) {
                const T* p = input.plane(n, ch);
                for (int64_t j = 0; j < hw; ++j) s += p[j];
            }
            T m = s / static_cast<T>(per_channel);
            T v = 0;
            for (int n = 0; n < is.n; ++n) {
                const T* p = input.plane(n, ch);
                for (int64_t j = 0; j < hw; ++j) {
                    T d = p[j] - m;
                    v += d * d;
                }
            }
            v /= static_cast<T>(per_channel);
            mean[static_cast<size_t>(ch)] = m;
            var[static_cast<size_t>(ch)] = v;
            params.running_mean[static_cast<size_t>(ch)] =
                params.momentum * params.running_mean[static_cast<size_t>(ch)] + (T(1) - params.momentum) * m;
            params.running_var[static_cast<size_t>(ch)] =
                params.momentum * params.running_var[static_cast<size_t>(ch)] + (T(1) - params.momentum) * v;
        }
    } else {
        mean = params.running_mean;
        var = params.running_var;
    }

    std::vector<T> inv_std(static_cast<size_t>(c));
    for (int ch = 0; ch < c; ++ch)
        inv_std[static_cast<size_t>(ch)] = T(1) / std::sqrt(var[static_cast<size_t>(ch)] + params.epsilon);

    for (int n = 0; n < is.n; ++n) {
        for (int ch = 0; ch < c; ++ch) {
            const T* p = input.plane(n, ch);
            T* q = out.plane(n, ch);
            const T m = mean[static_cast<size_t>(ch)];
            const T s = inv_std[static_cast<size_t>(ch)];
            const T gmul = params.gamma[static_cast<size_t>(ch)] * s;
            const T badd = params.beta[static_cast<size_t>(ch)] - gmul * m;
            for (int64_t j = 0; j < hw; ++j) q[j] = gmul * p[j] + badd;
        }
    }

    if (stats_out) {
        stats_out->mean = std::move(mean);
        stats_out->inv_std = std::move(inv_std);
    }
    return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& input, const BatchNormParams<T>& params,
                                     const BatchNormStats<T>& stats, const Tensor<T>& grad_out) {
    const Shape4& is = input.shape();
    if (!(grad_out.shape() == is))
        throw Error("batchnorm_backward: grad_out shape " + grad_out.shape().str() +
                    " != input shape " + is.str());
    const int c = params.channels();
    if (static_cast<int>(stats.mean.size()) != c || static_cast<int>(stats.inv_std.size()) != c)
        throw Error("batchnorm_backward: stats do not match channel count");

    const int64_t hw = static_cast<int64_t>(is.h) * is.w;
    const int64_t cnt = static_cast<int64_t>(is.n) * hw;
    const T inv_n = T(1) / static_cast<T>(cnt);

    BatchNormGrads<T> g;
    g.input = Tensor<T>(is);
    g.gamma.assign(static_cast<size_t>(c), T(0));
    g.beta.assign(static_cast<size_t>(c), T(0));

    for (int ch = 0; ch < c; ++ch) {
        const T m = stats.mean[static_cast<size_t>(ch)];
        const T s = stats.inv_std[static_cast<size_t>(ch)];
        const T gamma = params.gamma[static_cast<size_t>(ch)];

        // Reductions over the channel: sum dy, sum dy*xhat.
        T sum_dy = 0, sum_dy_xhat = 0;
        for (int n = 0; n < is.n; ++n) {
            const T* x = input.plane(n, ch);
            const T* dy = grad_out.plane(n, ch);
            for (int64_t j = 0; j < hw; ++j) {
                T xhat = (x[j] - m) * s;
                sum_dy += dy[j];
                sum_dy_xhat += dy[j] * xhat;
            }
        }
        g.beta[static_cast<size_t>(ch)] = sum_dy;
        g.gamma[static_cast<size_t>(ch)] = sum_dy_xhat;

        // dx = gamma*s/N * (N*dy - sum_dy - xhat*sum_dy_xhat)
        const T a = gamma * s;
        for (int n = 0; n < is.n; ++n) {
            const T* x = input.plane(n, ch);
            const T* dy = grad_out.plane(n, ch);
            T* dx = g.input.plane(n, ch);
            for (int64_t j = 0; j < hw; ++j) {
                T xhat = (x[j] - m) * s;
                dx[j] = a * (dy[j] - inv_n * (sum_dy + xhat * sum_dy_xhat));
            }
        }
    }
    return g;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, T slope) {
    if (!(slope > T(0) && slope < T(1)))
        throw Error("leaky_relu: slope must be in (0,1)");
    Tensor<T> out(input.shape());
    const T* x = input.data();
    T* y = out.data();
    const int64_t n = input.size();
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : slope * x[i];
    return out;
}

template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& input, T slope, const Tensor<T>& grad_out) {
    if (!(grad_out.shape() == input.shape()))
        throw Error("leaky_relu_backward: grad_out shape " + grad_out.shape().str() +
                    " != input shape " + input.shape().str());
    Tensor<T> out(input.shape());
    const T* x = input.data();
    const T* dy = grad_out.data();
    T* dx = out.data();
    const int64_t n = input.size();
    for (int64_t i = 0; i < n; ++i) dx[i] = x[i] > T(0) ? dy[i] : slope * dy[i];
    return out;
}

template <typename T>
Tensor<T> maxpool2(const Tensor<T>& input, std::vector<int64_t>* argmax_out) {
    const Shape4& is = input.shape();
    if (is.h % 2 != 0 || is.w % 2 != 0)
        throw Error("maxpool2: spatial dims must be even, got " + is.str());
    Tensor<T> out(is.n, is.c, is.h / 2, is.w / 2);
    if (argmax_out) argmax_out->assign(static_cast<size_t>(out.size()), 0);

    int64_t oi = 0;
    for (int n = 0; n < is.n; ++n) {
        for (int c = 0; c < is.c; ++c) {
            const T* p = input.plane(n, c);
            const int64_t base = (static_cast<int64_t>(n) * is.c + c) * is.h * is.w;
            for (int y = 0; y < is.h; y += 2) {
                for (int x = 0; x < is.w; x += 2) {
                    // First-encountered index wins ties (row-major scan).
                    int64_t best = static_cast<int64_t>(y) * is.w + x;
                    T bv = p[best];
                    const int64_t cand[3] = {best + 1, best + is.w, best + is.w + 1};
                    for (int64_t idx : cand) {
                        if (p[idx] > bv) {
                            bv = p[idx];
                            best = idx;
                        }
                    }
                    out[oi] = bv;
                    if (argmax_out) (*argmax_out)[static_cast<size_t>(oi)] = base + best;
                    ++oi;
                }
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> maxpool2_backward(const Shape4& input_shape, const std::vector<int64_t>& argmax,
                            const Tensor<T>& grad_out) {
    Shape4 expect{input_shape.n, input_shape.c, input_shape.h / 2, input_shape.w / 2};
    if (!(grad_out.shape() == expect))
        throw Error("maxpool2_backward: grad_out shape " + grad_out.shape().str() +
                    " != pooled shape " + expect.str());
    if (static_cast<int64_t>(argmax.size()) != grad_out.size())
        throw Error("maxpool2_backward: argmax size does not match grad_out");
    Tensor<T> g(input_shape);
    for (int64_t i = 0; i < grad_out.size(); ++i)
        g[argmax[static_cast<size_t>(i)]] += grad_out[i];
    return g;
}

#define OCULAR_INSTANTIATE_KERNELS(T)                                                            \
    template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const ConvParams<T>&);                \
    template ConvGrads<T> conv2d_backward<T>(const Tensor<T>&, const ConvParams<T>&,             \
                                             const Tensor<T>&);                                  \
    template Tensor<T> batchnorm_apply<T>(const Tensor<T>&, BatchNormParams<T>&, bool,           \
                                          BatchNormStats<T>*);                                   \
    template BatchNormGrads<T> batchnorm_backward<T>(const Tensor<T>&, const BatchNormParams<T>&,\
                                                     const BatchNormStats<T>&, const Tensor<T>&);\
    template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                                       \
    template Tensor<T> leaky_relu_backward<T>(const Tensor<T>&, T, const Tensor<T>&);            \
    template Tensor<T> maxpool2<T>(const Tensor<T>&, std::vector<int64_t>*);                     \
    template Tensor<T> maxpool2_backward<T>(const Shape4&, const std::vector<int64_t>&,          \
                                            const Tensor<T>&);

OCULAR_INSTANTIATE_KERNELS(float)
OCULAR_INSTANTIATE_KERNELS(double)

#undef OCULAR_INSTANTIATE_KERNELS

}  // namespace ocular
