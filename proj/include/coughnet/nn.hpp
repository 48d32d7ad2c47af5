#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "coughnet/errors.hpp"
#include "coughnet/rng.hpp"
#include "coughnet/tensor.hpp"

namespace coughnet {

namespace detail {

template <typename T>
void check_finite(const Tensor<T>& t, const char* where) {
#ifndef NDEBUG
    for (T v : t.data) {
        if (!std::isfinite(static_cast<double>(v))) {
            throw Error(std::string("non-finite value after ") + where);
        }
    }
#else
    (void)t;
    (void)where;
#endif
}

inline size_t conv_out_dim(size_t in, size_t kernel, size_t stride, size_t pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, size_t stride, size_t pad) {
    require_rank(x, 4, "conv2d input");
    require_rank(w, 4, "conv2d weight");
    if (x.dim(1) != w.dim(1)) {
        throw ShapeMismatch("conv2d: input channels " + std::to_string(x.dim(1)) +
                            " vs weight channels " + std::to_string(w.dim(1)));
    }
    const size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const size_t O = w.dim(0), kH = w.dim(2), kW = w.dim(3);
    if (H + 2 * pad < kH || W + 2 * pad < kW) throw ShapeMismatch("conv2d: kernel larger than padded input");
    const size_t Ho = conv_out_dim(H, kH, stride, pad);
    const size_t Wo = conv_out_dim(W, kW, stride, pad);

    Tensor<T> y({B, O, Ho, Wo});
    for (size_t b = 0; b < B; ++b) {
        for (size_t o = 0; o < O; ++o) {
            for (size_t oh = 0; oh < Ho; ++oh) {
                for (size_t ow = 0; ow < Wo; ++ow) {
                    T acc = 0;
                    for (size_t c = 0; c < C; ++c) {
                        for (size_t i = 0; i < kH; ++i) {
                            const long ih = static_cast<long>(oh * stride + i) - static_cast<long>(pad);
                            if (ih < 0 || ih >= static_cast<long>(H)) continue;
                            for (size_t j = 0; j < kW; ++j) {
                                const long iw = static_cast<long>(ow * stride + j) - static_cast<long>(pad);
                                if (iw < 0 || iw >= static_cast<long>(W)) continue;
                                acc += x.at4(b, c, static_cast<size_t>(ih), static_cast<size_t>(iw)) *
                                       w.at4(o, c, i, j);
                            }
                        }
                    }
                    y.at4(b, o, oh, ow) = acc;
                }
            }
        }
    }
    return y;
}

// gx gets the input gradient; the weight gradient accumulates into gw.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout,
                     size_t stride, size_t pad, Tensor<T>& gx, std::vector<T>& gw) {
    const size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const size_t O = w.dim(0), kH = w.dim(2), kW = w.dim(3);
    const size_t Ho = gout.dim(2), Wo = gout.dim(3);

    gx = Tensor<T>(x.shape);
    for (size_t b = 0; b < B; ++b) {
        for (size_t o = 0; o < O; ++o) {
            for (size_t oh = 0; oh < Ho; ++oh) {
                for (size_t ow = 0; ow < Wo; ++ow) {
                    const T g = gout.at4(b, o, oh, ow);
                    if (g == T(0)) continue;
                    for (size_t c = 0; c < C; ++c) {
                        for (size_t i = 0; i < kH; ++i) {
                            const long ih = static_cast<long>(oh * stride + i) - static_cast<long>(pad);
                            if (ih < 0 || ih >= static_cast<long>(H)) continue;
                            for (size_t j = 0; j < kW; ++j) {
                                const long iw = static_cast<long>(ow * stride + j) - static_cast<long>(pad);
                                if (iw < 0 || iw >= static_cast<long>(W)) continue;
                                const size_t hi = static_cast<size_t>(ih), wi = static_cast<size_t>(iw);
                                gx.at4(b, c, hi, wi) += g * w.at4(o, c, i, j);
                                gw[((o * C + c) * kH + i) * kW + j] += g * x.at4(b, c, hi, wi);
                            }
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

// standalone op, spec-level signature
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, size_t stride, size_t pad) {
    return detail::conv2d_forward(input, weight, stride, pad);
}

template <typename T>
class Conv2d {
public:
    Conv2d(size_t in_ch, size_t out_ch, size_t kernel, size_t stride, size_t pad, Rng& rng)
        : weight({out_ch, in_ch, kernel, kernel}), stride_(stride), pad_(pad) {
        const double std_dev = std::sqrt(2.0 / (in_ch * kernel * kernel));
        for (T& v : weight.data) v = static_cast<T>(rng.gaussian() * std_dev);
        weight.ensure_grad();
    }

    Tensor<T> forward(const Tensor<T>& x) {
        x_ = x;
        has_input_ = true;
        Tensor<T> y = detail::conv2d_forward(x, weight, stride_, pad_);
        detail::check_finite(y, "conv2d forward");
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        if (!has_input_) throw GraphNotBuilt("conv2d backward before forward");
        weight.ensure_grad();
        Tensor<T> gx;
        detail::conv2d_backward(x_, weight, gout, stride_, pad_, gx, weight.grad);
        detail::check_finite(gx, "conv2d backward");
        return gx;
    }

    std::vector<Tensor<T>*> parameters() { return {&weight}; }

    Tensor<T> weight;  // O,I,kH,kW; no bias, batch norm follows every conv

private:
    size_t stride_, pad_;
    Tensor<T> x_;
    bool has_input_ = false;
};

template <typename T>
class BatchNorm2d {
public:
    explicit BatchNorm2d(size_t channels)
        : gamma({channels}), beta({channels}), running_mean({channels}), running_var({channels}) {
        std::fill(gamma.data.begin(), gamma.data.end(), T(1));
        std::fill(running_var.data.begin(), running_var.data.end(), T(1));
        gamma.ensure_grad();
        beta.ensure_grad();
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) {
        require_rank(x, 4, "batchnorm input");
        const size_t C = gamma.dim(0);
        if (x.dim(1) != C) throw ShapeMismatch("batchnorm: channel count mismatch");
        const size_t B = x.dim(0), H = x.dim(2), W = x.dim(3);
        const size_t per_channel = B * H * W;

        train_mode_ = train;
        xhat_ = Tensor<T>(x.shape);
        inv_std_.assign(C, T(0));
        Tensor<T> y(x.shape);

        for (size_t c = 0; c < C; ++c) {
            T mean, var;
            if (train) {
                double sum = 0.0;
                for (size_t b = 0; b < B; ++b)
                    for (size_t h = 0; h < H; ++h)
                        for (size_t w = 0; w < W; ++w) sum += x.at4(b, c, h, w);
                mean = static_cast<T>(sum / per_channel);
                double sq = 0.0;
                for (size_t b = 0; b < B; ++b)
                    for (size_t h = 0; h < H; ++h)
                        for (size_t w = 0; w < W; ++w) {
                            const double d = x.at4(b, c, h, w) - mean;
                            sq += d * d;
                        }
                var = static_cast<T>(sq / per_channel);
                running_mean.data[c] = momentum * running_mean.data[c] + (T(1) - momentum) * mean;
                running_var.data[c] = momentum * running_var.data[c] + (T(1) - momentum) * var;
            } else {
                mean = running_mean.data[c];
                var = running_var.data[c];
            }
            const T inv = T(1) / std::sqrt(var + eps);
            inv_std_[c] = inv;
            for (size_t b = 0; b < B; ++b)
                for (size_t h = 0; h < H; ++h)
                    for (size_t w = 0; w < W; ++w) {
                        const T xh = (x.at4(b, c, h, w) - mean) * inv;
                        xhat_.at4(b, c, h, w) = xh;
                        y.at4(b, c, h, w) = gamma.data[c] * xh + beta.data[c];
                    }
        }
        has_input_ = true;
        detail::check_finite(y, "batchnorm forward");
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        if (!has_input_) throw GraphNotBuilt("batchnorm backward before forward");
        gamma.ensure_grad();
        beta.ensure_grad();
        const size_t B = gout.dim(0), C = gout.dim(1), H = gout.dim(2), W = gout.dim(3);
        const size_t per_channel = B * H * W;
        Tensor<T> gx(gout.shape);

        for (size_t c = 0; c < C; ++c) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (size_t b = 0; b < B; ++b)
                for (size_t h = 0; h < H; ++h)
                    for (size_t w = 0; w < W; ++w) {
                        const T g = gout.at4(b, c, h, w);
                        sum_g += g;
                        sum_gx += g * xhat_.at4(b, c, h, w);
                    }
            gamma.grad[c] += static_cast<T>(sum_gx);
            beta.grad[c] += static_cast<T>(sum_g);

            if (train_mode_) {
                const T scale = gamma.data[c] * inv_std_[c] / static_cast<T>(per_channel);
                for (size_t b = 0; b < B; ++b)
                    for (size_t h = 0; h < H; ++h)
                        for (size_t w = 0; w < W; ++w) {
                            const T g = gout.at4(b, c, h, w);
                            gx.at4(b, c, h, w) = scale * (static_cast<T>(per_channel) * g -
                                                          static_cast<T>(sum_g) -
                                                          xhat_.at4(b, c, h, w) * static_cast<T>(sum_gx));
                        }
            } else {
                const T scale = gamma.data[c] * inv_std_[c];
                for (size_t b = 0; b < B; ++b)
                    for (size_t h = 0; h < H; ++h)
                        for (size_t w = 0; w < W; ++w) gx.at4(b, c, h, w) = scale * gout.at4(b, c, h, w);
            }
        }
        detail::check_finite(gx, "batchnorm backward");
        return gx;
    }

    std::vector<Tensor<T>*> parameters() { return {&gamma, &beta}; }

    Tensor<T> gamma, beta, running_mean, running_var;
    T eps = static_cast<T>(1e-5);
    T momentum = static_cast<T>(0.9);

private:
    Tensor<T> xhat_;
    std::vector<T> inv_std_;
    bool train_mode_ = false;
    bool has_input_ = false;
};

template <typename T>
class Relu {
public:
    Tensor<T> forward(const Tensor<T>& x) {
        y_ = x;
        for (T& v : y_.data) v = std::max(v, T(0));
        has_input_ = true;
        return y_;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        if (!has_input_) throw GraphNotBuilt("relu backward before forward");
        if (!gout.same_shape(y_)) throw ShapeMismatch("relu gradient shape");
        Tensor<T> gx(gout.shape);
        for (size_t i = 0; i < gout.data.size(); ++i) {
            gx.data[i] = y_.data[i] > T(0) ? gout.data[i] : T(0);
        }
        return gx;
    }

private:
    Tensor<T> y_;
    bool has_input_ = false;
};

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> y = x;
    for (T& v : y.data) v = std::max(v, T(0));
    return y;
}

template <typename T>
class MaxPool2d {
public:
    MaxPool2d(size_t kernel, size_t stride, size_t pad) : kernel_(kernel), stride_(stride), pad_(pad) {}

    Tensor<T> forward(const Tensor<T>& x) {
        require_rank(x, 4, "maxpool input");
        const size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        const size_t Ho = detail::conv_out_dim(H, kernel_, stride_, pad_);
        const size_t Wo = detail::conv_out_dim(W, kernel_, stride_, pad_);
        in_shape_ = x.shape;
        Tensor<T> y({B, C, Ho, Wo});
        argmax_.assign(y.numel(), 0);
        size_t oi = 0;
        for (size_t b = 0; b < B; ++b)
            for (size_t c = 0; c < C; ++c)
                for (size_t oh = 0; oh < Ho; ++oh)
                    for (size_t ow = 0; ow < Wo; ++ow, ++oi) {
                        T best = -std::numeric_limits<T>::infinity();
                        size_t best_idx = 0;
                        for (size_t i = 0; i < kernel_; ++i) {
                            const long ih = static_cast<long>(oh * stride_ + i) - static_cast<long>(pad_);
                            if (ih < 0 || ih >= static_cast<long>(H)) continue;
                            for (size_t j = 0; j < kernel_; ++j) {
                                const long iw = static_cast<long>(ow * stride_ + j) - static_cast<long>(pad_);
                                if (iw < 0 || iw >= static_cast<long>(W)) continue;
                                const size_t idx = ((b * C + c) * H + static_cast<size_t>(ih)) * W +
                                                   static_cast<size_t>(iw);
                                if (x.data[idx] > best) {
                                    best = x.data[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        y.data[oi] = best;
                        argmax_[oi] = best_idx;
                    }
        has_input_ = true;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        if (!has_input_) throw GraphNotBuilt("maxpool backward before forward");
        Tensor<T> gx(in_shape_);
        for (size_t oi = 0; oi < gout.data.size(); ++oi) {
            gx.data[argmax_[oi]] += gout.data[oi];
        }
        return gx;
    }

private:
    size_t kernel_, stride_, pad_;
    std::vector<size_t> in_shape_;
    std::vector<size_t> argmax_;
    bool has_input_ = false;
};

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, size_t kernel, size_t stride, size_t pad) {
    MaxPool2d<T> layer(kernel, stride, pad);
    return layer.forward(x);
}

template <typename T>
class GlobalAvgPool {
public:
    Tensor<T> forward(const Tensor<T>& x) {
        require_rank(x, 4, "global average pool input");
        in_shape_ = x.shape;
        const size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        Tensor<T> y({B, C});
        for (size_t b = 0; b < B; ++b)
            for (size_t c = 0; c < C; ++c) {
                double acc = 0.0;
                for (size_t h = 0; h < H; ++h)
                    for (size_t w = 0; w < W; ++w) acc += x.at4(b, c, h, w);
                y.at2(b, c) = static_cast<T>(acc / (H * W));
            }
        has_input_ = true;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        if (!has_input_) throw GraphNotBuilt("global average pool backward before forward");
        const size_t B = in_shape_[0], C = in_shape_[1], H = in_shape_[2], W = in_shape_[3];
        Tensor<T> gx(in_shape_);
        for (size_t b = 0; b < B; ++b)
            for (size_t c = 0; c < C; ++c) {
                const T g = gout.at2(b, c) / static_cast<T>(H * W);
                for (size_t h = 0; h < H; ++h)
                    for (size_t w = 0; w < W; ++w) gx.at4(b, c, h, w) = g;
            }
        return gx;
    }

private:
    std::vector<size_t> in_shape_;
    bool has_input_ = false;
};

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    GlobalAvgPool<T> layer;
    return layer.forward(x);
}

template <typename T>
class Dense {
public:
    Dense(size_t in_features, size_t out_features, Rng& rng)
        : weight({out_features, in_features}), bias({out_features}) {
        const double std_dev = std::sqrt(2.0 / in_features);
        for (T& v : weight.data) v = static_cast<T>(rng.gaussian() * std_dev);
        weight.ensure_grad();
        bias.ensure_grad();
    }

    Tensor<T> forward(const Tensor<T>& x) {
        require_rank(x, 2, "dense input");
        if (x.dim(1) != weight.dim(1)) throw ShapeMismatch("dense: feature count mismatch");
        x_ = x;
        has_input_ = true;
        const size_t B = x.dim(0), I = weight.dim(1), O = weight.dim(0);
        Tensor<T> y({B, O});
        for (size_t b = 0; b < B; ++b)
            for (size_t o = 0; o < O; ++o) {
                T acc = bias.data[o];
                for (size_t i = 0; i < I; ++i) acc += x.at2(b, i) * weight.at2(o, i);
                y.at2(b, o) = acc;
            }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        if (!has_input_) throw GraphNotBuilt("dense backward before forward");
        weight.ensure_grad();
        bias.ensure_grad();
        const size_t B = x_.dim(0), I = weight.dim(1), O = weight.dim(0);
        Tensor<T> gx({B, I});
        for (size_t b = 0; b < B; ++b)
            for (size_t o = 0; o < O; ++o) {
                const T g = gout.at2(b, o);
                bias.grad[o] += g;
                for (size_t i = 0; i < I; ++i) {
                    weight.grad[o * I + i] += g * x_.at2(b, i);
                    gx.at2(b, i) += g * weight.at2(o, i);
                }
            }
        return gx;
    }

    std::vector<Tensor<T>*> parameters() { return {&weight, &bias}; }

    Tensor<T> weight, bias;

private:
    Tensor<T> x_;
    bool has_input_ = false;
};

// Row-wise softmax with max subtraction.
template <typename T>
class Softmax {
public:
    Tensor<T> forward(const Tensor<T>& x) {
        require_rank(x, 2, "softmax input");
        p_ = Tensor<T>(x.shape);
        const size_t B = x.dim(0), N = x.dim(1);
        for (size_t b = 0; b < B; ++b) {
            T mx = x.at2(b, 0);
            for (size_t j = 1; j < N; ++j) mx = std::max(mx, x.at2(b, j));
            T denom = 0;
            for (size_t j = 0; j < N; ++j) {
                const T e = std::exp(x.at2(b, j) - mx);
                p_.at2(b, j) = e;
                denom += e;
            }
            for (size_t j = 0; j < N; ++j) p_.at2(b, j) /= denom;
        }
        has_input_ = true;
        return p_;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        if (!has_input_) throw GraphNotBuilt("softmax backward before forward");
        const size_t B = p_.dim(0), N = p_.dim(1);
        Tensor<T> gx(p_.shape);
        for (size_t b = 0; b < B; ++b) {
            T dot = 0;
            for (size_t j = 0; j < N; ++j) dot += gout.at2(b, j) * p_.at2(b, j);
            for (size_t j = 0; j < N; ++j) {
                gx.at2(b, j) = p_.at2(b, j) * (gout.at2(b, j) - dot);
            }
        }
        return gx;
    }

private:
    Tensor<T> p_;
    bool has_input_ = false;
};

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    Softmax<T> layer;
    return layer.forward(x);
}

// Mean negative log-likelihood over class probabilities. Optional per-class
// weights (the imbalance flag); empty means uniform.
template <typename T>
T cross_entropy(const Tensor<T>& probs, const std::vector<int>& labels,
                const std::vector<T>& class_weights = {}) {
    require_rank(probs, 2, "cross entropy input");
    if (labels.size() != probs.dim(0)) throw ShapeMismatch("cross entropy: label count mismatch");
    double total = 0.0;
    for (size_t b = 0; b < labels.size(); ++b) {
        const int y = labels[b];
        if (y < 0 || static_cast<size_t>(y) >= probs.dim(1)) {
            throw ShapeMismatch("cross entropy: label out of range");
        }
        const double p = std::max(static_cast<double>(probs.at2(b, static_cast<size_t>(y))), 1e-12);
        const double w = class_weights.empty() ? 1.0 : static_cast<double>(class_weights[static_cast<size_t>(y)]);
        total += -w * std::log(p);
    }
    return static_cast<T>(total / labels.size());
}

// Loss plus gradient with respect to the probabilities.
template <typename T>
std::pair<T, Tensor<T>> cross_entropy_with_grad(const Tensor<T>& probs, const std::vector<int>& labels,
                                                const std::vector<T>& class_weights = {}) {
    const T loss = cross_entropy(probs, labels, class_weights);
    Tensor<T> g(probs.shape);
    const size_t B = labels.size();
    for (size_t b = 0; b < B; ++b) {
        const size_t y = static_cast<size_t>(labels[b]);
        const double p = std::max(static_cast<double>(probs.at2(b, y)), 1e-12);
        const double w = class_weights.empty() ? 1.0 : static_cast<double>(class_weights[y]);
        g.at2(b, y) = static_cast<T>(-w / (p * B));
    }
    return {loss, g};
}

template <typename T>
struct AdamState {
    size_t step = 0;
    std::vector<T> m, v;
    T lr = static_cast<T>(1e-4);
    T beta1 = static_cast<T>(0.9);
    T beta2 = static_cast<T>(0.999);
    T eps = static_cast<T>(1e-8);
};

template <typename T>
void adam_step(std::vector<T>& params, const std::vector<T>& grads, AdamState<T>& state) {
    if (params.size() != grads.size()) throw LengthMismatch("adam: parameter/gradient length mismatch");
    if (state.m.empty()) state.m.assign(params.size(), T(0));
    if (state.v.empty()) state.v.assign(params.size(), T(0));
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw LengthMismatch("adam: state length mismatch");
    }
    state.step += 1;
    const double b1t = 1.0 - std::pow(static_cast<double>(state.beta1), static_cast<double>(state.step));
    const double b2t = 1.0 - std::pow(static_cast<double>(state.beta2), static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        const T g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (T(1) - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (T(1) - state.beta2) * g * g;
        const T mhat = state.m[i] / static_cast<T>(b1t);
        const T vhat = state.v[i] / static_cast<T>(b2t);
        params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

// Optimizer over a fixed parameter set; one state slot per tensor.
template <typename T>
class Adam {
public:
    Adam(std::vector<Tensor<T>*> params, T lr) : params_(std::move(params)) {
        states_.resize(params_.size());
        for (auto& s : states_) s.lr = lr;
    }

    void zero_grad() {
        for (Tensor<T>* p : params_) {
            p->ensure_grad();
            p->zero_grad();
        }
    }

    void step() {
        for (size_t i = 0; i < params_.size(); ++i) {
            adam_step(params_[i]->data, params_[i]->grad, states_[i]);
        }
    }

private:
    std::vector<Tensor<T>*> params_;
    std::vector<AdamState<T>> states_;
};

}  // namespace coughnet
