#pragma once

// A minimal convolution stack with hand-written backward passes. Parameters
// live in one flat vector so optimizers, checksums, and finite-difference
// checks can treat them uniformly. Forward runs in float or double; training
// uses the double path.

#include <dugm/errors.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dugm::nn {

template <class T>
struct Tensor {
    std::uint32_t channels = 0;
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<T> values;

    Tensor() = default;
    Tensor(std::uint32_t c, std::uint32_t h, std::uint32_t w, T fill = T(0))
        : channels(c), height(h), width(w), values(std::size_t(c) * h * w, fill) {}

    std::size_t plane() const { return std::size_t(height) * width; }
    T* channel(std::uint32_t c) { return values.data() + c * plane(); }
    const T* channel(std::uint32_t c) const { return values.data() + c * plane(); }
    T& at(std::uint32_t c, std::uint32_t y, std::uint32_t x) { return values[c * plane() + std::size_t(y) * width + x]; }
    T at(std::uint32_t c, std::uint32_t y, std::uint32_t x) const {
        return values[c * plane() + std::size_t(y) * width + x];
    }
};

struct ConvSpec {
    std::uint32_t in = 0;
    std::uint32_t out = 0;
    std::uint32_t kernel = 3; ///< odd; zero "same" padding

    std::size_t weight_count() const { return std::size_t(out) * in * kernel * kernel; }
    std::size_t param_count() const { return weight_count() + out; }
};

namespace detail {

template <class T>
void conv_forward(const ConvSpec& s, const Tensor<T>& in, const T* params, Tensor<T>& out) {
    const int pad = int(s.kernel / 2);
    const int h = int(in.height), w = int(in.width);
    out = Tensor<T>(s.out, in.height, in.width);
    const T* bias = params + s.weight_count();
    for (std::uint32_t o = 0; o < s.out; ++o) {
        T* dst = out.channel(o);
        std::fill(dst, dst + out.plane(), bias[o]);
        for (std::uint32_t i = 0; i < s.in; ++i) {
            const T* src = in.channel(i);
            const T* kw = params + (std::size_t(o) * s.in + i) * s.kernel * s.kernel;
            for (int ky = 0; ky < int(s.kernel); ++ky) {
                const int dy = ky - pad;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < int(s.kernel); ++kx) {
                    const int dx = kx - pad;
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    const T wv = kw[ky * int(s.kernel) + kx];
                    for (int y = y0; y < y1; ++y) {
                        T* orow = dst + std::size_t(y) * w;
                        const T* irow = src + std::size_t(y + dy) * w + dx;
                        for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
                    }
                }
            }
        }
    }
}

// Accumulates parameter gradients into grad_params; writes grad_in when non-null.
inline void conv_backward(const ConvSpec& s, const Tensor<double>& in, const double* params,
                          const Tensor<double>& grad_out, double* grad_params, Tensor<double>* grad_in) {
    const int pad = int(s.kernel / 2);
    const int h = int(in.height), w = int(in.width);
    if (grad_in) *grad_in = Tensor<double>(s.in, in.height, in.width);
    double* gbias = grad_params + s.weight_count();
    for (std::uint32_t o = 0; o < s.out; ++o) {
        const double* g = grad_out.channel(o);
        double sum = 0.0;
        for (std::size_t p = 0; p < grad_out.plane(); ++p) sum += g[p];
        gbias[o] += sum;
        for (std::uint32_t i = 0; i < s.in; ++i) {
            const double* src = in.channel(i);
            double* gsrc = grad_in ? grad_in->channel(i) : nullptr;
            const std::size_t base = (std::size_t(o) * s.in + i) * s.kernel * s.kernel;
            for (int ky = 0; ky < int(s.kernel); ++ky) {
                const int dy = ky - pad;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < int(s.kernel); ++kx) {
                    const int dx = kx - pad;
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    const double wv = params[base + ky * int(s.kernel) + kx];
                    double acc = 0.0;
                    for (int y = y0; y < y1; ++y) {
                        const double* grow = g + std::size_t(y) * w;
                        const double* irow = src + std::size_t(y + dy) * w + dx;
                        for (int x = x0; x < x1; ++x) acc += grow[x] * irow[x];
                        if (gsrc) {
                            double* girow = gsrc + std::size_t(y + dy) * w + dx;
                            for (int x = x0; x < x1; ++x) girow[x] += wv * grow[x];
                        }
                    }
                    grad_params[base + ky * int(s.kernel) + kx] += acc;
                }
            }
        }
    }
}

} // namespace detail

/// Activations recorded during a double-precision forward pass.
struct ForwardCache {
    std::vector<Tensor<double>> inputs; ///< input to each layer (post-ReLU for layers > 0)
};

/// Sequence of convolutions with ReLU between consecutive layers (none after
/// the last).
class ConvStack {
public:
    ConvStack() = default;
    explicit ConvStack(std::vector<ConvSpec> layers) : layers_(std::move(layers)) {
        std::size_t offset = 0;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            if (l > 0 && layers_[l].in != layers_[l - 1].out)
                throw DimensionError("ConvStack: layer " + std::to_string(l) + " input channels mismatch");
            if (layers_[l].kernel % 2 == 0) throw DimensionError("ConvStack: kernel size must be odd");
            offsets_.push_back(offset);
            offset += layers_[l].param_count();
        }
        param_count_ = offset;
    }

    const std::vector<ConvSpec>& layers() const { return layers_; }
    std::size_t param_count() const { return param_count_; }
    std::size_t offset(std::size_t layer) const { return offsets_.at(layer); }
    std::uint32_t in_channels() const { return layers_.front().in; }
    std::uint32_t out_channels() const { return layers_.back().out; }

    /// He-normal weights scaled by `last_layer_scale` on the final layer; zero biases.
    std::vector<double> init_params(std::uint64_t seed, double last_layer_scale = 1.0) const {
        std::vector<double> theta(param_count_, 0.0);
        std::mt19937_64 rng(seed);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const ConvSpec& s = layers_[l];
            const double fan_in = double(s.in) * s.kernel * s.kernel;
            double scale = std::sqrt(2.0 / fan_in);
            if (l + 1 == layers_.size()) scale *= last_layer_scale;
            std::normal_distribution<double> normal(0.0, 1.0);
            for (std::size_t k = 0; k < s.weight_count(); ++k) theta[offsets_[l] + k] = scale * normal(rng);
        }
        return theta;
    }

    template <class T>
    Tensor<T> forward(const Tensor<T>& x, std::span<const T> theta) const {
        check(x, theta.size());
        Tensor<T> cur = x, next;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            detail::conv_forward(layers_[l], cur, theta.data() + offsets_[l], next);
            if (l + 1 < layers_.size())
                for (T& v : next.values) v = v > T(0) ? v : T(0);
            std::swap(cur, next);
        }
        return cur;
    }

    Tensor<double> forward_train(const Tensor<double>& x, std::span<const double> theta, ForwardCache& cache) const {
        check(x, theta.size());
        cache.inputs.assign(1, x);
        Tensor<double> out;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            detail::conv_forward(layers_[l], cache.inputs.back(), theta.data() + offsets_[l], out);
            if (l + 1 < layers_.size()) {
                for (double& v : out.values) v = v > 0.0 ? v : 0.0;
                cache.inputs.push_back(std::move(out));
            }
        }
        return out;
    }

    /// Backpropagates grad_out (w.r.t. the stack output) into grad_theta
    /// (accumulated). Returns the gradient w.r.t. the stack input when requested.
    void backward(const ForwardCache& cache, const Tensor<double>& grad_out, std::span<const double> theta,
                  std::span<double> grad_theta, Tensor<double>* grad_input = nullptr) const {
        if (grad_theta.size() != param_count_) throw DimensionError("ConvStack::backward: gradient size mismatch");
        Tensor<double> g = grad_out, g_prev;
        for (std::size_t l = layers_.size(); l-- > 0;) {
            const bool need_in = l > 0 || grad_input;
            detail::conv_backward(layers_[l], cache.inputs[l], theta.data() + offsets_[l], g,
                                  grad_theta.data() + offsets_[l], need_in ? &g_prev : nullptr);
            if (l > 0) {
                // ReLU mask from the recorded post-activation input.
                const auto& act = cache.inputs[l].values;
                for (std::size_t k = 0; k < act.size(); ++k)
                    if (!(act[k] > 0.0)) g_prev.values[k] = 0.0;
            }
            std::swap(g, g_prev);
        }
        if (grad_input) *grad_input = std::move(g);
    }

private:
    template <class T>
    void check(const Tensor<T>& x, std::size_t theta_size) const {
        if (layers_.empty()) throw DimensionError("ConvStack: no layers");
        if (x.channels != in_channels())
            throw DimensionError("ConvStack: expected " + std::to_string(in_channels()) + " input channels, got " +
                                 std::to_string(x.channels));
        if (theta_size != param_count_) throw DimensionError("ConvStack: parameter vector size mismatch");
    }

    std::vector<ConvSpec> layers_;
    std::vector<std::size_t> offsets_;
    std::size_t param_count_ = 0;
};

template <class To, class From>
std::vector<To> cast_params(std::span<const From> theta) {
    return std::vector<To>(theta.begin(), theta.end());
}

} // namespace dugm::nn
