#pragma once

// Independent reference implementations used as test oracles. They follow
// the definitions directly and favour clarity over speed.

#include <dugm/nig.hpp>
#include <dugm/raster.hpp>

#include <boost/math/constants/constants.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

namespace dugm::testing {

/// Exhaustive between-class variance in floating point, evaluated
/// independently of the integer formulation under test.
inline std::size_t brute_force_otsu(const std::vector<std::uint64_t>& counts) {
    double total = 0, sum = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        total += double(counts[i]);
        sum += double(counts[i]) * double(i);
    }
    std::size_t best = counts.size();
    long double best_var = -1;
    for (std::size_t k = 0; k + 1 < counts.size(); ++k) {
        long double n0 = 0, s0 = 0;
        for (std::size_t i = 0; i <= k; ++i) {
            n0 += counts[i];
            s0 += (long double)counts[i] * i;
        }
        const long double n1 = total - n0;
        if (n0 == 0 || n1 == 0) continue;
        const long double mu0 = s0 / n0, mu1 = (sum - s0) / n1;
        const long double var = (n0 / total) * (n1 / total) * (mu0 - mu1) * (mu0 - mu1);
        // relative slack absorbs rounding when two splits are exactly tied
        if (var > best_var * (1 + 1e-15L)) {
            best_var = var;
            best = k;
        }
    }
    return best;
}

inline double naive_sad(const Raster& p, const Raster& g) {
    double s = 0;
    for (std::uint32_t y = 0; y < p.height; ++y)
        for (std::uint32_t x = 0; x < p.width; ++x) s += std::abs(double(p.at(x, y)) - double(g.at(x, y)));
    return s;
}

inline double naive_mse(const Raster& p, const Raster& g) {
    double s = 0;
    for (std::uint32_t y = 0; y < p.height; ++y)
        for (std::uint32_t x = 0; x < p.width; ++x) {
            const double d = double(p.at(x, y)) - double(g.at(x, y));
            s += d * d;
        }
    return s / (p.width * p.height);
}

/// Dense 2-D convolution with separately built x and y derivative-of-
/// Gaussian kernels (the y kernel constructed directly, not transposed).
inline std::vector<double> naive_gradient(const Raster& r, double sigma) {
    const double eps = 1e-2;
    const int half = int(std::ceil(sigma * std::sqrt(-2.0 * std::log(std::sqrt(2.0 * std::numbers::pi) * sigma * eps))));
    const int size = 2 * half + 1;
    auto g = [&](double t) { return std::exp(-t * t / (2 * sigma * sigma)) / (sigma * std::sqrt(2 * std::numbers::pi)); };
    auto dg = [&](double t) { return -t * g(t) / (sigma * sigma); };
    std::vector<double> kx(std::size_t(size * size)), ky(std::size_t(size * size));
    double nx = 0, ny = 0;
    for (int a = 0; a < size; ++a)
        for (int b = 0; b < size; ++b) {
            kx[std::size_t(a * size + b)] = g(a - half) * dg(b - half);
            ky[std::size_t(a * size + b)] = dg(a - half) * g(b - half);
            nx += kx[std::size_t(a * size + b)] * kx[std::size_t(a * size + b)];
            ny += ky[std::size_t(a * size + b)] * ky[std::size_t(a * size + b)];
        }
    for (auto& v : kx) v /= std::sqrt(nx);
    for (auto& v : ky) v /= std::sqrt(ny);
    const int w = int(r.width), h = int(r.height);
    std::vector<double> out(r.data.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double gx = 0, gy = 0;
            for (int a = -half; a <= half; ++a)
                for (int b = -half; b <= half; ++b) {
                    const int sy = std::min(std::max(y - a, 0), h - 1), sx = std::min(std::max(x - b, 0), w - 1);
                    gx += r.at(sx, sy) * kx[std::size_t((a + half) * size + b + half)];
                    gy += r.at(sx, sy) * ky[std::size_t((a + half) * size + b + half)];
                }
            out[std::size_t(y * w + x)] = std::hypot(gx, gy);
        }
    return out;
}

inline double naive_grad_metric(const Raster& p, const Raster& g) {
    const auto a = naive_gradient(p, 1.4), b = naive_gradient(g, 1.4);
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::pow(std::abs(a[i] - b[i]), 1.4);
    return s;
}

/// Connectivity by definition: per threshold, flood-fill every component of
/// the joint mask, keep the largest (first found on ties), and record the
/// level at which each pixel first drops out.
inline double naive_conn(const Raster& p, const Raster& g) {
    const int w = int(p.width), h = int(p.height), n = w * h;
    std::vector<double> level(std::size_t(n), -1.0);
    for (int i = 1; i <= 9; ++i) {
        const double th = i / 10.0;
        std::vector<int> comp(std::size_t(n), -1);
        std::vector<int> sizes;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int s = y * w + x;
                if (comp[std::size_t(s)] >= 0 || !(p.data[std::size_t(s)] >= th && g.data[std::size_t(s)] >= th)) continue;
                // BFS
                std::vector<int> queue{s};
                comp[std::size_t(s)] = int(sizes.size());
                for (std::size_t q = 0; q < queue.size(); ++q) {
                    const int cx = queue[q] % w, cy = queue[q] / w;
                    const int nb[4][2] = {{cx - 1, cy}, {cx + 1, cy}, {cx, cy - 1}, {cx, cy + 1}};
                    for (auto& v : nb) {
                        if (v[0] < 0 || v[0] >= w || v[1] < 0 || v[1] >= h) continue;
                        const int t = v[1] * w + v[0];
                        if (comp[std::size_t(t)] < 0 && p.data[std::size_t(t)] >= th && g.data[std::size_t(t)] >= th) {
                            comp[std::size_t(t)] = int(sizes.size());
                            queue.push_back(t);
                        }
                    }
                }
                sizes.push_back(int(queue.size()));
            }
        int best = -1, best_size = 0;
        for (int c = 0; c < int(sizes.size()); ++c)
            if (sizes[std::size_t(c)] > best_size) {
                best_size = sizes[std::size_t(c)];
                best = c;
            }
        for (int s = 0; s < n; ++s)
            if (level[std::size_t(s)] < 0 && (best < 0 || comp[std::size_t(s)] != best)) level[std::size_t(s)] = (i - 1) / 10.0;
    }
    double sum = 0;
    for (int s = 0; s < n; ++s) {
        const double l = level[std::size_t(s)] < 0 ? 1.0 : level[std::size_t(s)];
        const double dp = p.data[std::size_t(s)] - l, dg = g.data[std::size_t(s)] - l;
        sum += std::abs((1 - (dp >= 0.15 ? dp : 0)) - (1 - (dg >= 0.15 ? dg : 0)));
    }
    return sum;
}

/// Negative log-likelihood evaluated in 50-digit arithmetic, written out from
/// the Student-t marginal rather than shared with the library.
inline boost::multiprecision::cpp_bin_float_50 nll_multiprecision(const boost::multiprecision::cpp_bin_float_50& y,
                                                                  const boost::multiprecision::cpp_bin_float_50& gamma,
                                                                  const boost::multiprecision::cpp_bin_float_50& omega,
                                                                  const boost::multiprecision::cpp_bin_float_50& alpha,
                                                                  const boost::multiprecision::cpp_bin_float_50& beta) {
    using boost::multiprecision::log;
    using F = boost::multiprecision::cpp_bin_float_50;
    const F dof = 2 * alpha;
    const F scale2 = beta * (1 + omega) / (omega * alpha);
    const F z2 = (y - gamma) * (y - gamma) / scale2;
    const F log_t = boost::math::lgamma((dof + 1) / 2) - boost::math::lgamma(dof / 2) -
                    log(dof * boost::math::constants::pi<F>() * scale2) / 2 - (dof + 1) / 2 * log(1 + z2 / dof);
    return -log_t;
}

/// Central difference of the negative log-likelihood in parameter `k`
/// (0 gamma, 1 omega, 2 alpha, 3 beta), taken in 50-digit arithmetic with
/// step `h` scaled by the parameter magnitude and rounded back to double.
inline double nll_central_difference(double y, const NIGParams& p, int k, double h = 1e-12) {
    using F = boost::multiprecision::cpp_bin_float_50;
    std::array<F, 4> hi{F(p.gamma), F(p.omega), F(p.alpha), F(p.beta)}, lo = hi;
    const F step = F(h) * std::max(1.0, std::abs(std::array{p.gamma, p.omega, p.alpha, p.beta}[std::size_t(k)]));
    hi[std::size_t(k)] += step;
    lo[std::size_t(k)] -= step;
    const F d = (nll_multiprecision(F(y), hi[0], hi[1], hi[2], hi[3]) -
                 nll_multiprecision(F(y), lo[0], lo[1], lo[2], lo[3])) /
                (2 * step);
    return d.convert_to<double>();
}

/// Largest relative disagreement between an analytic gradient and central
/// differences of `loss`, over `count` randomly chosen coordinates.
template <class Loss>
double worst_gradient_error(const Loss& loss, std::vector<double> params, std::span<const double> grad,
                            std::size_t count, std::uint64_t seed, double h = 1e-6) {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (std::size_t t = 0; t < count; ++t) {
        const std::size_t k = rng() % params.size();
        const double saved = params[k];
        params[k] = saved + h;
        const double up = loss(params);
        params[k] = saved - h;
        const double down = loss(params);
        params[k] = saved;
        const double fd = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(fd - grad[k]) / std::max({std::abs(fd), std::abs(grad[k]), 1e-5}));
    }
    return worst;
}

} // namespace dugm::testing
