#pragma once

#include <dugm/errors.hpp>

#include <array>
#include <cmath>
#include <numbers>

namespace dugm::special {

// Lanczos approximation, g = 7, nine coefficients.
inline constexpr double kLanczosG = 7.0;
inline constexpr std::array<double, 9> kLanczosCoef = {
    0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
    771.32342877765313,   -176.61502916214059,   12.507343278686905,
    -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};

/// log|Gamma(x)| for x > 0.
inline double log_gamma(double x) {
    if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("log_gamma: argument must be positive and finite");
    if (x < 0.5) {
        // Reflection keeps the Lanczos sum in its accurate range.
        return std::log(std::numbers::pi / std::sin(std::numbers::pi * x)) - log_gamma(1.0 - x);
    }
    const double z = x - 1.0;
    double a = kLanczosCoef[0];
    for (std::size_t i = 1; i < kLanczosCoef.size(); ++i) a += kLanczosCoef[i] / (z + double(i));
    const double t = z + kLanczosG + 0.5;
    return 0.5 * std::log(2.0 * std::numbers::pi) + (z + 0.5) * std::log(t) - t + std::log(a);
}

/// Digamma via upward recurrence to x >= 10 and the asymptotic series.
inline double digamma(double x) {
    if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("digamma: argument must be positive and finite");
    double acc = 0.0;
    while (x < 10.0) {
        acc -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    // Bernoulli terms B_{2k} / (2k) for k = 1..7
    double series = inv2 * (1.0 / 12.0 -
                    inv2 * (1.0 / 120.0 -
                    inv2 * (1.0 / 252.0 -
                    inv2 * (1.0 / 240.0 -
                    inv2 * (1.0 / 132.0 -
                    inv2 * (691.0 / 32760.0 -
                    inv2 * (1.0 / 12.0)))))));
    return acc + std::log(x) - 0.5 * inv - series;
}

} // namespace dugm::special
