#pragma once

// Normal-Inverse-Gamma evidential head: activations, uncertainty moments,
// negative log-likelihood with its analytic gradient, and the Student-t
// marginal that the likelihood must agree with.

#include <dugm/errors.hpp>
#include <dugm/raster.hpp>
#include <dugm/special.hpp>

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace dugm {

inline constexpr double kEvidenceFloor = 1e-6;
inline constexpr double kDefaultLambda = 0.01;

struct NIGParams {
    double gamma = 0.5;
    double omega = 1.0;
    double alpha = 2.0;
    double beta = 1.0;

    bool valid() const {
        return std::isfinite(gamma) && std::isfinite(omega) && std::isfinite(alpha) && std::isfinite(beta) &&
               omega > 0.0 && alpha > 1.0 && beta > 0.0;
    }

    friend bool operator==(const NIGParams&, const NIGParams&) = default;
};

struct UncertaintyTriple {
    double aleatoric = 0.0;  ///< E[sigma^2]
    double epistemic = 0.0;  ///< Var[gamma]
    double var_sigma2 = 0.0; ///< Var[sigma^2]; +inf when alpha <= 2
};

/// Partial derivatives with respect to (gamma, omega, alpha, beta).
using NIGGradient = std::array<double, 4>;
using RawHead = std::array<double, 4>;

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

/// Maps four raw head outputs to valid NIG parameters.
inline NIGParams activate(const RawHead& raw) {
    for (double r : raw)
        if (!std::isfinite(r)) throw DomainError("activate: non-finite raw head value");
    return {sigmoid(raw[0]), softplus(raw[1]) + kEvidenceFloor, 1.0 + softplus(raw[2]) + kEvidenceFloor,
            softplus(raw[3]) + kEvidenceFloor};
}

/// Chain rule through activate: d(param)/d(raw) is diagonal.
inline NIGGradient activate_backward(const RawHead& raw, const NIGGradient& grad_params) {
    const double s = sigmoid(raw[0]);
    return {grad_params[0] * s * (1.0 - s), grad_params[1] * sigmoid(raw[1]), grad_params[2] * sigmoid(raw[2]),
            grad_params[3] * sigmoid(raw[3])};
}

inline UncertaintyTriple moments(const NIGParams& p) {
    UncertaintyTriple u;
    u.aleatoric = p.beta / (p.alpha - 1.0);
    u.epistemic = p.beta / (p.omega * (p.alpha - 1.0));
    u.var_sigma2 = p.alpha > 2.0 ? (p.beta * p.beta) / ((p.alpha - 1.0) * (p.alpha - 1.0) * (p.alpha - 2.0))
                                 : std::numeric_limits<double>::infinity();
    return u;
}

inline double nll(double y, const NIGParams& p) {
    const double big_omega = 2.0 * p.beta * (1.0 + p.omega);
    const double r = y - p.gamma;
    return 0.5 * std::log(std::numbers::pi / p.omega) - p.alpha * std::log(big_omega) +
           (p.alpha + 0.5) * std::log(r * r * p.omega + big_omega) + special::log_gamma(p.alpha) -
           special::log_gamma(p.alpha + 0.5);
}

inline double regularizer(double y, const NIGParams& p) { return std::abs(y - p.gamma) * (2.0 * p.omega + p.alpha); }

inline double total_loss(double y, const NIGParams& p, double lambda = kDefaultLambda) {
    if (lambda < 0.0) throw DomainError("total_loss: lambda must be non-negative");
    return nll(y, p) + lambda * regularizer(y, p);
}

inline NIGGradient nll_grad(double y, const NIGParams& p) {
    const double big_omega = 2.0 * p.beta * (1.0 + p.omega);
    const double r = y - p.gamma;
    const double denom = r * r * p.omega + big_omega;
    const double a_half = p.alpha + 0.5;
    NIGGradient g;
    g[0] = -a_half * 2.0 * r * p.omega / denom;
    g[1] = -0.5 / p.omega - p.alpha * 2.0 * p.beta / big_omega + a_half * (r * r + 2.0 * p.beta) / denom;
    g[2] = -std::log(big_omega) + std::log(denom) + special::digamma(p.alpha) - special::digamma(a_half);
    g[3] = -p.alpha / p.beta + a_half * 2.0 * (1.0 + p.omega) / denom;
    return g;
}

/// Gradient of nll + lambda * regularizer; the |y - gamma| subgradient is 0 at y == gamma.
inline NIGGradient total_loss_grad(double y, const NIGParams& p, double lambda = kDefaultLambda) {
    NIGGradient g = nll_grad(y, p);
    const double diff = p.gamma - y;
    const double abs_diff = std::abs(diff);
    const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    g[0] += lambda * sign * (2.0 * p.omega + p.alpha);
    g[1] += lambda * abs_diff * 2.0;
    g[2] += lambda * abs_diff;
    return g;
}

/// Student-t parameters of the NIG marginal over y.
struct StudentT {
    double location;
    double scale2; ///< squared scale
    double dof;
};

inline StudentT marginal(const NIGParams& p) {
    return {p.gamma, p.beta * (1.0 + p.omega) / (p.omega * p.alpha), 2.0 * p.alpha};
}

inline double student_t_logpdf(double y, const NIGParams& p) {
    const StudentT t = marginal(p);
    const double z2 = (y - t.location) * (y - t.location) / (t.dof * t.scale2);
    return special::log_gamma(0.5 * (t.dof + 1.0)) - special::log_gamma(0.5 * t.dof) -
           0.5 * std::log(t.dof * std::numbers::pi * t.scale2) - 0.5 * (t.dof + 1.0) * std::log1p(z2);
}

/// Per-pixel NIG parameters as four single-channel rasters.
struct NIGMap {
    Raster gamma, omega, alpha, beta;

    NIGMap() = default;
    NIGMap(std::uint32_t w, std::uint32_t h)
        : gamma(w, h, 1, 0.5f), omega(w, h, 1, 1.0f), alpha(w, h, 1, 2.0f), beta(w, h, 1, 1.0f) {}

    std::uint32_t width() const { return gamma.width; }
    std::uint32_t height() const { return gamma.height; }
    std::size_t pixels() const { return gamma.data.size(); }

    NIGParams at(std::size_t i) const { return {gamma.data[i], omega.data[i], alpha.data[i], beta.data[i]}; }
    void set(std::size_t i, const NIGParams& p) {
        gamma.data[i] = float(p.gamma);
        omega.data[i] = float(p.omega);
        alpha.data[i] = float(p.alpha);
        beta.data[i] = float(p.beta);
    }

    bool same_extent(const NIGMap& o) const { return gamma.same_extent(o.gamma); }

    void validate() const {
        for (const Raster* r : {&gamma, &omega, &alpha, &beta})
            if (r->channels != 1 || !r->same_extent(gamma) || r->data.size() != gamma.data.size())
                throw DimensionError("NIGMap: component rasters disagree in shape");
        for (std::size_t i = 0; i < pixels(); ++i)
            if (!at(i).valid()) throw DomainError("NIGMap: invalid parameters at pixel " + std::to_string(i));
    }

    friend bool operator==(const NIGMap&, const NIGMap&) = default;
};

struct UncertaintyMaps {
    Raster aleatoric, epistemic, var_sigma2;
};

inline UncertaintyMaps uncertainty_maps(const NIGMap& m) {
    UncertaintyMaps u{Raster(m.width(), m.height()), Raster(m.width(), m.height()), Raster(m.width(), m.height())};
    for (std::size_t i = 0; i < m.pixels(); ++i) {
        const UncertaintyTriple t = moments(m.at(i));
        u.aleatoric.data[i] = float(t.aleatoric);
        u.epistemic.data[i] = float(t.epistemic);
        u.var_sigma2.data[i] = float(t.var_sigma2);
    }
    return u;
}

} // namespace dugm
