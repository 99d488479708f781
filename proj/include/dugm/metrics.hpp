#pragma once

// Matting error metrics and uncertainty diagnostics.

#include <dugm/nig.hpp>
#include <dugm/usermap.hpp>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <vector>

namespace dugm {

struct ErrorMetrics {
    double sad = 0.0;
    double mse = 0.0;
    double mad = 0.0;
};

inline ErrorMetrics error_metrics(const Raster& pred, const Raster& gt) {
    require_same_extent(pred, gt, "error_metrics");
    ErrorMetrics m;
    double sq = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double d = double(pred.data[i]) - double(gt.data[i]);
        m.sad += std::abs(d);
        sq += d * d;
    }
    const double n = double(pred.data.size());
    m.mse = sq / n;
    m.mad = m.sad / n;
    return m;
}

struct RegionSad {
    double sad_bf = 0.0;
    double sad_t = 0.0;
};

/// SAD split by a trimap using user-map codes (fg 1, bg -1, transition 0.5).
inline RegionSad region_sad(const Raster& pred, const Raster& gt, const Raster& trimap) {
    require_same_extent(pred, gt, "region_sad");
    require_same_extent(pred, trimap, "region_sad");
    RegionSad r;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double d = std::abs(double(pred.data[i]) - double(gt.data[i]));
        const float code = trimap.data[i];
        if (code == kCodeTransition)
            r.sad_t += d;
        else if (code == kCodeForeground || code == kCodeBackground)
            r.sad_bf += d;
        else
            throw DomainError("region_sad: unknown trimap code " + std::to_string(code));
    }
    return r;
}

inline constexpr double kGradSigma = 1.4;
inline constexpr double kGradExponent = 1.4;

/// Square x-derivative-of-Gaussian kernel, row-major, normalized to unit L2
/// norm. The y kernel is its transpose.
inline std::vector<double> gaussian_derivative_kernel(double sigma, int& half) {
    const double eps = 1e-2;
    half = int(std::ceil(sigma * std::sqrt(-2.0 * std::log(std::sqrt(2.0 * std::numbers::pi) * sigma * eps))));
    const int size = 2 * half + 1;
    auto gauss = [sigma](double x) { return std::exp(-x * x / (2.0 * sigma * sigma)) / (sigma * std::sqrt(2.0 * std::numbers::pi)); };
    std::vector<double> k(std::size_t(size) * size);
    double norm = 0.0;
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
            const double u = i - half, v = j - half;
            const double val = gauss(u) * (-v * gauss(v) / (sigma * sigma));
            k[std::size_t(i) * size + j] = val;
            norm += val * val;
        }
    norm = std::sqrt(norm);
    for (double& v : k) v /= norm;
    return k;
}

/// Gradient magnitude from Gaussian-derivative filters (true convolution,
/// replicate border).
inline std::vector<double> gaussian_gradient_magnitude(const Raster& r, double sigma = kGradSigma) {
    int half = 0;
    const auto kx = gaussian_derivative_kernel(sigma, half);
    const int size = 2 * half + 1;
    const int w = int(r.width), h = int(r.height);
    std::vector<double> mag(r.data.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double gx = 0.0, gy = 0.0;
            for (int a = 0; a < size; ++a)
                for (int b = 0; b < size; ++b) {
                    const int sy = std::clamp(y - (a - half), 0, h - 1);
                    const int sx = std::clamp(x - (b - half), 0, w - 1);
                    const double v = r.at(std::uint32_t(sx), std::uint32_t(sy));
                    gx += v * kx[std::size_t(a) * size + b];
                    gy += v * kx[std::size_t(b) * size + a];
                }
            mag[std::size_t(y) * w + x] = std::sqrt(gx * gx + gy * gy);
        }
    return mag;
}

/// Sum over pixels of |grad_mag(pred) - grad_mag(gt)|^1.4.
inline double grad_metric(const Raster& pred, const Raster& gt) {
    require_same_extent(pred, gt, "grad_metric");
    const auto gp = gaussian_gradient_magnitude(pred);
    const auto gg = gaussian_gradient_magnitude(gt);
    double sum = 0.0;
    for (std::size_t i = 0; i < gp.size(); ++i) sum += std::pow(std::abs(gp[i] - gg[i]), kGradExponent);
    return sum;
}

/// Largest 4-connected component of a binary mask (ties: component found
/// first in row-major order).
inline std::vector<std::uint8_t> largest_component(const std::vector<std::uint8_t>& mask, std::uint32_t width,
                                                   std::uint32_t height) {
    std::vector<std::int32_t> label(mask.size(), -1);
    std::vector<std::size_t> sizes;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < mask.size(); ++start) {
        if (!mask[start] || label[start] >= 0) continue;
        const auto id = std::int32_t(sizes.size());
        std::size_t count = 0;
        stack.assign(1, start);
        label[start] = id;
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            ++count;
            const std::uint32_t x = std::uint32_t(p % width), y = std::uint32_t(p / width);
            auto visit = [&](std::size_t q) {
                if (mask[q] && label[q] < 0) {
                    label[q] = id;
                    stack.push_back(q);
                }
            };
            if (x > 0) visit(p - 1);
            if (x + 1 < width) visit(p + 1);
            if (y > 0) visit(p - width);
            if (y + 1 < height) visit(p + width);
        }
        sizes.push_back(count);
    }
    std::vector<std::uint8_t> out(mask.size(), 0);
    if (sizes.empty()) return out;
    std::int32_t best = 0;
    for (std::size_t i = 1; i < sizes.size(); ++i)
        if (sizes[i] > sizes[std::size_t(best)]) best = std::int32_t(i);
    for (std::size_t i = 0; i < mask.size(); ++i) out[i] = label[i] == best;
    return out;
}

inline constexpr int kConnSteps = 9;       ///< thresholds 0.1 .. 0.9
inline constexpr double kConnTheta = 0.15;

/// Connectivity error: per pixel, the last threshold at which it still
/// belonged to the largest jointly-connected region, then the thresholded
/// degradation difference.
inline double conn_metric(const Raster& pred, const Raster& gt) {
    require_same_extent(pred, gt, "conn_metric");
    const std::size_t n = pred.data.size();
    std::vector<double> level(n, -1.0);
    std::vector<std::uint8_t> mask(n);
    for (int i = 1; i <= kConnSteps; ++i) {
        const double th = double(i) / 10.0;
        for (std::size_t p = 0; p < n; ++p) mask[p] = pred.data[p] >= th && gt.data[p] >= th;
        const auto omega = largest_component(mask, pred.width, pred.height);
        for (std::size_t p = 0; p < n; ++p)
            if (level[p] == -1.0 && !omega[p]) level[p] = double(i - 1) / 10.0;
    }
    double sum = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        const double l = level[p] == -1.0 ? 1.0 : level[p];
        const double pd = double(pred.data[p]) - l;
        const double gd = double(gt.data[p]) - l;
        const double pphi = 1.0 - (pd >= kConnTheta ? pd : 0.0);
        const double gphi = 1.0 - (gd >= kConnTheta ? gd : 0.0);
        sum += std::abs(pphi - gphi);
    }
    return sum;
}

struct MetricReport {
    double sad = 0.0, mse = 0.0, mad = 0.0, grad = 0.0, conn = 0.0;
    std::optional<double> sad_bf, sad_t;
};

inline MetricReport evaluate(const Raster& pred, const Raster& gt, const std::optional<Raster>& trimap = std::nullopt) {
    const ErrorMetrics e = error_metrics(pred, gt);
    MetricReport r{e.sad, e.mse, e.mad, grad_metric(pred, gt), conn_metric(pred, gt), std::nullopt, std::nullopt};
    if (trimap) {
        const RegionSad rs = region_sad(pred, gt, *trimap);
        r.sad_bf = rs.sad_bf;
        r.sad_t = rs.sad_t;
    }
    return r;
}

/// Raw values in natural units plus a "scaled" block using the table
/// conventions: SAD and region SADs in thousands, MSE in 1e-3 units.
inline nlohmann::json report_json(const MetricReport& r) {
    nlohmann::json j{{"sad", r.sad}, {"mse", r.mse}, {"mad", r.mad}, {"grad", r.grad}, {"conn", r.conn}};
    j["sad_bf"] = r.sad_bf ? nlohmann::json(*r.sad_bf) : nlohmann::json(nullptr);
    j["sad_t"] = r.sad_t ? nlohmann::json(*r.sad_t) : nlohmann::json(nullptr);
    nlohmann::json scaled{{"sad", r.sad / 1e3}, {"mse", r.mse * 1e3}, {"mad", r.mad * 1e3}, {"grad", r.grad / 1e3},
                          {"conn", r.conn / 1e3}};
    if (r.sad_bf) scaled["sad_bf"] = *r.sad_bf / 1e3;
    if (r.sad_t) scaled["sad_t"] = *r.sad_t / 1e3;
    j["scaled"] = scaled;
    j["scale_conventions"] = {{"sad", "1e3"}, {"mse", "1e-3"}, {"mad", "1e-3"}, {"grad", "1e3"}, {"conn", "1e3"}};
    return j;
}

struct CalibrationCurve {
    std::vector<double> levels;
    std::vector<double> coverage;

    double max_deviation() const {
        double d = 0.0;
        for (std::size_t i = 0; i < levels.size(); ++i) d = std::max(d, std::abs(coverage[i] - levels[i]));
        return d;
    }
};

/// Two-sided tail position of y under the Student-t marginal: |2F(y) - 1|.
/// y lies inside the central c-interval iff this is <= c.
inline double central_interval_position(double y, const NIGParams& p) {
    const StudentT t = marginal(p);
    const boost::math::students_t dist(t.dof);
    const double z = (y - t.location) / std::sqrt(t.scale2);
    return std::abs(2.0 * boost::math::cdf(dist, z) - 1.0);
}

inline CalibrationCurve calibration(std::span<const NIGParams> params, std::span<const double> targets,
                                    std::span<const double> levels) {
    if (params.empty() || params.size() != targets.size())
        throw DomainError("calibration: need equally many (non-zero) predictions and targets");
    for (std::size_t i = 0; i < levels.size(); ++i)
        if (levels[i] < 0.0 || levels[i] > 1.0 || (i > 0 && levels[i] < levels[i - 1]))
            throw DomainError("calibration: levels must ascend within [0,1]");
    std::vector<double> pos(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) pos[i] = central_interval_position(targets[i], params[i]);
    CalibrationCurve c;
    c.levels.assign(levels.begin(), levels.end());
    for (double level : levels) {
        const auto inside = std::count_if(pos.begin(), pos.end(), [&](double q) { return q <= level && level > 0.0; });
        c.coverage.push_back(double(inside) / double(pos.size()));
    }
    return c;
}

inline CalibrationCurve calibration(const NIGMap& m, const Raster& gt, std::span<const double> levels) {
    require_same_extent(m.gamma, gt, "calibration");
    std::vector<NIGParams> params(m.pixels());
    std::vector<double> targets(m.pixels());
    for (std::size_t i = 0; i < m.pixels(); ++i) {
        params[i] = m.at(i);
        targets[i] = gt.data[i];
    }
    return calibration(params, targets, levels);
}

/// AUC of `score` as a detector of the positive mask pixels, via the
/// Mann-Whitney rank statistic with average ranks for ties.
inline double roc_auc(std::span<const double> score, std::span<const std::uint8_t> positive) {
    if (score.size() != positive.size()) throw DimensionError("roc_auc: score and mask sizes differ");
    const std::size_t n = score.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
    double rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && score[order[j]] == score[order[i]]) ++j;
        const double avg_rank = 0.5 * double(i + 1 + j); // ranks i+1 .. j
        for (std::size_t k = i; k < j; ++k)
            if (positive[order[k]]) {
                rank_sum += avg_rank;
                ++n_pos;
            }
        i = j;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DomainError("roc_auc: mask must contain both classes");
    return (rank_sum - double(n_pos) * double(n_pos + 1) / 2.0) / (double(n_pos) * double(n_neg));
}

inline double roc_auc(const Raster& score, const Raster& mask) {
    require_same_extent(score, mask, "roc_auc");
    std::vector<double> s(score.data.begin(), score.data.end());
    std::vector<std::uint8_t> m(mask.data.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = mask.data[i] != 0.0f;
    return roc_auc(s, m);
}

/// Per-bin share of fg/bg trimap pixels among pixels whose uncertainty falls
/// in each of `bins` equal-width bins over [min, max].
struct RegionProportions {
    std::vector<double> bin_upper;
    std::vector<std::size_t> count;
    std::vector<double> fg_bg_fraction;
};

inline RegionProportions region_proportions(const Raster& uncertainty, const Raster& trimap, std::size_t bins = 10) {
    require_same_extent(uncertainty, trimap, "region_proportions");
    double lo = INFINITY, hi = -INFINITY;
    for (float v : uncertainty.data)
        if (std::isfinite(v)) {
            lo = std::min(lo, double(v));
            hi = std::max(hi, double(v));
        }
    RegionProportions r;
    r.count.assign(bins, 0);
    std::vector<std::size_t> bf(bins, 0);
    for (std::size_t i = 0; i < uncertainty.data.size(); ++i) {
        const double v = uncertainty.data[i];
        if (!std::isfinite(v)) continue;
        std::size_t b = hi > lo ? std::size_t((v - lo) / (hi - lo) * double(bins)) : 0;
        b = std::min(b, bins - 1);
        ++r.count[b];
        if (trimap.data[i] != kCodeTransition) ++bf[b];
    }
    for (std::size_t b = 0; b < bins; ++b) {
        r.bin_upper.push_back(lo + double(b + 1) * (hi - lo) / double(bins));
        r.fg_bg_fraction.push_back(r.count[b] ? double(bf[b]) / double(r.count[b]) : 0.0);
    }
    return r;
}

} // namespace dugm
