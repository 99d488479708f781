#pragma once

// Aleatoric-uncertainty-guided detail refinement: coarse sampling, OTSU
// selection filtered by Var[sigma^2], and 32x32 window refinement stitched
// back with per-pixel averaging.

#include <dugm/data.hpp>
#include <dugm/models.hpp>
#include <dugm/nig.hpp>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace dugm {

inline constexpr std::size_t kOtsuBins = 256;
inline constexpr std::uint32_t kSelectionStride = 8;

/// Per-pixel draw gamma + N(0, E[sigma^2]), clamped to [0,1].
inline Raster sample_coarse(const NIGMap& m, std::uint64_t seed) {
    auto rng = seeded_rng(seed, 0x5A3F);
    std::normal_distribution<double> normal(0.0, 1.0);
    Raster out(m.width(), m.height());
    for (std::size_t i = 0; i < m.pixels(); ++i) {
        const NIGParams p = m.at(i);
        const double sd = std::sqrt(moments(p).aleatoric);
        out.data[i] = float(std::clamp(p.gamma + sd * normal(rng), 0.0, 1.0));
    }
    return out;
}

/// Split index k maximizing between-class variance for classes {0..k} and
/// {k+1..}; ties go to the lowest k. Class statistics are exact integers.
inline std::size_t otsu_histogram(std::span<const std::uint64_t> counts) {
    if (counts.size() < 2) throw DomainError("otsu: histogram needs at least two bins");
    __int128 total_n = 0, total_s = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        total_n += counts[i];
        total_s += __int128(counts[i]) * __int128(i);
    }
    __int128 n0 = 0, s0 = 0;
    long double best = -1.0L;
    std::size_t best_k = 0;
    bool found = false;
    for (std::size_t k = 0; k + 1 < counts.size(); ++k) {
        n0 += counts[k];
        s0 += __int128(counts[k]) * __int128(k);
        const __int128 n1 = total_n - n0;
        if (n0 == 0 || n1 == 0) continue;
        // N^2 * w0 * w1 * (mu0 - mu1)^2 = (N s0 - n0 S)^2 / (n0 n1)
        const long double diff = (long double)(total_n * s0 - n0 * total_s);
        const long double score = diff * diff / ((long double)n0 * (long double)n1);
        if (score > best) {
            best = score;
            best_k = k;
            found = true;
        }
    }
    if (!found) throw DomainError("otsu: histogram occupies a single bin; no threshold");
    return best_k;
}

struct Histogram {
    std::vector<std::uint64_t> counts;
    double lo = 0.0, hi = 0.0;

    double upper_edge(std::size_t bin) const { return lo + double(bin + 1) * (hi - lo) / double(counts.size()); }
};

/// min-max histogram of the finite values.
inline Histogram minmax_histogram(std::span<const float> values, std::size_t bins = kOtsuBins) {
    Histogram h;
    h.counts.assign(bins, 0);
    double lo = INFINITY, hi = -INFINITY;
    for (float v : values)
        if (std::isfinite(v)) {
            lo = std::min(lo, double(v));
            hi = std::max(hi, double(v));
        }
    h.lo = lo;
    h.hi = hi;
    if (!(hi > lo)) return h;
    for (float v : values) {
        if (!std::isfinite(v)) continue;
        const auto b = std::size_t((double(v) - lo) / (hi - lo) * double(bins));
        ++h.counts[std::min(b, bins - 1)];
    }
    return h;
}

/// OTSU threshold over a 256-bin min-max histogram of the finite values;
/// returns the upper edge of the winning bin.
inline double otsu(std::span<const float> values) {
    const Histogram h = minmax_histogram(values);
    if (!(h.hi > h.lo)) throw DomainError("otsu: fewer than two distinct finite values; no threshold");
    return h.upper_edge(otsu_histogram(h.counts));
}

inline double otsu(const Raster& r) { return otsu(std::span<const float>(r.data)); }

/// Pixels with high aleatoric uncertainty whose Var[sigma^2] is finite and
/// at or below its own OTSU threshold.
inline Raster select_pixels(const Raster& aleatoric, const Raster& var_sigma2) {
    require_same_extent(aleatoric, var_sigma2, "select_pixels");
    const double t_alea = otsu(aleatoric);
    const double t_var = otsu(var_sigma2);
    Raster mask(aleatoric.width, aleatoric.height);
    for (std::size_t i = 0; i < mask.data.size(); ++i) {
        const float v = var_sigma2.data[i];
        mask.data[i] = (aleatoric.data[i] > t_alea && std::isfinite(v) && v <= t_var) ? 1.0f : 0.0f;
    }
    return mask;
}

struct PixelPos {
    std::uint32_t x = 0, y = 0;
    friend bool operator==(const PixelPos&, const PixelPos&) = default;
};

/// Thins a selection to at most one pixel per stride x stride block (the
/// first selected pixel in row-major order), blocks visited row-major.
inline std::vector<PixelPos> decimate_selection(const Raster& mask, std::uint32_t stride = kSelectionStride) {
    std::vector<PixelPos> out;
    for (std::uint32_t by = 0; by < mask.height; by += stride)
        for (std::uint32_t bx = 0; bx < mask.width; bx += stride) {
            bool done = false;
            for (std::uint32_t y = by; y < std::min(by + stride, mask.height) && !done; ++y)
                for (std::uint32_t x = bx; x < std::min(bx + stride, mask.width) && !done; ++x)
                    if (mask.at(x, y) != 0.0f) {
                        out.push_back({x, y});
                        done = true;
                    }
        }
    return out;
}

/// size x size window centred on p, shifted to lie inside the image.
inline PixelRect window_at(PixelPos p, std::uint32_t width, std::uint32_t height,
                           std::uint32_t size = kRefineWindow) {
    if (width < size || height < size) throw DimensionError("window_at: image smaller than refinement window");
    const auto place = [size](std::uint32_t c, std::uint32_t extent) {
        const std::int64_t start = std::int64_t(c) - std::int64_t(size / 2);
        return std::uint32_t(std::clamp<std::int64_t>(start, 0, std::int64_t(extent - size)));
    };
    const std::uint32_t x0 = place(p.x, width), y0 = place(p.y, height);
    return {x0, y0, x0 + size, y0 + size};
}

inline Raster crop(const Raster& r, const PixelRect& rect) {
    Raster out(rect.x1 - rect.x0, rect.y1 - rect.y0, r.channels);
    for (std::uint32_t c = 0; c < r.channels; ++c)
        for (std::uint32_t y = rect.y0; y < rect.y1; ++y)
            for (std::uint32_t x = rect.x0; x < rect.x1; ++x) out.at(x - rect.x0, y - rect.y0, c) = r.at(x, y, c);
    return out;
}

/// Anything usable as a window refiner: refined = r(coarse_window, image_window).
template <class R>
concept WindowRefiner = requires(const R& r, const Raster& a, const Raster& b) {
    { r.ready() } -> std::convertible_to<bool>;
    { r(a, b) } -> std::convertible_to<Raster>;
};

/// Refines 32x32 windows around the decimated selection and averages
/// overlapping results; pixels outside every window keep the coarse value.
template <WindowRefiner R>
Raster refine_matte(const Raster& coarse, const Raster& mask, const R& refiner, const Raster& image) {
    if (!refiner.ready()) throw DomainError("refine_matte: refiner is not trained");
    require_same_extent(coarse, mask, "refine_matte");
    require_same_extent(coarse, image, "refine_matte");
    const auto centers = decimate_selection(mask);
    if (centers.empty()) return coarse;

    std::vector<double> sum(coarse.data.size(), 0.0);
    std::vector<std::uint32_t> count(coarse.data.size(), 0);
    for (const PixelPos& c : centers) {
        const PixelRect w = window_at(c, coarse.width, coarse.height);
        const Raster refined = refiner(crop(coarse, w), crop(image, w));
        if (!refined.same_extent(Raster(kRefineWindow, kRefineWindow)))
            throw DimensionError("refine_matte: refiner returned wrong window size");
        for (std::uint32_t y = w.y0; y < w.y1; ++y)
            for (std::uint32_t x = w.x0; x < w.x1; ++x) {
                const std::size_t i = std::size_t(y) * coarse.width + x;
                sum[i] += refined.at(x - w.x0, y - w.y0);
                ++count[i];
            }
    }
    Raster out = coarse;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        if (count[i] > 0) out.data[i] = float(std::clamp(sum[i] / double(count[i]), 0.0, 1.0));
    return out;
}

/// Full refinement pass for one prediction: coarse sample, selection, refine.
struct RefineResult {
    Raster coarse;
    Raster mask;
    Raster refined;
    bool degenerate = false; ///< a map had no OTSU threshold; nothing was selected
};

template <WindowRefiner R>
RefineResult refine_prediction(const NIGMap& m, const Raster& image, const R& refiner, std::uint64_t seed) {
    RefineResult r;
    r.coarse = sample_coarse(m, seed);
    const UncertaintyMaps u = uncertainty_maps(m);
    try {
        r.mask = select_pixels(u.aleatoric, u.var_sigma2);
    } catch (const DomainError&) {
        r.mask = Raster(m.width(), m.height());
        r.degenerate = true;
    }
    r.refined = refine_matte(r.coarse, r.mask, refiner, image);
    return r;
}

} // namespace dugm
