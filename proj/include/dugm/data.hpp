#pragma once

// Synthetic datasets: the noisy cubic regression benchmark and procedurally
// composited matting samples, plus random training user maps.

#include <dugm/raster.hpp>
#include <dugm/usermap.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

namespace dugm {

inline std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(stream),
                      std::uint32_t(stream >> 32)};
    return std::mt19937_64(seq);
}

/// y_scaled = (y - offset) * scale
struct AffineTransform {
    double scale = 1.0;
    double offset = 0.0;

    double apply(double y) const { return (y - offset) * scale; }
    double invert(double s) const { return s / scale + offset; }
};

struct CubicDataset {
    std::vector<double> x;
    std::vector<double> y;     ///< rescaled targets
    std::vector<double> y_raw; ///< x^3 + noise
    AffineTransform transform;
};

/// y = x^3 + N(0, noise_sigma^2). Without an explicit transform the targets
/// are mapped onto [0,1] using their own min and max.
inline CubicDataset gen_cubic(std::size_t n, double x_lo, double x_hi, double noise_sigma, std::uint64_t seed,
                              std::optional<AffineTransform> transform = std::nullopt) {
    if (n == 0) throw DomainError("gen_cubic: n must be >= 1");
    auto rng = seeded_rng(seed, 0xC0B1C);
    std::uniform_real_distribution<double> ux(x_lo, x_hi);
    std::normal_distribution<double> noise(0.0, 1.0);
    CubicDataset d;
    d.x.resize(n);
    d.y_raw.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        d.x[i] = ux(rng);
        d.y_raw[i] = d.x[i] * d.x[i] * d.x[i] + noise_sigma * noise(rng);
    }
    if (transform) {
        d.transform = *transform;
    } else {
        auto [lo, hi] = std::minmax_element(d.y_raw.begin(), d.y_raw.end());
        const double span = *hi - *lo;
        d.transform = {span > 0.0 ? 1.0 / span : 1.0, *lo};
    }
    d.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) d.y[i] = d.transform.apply(d.y_raw[i]);
    return d;
}

struct MattingSample {
    Raster image;
    Raster alpha;
    Raster foreground;
    Raster background;
};

namespace detail {

// Bilinear value noise plus a small per-pixel jitter, centred on `mean`.
inline Raster value_noise_texture(std::uint32_t size, std::mt19937_64& rng, double mean, double amplitude,
                                  std::uint32_t cell) {
    const std::uint32_t g = size / cell + 2;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> grid(std::size_t(g) * g);
    for (double& v : grid) v = u(rng);
    Raster t(size, size);
    for (std::uint32_t y = 0; y < size; ++y)
        for (std::uint32_t x = 0; x < size; ++x) {
            const double fx = double(x) / cell, fy = double(y) / cell;
            const std::uint32_t ix = std::uint32_t(fx), iy = std::uint32_t(fy);
            const double tx = fx - ix, ty = fy - iy;
            const double v = (1 - tx) * (1 - ty) * grid[iy * g + ix] + tx * (1 - ty) * grid[iy * g + ix + 1] +
                             (1 - tx) * ty * grid[(iy + 1) * g + ix] + tx * ty * grid[(iy + 1) * g + ix + 1];
            const double jitter = 0.3 * u(rng);
            t.at(x, y) = float(std::clamp(mean + amplitude * (v + jitter), 0.0, 1.0));
        }
    return t;
}

struct Blob {
    double cx, cy, radius, aspect, rotation, wobble, phase, feather;
    int lobes;
};

inline double blob_alpha(const Blob& b, double px, double py) {
    const double c = std::cos(b.rotation), s = std::sin(b.rotation);
    const double dx = px - b.cx, dy = py - b.cy;
    const double u = (c * dx + s * dy) / b.radius;
    const double v = (-s * dx + c * dy) / (b.radius * b.aspect);
    const double rho = std::hypot(u, v);
    const double theta = std::atan2(v, u);
    const double boundary = 1.0 + b.wobble * std::sin(b.lobes * theta + b.phase);
    const double dist = (rho - boundary) * b.radius * std::sqrt(b.aspect);
    const double z = dist / b.feather;
    if (z > 3.5) return 0.0;
    if (z < -3.5) return 1.0;
    return 0.5 * std::erfc(z / std::numbers::sqrt2);
}

} // namespace detail

/// One composite: soft-edged blobs as alpha over textured foreground and
/// background, I = alpha F + (1 - alpha) B.
inline MattingSample gen_composite(std::uint32_t size, std::uint64_t seed, std::uint64_t index = 0) {
    if (size < 64) throw DomainError("gen_composite: size must be >= 64");
    auto rng = seeded_rng(seed, 0xA1FA0000ull + index);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
    const std::uint32_t cells[] = {4, 8, 16};

    MattingSample m;
    m.foreground = detail::value_noise_texture(size, rng, range(0.35, 0.95), range(0.05, 0.25), cells[rng() % 3]);
    m.background = detail::value_noise_texture(size, rng, range(0.05, 0.65), range(0.05, 0.25), cells[rng() % 3]);

    const int shapes = 1 + int(rng() % 3);
    std::vector<detail::Blob> blobs;
    for (int k = 0; k < shapes; ++k) {
        detail::Blob b;
        b.cx = range(0.2, 0.8) * size;
        b.cy = range(0.2, 0.8) * size;
        b.radius = range(0.12, 0.3) * size;
        b.aspect = range(0.6, 1.0);
        b.rotation = range(0.0, std::numbers::pi);
        b.wobble = range(0.0, 0.2);
        b.lobes = 2 + int(rng() % 5);
        b.phase = range(0.0, 2.0 * std::numbers::pi);
        b.feather = range(0.5, 3.0);
        blobs.push_back(b);
    }
    m.alpha = Raster(size, size);
    for (std::uint32_t y = 0; y < size; ++y)
        for (std::uint32_t x = 0; x < size; ++x) {
            double a = 0.0;
            for (const auto& b : blobs) a = std::max(a, detail::blob_alpha(b, x + 0.5, y + 0.5));
            m.alpha.at(x, y) = float(a);
        }
    m.image = Raster(size, size);
    for (std::size_t i = 0; i < m.image.data.size(); ++i) {
        const float a = m.alpha.data[i];
        m.image.data[i] = a * m.foreground.data[i] + (1.0f - a) * m.background.data[i];
    }
    return m;
}

inline std::vector<MattingSample> gen_composites(std::size_t n, std::uint32_t size, std::uint64_t seed) {
    if (n == 0) throw DomainError("gen_composites: n must be >= 1");
    std::vector<MattingSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(gen_composite(size, seed, i));
    return out;
}

inline constexpr std::uint32_t kTrainPatchSize = 15;
inline constexpr double kTrainPatchGeometricP = 1.0 / 6.0;

/// Random user map for training: L ~ Geometric(1/6) patches of 15x15 placed
/// uniformly, each labelled from the ground truth. L = 0 gives an empty map.
inline Raster gen_train_usermap(const Raster& gt_alpha, std::mt19937_64& rng) {
    Raster u(gt_alpha.width, gt_alpha.height, 1, kCodeUnknown);
    if (gt_alpha.width < kTrainPatchSize || gt_alpha.height < kTrainPatchSize) return u;
    std::geometric_distribution<int> count(kTrainPatchGeometricP);
    std::uniform_int_distribution<std::uint32_t> px(0, gt_alpha.width - kTrainPatchSize);
    std::uniform_int_distribution<std::uint32_t> py(0, gt_alpha.height - kTrainPatchSize);
    const int patches = count(rng);
    for (int k = 0; k < patches; ++k) {
        const std::uint32_t x0 = px(rng), y0 = py(rng);
        const PixelRect rect{x0, y0, x0 + kTrainPatchSize, y0 + kTrainPatchSize};
        fill_rect(u, rect, label_code(classify_patch(gt_alpha, rect)));
    }
    return u;
}

inline Raster gen_train_usermap(const Raster& gt_alpha, std::uint64_t seed) {
    auto rng = seeded_rng(seed, 0x05E4);
    return gen_train_usermap(gt_alpha, rng);
}

/// Three-code trimap from ground truth: fg where alpha == 1, bg where
/// alpha == 0, transition elsewhere. Codes follow the user-map convention.
inline Raster trimap_from_alpha(const Raster& gt_alpha) {
    Raster t(gt_alpha.width, gt_alpha.height);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        const float a = gt_alpha.data[i];
        t.data[i] = a >= 1.0f ? kCodeForeground : (a <= 0.0f ? kCodeBackground : kCodeTransition);
    }
    return t;
}

} // namespace dugm
