#pragma once

#include <dugm/nig.hpp>

#include <algorithm>
#include <cassert>
#include <span>

namespace dugm {

/// NIG summation: omega-weighted mean, pooled evidence, and a beta that
/// absorbs the spread of the two means around the fused one.
inline NIGParams fuse_pair(const NIGParams& a, const NIGParams& b) {
    NIGParams f;
    f.omega = a.omega + b.omega;
    const double mid = 0.5 * (a.gamma + b.gamma);
    const double pull = 0.5 * (a.omega - b.omega) * (a.gamma - b.gamma) / f.omega;
    f.gamma = std::clamp(mid + pull, std::min(a.gamma, b.gamma), std::max(a.gamma, b.gamma));
    f.alpha = a.alpha + b.alpha + 0.5;
    const double da = a.gamma - f.gamma;
    const double db = b.gamma - f.gamma;
    f.beta = (a.beta + 0.5 * a.omega * da * da) + (b.beta + 0.5 * b.omega * db * db);
    return f;
}

/// Left fold of fuse_pair over the maps, per pixel, in list order.
inline NIGMap fuse_fold(std::span<const NIGMap> maps) {
    if (maps.empty()) throw DimensionError("fuse_fold: empty map list");
    for (const NIGMap& m : maps)
        if (!m.same_extent(maps.front())) throw DimensionError("fuse_fold: map dimensions differ");
    if (maps.size() == 1) return maps.front();

    NIGMap out(maps.front().width(), maps.front().height());
    for (std::size_t i = 0; i < out.pixels(); ++i) {
        NIGParams acc = maps.front().at(i);
        for (std::size_t m = 1; m < maps.size(); ++m) acc = fuse_pair(acc, maps[m].at(i));
        assert(acc.gamma >= 0.0 && acc.gamma <= 1.0);
        out.set(i, acc);
    }
    return out;
}

} // namespace dugm
