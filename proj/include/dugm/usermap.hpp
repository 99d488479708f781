#pragma once

#include <dugm/raster.hpp>

#include <optional>
#include <string>
#include <string_view>

namespace dugm {

enum class Label { Foreground, Background, Transition };

inline constexpr float kCodeForeground = 1.0f;
inline constexpr float kCodeBackground = -1.0f;
inline constexpr float kCodeTransition = 0.5f;
inline constexpr float kCodeUnknown = 0.0f;

/// Tolerance deciding whether a ground-truth patch is pure foreground/background.
inline constexpr double kOracleDelta = 0.05;

inline float label_code(Label l) {
    switch (l) {
    case Label::Foreground: return kCodeForeground;
    case Label::Background: return kCodeBackground;
    case Label::Transition: return kCodeTransition;
    }
    return kCodeUnknown;
}

inline std::string_view label_name(Label l) {
    switch (l) {
    case Label::Foreground: return "fg";
    case Label::Background: return "bg";
    case Label::Transition: return "transition";
    }
    return "?";
}

inline std::optional<Label> parse_label(std::string_view s) {
    if (s == "fg" || s == "foreground") return Label::Foreground;
    if (s == "bg" || s == "background") return Label::Background;
    if (s == "transition") return Label::Transition;
    return std::nullopt;
}

inline bool is_user_code(float v) {
    return v == kCodeForeground || v == kCodeBackground || v == kCodeTransition || v == kCodeUnknown;
}

/// Half-open pixel rectangle.
struct PixelRect {
    std::uint32_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    bool inside(const Raster& r) const { return x0 < x1 && y0 < y1 && x1 <= r.width && y1 <= r.height; }
    bool contains(std::uint32_t x, std::uint32_t y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
    friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

/// fg when every alpha >= 1 - delta, bg when every alpha <= delta, else transition.
inline Label classify_patch(const Raster& gt_alpha, const PixelRect& rect, double delta = kOracleDelta) {
    bool all_fg = true, all_bg = true;
    for (std::uint32_t y = rect.y0; y < rect.y1; ++y)
        for (std::uint32_t x = rect.x0; x < rect.x1; ++x) {
            const double a = gt_alpha.at(x, y);
            all_fg = all_fg && a >= 1.0 - delta;
            all_bg = all_bg && a <= delta;
        }
    if (all_fg) return Label::Foreground;
    if (all_bg) return Label::Background;
    return Label::Transition;
}

inline void fill_rect(Raster& r, const PixelRect& rect, float value) {
    for (std::uint32_t y = rect.y0; y < rect.y1; ++y)
        for (std::uint32_t x = rect.x0; x < rect.x1; ++x) r.at(x, y) = value;
}

} // namespace dugm
