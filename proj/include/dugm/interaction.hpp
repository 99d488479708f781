#pragma once

// Epistemic-uncertainty-guided interaction: grid proposals over the fused
// epistemic map, user-map labelling, a simulated oracle user, and the round
// loop that re-predicts and fuses.

#include <dugm/fusion.hpp>
#include <dugm/nig.hpp>
#include <dugm/usermap.hpp>

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dugm {

struct InteractionConfig {
    std::uint32_t grid = 16;       ///< K: the epistemic map is split into K x K cells
    std::size_t top_n = 10;        ///< N: maximum proposals per round
    double threshold_scale = 1.0;  ///< t = threshold_scale * mean cell uncertainty
};

struct PatchGrid {
    std::uint32_t k = 0;
    std::vector<double> means;     ///< row-major K x K
    std::vector<PixelRect> cells;  ///< pixel bounds per cell

    double mean_of_means() const {
        return means.empty() ? 0.0 : std::accumulate(means.begin(), means.end(), 0.0) / double(means.size());
    }
};

/// K x K partition of the raster; the last row and column absorb remainders.
inline PatchGrid patch_means(const Raster& values, std::uint32_t k) {
    if (k == 0) throw DomainError("patch_means: grid size must be >= 1");
    if (k > values.width || k > values.height) throw DomainError("patch_means: grid larger than raster");
    PatchGrid g;
    g.k = k;
    const std::uint32_t cw = values.width / k, ch = values.height / k;
    for (std::uint32_t r = 0; r < k; ++r)
        for (std::uint32_t c = 0; c < k; ++c) {
            PixelRect rect{c * cw, r * ch, c + 1 == k ? values.width : (c + 1) * cw,
                           r + 1 == k ? values.height : (r + 1) * ch};
            double sum = 0.0;
            for (std::uint32_t y = rect.y0; y < rect.y1; ++y)
                for (std::uint32_t x = rect.x0; x < rect.x1; ++x) sum += values.at(x, y);
            g.means.push_back(sum / double((rect.x1 - rect.x0) * (rect.y1 - rect.y0)));
            g.cells.push_back(rect);
        }
    return g;
}

struct PatchProposal {
    std::uint32_t grid_row = 0;
    std::uint32_t grid_col = 0;
    PixelRect rect;
    double mean_uncertainty = 0.0;

    friend bool operator==(const PatchProposal&, const PatchProposal&) = default;
};

/// Cells with mean > t, highest first (ties: lower row-major index), at most N.
inline std::vector<PatchProposal> propose(const PatchGrid& grid, double t, std::size_t n) {
    if (t < 0.0) throw DomainError("propose: threshold must be non-negative");
    if (n == 0) throw DomainError("propose: N must be >= 1");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < grid.means.size(); ++i)
        if (grid.means[i] > t) idx.push_back(i);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return grid.means[a] > grid.means[b]; });
    if (idx.size() > n) idx.resize(n);
    std::vector<PatchProposal> out;
    for (std::size_t i : idx)
        out.push_back({std::uint32_t(i / grid.k), std::uint32_t(i % grid.k), grid.cells[i], grid.means[i]});
    return out;
}

inline std::vector<PatchProposal> propose_from_map(const NIGMap& fused, const InteractionConfig& cfg) {
    const PatchGrid grid = patch_means(uncertainty_maps(fused).epistemic, cfg.grid);
    return propose(grid, cfg.threshold_scale * grid.mean_of_means(), cfg.top_n);
}

inline Raster apply_label(Raster user_map, const PatchProposal& p, Label label) {
    if (!p.rect.inside(user_map)) throw DimensionError("apply_label: proposal outside the user map");
    fill_rect(user_map, p.rect, label_code(label));
    return user_map;
}

inline Label oracle_label(const Raster& gt_alpha, const PatchProposal& p) {
    if (!p.rect.inside(gt_alpha)) throw DimensionError("oracle_label: proposal outside the ground truth");
    return classify_patch(gt_alpha, p.rect, kOracleDelta);
}

using Predictor = std::function<NIGMap(const Raster& image, const Raster& user_map)>;

struct LabelledProposal {
    PatchProposal proposal;
    Label label;
};

struct InteractionSession {
    Raster image;
    std::optional<Raster> gt_alpha;
    Raster user_map;
    std::vector<NIGMap> history;
    NIGMap fused;
    std::size_t round = 0;
    InteractionConfig config;
    std::vector<PatchProposal> proposals; ///< proposals on the current fused map
};

inline NIGMap checked_predict(const Predictor& predictor, const Raster& image, const Raster& user_map) {
    NIGMap m = predictor(image, user_map);
    if (m.width() != image.width || m.height() != image.height)
        throw DimensionError("predictor returned a map of the wrong size");
    return m;
}

/// Round 0: predict with an empty user map.
inline InteractionSession start_session(Raster image, std::optional<Raster> gt_alpha, const Predictor& predictor,
                                        const InteractionConfig& cfg = {}) {
    if (gt_alpha) require_same_extent(image, *gt_alpha, "start_session");
    InteractionSession s;
    s.image = std::move(image);
    s.gt_alpha = std::move(gt_alpha);
    s.user_map = Raster(s.image.width, s.image.height, 1, kCodeUnknown);
    s.config = cfg;
    s.history.push_back(checked_predict(predictor, s.image, s.user_map));
    s.fused = s.history.front();
    s.proposals = propose_from_map(s.fused, cfg);
    return s;
}

/// Applies the labels, re-predicts with the updated user map, appends to the
/// history, re-fuses, and proposes on the new fused map.
inline InteractionSession run_round(InteractionSession s, const Predictor& predictor,
                                    const std::vector<LabelledProposal>& labels) {
    for (const auto& lp : labels) s.user_map = apply_label(std::move(s.user_map), lp.proposal, lp.label);
    s.history.push_back(checked_predict(predictor, s.image, s.user_map));
    s.fused = fuse_fold(s.history);
    ++s.round;
    s.proposals = propose_from_map(s.fused, s.config);
    return s;
}

/// Labels every current proposal from the ground truth.
inline std::vector<LabelledProposal> oracle_labels(const InteractionSession& s) {
    if (!s.gt_alpha) throw DomainError("oracle_labels: session has no ground truth");
    std::vector<LabelledProposal> out;
    for (const auto& p : s.proposals) out.push_back({p, oracle_label(*s.gt_alpha, p)});
    return out;
}

inline double mean_of(const Raster& r) {
    double s = 0.0;
    for (float v : r.data) s += v;
    return r.data.empty() ? 0.0 : s / double(r.data.size());
}

inline std::string proposal_id(std::size_t round, std::size_t index) {
    return "r" + std::to_string(round) + "-p" + std::to_string(index);
}

// ---------------------------------------------------------------------------
// Session documents: rasters go to FRAS files next to session.json.

inline nlohmann::json proposal_json(const PatchProposal& p, const std::string& id) {
    return {{"id", id},
            {"grid_row", p.grid_row},
            {"grid_col", p.grid_col},
            {"x0", p.rect.x0},
            {"y0", p.rect.y0},
            {"x1", p.rect.x1},
            {"y1", p.rect.y1},
            {"mean_uncertainty", p.mean_uncertainty}};
}

inline PatchProposal proposal_from_json(const nlohmann::json& j) {
    PatchProposal p;
    p.grid_row = j.at("grid_row");
    p.grid_col = j.at("grid_col");
    p.rect = {j.at("x0"), j.at("y0"), j.at("x1"), j.at("y1")};
    p.mean_uncertainty = j.at("mean_uncertainty");
    return p;
}

inline nlohmann::json save_nig_map(const NIGMap& m, const std::filesystem::path& dir, const std::string& stem) {
    nlohmann::json j;
    const std::pair<const char*, const Raster*> parts[] = {
        {"gamma", &m.gamma}, {"omega", &m.omega}, {"alpha", &m.alpha}, {"beta", &m.beta}};
    for (const auto& [name, raster] : parts) {
        const std::string file = stem + "_" + name + ".fras";
        save_fras(*raster, dir / file);
        j[name] = file;
    }
    return j;
}

inline NIGMap load_nig_map(const nlohmann::json& j, const std::filesystem::path& dir) {
    NIGMap m;
    m.gamma = load_fras(dir / j.at("gamma").get<std::string>());
    m.omega = load_fras(dir / j.at("omega").get<std::string>());
    m.alpha = load_fras(dir / j.at("alpha").get<std::string>());
    m.beta = load_fras(dir / j.at("beta").get<std::string>());
    m.validate();
    return m;
}

/// Writes session.json plus FRAS rasters into dir.
inline void save_session(const InteractionSession& s, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["format"] = "dugm-session";
    j["version"] = 1;
    j["round"] = s.round;
    j["width"] = s.image.width;
    j["height"] = s.image.height;
    j["config"] = {{"grid", s.config.grid}, {"top_n", s.config.top_n}, {"threshold_scale", s.config.threshold_scale}};
    save_fras(s.image, dir / "image.fras");
    j["image"] = "image.fras";
    save_fras(s.user_map, dir / "user_map.fras");
    j["user_map"] = "user_map.fras";
    if (s.gt_alpha) {
        save_fras(*s.gt_alpha, dir / "gt_alpha.fras");
        j["gt_alpha"] = "gt_alpha.fras";
    }
    j["fused"] = save_nig_map(s.fused, dir, "fused");
    j["history"] = nlohmann::json::array();
    for (std::size_t h = 0; h < s.history.size(); ++h)
        j["history"].push_back(save_nig_map(s.history[h], dir, "history" + std::to_string(h)));
    j["proposals"] = nlohmann::json::array();
    for (std::size_t i = 0; i < s.proposals.size(); ++i)
        j["proposals"].push_back(proposal_json(s.proposals[i], proposal_id(s.round, i)));
    detail::write_file(dir / "session.json", j.dump(2) + "\n");
}

inline InteractionSession load_session(const std::filesystem::path& dir) {
    try {
        const auto j = nlohmann::json::parse(detail::read_file(dir / "session.json"));
        InteractionSession s;
        s.round = j.at("round");
        s.config.grid = j.at("config").at("grid");
        s.config.top_n = j.at("config").at("top_n");
        s.config.threshold_scale = j.at("config").at("threshold_scale");
        s.image = load_fras(dir / j.at("image").get<std::string>());
        s.user_map = load_fras(dir / j.at("user_map").get<std::string>());
        if (j.contains("gt_alpha")) s.gt_alpha = load_fras(dir / j.at("gt_alpha").get<std::string>());
        s.fused = load_nig_map(j.at("fused"), dir);
        for (const auto& h : j.at("history")) s.history.push_back(load_nig_map(h, dir));
        for (const auto& p : j.at("proposals")) s.proposals.push_back(proposal_from_json(p));
        if (s.history.size() != s.round + 1) throw FormatError("session: history length does not match round");
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("session.json: " + std::string(e.what()));
    }
}

} // namespace dugm
