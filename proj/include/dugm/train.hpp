#pragma once

// Two-stage optimization. Stage 1 fits the evidential model with the NIG
// loss on fresh synthetic data and random user maps; stage 2 freezes it and
// fits the refiner on windows picked by the aleatoric selection.

#include <dugm/adam.hpp>
#include <dugm/data.hpp>
#include <dugm/interaction.hpp>
#include <dugm/models.hpp>
#include <dugm/refine.hpp>

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace dugm {

using StepCallback = std::function<void(std::size_t step, double loss)>;

struct Stage1Config {
    std::size_t steps = 2000;
    std::size_t batch = 1;
    double lr = 1e-3;
    double lambda = kDefaultLambda;
    std::uint64_t seed = 1;
    std::uint32_t image_size = 64;
    MatteLoss matte_loss; ///< empty: no extra matte term
    StepCallback on_step;
};

namespace detail {

inline void check_loss(double loss, std::size_t step, const char* stage) {
    if (!std::isfinite(loss))
        throw TrainingError(std::string(stage) + ": non-finite loss at step " + std::to_string(step) +
                            " (lower the learning rate or check the inputs)");
}

} // namespace detail

/// One stage-1 training example: composite, fresh random user map, and the
/// model input built from them.
struct Stage1Example {
    MattingSample sample;
    Raster user_map;
};

inline Stage1Example stage1_example(std::uint64_t seed, std::size_t index, std::uint32_t size) {
    Stage1Example e{gen_composite(size, seed, index), {}};
    auto rng = seeded_rng(seed, 0x05E40000ull + index);
    e.user_map = gen_train_usermap(e.sample.alpha, rng);
    return e;
}

/// Mean evidential loss of a matting model on one example; accumulates the
/// parameter gradient when grad is non-empty.
inline double matting_loss(const ToyModel& model, std::span<const double> theta, const Stage1Example& e,
                           double lambda, std::span<double> grad, const MatteLoss& matte_loss = {}) {
    const auto x = matting_input<double>(e.sample.image, e.user_map);
    std::vector<double> targets(e.sample.alpha.data.begin(), e.sample.alpha.data.end());
    return evidential_loss(model.net, theta, x, targets, lambda, grad, matte_loss);
}

inline ToyModel train_stage1(const Stage1Config& cfg, std::uint32_t image_channels = 1) {
    ToyModel model = make_matting_model(cfg.seed, image_channels);
    AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.steps};
    AdamState state(model.theta.size());
    std::vector<double> grad(model.theta.size());
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss = 0.0;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const auto e = stage1_example(cfg.seed, step * cfg.batch + b, cfg.image_size);
            loss += matting_loss(model, model.theta, e, cfg.lambda, grad, cfg.matte_loss);
        }
        loss /= double(cfg.batch);
        if (cfg.batch > 1)
            for (double& g : grad) g /= double(cfg.batch);
        detail::check_loss(loss, step, "stage 1");
        adam_cosine_step(adam, state, model.theta, grad, step);
        if (cfg.on_step) cfg.on_step(step, loss);
    }
    model.steps = cfg.steps;
    return model;
}

struct CubicConfig {
    std::size_t steps = 5000;
    std::size_t batch = 128;
    double lr = 1e-3;
    double lambda = kDefaultLambda;
    std::uint64_t seed = 1;
    std::uint32_t hidden = 64;
    StepCallback on_step;
};

inline double cubic_loss(const ToyModel& model, std::span<const double> theta, std::span<const double> xs,
                         std::span<const double> ys, double lambda, std::span<double> grad) {
    nn::Tensor<double> x(1, 1, std::uint32_t(xs.size()));
    std::copy(xs.begin(), xs.end(), x.values.begin());
    return evidential_loss(model.net, theta, x, ys, lambda, grad);
}

/// Fits the cubic MLP on minibatches drawn with replacement from data.
inline ToyModel train_stage1_cubic(const CubicConfig& cfg, const CubicDataset& data) {
    ToyModel model = make_cubic_model(cfg.seed, cfg.hidden);
    model.target_transform = data.transform;
    AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.steps};
    AdamState state(model.theta.size());
    std::vector<double> grad(model.theta.size());
    auto rng = seeded_rng(cfg.seed, 0xBA7C);
    std::uniform_int_distribution<std::size_t> pick(0, data.x.size() - 1);
    const std::size_t batch = std::min(cfg.batch, data.x.size());
    std::vector<double> bx(batch), by(batch);
    // lambda is stated in raw target units; the regularizer scales with |y - gamma|.
    const double lambda = cfg.lambda / data.transform.scale;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t i = batch == data.x.size() ? b : pick(rng);
            bx[b] = data.x[i];
            by[b] = data.y[i];
        }
        std::fill(grad.begin(), grad.end(), 0.0);
        const double loss = cubic_loss(model, model.theta, bx, by, lambda, grad);
        detail::check_loss(loss, step, "stage 1 (cubic)");
        adam_cosine_step(adam, state, model.theta, grad, step);
        if (cfg.on_step) cfg.on_step(step, loss);
    }
    model.steps = cfg.steps;
    return model;
}

// ---------------------------------------------------------------------------
// Stage 2

/// Forward-difference gradient magnitude with replicate border.
inline std::vector<double> forward_gradient_magnitude(std::span<const double> v, std::uint32_t w, std::uint32_t h) {
    std::vector<double> mag(v.size());
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            const std::size_t i = std::size_t(y) * w + x;
            const double gx = (x + 1 < w ? v[i + 1] : v[i]) - v[i];
            const double gy = (y + 1 < h ? v[i + w] : v[i]) - v[i];
            mag[i] = std::sqrt(gx * gx + gy * gy);
        }
    return mag;
}

/// mean |y - r| + mean |grad y - grad r| over one window.
inline double stage2_window_loss(std::span<const double> refined, std::span<const double> gt, std::uint32_t w,
                                 std::uint32_t h) {
    const auto gr = forward_gradient_magnitude(refined, w, h);
    const auto gg = forward_gradient_magnitude(gt, w, h);
    double l1 = 0.0, lg = 0.0;
    for (std::size_t i = 0; i < refined.size(); ++i) {
        l1 += std::abs(gt[i] - refined[i]);
        lg += std::abs(gg[i] - gr[i]);
    }
    return (l1 + lg) / double(refined.size());
}

/// d stage2_window_loss / d refined.
inline std::vector<double> stage2_window_grad(std::span<const double> r, std::span<const double> gt, std::uint32_t w,
                                              std::uint32_t h) {
    const double inv_n = 1.0 / double(r.size());
    const auto gg = forward_gradient_magnitude(gt, w, h);
    std::vector<double> g(r.size(), 0.0);
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            const std::size_t i = std::size_t(y) * w + x;
            const double d = r[i] - gt[i];
            g[i] += inv_n * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
            const bool has_x = x + 1 < w, has_y = y + 1 < h;
            const double gx = has_x ? r[i + 1] - r[i] : 0.0;
            const double gy = has_y ? r[i + w] - r[i] : 0.0;
            const double mag = std::sqrt(gx * gx + gy * gy);
            if (mag == 0.0) continue;
            const double dm = mag - gg[i];
            const double outer = inv_n * (dm > 0.0 ? 1.0 : (dm < 0.0 ? -1.0 : 0.0));
            if (has_x) {
                g[i + 1] += outer * gx / mag;
                g[i] -= outer * gx / mag;
            }
            if (has_y) {
                g[i + w] += outer * gy / mag;
                g[i] -= outer * gy / mag;
            }
        }
    return g;
}

/// A training window for the refiner: coarse matte, image, ground truth.
struct RefineWindow {
    Raster coarse, image, gt;
};

/// Double-precision refiner pass over one window; returns the stage-2 loss
/// and accumulates d loss / d phi into grad when non-empty.
inline double refiner_window_loss(const Refiner& r, std::span<const double> phi, const RefineWindow& win,
                                  std::span<double> grad) {
    nn::ForwardCache cache;
    const auto x = matting_input<double>(win.image, win.coarse);
    const auto residual = r.net.forward_train(x, phi, cache);
    const std::size_t n = win.coarse.data.size();
    std::vector<double> refined(n), gt(win.gt.data.begin(), win.gt.data.end());
    std::vector<std::uint8_t> pass(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double v = double(win.coarse.data[i]) + residual.values[i];
        refined[i] = std::clamp(v, 0.0, 1.0);
        pass[i] = v > 0.0 && v < 1.0;
    }
    const double loss = stage2_window_loss(refined, gt, win.coarse.width, win.coarse.height);
    if (!grad.empty()) {
        const auto gref = stage2_window_grad(refined, gt, win.coarse.width, win.coarse.height);
        nn::Tensor<double> gout(1, residual.height, residual.width);
        for (std::size_t i = 0; i < n; ++i) gout.values[i] = pass[i] ? gref[i] : 0.0;
        r.net.backward(cache, gout, phi, grad);
    }
    return loss;
}

struct Stage2Config {
    std::size_t steps = 1500;
    double lr = 1e-3;
    std::uint64_t seed = 2;
    std::uint32_t image_size = 64;
    std::size_t windows_per_step = 8;
    std::size_t max_draws = 32;       ///< examples tried per step when selections come up empty
    std::size_t oracle_rounds = 1;    ///< refinement inputs are fused maps after this many oracle rounds
    StepCallback on_step;
};

/// Fused map of a simulated session: round-0 prediction plus `rounds`
/// oracle-labelled rounds. This is the map the refinement pass sees.
inline NIGMap oracle_fused_map(const ToyModel& model, const MattingSample& sample, std::size_t rounds,
                               const InteractionConfig& ic = {}) {
    const Predictor predict = [&model](const Raster& image, const Raster& user_map) {
        return forward(model, image, user_map);
    };
    InteractionSession s = start_session(sample.image, sample.alpha, predict, ic);
    for (std::size_t r = 0; r < rounds; ++r) s = run_round(std::move(s), predict, oracle_labels(s));
    return s.fused;
}

/// Windows the refinement pass would visit for one prediction, paired with
/// ground truth. Returns nothing when the selection is empty or degenerate.
inline std::vector<RefineWindow> selection_windows(const NIGMap& m, const Raster& image, const Raster& gt,
                                                   std::uint64_t sample_seed, Raster* coarse_out = nullptr) {
    const Raster coarse = sample_coarse(m, sample_seed);
    if (coarse_out) *coarse_out = coarse;
    const UncertaintyMaps u = uncertainty_maps(m);
    Raster mask;
    try {
        mask = select_pixels(u.aleatoric, u.var_sigma2);
    } catch (const DomainError&) {
        return {};
    }
    std::vector<RefineWindow> out;
    for (const PixelPos& c : decimate_selection(mask)) {
        const PixelRect w = window_at(c, coarse.width, coarse.height);
        out.push_back({crop(coarse, w), crop(image, w), crop(gt, w)});
    }
    return out;
}

/// Fits the refiner with theta frozen; `frozen` is only read.
inline Refiner train_stage2(const Stage2Config& cfg, const ToyModel& frozen) {
    Refiner r = make_refiner(cfg.seed, frozen.image_channels);
    AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.steps};
    AdamState state(r.phi.size());
    std::vector<double> grad(r.phi.size());
    auto rng = seeded_rng(cfg.seed, 0x57A6E2);
    std::uint64_t next_example = 0;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::vector<RefineWindow> windows;
        for (std::size_t draw = 0; draw < cfg.max_draws && windows.empty(); ++draw) {
            const std::uint64_t index = next_example++;
            const MattingSample sample = gen_composite(cfg.image_size, cfg.seed, 0x100000ull + index);
            const NIGMap m = oracle_fused_map(frozen, sample, cfg.oracle_rounds);
            windows = selection_windows(m, sample.image, sample.alpha, cfg.seed * 7919 + index);
        }
        std::shuffle(windows.begin(), windows.end(), rng);
        if (windows.size() > cfg.windows_per_step) windows.resize(cfg.windows_per_step);
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss = 0.0;
        if (!windows.empty()) {
            std::vector<double> g(r.phi.size());
            for (const auto& w : windows) {
                std::fill(g.begin(), g.end(), 0.0);
                loss += refiner_window_loss(r, r.phi, w, g);
                for (std::size_t k = 0; k < g.size(); ++k) grad[k] += g[k] / double(windows.size());
            }
            loss /= double(windows.size());
        }
        detail::check_loss(loss, step, "stage 2");
        adam_cosine_step(adam, state, r.phi, grad, step);
        if (cfg.on_step) cfg.on_step(step, loss);
    }
    r.steps = cfg.steps;
    r.trained = true;
    return r;
}

} // namespace dugm
