#pragma once

// Desk-scale trainable models: an evidential regressor (conv trunk with a
// four-way NIG head, or a pointwise MLP for the cubic benchmark) and the
// small residual conv refiner used for detail refinement.

#include <dugm/checkpoint.hpp>
#include <dugm/data.hpp>
#include <dugm/nig.hpp>
#include <dugm/nn.hpp>

#include <functional>
#include <span>

namespace dugm {

enum class ModelKind { Matting, Cubic };

inline std::string_view kind_name(ModelKind k) { return k == ModelKind::Matting ? "matting" : "cubic"; }

struct ToyModel {
    ModelKind kind = ModelKind::Matting;
    std::uint32_t image_channels = 1;
    nn::ConvStack net;
    std::vector<double> theta;
    std::uint64_t seed = 0;
    std::size_t steps = 0;
    AffineTransform target_transform; ///< cubic only
};

inline constexpr std::uint32_t kTrunkChannels = 16;
inline constexpr std::uint32_t kTrunkDepth = 4;
inline constexpr double kHeadInitScale = 0.1;

/// 4 conv layers (3x3, 16 channels, ReLU) over image + user-map channels,
/// then a 1x1 layer holding the four independent linear heads.
inline ToyModel make_matting_model(std::uint64_t seed, std::uint32_t image_channels = 1) {
    std::vector<nn::ConvSpec> layers;
    layers.push_back({image_channels + 1, kTrunkChannels, 3});
    for (std::uint32_t l = 1; l < kTrunkDepth; ++l) layers.push_back({kTrunkChannels, kTrunkChannels, 3});
    layers.push_back({kTrunkChannels, 4, 1});
    ToyModel m;
    m.kind = ModelKind::Matting;
    m.image_channels = image_channels;
    m.net = nn::ConvStack(std::move(layers));
    m.theta = m.net.init_params(seed, kHeadInitScale);
    m.seed = seed;
    return m;
}

/// Pointwise MLP 1 -> hidden -> hidden -> 4, expressed as 1x1 convolutions
/// over a 1 x N row of samples.
inline ToyModel make_cubic_model(std::uint64_t seed, std::uint32_t hidden = 64) {
    ToyModel m;
    m.kind = ModelKind::Cubic;
    m.image_channels = 1;
    m.net = nn::ConvStack({{1, hidden, 1}, {hidden, hidden, 1}, {hidden, 4, 1}});
    m.theta = m.net.init_params(seed, kHeadInitScale);
    m.seed = seed;
    return m;
}

/// Sets the head layer (weights and biases) to zero.
inline void zero_head(ToyModel& m) {
    const std::size_t last = m.net.layers().size() - 1;
    std::fill(m.theta.begin() + std::ptrdiff_t(m.net.offset(last)), m.theta.end(), 0.0);
}

template <class T>
nn::Tensor<T> matting_input(const Raster& image, const Raster& user_map) {
    require_same_extent(image, user_map, "matting input");
    if (user_map.channels != 1) throw DimensionError("user map must have one channel");
    nn::Tensor<T> x(image.channels + 1, image.height, image.width);
    for (std::uint32_t c = 0; c < image.channels; ++c) {
        auto p = image.plane(c);
        std::copy(p.begin(), p.end(), x.channel(c));
    }
    std::copy(user_map.data.begin(), user_map.data.end(), x.channel(image.channels));
    return x;
}

inline NIGMap raw_to_map(const nn::Tensor<float>& raw) {
    NIGMap m(raw.width, raw.height);
    for (std::size_t i = 0; i < m.pixels(); ++i)
        m.set(i, activate({raw.values[i], raw.values[raw.plane() + i], raw.values[2 * raw.plane() + i],
                           raw.values[3 * raw.plane() + i]}));
    return m;
}

/// Inference (float path): NIG parameters per pixel for image + user map.
inline NIGMap forward(const ToyModel& model, const Raster& image, const Raster& user_map) {
    if (model.kind != ModelKind::Matting) throw DomainError("forward: not a matting model");
    if (image.channels != model.image_channels)
        throw DimensionError("forward: model expects " + std::to_string(model.image_channels) + " image channels");
    const auto theta = nn::cast_params<float>(std::span<const double>(model.theta));
    return raw_to_map(model.net.forward<float>(matting_input<float>(image, user_map), theta));
}

/// Cubic model predictions at scalar inputs (double path).
inline std::vector<NIGParams> predict_points(const ToyModel& model, std::span<const double> xs) {
    if (model.kind != ModelKind::Cubic) throw DomainError("predict_points: not a cubic model");
    nn::Tensor<double> x(1, 1, std::uint32_t(xs.size()));
    std::copy(xs.begin(), xs.end(), x.values.begin());
    const auto raw = model.net.forward<double>(x, model.theta);
    std::vector<NIGParams> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        out[i] = activate({raw.values[i], raw.values[raw.plane() + i], raw.values[2 * raw.plane() + i],
                           raw.values[3 * raw.plane() + i]});
    return out;
}

/// Optional extra matte loss on gamma (e.g. a Laplacian term). Returns the
/// loss and accumulates d loss / d gamma into grad_gamma.
using MatteLoss =
    std::function<double(std::span<const double> gamma, std::span<const double> target, std::span<double> grad_gamma)>;

/// Mean NIG total loss over all outputs of `net` for input x against
/// targets; accumulates the gradient w.r.t. theta into grad (if non-empty).
inline double evidential_loss(const nn::ConvStack& net, std::span<const double> theta, const nn::Tensor<double>& x,
                              std::span<const double> targets, double lambda, std::span<double> grad,
                              const MatteLoss& matte_loss = {}) {
    nn::ForwardCache cache;
    const nn::Tensor<double> raw = net.forward_train(x, theta, cache);
    const std::size_t n = raw.plane();
    if (targets.size() != n) throw DimensionError("evidential_loss: target count mismatch");
    nn::Tensor<double> graw(4, raw.height, raw.width);
    std::vector<double> gamma(n), ggamma(n, 0.0);
    double loss = 0.0;
    const double inv_n = 1.0 / double(n);
    for (std::size_t i = 0; i < n; ++i) {
        const RawHead r{raw.values[i], raw.values[n + i], raw.values[2 * n + i], raw.values[3 * n + i]};
        const NIGParams p = activate(r);
        gamma[i] = p.gamma;
        loss += total_loss(targets[i], p, lambda);
        if (!grad.empty()) {
            NIGGradient g = total_loss_grad(targets[i], p, lambda);
            for (double& v : g) v *= inv_n;
            const NIGGradient gr = activate_backward(r, g);
            for (int k = 0; k < 4; ++k) graw.values[k * n + i] = gr[std::size_t(k)];
        }
    }
    loss *= inv_n;
    if (matte_loss) {
        loss += matte_loss(gamma, targets, ggamma);
        if (!grad.empty())
            for (std::size_t i = 0; i < n; ++i) {
                const double s = sigmoid(raw.values[i]);
                graw.values[i] += ggamma[i] * s * (1.0 - s);
            }
    }
    if (!grad.empty()) net.backward(cache, graw, theta, grad);
    return loss;
}

// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kRefineWindow = 32;
inline constexpr std::uint32_t kRefinerChannels = 8;

/// Residual refiner: refined = clamp(coarse + net(coarse, image), 0, 1).
/// The last layer starts at zero, so an untrained refiner is the identity.
struct Refiner {
    std::uint32_t image_channels = 1;
    nn::ConvStack net;
    std::vector<double> phi;
    std::uint64_t seed = 0;
    std::size_t steps = 0;
    bool trained = false;

    bool ready() const { return trained; }

    /// Refines one window; coarse is 1 channel, image has image_channels.
    Raster operator()(const Raster& coarse, const Raster& image) const {
        const auto theta = nn::cast_params<float>(std::span<const double>(phi));
        const auto residual = net.forward<float>(matting_input<float>(image, coarse), theta);
        Raster out(coarse.width, coarse.height);
        for (std::size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = std::clamp(coarse.data[i] + residual.values[i], 0.0f, 1.0f);
        return out;
    }
};

inline Refiner make_refiner(std::uint64_t seed, std::uint32_t image_channels = 1) {
    Refiner r;
    r.image_channels = image_channels;
    r.net = nn::ConvStack({{image_channels + 1, kRefinerChannels, 3},
                           {kRefinerChannels, kRefinerChannels, 3},
                           {kRefinerChannels, 1, 3}});
    r.phi = r.net.init_params(seed, 0.0);
    r.seed = seed;
    return r;
}

// ---------------------------------------------------------------------------
// Checkpoint conversion

inline std::vector<NamedTensor> stack_tensors(const nn::ConvStack& net, std::span<const double> params) {
    std::vector<NamedTensor> out;
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        const auto& s = net.layers()[l];
        const auto begin = params.begin() + std::ptrdiff_t(net.offset(l));
        const auto mid = begin + std::ptrdiff_t(s.weight_count());
        out.push_back({"layer" + std::to_string(l) + ".weight", {s.out, s.in, s.kernel, s.kernel}, {begin, mid}});
        out.push_back({"layer" + std::to_string(l) + ".bias", {s.out}, {mid, mid + s.out}});
    }
    return out;
}

inline nlohmann::json layers_json(const nn::ConvStack& net) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : net.layers()) j.push_back({s.in, s.out, s.kernel});
    return j;
}

inline nn::ConvStack stack_from_json(const nlohmann::json& j) {
    std::vector<nn::ConvSpec> layers;
    for (const auto& l : j) layers.push_back({l.at(0).get<std::uint32_t>(), l.at(1).get<std::uint32_t>(),
                                              l.at(2).get<std::uint32_t>()});
    return nn::ConvStack(std::move(layers));
}

inline std::vector<double> params_from_checkpoint(const nn::ConvStack& net, const Checkpoint& c) {
    std::vector<double> params;
    params.reserve(net.param_count());
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        for (const char* part : {".weight", ".bias"}) {
            const auto& t = c.tensor("layer" + std::to_string(l) + part);
            params.insert(params.end(), t.values.begin(), t.values.end());
        }
    }
    if (params.size() != net.param_count()) throw FormatError("checkpoint: parameter count mismatch");
    return params;
}

inline void save_model(const ToyModel& m, const std::filesystem::path& prefix) {
    nlohmann::json manifest{{"format", "dugm-checkpoint"},
                            {"version", 1},
                            {"role", "evidential"},
                            {"kind", kind_name(m.kind)},
                            {"image_channels", m.image_channels},
                            {"layers", layers_json(m.net)},
                            {"seed", m.seed},
                            {"steps", m.steps},
                            {"target_transform", {{"scale", m.target_transform.scale},
                                                  {"offset", m.target_transform.offset}}}};
    save_checkpoint(prefix, stack_tensors(m.net, m.theta), manifest);
}

inline ToyModel load_model(const std::filesystem::path& prefix) {
    const Checkpoint c = load_checkpoint(prefix);
    try {
        if (c.manifest.at("role") != "evidential") throw FormatError("checkpoint is not an evidential model");
        ToyModel m;
        m.kind = c.manifest.at("kind") == "cubic" ? ModelKind::Cubic : ModelKind::Matting;
        m.image_channels = c.manifest.at("image_channels");
        m.net = stack_from_json(c.manifest.at("layers"));
        m.theta = params_from_checkpoint(m.net, c);
        m.seed = c.manifest.at("seed");
        m.steps = c.manifest.at("steps");
        m.target_transform = {c.manifest.at("target_transform").at("scale"),
                              c.manifest.at("target_transform").at("offset")};
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint manifest: " + std::string(e.what()));
    }
}

inline void save_refiner(const Refiner& r, const std::filesystem::path& prefix) {
    nlohmann::json manifest{{"format", "dugm-checkpoint"}, {"version", 1},          {"role", "refiner"},
                            {"image_channels", r.image_channels}, {"layers", layers_json(r.net)}, {"seed", r.seed},
                            {"steps", r.steps},                 {"trained", r.trained}};
    save_checkpoint(prefix, stack_tensors(r.net, r.phi), manifest);
}

inline Refiner load_refiner(const std::filesystem::path& prefix) {
    const Checkpoint c = load_checkpoint(prefix);
    try {
        if (c.manifest.at("role") != "refiner") throw FormatError("checkpoint is not a refiner");
        Refiner r;
        r.image_channels = c.manifest.at("image_channels");
        r.net = stack_from_json(c.manifest.at("layers"));
        r.phi = params_from_checkpoint(r.net, c);
        r.seed = c.manifest.at("seed");
        r.steps = c.manifest.at("steps");
        r.trained = c.manifest.at("trained");
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint manifest: " + std::string(e.what()));
    }
}

/// FNV-1a over the raw bytes of a parameter vector.
inline std::uint64_t param_checksum(std::span<const double> params) {
    std::uint64_t h = 1469598103934665603ull;
    for (double v : params) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffu;
            h *= 1099511628211ull;
        }
    }
    return h;
}

} // namespace dugm
