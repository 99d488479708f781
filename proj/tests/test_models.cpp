#include "oracles.hpp"
#include "test_support.hpp"

#include <dugm/train.hpp>

#include <gtest/gtest.h>

#include <fstream>
#include <random>

using namespace dugm;
using dugm::testing::TempDir;
using dugm::testing::worst_gradient_error;

namespace {

/// Direct zero-padded cross-correlation followed by ReLU between layers.
nn::Tensor<double> naive_stack(const std::vector<nn::ConvSpec>& layers, std::span<const double> theta,
                               const nn::Tensor<double>& x) {
    nn::Tensor<double> cur = x;
    std::size_t off = 0;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const nn::ConvSpec& s = layers[l];
        const int pad = int(s.kernel / 2);
        nn::Tensor<double> out(s.out, cur.height, cur.width);
        for (std::uint32_t o = 0; o < s.out; ++o)
            for (std::uint32_t y = 0; y < cur.height; ++y)
                for (std::uint32_t xx = 0; xx < cur.width; ++xx) {
                    double acc = theta[off + s.weight_count() + o];
                    for (std::uint32_t i = 0; i < s.in; ++i)
                        for (int ky = 0; ky < int(s.kernel); ++ky)
                            for (int kx = 0; kx < int(s.kernel); ++kx) {
                                const int sy = int(y) + ky - pad, sx = int(xx) + kx - pad;
                                if (sy < 0 || sx < 0 || sy >= int(cur.height) || sx >= int(cur.width)) continue;
                                acc += theta[off + ((o * s.in + i) * s.kernel + std::uint32_t(ky)) * s.kernel +
                                             std::uint32_t(kx)] *
                                       cur.at(i, std::uint32_t(sy), std::uint32_t(sx));
                            }
                    out.at(o, y, xx) = (l + 1 < layers.size() && acc < 0) ? 0.0 : acc;
                }
        off += s.param_count();
        cur = std::move(out);
    }
    return cur;
}

} // namespace

TEST(ConvStackTest, ForwardMatchesNaiveConvolution) {
    const std::vector<nn::ConvSpec> layers{{2, 5, 3}, {5, 3, 3}, {3, 4, 1}};
    const nn::ConvStack net(layers);
    std::vector<double> theta = net.init_params(3);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0, 0.1);
    for (double& v : theta) v += n(rng); // non-zero biases too
    nn::Tensor<double> x(2, 7, 9);
    for (double& v : x.values) v = n(rng) * 10;
    const auto a = net.forward<double>(x, theta), b = naive_stack(layers, theta, x);
    ASSERT_EQ(a.values.size(), b.values.size());
    for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-12);
}

TEST(ConvStackTest, ShapeErrors) {
    EXPECT_THROW(nn::ConvStack({{1, 2, 3}, {3, 1, 3}}), DimensionError);
    EXPECT_THROW(nn::ConvStack({{1, 2, 2}}), DimensionError);
    const nn::ConvStack net({{1, 2, 3}});
    const auto theta = net.init_params(1);
    EXPECT_THROW(net.forward<double>(nn::Tensor<double>(2, 3, 3), theta), DimensionError);
}

TEST(Gradients, MattingLossMatchesFiniteDifferences) {
    const ToyModel model = make_matting_model(11);
    const Stage1Example e = stage1_example(5, 3, 64);
    std::vector<double> grad(model.theta.size(), 0.0);
    matting_loss(model, model.theta, e, kDefaultLambda, grad);
    const auto loss = [&](const std::vector<double>& th) { return matting_loss(model, th, e, kDefaultLambda, {}); };
    EXPECT_LT(worst_gradient_error(loss, model.theta, grad, 40, 12), 1e-3);
}

TEST(Gradients, CubicLossMatchesFiniteDifferences) {
    const ToyModel model = make_cubic_model(13, 16);
    const CubicDataset d = gen_cubic(64, -4, 4, 3.0, 14);
    std::vector<double> grad(model.theta.size(), 0.0);
    cubic_loss(model, model.theta, d.x, d.y, 0.05, grad);
    const auto loss = [&](const std::vector<double>& th) { return cubic_loss(model, th, d.x, d.y, 0.05, {}); };
    EXPECT_LT(worst_gradient_error(loss, model.theta, grad, 60, 15), 1e-3);
}

TEST(Gradients, RefinerLossMatchesFiniteDifferences) {
    Refiner r = make_refiner(16);
    r.phi = r.net.init_params(16, 0.05);
    std::mt19937_64 rng(17);
    const MattingSample s = gen_composite(64, 18, 0);
    const PixelRect w{16, 16, 48, 48};
    RefineWindow win{crop(s.alpha, w), crop(s.image, w), crop(s.alpha, w)};
    std::uniform_real_distribution<float> jitter(-0.2f, 0.2f);
    for (float& v : win.coarse.data) v = std::clamp(0.5f * v + 0.25f + jitter(rng), 0.05f, 0.95f);
    std::vector<double> grad(r.phi.size(), 0.0);
    refiner_window_loss(r, r.phi, win, grad);
    const auto loss = [&](const std::vector<double>& phi) { return refiner_window_loss(r, phi, win, {}); };
    EXPECT_LT(worst_gradient_error(loss, r.phi, grad, 40, 19), 1e-3);
}

TEST(Adam, ConvergesOnQuadratic) {
    const std::vector<double> centre{1.5, -2.0, 0.25, 3.0};
    std::vector<double> p(4, 0.0), g(4);
    AdamConfig cfg{0.1, 0.9, 0.999, 1e-8, 500};
    AdamState st(4);
    for (std::size_t t = 0; t < 500; ++t) {
        for (std::size_t i = 0; i < 4; ++i) g[i] = 2 * (p[i] - centre[i]);
        adam_cosine_step(cfg, st, p, g, t);
    }
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(p[i], centre[i], 1e-4);
}

TEST(Adam, CosineScheduleEndpoints) {
    EXPECT_DOUBLE_EQ(cosine_lr(1e-3, 0, 100), 1e-3);
    EXPECT_NEAR(cosine_lr(1e-3, 50, 100), 5e-4, 1e-18);
    EXPECT_EQ(cosine_lr(1e-3, 100, 100), 0.0);
    EXPECT_EQ(cosine_lr(1e-3, 5, 0), 0.0);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    std::vector<double> p{1, 2, 3}, g(3, 0.0);
    const auto before = p;
    AdamState st(3);
    for (std::size_t t = 0; t < 10; ++t) adam_cosine_step(AdamConfig{}, st, p, g, t);
    EXPECT_EQ(p, before);
    AdamState wrong(2);
    EXPECT_THROW(adam_cosine_step(AdamConfig{}, wrong, p, g, 0), DimensionError);
}

TEST(Composites, CompositingEquationHoldsExactly) {
    for (std::uint64_t i = 0; i < 10; ++i) {
        const MattingSample s = gen_composite(64, 21, i);
        bool has_bg = false;
        for (std::size_t k = 0; k < s.image.data.size(); ++k) {
            const float a = s.alpha.data[k];
            ASSERT_GE(a, 0.0f);
            ASSERT_LE(a, 1.0f);
            ASSERT_EQ(s.image.data[k], a * s.foreground.data[k] + (1.0f - a) * s.background.data[k]);
            if (a == 1.0f) {
                ASSERT_EQ(s.image.data[k], s.foreground.data[k]);
            }
            if (a == 0.0f) {
                has_bg = true;
                ASSERT_EQ(s.image.data[k], s.background.data[k]);
            }
        }
        EXPECT_TRUE(has_bg);
    }
}

TEST(Composites, DeterministicAndIndexed) {
    EXPECT_EQ(gen_composite(64, 3, 7).image, gen_composite(64, 3, 7).image);
    EXPECT_NE(gen_composite(64, 3, 7).alpha, gen_composite(64, 3, 8).alpha);
    EXPECT_THROW(gen_composite(32, 3, 0), DomainError);
}

TEST(Cubic, NoiselessTargetsAreExactCubes) {
    const CubicDataset d = gen_cubic(100, -4, 4, 0.0, 1);
    for (std::size_t i = 0; i < d.x.size(); ++i) {
        EXPECT_EQ(d.y_raw[i], d.x[i] * d.x[i] * d.x[i]);
        EXPECT_GE(d.x[i], -4.0);
        EXPECT_LT(d.x[i], 4.0);
        EXPECT_NEAR(d.transform.invert(d.y[i]), d.y_raw[i], 1e-9);
    }
}

TEST(Cubic, DeterministicWithExpectedNoise) {
    const CubicDataset a = gen_cubic(20000, -4, 4, 3.0, 2), b = gen_cubic(20000, -4, 4, 3.0, 2);
    EXPECT_EQ(a.y_raw, b.y_raw);
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < a.x.size(); ++i) {
        const double r = a.y_raw[i] - a.x[i] * a.x[i] * a.x[i];
        s += r;
        s2 += r * r;
    }
    const double n = double(a.x.size()), var = s2 / n - (s / n) * (s / n);
    EXPECT_NEAR(var, 9.0, 0.9);
    EXPECT_GE(*std::min_element(a.y.begin(), a.y.end()), 0.0);
    EXPECT_LE(*std::max_element(a.y.begin(), a.y.end()), 1.0);
}

TEST(TrainUserMap, EmptyWithGeometricProbability) {
    const Raster alpha = gen_composite(64, 4, 0).alpha;
    int empty = 0;
    const int n = 6000;
    for (int s = 0; s < n; ++s) {
        const Raster u = gen_train_usermap(alpha, std::uint64_t(s));
        empty += std::all_of(u.data.begin(), u.data.end(), [](float v) { return v == kCodeUnknown; });
    }
    EXPECT_NEAR(double(empty) / n, 1.0 / 6.0, 0.02);
}

TEST(TrainUserMap, DeterministicAndTruthful) {
    const Raster alpha = gen_composite(64, 5, 0).alpha;
    EXPECT_EQ(gen_train_usermap(alpha, 9), gen_train_usermap(alpha, 9));
    const Raster ones(64, 64, 1, 1.0f);
    for (std::uint64_t s = 0; s < 50; ++s)
        for (float v : gen_train_usermap(ones, s).data) ASSERT_TRUE(v == kCodeUnknown || v == kCodeForeground);
    const Raster zeros(64, 64, 1, 0.0f);
    for (std::uint64_t s = 0; s < 50; ++s)
        for (float v : gen_train_usermap(zeros, s).data) ASSERT_TRUE(v == kCodeUnknown || v == kCodeBackground);
}

TEST(MattingModel, ZeroHeadGivesNeutralPrediction) {
    ToyModel m = make_matting_model(6);
    zero_head(m);
    const MattingSample s = gen_composite(64, 6, 0);
    const NIGMap out = forward(m, s.image, Raster(64, 64));
    for (std::size_t i = 0; i < out.pixels(); ++i) {
        const NIGParams p = out.at(i);
        ASSERT_EQ(p.gamma, 0.5);
        ASSERT_NEAR(p.omega, std::log(2.0) + 1e-6, 1e-7);
    }
}

TEST(MattingModel, OutputsAreValidAndUserMapMatters) {
    const ToyModel m = make_matting_model(7);
    const MattingSample s = gen_composite(64, 7, 0);
    const NIGMap a = forward(m, s.image, Raster(64, 64));
    Raster u(64, 64);
    fill_rect(u, {10, 10, 30, 30}, kCodeForeground);
    const NIGMap b = forward(m, s.image, u);
    EXPECT_NO_THROW(a.validate());
    EXPECT_NE(a.gamma, b.gamma);
    EXPECT_THROW(forward(m, s.image, Raster(32, 32)), DimensionError);
    EXPECT_THROW(forward(make_cubic_model(1), s.image, u), DomainError);
}

TEST(Checkpoints, ModelRoundTripIsExact) {
    TempDir dir("models");
    ToyModel m = make_matting_model(8);
    m.steps = 17;
    save_model(m, dir / "m");
    const ToyModel back = load_model(dir / "m");
    EXPECT_EQ(back.theta, m.theta);
    EXPECT_EQ(back.steps, 17u);
    EXPECT_EQ(back.seed, 8u);
    EXPECT_EQ(back.net.param_count(), m.net.param_count());

    ToyModel c = make_cubic_model(9);
    c.target_transform = {0.25, -3.5};
    save_model(c, dir / "c");
    const ToyModel cb = load_model(dir / "c");
    EXPECT_EQ(cb.kind, ModelKind::Cubic);
    EXPECT_EQ(cb.target_transform.scale, 0.25);
    EXPECT_EQ(cb.target_transform.offset, -3.5);
}

TEST(Checkpoints, RefinerRoundTripIsExact) {
    TempDir dir("refiner");
    Refiner r = make_refiner(10);
    r.phi = r.net.init_params(10, 1.0);
    r.trained = true;
    save_refiner(r, dir / "r");
    const Refiner back = load_refiner(dir / "r");
    EXPECT_EQ(back.phi, r.phi);
    EXPECT_TRUE(back.trained);
    EXPECT_THROW(load_model(dir / "r"), FormatError);
    save_model(make_cubic_model(1), dir / "m");
    EXPECT_THROW(load_refiner(dir / "m"), FormatError);
}

TEST(Checkpoints, CorruptFilesAreRejected) {
    TempDir dir("corrupt");
    save_model(make_matting_model(1), dir / "m");
    const auto params = params_path(dir / "m");
    const auto size = std::filesystem::file_size(params);
    std::filesystem::resize_file(params, size - 5);
    EXPECT_THROW(load_model(dir / "m"), FormatError);

    save_model(make_matting_model(1), dir / "n");
    std::ofstream(manifest_path(dir / "n")) << "{ not json";
    EXPECT_THROW(load_model(dir / "n"), FormatError);

    EXPECT_THROW(load_model(dir / "missing"), FormatError);
}

TEST(Stage2, UntrainedRefinerLossEqualsCoarseLoss) {
    const Refiner r = make_refiner(20);
    const MattingSample s = gen_composite(64, 20, 1);
    const PixelRect w{0, 0, 32, 32};
    std::mt19937_64 rng(20);
    RefineWindow win{dugm::testing::random_raster(32, 32, 1, rng), crop(s.image, w), crop(s.alpha, w)};
    const std::vector<double> coarse(win.coarse.data.begin(), win.coarse.data.end());
    const std::vector<double> gt(win.gt.data.begin(), win.gt.data.end());
    EXPECT_EQ(refiner_window_loss(r, r.phi, win, {}), stage2_window_loss(coarse, gt, 32, 32));
}

TEST(Stage2, EvidentialParametersStayFrozen) {
    Stage1Config c1;
    c1.steps = 20;
    const ToyModel m = train_stage1(c1);
    const auto before = param_checksum(m.theta);
    Stage2Config c2;
    c2.steps = 5;
    const Refiner r = train_stage2(c2, m);
    EXPECT_EQ(param_checksum(m.theta), before);
    EXPECT_TRUE(r.ready());
    EXPECT_EQ(r.steps, 5u);
}

TEST(Stage1, LossDecreasesOverFirstHundredSteps) {
    // Each step sees one fresh composite, so the per-step loss is noisy; the
    // comparison is between the mean over steps 0-19 and over steps 80-99.
    const int seeds = 20;
    int decreased = 0;
    for (int seed = 1; seed <= seeds; ++seed) {
        std::vector<double> losses;
        Stage1Config cfg;
        cfg.steps = 100;
        cfg.seed = std::uint64_t(seed);
        cfg.on_step = [&](std::size_t, double loss) { losses.push_back(loss); };
        train_stage1(cfg);
        double head = 0, tail = 0;
        for (int i = 0; i < 20; ++i) {
            head += losses[std::size_t(i)];
            tail += losses[std::size_t(80 + i)];
        }
        decreased += tail < head;
    }
    EXPECT_GE(decreased, 19) << decreased << " of " << seeds << " seeds";
}

TEST(Stage1, CubicFitReachesTargetAccuracy) {
    const CubicDataset train = gen_cubic(1000, -4, 4, 3.0, 1);
    const ToyModel m = train_stage1_cubic(CubicConfig{}, train);
    const CubicDataset test = gen_cubic(2000, -4, 4, 3.0, 99, train.transform);
    const auto pred = predict_points(m, test.x);
    double se = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) se += std::pow(pred[i].gamma - test.y[i], 2);
    EXPECT_LT(std::sqrt(se / double(pred.size())), 0.05);
}
