#include "oracles.hpp"

#include <dugm/nig.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace dugm;

namespace {

NIGParams random_params(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> g(0.0, 1.0), wb(1e-3, 10.0), a(1.01, 10.0);
    return {g(rng), wb(rng), a(rng), wb(rng)};
}

double& component(NIGParams& p, int k) {
    switch (k) {
    case 0: return p.gamma;
    case 1: return p.omega;
    case 2: return p.alpha;
    default: return p.beta;
    }
}

double relative_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

} // namespace

TEST(Activate, ZeroRawGivesLogTwo) {
    const NIGParams p = activate({0, 0, 0, 0});
    EXPECT_DOUBLE_EQ(p.gamma, 0.5);
    EXPECT_DOUBLE_EQ(p.omega, std::numbers::ln2 + 1e-6);
    EXPECT_DOUBLE_EQ(p.alpha, 1.0 + std::numbers::ln2 + 1e-6);
    EXPECT_DOUBLE_EQ(p.beta, std::numbers::ln2 + 1e-6);
}

TEST(Activate, LargeGammaLogitApproachesOne) {
    EXPECT_NEAR(activate({40, 0, 0, 0}).gamma, 1.0, 1e-15);
    EXPECT_NEAR(activate({-40, 0, 0, 0}).gamma, 0.0, 1e-15);
}

TEST(Activate, UnderflowHitsEvidenceFloor) { EXPECT_NEAR(activate({0, -40, 0, 0}).omega, 1e-6, 1e-12); }

TEST(Activate, RejectsNonFinite) {
    EXPECT_THROW(activate({NAN, 0, 0, 0}), DomainError);
    EXPECT_THROW(activate({0, 0, INFINITY, 0}), DomainError);
}

TEST(Activate, AlwaysValidForFiniteInputs) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-50, 50);
    for (int i = 0; i < 10000; ++i) {
        const NIGParams p = activate({u(rng), u(rng), u(rng), u(rng)});
        ASSERT_TRUE(p.valid());
        ASSERT_GE(p.gamma, 0.0);
        ASSERT_LE(p.gamma, 1.0);
    }
}

TEST(Activate, BackwardMatchesFiniteDifference) {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-3, 3);
    for (int i = 0; i < 100; ++i) {
        const RawHead raw{u(rng), u(rng), u(rng), u(rng)};
        const NIGGradient ones{1, 1, 1, 1};
        const NIGGradient g = activate_backward(raw, ones);
        for (int k = 0; k < 4; ++k) {
            RawHead hi = raw, lo = raw;
            hi[std::size_t(k)] += 1e-6;
            lo[std::size_t(k)] -= 1e-6;
            NIGParams ph = activate(hi), pl = activate(lo);
            const double fd = (component(ph, k) - component(pl, k)) / 2e-6;
            EXPECT_NEAR(g[std::size_t(k)], fd, 1e-8);
        }
    }
}

TEST(Moments, DirectSubstitution) {
    const UncertaintyTriple u = moments({0.5, 2, 3, 4});
    EXPECT_DOUBLE_EQ(u.aleatoric, 2.0);
    EXPECT_DOUBLE_EQ(u.epistemic, 1.0);
    EXPECT_DOUBLE_EQ(u.var_sigma2, 4.0);
}

TEST(Moments, SentinelWhenAlphaAtMostTwo) {
    const UncertaintyTriple u = moments({0.5, 1, 1.5, 1});
    EXPECT_DOUBLE_EQ(u.aleatoric, 2.0);
    EXPECT_DOUBLE_EQ(u.epistemic, 2.0);
    EXPECT_TRUE(std::isinf(u.var_sigma2));
    EXPECT_TRUE(std::isinf(moments({0.5, 1, 2.0, 1}).var_sigma2));
}

TEST(Moments, VanishAsBetaGoesToZero) {
    const UncertaintyTriple u = moments({0.5, 1, 3, 1e-300});
    EXPECT_LT(u.aleatoric, 1e-299);
    EXPECT_LT(u.epistemic, 1e-299);
    EXPECT_EQ(u.var_sigma2, 0.0);
}

TEST(Moments, EpistemicIsAleatoricOverOmega) {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 1000; ++i) {
        const NIGParams p = random_params(rng);
        const UncertaintyTriple u = moments(p);
        EXPECT_DOUBLE_EQ(u.epistemic, u.aleatoric / p.omega);
    }
}

TEST(Nll, ReferenceValue) {
    EXPECT_NEAR(nll(0.0, {0, 1, 2, 1}), 0.980829253011726236856, 1e-14);
    EXPECT_NEAR(nll(0.0, {0, 1, 2, 1}), -std::log(0.375), 1e-14);
}

TEST(Nll, DoublingBetaAtTargetAddsHalfLogTwo) {
    std::mt19937_64 rng(8);
    for (int i = 0; i < 100; ++i) {
        NIGParams p = random_params(rng);
        const double base = nll(p.gamma, p);
        p.beta *= 2;
        EXPECT_NEAR(nll(p.gamma, p) - base, 0.5 * std::numbers::ln2, 1e-12);
    }
}

TEST(Nll, MarginalIdentityWithStudentT) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> uy(-1.0, 2.0);
    for (int i = 0; i < 20000; ++i) {
        const NIGParams p = random_params(rng);
        const double y = uy(rng);
        ASSERT_LT(std::abs(nll(y, p) + student_t_logpdf(y, p)), 1e-9);
    }
}

TEST(Nll, NonDecreasingInDistanceFromGamma) {
    std::mt19937_64 rng(10);
    for (int i = 0; i < 200; ++i) {
        const NIGParams p = random_params(rng);
        double prev = nll(p.gamma, p);
        for (double d = 0.01; d < 2.0; d += 0.01) {
            const double up = nll(p.gamma + d, p), down = nll(p.gamma - d, p);
            ASSERT_GE(up, prev);
            ASSERT_NEAR(up, down, 1e-12);
            prev = up;
        }
    }
}

TEST(StudentT, ReferenceDensity) {
    // nu = 4, unit scale: pdf(0) = Gamma(2.5) / (Gamma(2) sqrt(4 pi)) = 0.375
    EXPECT_NEAR(student_t_logpdf(0.0, {0, 1, 2, 1}), -0.9808292530117262, 1e-14);
    const StudentT t = marginal({0, 1, 2, 1});
    EXPECT_DOUBLE_EQ(t.scale2, 1.0);
    EXPECT_DOUBLE_EQ(t.dof, 4.0);
}

TEST(StudentT, TranslationInvariantAndModeAtLocation) {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 200; ++i) {
        const NIGParams p = random_params(rng);
        NIGParams shifted = p;
        shifted.gamma += 0.37;
        EXPECT_NEAR(student_t_logpdf(0.2, p), student_t_logpdf(0.57, shifted), 1e-12);
        EXPECT_GE(student_t_logpdf(p.gamma, p), student_t_logpdf(p.gamma + 1e-3, p));
        EXPECT_GE(student_t_logpdf(p.gamma, p), student_t_logpdf(p.gamma - 1e-3, p));
    }
}

TEST(Regularizer, Examples) {
    EXPECT_DOUBLE_EQ(regularizer(1.0, {0.5, 2, 3, 1}), 3.5);
    EXPECT_DOUBLE_EQ(regularizer(0.5, {0.5, 2, 3, 1}), 0.0);
    EXPECT_DOUBLE_EQ(regularizer(0.9, {0.5, 2, 3, 1}), 2.0 * regularizer(0.7, {0.5, 2, 3, 1}));
}

TEST(TotalLoss, Composition) {
    const NIGParams p{0, 1, 2, 1};
    EXPECT_DOUBLE_EQ(total_loss(0.3, p, 0.0), nll(0.3, p));
    EXPECT_DOUBLE_EQ(total_loss(0.0, p, 1.0), nll(0.0, p));
    const NIGParams q{0.5, 2, 3, 1};
    EXPECT_NEAR(total_loss(1.0, q, 0.01), nll(1.0, q) + 0.035, 1e-15);
    EXPECT_THROW(total_loss(0.0, p, -0.1), DomainError);
}

TEST(NllGrad, StationaryInGammaAtTarget) {
    std::mt19937_64 rng(12);
    for (int i = 0; i < 100; ++i) {
        const NIGParams p = random_params(rng);
        EXPECT_EQ(nll_grad(p.gamma, p)[0], 0.0);
    }
}

TEST(NllGrad, MatchesCentralDifferences) {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> uy(0.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const NIGParams p = random_params(rng);
        const double y = uy(rng);
        const NIGGradient g = nll_grad(y, p);
        for (int k = 0; k < 4; ++k) worst = std::max(worst, relative_error(g[std::size_t(k)], dugm::testing::nll_central_difference(y, p, k)));
    }
    EXPECT_LT(worst, 1e-5);
}

TEST(TotalLossGrad, AddsRegularizerSubgradient) {
    const NIGParams p{0.4, 2, 3, 1};
    const NIGGradient base = nll_grad(0.9, p);
    const NIGGradient g = total_loss_grad(0.9, p, 0.5);
    EXPECT_DOUBLE_EQ(g[0], base[0] - 0.5 * (2 * 2 + 3));
    EXPECT_DOUBLE_EQ(g[1], base[1] + 0.5 * 0.5 * 2);
    EXPECT_DOUBLE_EQ(g[2], base[2] + 0.5 * 0.5);
    EXPECT_DOUBLE_EQ(g[3], base[3]);
    const NIGGradient at = total_loss_grad(0.4, p, 0.5);
    EXPECT_EQ(at[0], 0.0);
}

TEST(NIGMapTest, ValidateCatchesBadPixels) {
    NIGMap m(3, 2);
    EXPECT_NO_THROW(m.validate());
    m.alpha.data[4] = 1.0f;
    EXPECT_THROW(m.validate(), DomainError);
    NIGMap n(3, 2);
    n.beta = Raster(2, 3);
    EXPECT_THROW(n.validate(), DimensionError);
}

TEST(NIGMapTest, UncertaintyMapsMatchScalarMoments) {
    NIGMap m(2, 1);
    m.set(0, {0.5, 2, 3, 4});
    m.set(1, {0.5, 1, 1.5, 1});
    const UncertaintyMaps u = uncertainty_maps(m);
    EXPECT_FLOAT_EQ(u.aleatoric.data[0], 2.0f);
    EXPECT_FLOAT_EQ(u.epistemic.data[0], 1.0f);
    EXPECT_FLOAT_EQ(u.var_sigma2.data[0], 4.0f);
    EXPECT_TRUE(std::isinf(u.var_sigma2.data[1]));
}
