#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "bexg/growth.hpp"
#include "oracles.hpp"

using namespace bexg;

namespace {

GrowthConfig evcf(int m, int steps, std::optional<Rational> mult = std::nullopt) {
    GrowthConfig c;
    c.m = m;
    c.steps = steps;
    c.regime = Regime::EVCF;
    c.balance_multiplier = mult;
    return c;
}

constexpr double kPhi = std::numbers::phi;

}  // namespace

TEST(CycleLengths, Values) {
    const auto c1 = cycle_lengths(1);
    EXPECT_EQ(c1.balance, 0);
    EXPECT_EQ(c1.full, 2);
    EXPECT_EQ(c1.growth, 2);
    const auto c2 = cycle_lengths(2);
    EXPECT_EQ(c2.balance, Rational(3, 2));
    EXPECT_EQ(c2.full, Rational(5, 2));
    EXPECT_EQ(c2.growth, Rational(1));
    EXPECT_THROW(cycle_lengths(0), DomainError);
}

TEST(CycleLengths, FullMinusBalanceIsGrowth) {
    for (int m = 1; m <= 500; ++m) {
        const auto c = cycle_lengths(m);
        EXPECT_EQ(c.full - c.balance, c.growth) << m;
    }
}

TEST(BalanceSequence, UnitMultiplierIsFibonacci) {
    const auto f = balance_sequence(Rational(1), 42);
    const auto fib = oracle::fibonacci(41);
    ASSERT_EQ(f.size(), 42u);
    EXPECT_EQ(f[0], 0);
    for (std::size_t k = 1; k < f.size(); ++k) EXPECT_EQ(f[k], Rational(static_cast<std::uint64_t>(fib[k - 1]))) << k;
    EXPECT_TRUE(balance_sequence(Rational(1), 0).empty());
}

TEST(Regime, Parse) {
    EXPECT_EQ(parse_regime("cf"), Regime::CF);
    EXPECT_EQ(parse_regime("ev"), Regime::EV);
    EXPECT_EQ(parse_regime("evcf"), Regime::EVCF);
    EXPECT_FALSE(parse_regime("EVCF"));
    EXPECT_FALSE(parse_regime(""));
}

TEST(CfGrowth, RateIsExactlyTwo) {
    GrowthConfig c;
    c.regime = Regime::CF;
    c.steps = 30;
    const auto tr = simulate(c);
    for (int w : {2, 5, 10, 15}) {
        const auto r = estimate_rates(tr, w);
        EXPECT_EQ(r.rate_n_a, 2.0);
        EXPECT_EQ(r.rate_n_abar, 2.0);
        EXPECT_EQ(r.ratio, 1.0);
    }
    for (const auto& e : cycle_ends(tr)) EXPECT_EQ(e.n_a, e.n_abar);
}

TEST(EvcfGrowth, FibonacciLimitRatios) {
    const auto tr = simulate_evcf_growth(evcf(2, 40, Rational(1)));
    const auto r = estimate_rates(tr, 5);
    EXPECT_NEAR(r.rate_n_abar, kPhi, 1e-6);
    EXPECT_EQ(r.rate_n_a, 2.0);
    EXPECT_NEAR(r.ratio, kPhi / 2, 0.005);
    EXPECT_NEAR(r.cosh_per_growth, kPhi / 2, 0.005);
}

TEST(EvcfGrowth, GeneralMultiplierRatio) {
    // x^2 = mult x + 1 has root (mult + sqrt(mult^2 + 4)) / 2.
    for (int m : {2, 3, 5, 8}) {
        const double mult = m - 1.0 / m;
        const double root = (mult + std::sqrt(mult * mult + 4)) / 2;
        const auto r = estimate_rates(simulate_evcf_growth(evcf(m, 40)), 5);
        EXPECT_NEAR(r.rate_n_abar, root, 1e-6 * root) << m;
        EXPECT_NEAR(r.ratio, root / 2, 1e-6 * root) << m;
    }
}

TEST(EvcfGrowth, PhasesAlternateOnExactClock) {
    const int m = 3;
    const auto tr = simulate_evcf_growth(evcf(m, 12));
    ASSERT_EQ(tr.records.size(), 25u);
    const auto c = cycle_lengths(m);
    const double balance = static_cast<double>(c.balance), growth = static_cast<double>(c.growth);
    for (std::size_t i = 1; i < tr.records.size(); ++i) {
        const auto& r = tr.records[i];
        const auto& prev = tr.records[i - 1];
        EXPECT_EQ(r.phase, i % 2 == 1 ? Phase::Balance : Phase::Growth);
        EXPECT_NEAR(r.t - prev.t, r.phase == Phase::Balance ? balance : growth, 1e-9);
        EXPECT_GT(r.n_a, 0);
        EXPECT_GT(r.n_abar, 0);
        EXPECT_DOUBLE_EQ(r.n, m + 1.0 / m);
    }
    EXPECT_THROW(simulate_evcf_growth(evcf(1, 5)), ConfigError);
}

TEST(EvcfGrowth, OverflowStopsWithFlag) {
    const auto tr = simulate_evcf_growth(evcf(2, 1100));
    EXPECT_TRUE(tr.overflow);
    for (const auto& r : tr.records) {
        EXPECT_TRUE(std::isfinite(r.n_a));
        EXPECT_TRUE(std::isfinite(r.n_abar));
    }
}

TEST(EvGrowth, LogLinearWithSlopeInverseE) {
    GrowthConfig c;
    c.regime = Regime::EV;
    c.steps = 60;
    c.n_a0 = 3.0;
    const auto tr = simulate(c);
    for (const auto& r : tr.records) {
        EXPECT_NEAR(std::log(r.n) - std::log(3.0) - r.t / std::numbers::e, 0.0, 1e-9);
        EXPECT_EQ(r.phase, Phase::Growth);
    }
    for (std::size_t i = 1; i < tr.records.size(); ++i)
        EXPECT_NEAR(tr.records[i].derangements - tr.records[i - 1].derangements, 1 / std::numbers::e, 1e-12);
}

TEST(Rates, ConstantTrajectoryGivesZero) {
    GrowthTrajectory tr;
    for (int k = 0; k < 10; ++k) tr.records.push_back({double(k), 4.0, 4.0, 2.0, Phase::Growth, k, 0.0});
    const auto r = estimate_rates(tr, 3);
    EXPECT_EQ(r.rate_n_a, 0.0);
    EXPECT_EQ(r.rate_n_abar, 0.0);
    EXPECT_EQ(r.ratio, 0.0);
    EXPECT_EQ(r.cosh_per_growth, 0.0);
}

TEST(Rates, Preconditions) {
    const auto tr = simulate_evcf_growth(evcf(2, 5));
    EXPECT_THROW(estimate_rates(tr, 1), ConfigError);
    EXPECT_THROW(estimate_rates(tr, 4), InsufficientData);
}

TEST(Hyperbolic, RadialNeverDecreases) {
    for (auto regime : {Regime::CF, Regime::EV, Regime::EVCF}) {
        GrowthConfig c;
        c.regime = regime;
        c.m = 4;
        c.steps = 30;
        const auto pts = hyperbolic_embed(simulate(c));
        for (std::size_t i = 1; i < pts.size(); ++i) {
            EXPECT_GE(pts[i].radial, pts[i - 1].radial);
            EXPECT_GE(pts[i].angular, pts[i - 1].angular);
        }
    }
}

TEST(Hyperbolic, PureEvKeepsAngle) {
    GrowthConfig c;
    c.regime = Regime::EV;
    c.steps = 20;
    const auto pts = hyperbolic_embed(simulate(c));
    for (const auto& p : pts) EXPECT_EQ(p.angular, 0.0);
    EXPECT_GT(pts.back().radial, pts.front().radial);
}

TEST(Hyperbolic, PureBalanceRotates) {
    GrowthTrajectory tr;
    tr.omega = kUnitCycleBandwidth;
    for (int k = 0; k < 6; ++k) tr.records.push_back({double(k), 1.0, 1.0 + k, 2.0, Phase::Balance, k, 0.0});
    const auto pts = hyperbolic_embed(tr);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        EXPECT_EQ(pts[i].radial, 0.0);
        EXPECT_NEAR(pts[i].angular, static_cast<double>(i), 1e-12);
    }
}

TEST(Hyperbolic, BalanceAngleClampsNearOne) {
    bool sat = false;
    EXPECT_TRUE(std::isfinite(balance_angle(1.0, &sat)));
    EXPECT_TRUE(sat);
    EXPECT_NEAR(balance_angle(kUnitCycleBandwidth, &sat), 1.0, 1e-12);
    EXPECT_FALSE(sat);
    EXPECT_THROW(balance_angle(0.0), DomainError);
}

TEST(TrajectoryStates, CountsPhases) {
    const auto states = trajectory_states(simulate_evcf_growth(evcf(2, 6)));
    ASSERT_EQ(states.size(), 7u);
    for (int k = 0; k <= 6; ++k) {
        EXPECT_EQ(states[static_cast<std::size_t>(k)].m, k);
        EXPECT_EQ(states[static_cast<std::size_t>(k)].n, k);
    }
}

TEST(Growth, ConfigValidation) {
    GrowthConfig c;
    c.steps = 0;
    EXPECT_THROW(simulate(c), ConfigError);
    c.steps = 5;
    c.n_a0 = 0;
    EXPECT_THROW(simulate(c), ConfigError);
}
