#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "bexg/combinatorics.hpp"
#include "bexg/growth.hpp"
#include "oracles.hpp"

using namespace bexg;

TEST(FactorSet, RejectsDuplicatesAndKeepsOrder) {
    FactorSet fs({"x", "y", "z"});
    EXPECT_EQ(fs.size(), 3u);
    EXPECT_EQ(*fs.index_of("y"), 1u);
    EXPECT_FALSE(fs.index_of("w"));
    EXPECT_THROW(FactorSet({"x", "x"}), ConfigError);
    EXPECT_EQ(fs.add("y"), 1u);
    EXPECT_EQ(fs.add("w"), 3u);
}

TEST(Derangements, SmallValuesMatchEnumeration) {
    EXPECT_EQ(derangement_count(0), 1);
    for (int n = 1; n <= 9; ++n) {
        const auto hist = oracle::fixed_point_histogram(n);
        EXPECT_EQ(derangement_count(n), BigInt(hist[0])) << "n=" << n;
    }
    EXPECT_EQ(derangement_count(3), 2);
    EXPECT_EQ(derangement_count(4), 9);
    EXPECT_THROW(derangement_count(-1), DomainError);
}

TEST(Derangements, RecurrencesHold) {
    for (int n = 2; n <= 20; ++n) {
        const BigInt d = derangement_count(n);
        EXPECT_EQ(d, (n - 1) * (derangement_count(n - 1) + derangement_count(n - 2)));
        EXPECT_EQ(d, n * derangement_count(n - 1) + (n % 2 == 0 ? 1 : -1));
    }
}

TEST(Derangements, RatioApproachesInverseE) {
    EXPECT_EQ(derangement_ratio(1), 0.0);
    EXPECT_DOUBLE_EQ(derangement_ratio(4), 0.375);
    EXPECT_NEAR(derangement_ratio(13), 0.3678794412, 1e-10);
    // Near n = 17 the gap to the bound is below double resolution.
    using Wide = boost::multiprecision::cpp_bin_float_50;
    const Wide inv_e = boost::multiprecision::exp(Wide(-1));
    for (int n = 1; n <= 18; ++n) {
        const auto q = derangement_fraction(n);
        const Wide ratio = Wide(boost::multiprecision::numerator(q)) / Wide(boost::multiprecision::denominator(q));
        const Wide bound = Wide(1) / Wide(oracle::factorial(n + 1));
        EXPECT_LT(boost::multiprecision::abs(ratio - inv_e), bound) << n;
    }
}

TEST(PartialPermutations, Examples) {
    EXPECT_EQ(partial_permutation_count(3, 3), 1);
    EXPECT_EQ(partial_permutation_count(3, 1), 3);
    EXPECT_EQ(partial_permutation_count(4, 0), 9);
    EXPECT_THROW(partial_permutation_count(3, 4), DomainError);
    EXPECT_THROW(partial_permutation_count(-1, 0), DomainError);
}

TEST(PartialPermutations, MatchFixedPointClassification) {
    for (int m = 0; m <= 8; ++m) {
        const auto hist = oracle::fixed_point_histogram(m);
        for (int t = 0; t <= m; ++t) EXPECT_EQ(partial_permutation_count(m, t), BigInt(hist[static_cast<std::size_t>(t)]));
    }
}

TEST(FactorialIdentity, ExactDecomposition) {
    for (int m = 0; m <= 20; ++m) {
        const auto rep = verify_factorial_identity(m);
        const auto* pp = rep.find("partial_permutation_sum");
        ASSERT_NE(pp, nullptr);
        EXPECT_TRUE(pp->matches);
        EXPECT_EQ(*pp->abs_dev, 0.0);
        EXPECT_EQ(*pp->exact, *rep.lhs_exact);
    }
    const auto r0 = verify_factorial_identity(0);
    EXPECT_EQ(r0.lhs, 1.0);
    EXPECT_EQ(*r0.find("partial_permutation_sum")->exact, 1);
    EXPECT_FALSE(r0.find("hyperbolic_form")->value);

    const auto r4 = verify_factorial_identity(4);
    EXPECT_EQ(r4.lhs, 24.0);
    EXPECT_EQ(*r4.find("partial_permutation_sum")->exact, 1 * 9 + 4 * 2 + 6 * 1 + 4 * 0 + 1 * 1);
}

TEST(FactorialIdentity, AlternateFormsReportDeviation) {
    const auto r3 = verify_factorial_identity(3);
    const auto* hyp = r3.find("hyperbolic_form");
    ASSERT_TRUE(hyp && hyp->value);
    const double expected = std::exp(2.0) * 2 + 1;
    EXPECT_NEAR(*hyp->value, expected, 1e-9);
    EXPECT_NEAR(*hyp->abs_dev, expected - 6, 1e-9);
    EXPECT_FALSE(hyp->matches);
    const auto* alt = r3.find("alternating_series_form");
    ASSERT_TRUE(alt);
    // sum_{t<=3} (-1)^t 3^t / t! = 1 - 3 + 9/2 - 9/2 = -2, times (4! - 1) = 23.
    EXPECT_DOUBLE_EQ(*alt->value, -46.0);
    EXPECT_FALSE(alt->matches);
    EXPECT_THROW(verify_factorial_identity(21), DomainError);
}

TEST(HyperbolicConstants, StandardFormsMatchAlternatesDoNot) {
    for (double x : {-0.5, 0.0, 0.3, 0.9}) {
        const auto rep = verify_hyperbolic_constants(x);
        EXPECT_TRUE(rep.find("exp_artanh_standard")->matches);
        EXPECT_TRUE(rep.find("cosh1_standard")->matches);
        EXPECT_FALSE(rep.find("cosh1_alternate")->matches);
        if (x != 0.0) EXPECT_FALSE(rep.find("exp_artanh_alternate")->matches);
    }
    EXPECT_THROW(verify_hyperbolic_constants(1.0), DomainError);
}

TEST(Fibonacci, DiagonalSumsFollowRecurrence) {
    const auto fib = oracle::fibonacci(60);
    EXPECT_EQ(fibonacci_diagonal(0), 1);
    EXPECT_EQ(fibonacci_diagonal(5), 8);
    for (int m = 0; m <= 55; ++m) {
        const auto v = fib[static_cast<std::size_t>(m)];
        const BigInt expected = (BigInt(static_cast<std::uint64_t>(v >> 64)) << 64) + BigInt(static_cast<std::uint64_t>(v));
        EXPECT_EQ(fibonacci_diagonal(m), expected) << m;
    }
    const double ratio = static_cast<double>(Rational(fibonacci_diagonal(41), fibonacci_diagonal(40)));
    EXPECT_NEAR(ratio, 1.6180339887, 1e-8);
}

TEST(Bandwidth, ExactDivision) {
    EXPECT_EQ(bandwidth(5, 5), Rational(1));
    EXPECT_EQ(bandwidth(9, 2), Rational(9, 2));
    EXPECT_EQ(bandwidth(fibonacci_diagonal(10), derangement_count(4)), Rational(89, 9));
    EXPECT_THROW(bandwidth(5, 0), DomainError);
}

TEST(LorentzGamma, MatchesCoshArtanh) {
    EXPECT_NEAR(lorentz_gamma(2.0), 1.154700538, 1e-9);
    EXPECT_DOUBLE_EQ(lorentz_gamma(std::numeric_limits<double>::infinity()), 1.0);
    EXPECT_NEAR(lorentz_gamma(1e12), 1.0, 1e-12);
    const double g = lorentz_gamma(1.0001);
    EXPECT_GT(g, 70.0);
    EXPECT_NEAR(g, std::cosh(std::atanh(1 / 1.0001)), 1e-9);
    for (double w = 1.01; w < 50; w *= 1.37)
        EXPECT_NEAR(lorentz_gamma(w), std::cosh(std::atanh(1 / w)), 1e-12 * lorentz_gamma(w)) << w;
    EXPECT_THROW(lorentz_gamma(1.0), DomainError);
    EXPECT_THROW(lorentz_gamma(0.5), DomainError);
}

TEST(Square, SmallCases) {
    const auto s1 = enumerate_square(letter_factors(1));
    EXPECT_EQ(s1.subsets.size(), 2u);
    EXPECT_EQ(s1.rows.size(), 1u);

    const auto s2 = enumerate_square(letter_factors(2));
    ASSERT_EQ(s2.subsets.size(), 4u);
    EXPECT_EQ(s2.subsets[0], 0u);
    EXPECT_EQ(s2.subset_labels(s2.subsets[1]), std::vector<std::string>{"a"});
    EXPECT_EQ(s2.subset_labels(s2.subsets[2]), std::vector<std::string>{"b"});
    EXPECT_EQ(s2.subset_labels(s2.subsets[3]), (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(s2.rows[0][0].factor, 0);
    EXPECT_EQ(s2.rows[0][1].factor, 1);
    EXPECT_EQ(s2.rows[1][0].factor, 1);
    EXPECT_EQ(s2.rows[1][1].factor, 0);

    EXPECT_THROW(enumerate_square(letter_factors(13)), DomainError);
    EXPECT_THROW(enumerate_square(FactorSet{}), DomainError);
}

TEST(Square, LatinAndSubsetCountExhaustive) {
    for (int m = 1; m <= 8; ++m) {
        const auto sq = enumerate_square(letter_factors(static_cast<std::size_t>(m)));
        EXPECT_EQ(sq.subsets.size(), std::size_t{1} << m);
        std::vector<std::vector<int>> grid(static_cast<std::size_t>(m), std::vector<int>(static_cast<std::size_t>(m)));
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < m; ++c) grid[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = sq.rows[r][c].factor;
        EXPECT_TRUE(oracle::latin(grid)) << m;
        EXPECT_TRUE(is_latin(sq));
        std::size_t total = 0;
        for (std::size_t k = 0; k < sq.difference_columns.size(); ++k) {
            total += sq.difference_columns[k].size();
            EXPECT_EQ(BigInt(sq.difference_columns[k].size()), binomial(m, static_cast<int>(k) + 1));
        }
        EXPECT_EQ(total + 1, sq.subsets.size());
        for (std::size_t i = 1; i < sq.subsets.size(); ++i)
            EXPECT_LE(std::popcount(sq.subsets[i - 1]), std::popcount(sq.subsets[i]));
    }
}

TEST(Square, IsLatinRejectsBrokenRows) {
    auto sq = enumerate_square(letter_factors(3));
    sq.rows[1][2].factor = sq.rows[1][0].factor;
    EXPECT_FALSE(is_latin(sq));
}

TEST(CombinatorialState, Fields) {
    const auto s = make_state(5, 4);
    EXPECT_EQ(s.c_m, 32);
    EXPECT_EQ(s.d_n, 9);
    EXPECT_EQ(s.f_mn, 8);
    EXPECT_EQ(*s.omega, Rational(8, 9));
    EXPECT_FALSE(make_state(3, 1).omega);
}

TEST(Pythagorean, ConstantSequenceIsUndefined) {
    const auto s = make_state(3, 3);
    const auto rep = check_pythagorean({s, s, s});
    ASSERT_EQ(rep.steps.size(), 2u);
    for (const auto& st : rep.steps) {
        EXPECT_TRUE(st.undefined);
        EXPECT_FALSE(st.residual_reciprocal);
    }
    EXPECT_THROW(check_pythagorean({s, s}), InsufficientData);
}

TEST(Pythagorean, ConstantDerangementsFlagAsymptote) {
    const auto rep = check_pythagorean({make_state(1, 2), make_state(2, 2), make_state(3, 2)});
    for (const auto& st : rep.steps) {
        EXPECT_TRUE(st.asymptote);
        EXPECT_FALSE(st.rate_c);
    }
}

TEST(Pythagorean, EvcfTrajectoryReportsEveryStep) {
    GrowthConfig cfg;
    cfg.m = 8;
    cfg.steps = 50;
    const auto states = trajectory_states(simulate_evcf_growth(cfg));
    ASSERT_EQ(states.size(), 51u);
    const auto rep = check_pythagorean(states);
    EXPECT_EQ(rep.steps.size(), 50u);
    for (const auto& st : rep.steps) {
        EXPECT_FALSE(st.undefined);
        const double expected = st.d_c * st.d_c - st.d_f * st.d_f - st.d_d * st.d_d;
        EXPECT_DOUBLE_EQ(st.residual_hyperbolic, expected);
    }
}
