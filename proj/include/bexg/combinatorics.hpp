#pragma once

// Exact combinatorial kernels: derangements, partial permutations, Fibonacci
// diagonal sums of Pascal's triangle, bandwidth, and the m x m square over a
// factor set. Counts are arbitrary-precision integers; ratios stay exact
// rationals until a real-valued operation needs a double.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "bexg/error.hpp"
#include "bexg/factor_set.hpp"

namespace bexg {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

inline BigInt factorial(int n) {
    if (n < 0) throw DomainError("factorial of negative number");
    BigInt f = 1;
    for (int k = 2; k <= n; ++k) f *= k;
    return f;
}

/// binom(n, k); zero when k < 0 or k > n (the diagonal-sum convention).
inline BigInt binomial(int n, int k) {
    if (k < 0 || n < 0 || k > n) return 0;
    k = std::min(k, n - k);
    BigInt r = 1;
    for (int i = 1; i <= k; ++i) {
        r *= n - k + i;
        r /= i;
    }
    return r;
}

/// Number of permutations of n items with no fixed point.
/// D_0 = 1, D_1 = 0, D_n = (n-1)(D_{n-1} + D_{n-2}).
inline BigInt derangement_count(int n) {
    if (n < 0) throw DomainError("derangement_count: n must be >= 0");
    BigInt prev2 = 1;  // D_0
    if (n == 0) return prev2;
    BigInt prev1 = 0;  // D_1
    for (int k = 2; k <= n; ++k) {
        BigInt next = (k - 1) * (prev1 + prev2);
        prev2 = std::move(prev1);
        prev1 = std::move(next);
    }
    return prev1;
}

/// D_n / n! as an exact rational. Tends to 1/e.
inline Rational derangement_fraction(int n) {
    if (n < 0) throw DomainError("derangement_fraction: n must be >= 0");
    return Rational(derangement_count(n), factorial(n));
}

inline double derangement_ratio(int n) { return static_cast<double>(derangement_fraction(n)); }

/// Permutations of m items fixing exactly t of them: binom(m, t) * D_{m-t}.
inline BigInt partial_permutation_count(int m, int t) {
    if (m < 0 || t < 0 || t > m) throw DomainError("partial_permutation_count: need 0 <= t <= m");
    return binomial(m, t) * derangement_count(m - t);
}

/// sum_{t>=0} binom(m - t, t), the (m+1)-th Fibonacci number.
inline BigInt fibonacci_diagonal(int m) {
    if (m < 0) throw DomainError("fibonacci_diagonal: m must be >= 0");
    BigInt s = 0;
    for (int t = 0; 2 * t <= m; ++t) s += binomial(m - t, t);
    return s;
}

/// omega = F / D, exact.
inline Rational bandwidth(const BigInt& f, const BigInt& d) {
    if (d == 0) throw DomainError("bandwidth undefined: derangement count is zero");
    if (d < 0) throw DomainError("bandwidth: derangement count must be positive");
    return Rational(f, d);
}

/// gamma = 1 / sqrt(1 - omega^-2) = cosh(artanh(1/omega)).
inline double lorentz_gamma(double omega) {
    if (std::isnan(omega) || omega <= 1.0)
        throw DomainError("lorentz_gamma: omega must exceed 1 (balance asymptote)");
    if (std::isinf(omega)) return 1.0;
    const double inv = 1.0 / omega;
    return 1.0 / std::sqrt((1.0 - inv) * (1.0 + inv));
}

// ---------------------------------------------------------------------------
// Combinatorial state and the reciprocal-Pythagorean diagnostic.

struct CombinatorialState {
    int m = 0;
    int n = 0;
    BigInt c_m;                    // 2^m
    BigInt d_n;                    // derangements of n
    BigInt f_mn;                   // sum_t binom(m - t, t)
    std::optional<Rational> omega; // f_mn / d_n, absent when d_n == 0
};

inline CombinatorialState make_state(int m, int n) {
    if (m < 0 || n < 0) throw DomainError("make_state: m and n must be >= 0");
    CombinatorialState s;
    s.m = m;
    s.n = n;
    s.c_m = BigInt(1) << m;
    s.d_n = derangement_count(n);
    s.f_mn = fibonacci_diagonal(m);
    if (s.d_n != 0) s.omega = bandwidth(s.f_mn, s.d_n);
    return s;
}

struct PythagoreanStep {
    int index = 0;  // difference between states index-1 and index
    double d_c = 0, d_f = 0, d_d = 0;
    std::optional<double> rate_c;  // dC/dD
    std::optional<double> rate_f;  // dF/dD
    // (dC/dD)^-2 + 1 - (dF/dD)^-2; absent when a rate is zero or undefined.
    std::optional<double> residual_reciprocal;
    double residual_hyperbolic = 0;  // dC^2 - dF^2 - dD^2
    bool undefined = false;          // every difference is zero
    bool asymptote = false;          // dD == 0 while C or F move (constant EV)
};

struct PythagoreanReport {
    std::vector<PythagoreanStep> steps;
};

/// Finite-difference check of the reciprocal Pythagorean relation between
/// C_m, F_{m,n} and D_n along a sequence of states. Diagnostic only.
inline PythagoreanReport check_pythagorean(const std::vector<CombinatorialState>& states) {
    if (states.size() < 3) throw InsufficientData("check_pythagorean: need at least 3 states");
    PythagoreanReport rep;
    for (std::size_t i = 1; i < states.size(); ++i) {
        PythagoreanStep st;
        st.index = static_cast<int>(i);
        st.d_c = static_cast<double>(BigInt(states[i].c_m - states[i - 1].c_m));
        st.d_f = static_cast<double>(BigInt(states[i].f_mn - states[i - 1].f_mn));
        st.d_d = static_cast<double>(BigInt(states[i].d_n - states[i - 1].d_n));
        st.residual_hyperbolic = st.d_c * st.d_c - st.d_f * st.d_f - st.d_d * st.d_d;
        if (st.d_c == 0 && st.d_f == 0 && st.d_d == 0) {
            st.undefined = true;
        } else if (st.d_d == 0) {
            st.asymptote = true;
        } else {
            st.rate_c = st.d_c / st.d_d;
            st.rate_f = st.d_f / st.d_d;
            if (*st.rate_c != 0 && *st.rate_f != 0) {
                const double r = 1.0 / (*st.rate_c * *st.rate_c) + 1.0 - 1.0 / (*st.rate_f * *st.rate_f);
                if (std::isfinite(r)) st.residual_reciprocal = r;
            }
        }
        rep.steps.push_back(st);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Identity reports. Alternate forms that fail exact arithmetic are carried as
// variants with their deviation; only exact variants are ever asserted.

struct IdentityVariant {
    std::string name;
    std::optional<double> value;    // absent when the form is undefined at m
    std::optional<BigInt> exact;    // set for integer-valued exact forms
    std::optional<double> abs_dev;  // |value - lhs|
    std::optional<double> rel_dev;  // abs_dev / |lhs|
    bool matches = false;           // exact equality with lhs
};

struct IdentityReport {
    std::string identity;
    int m = 0;
    double lhs = 0;
    std::optional<BigInt> lhs_exact;
    std::vector<IdentityVariant> variants;

    const IdentityVariant* find(const std::string& name) const {
        for (const auto& v : variants)
            if (v.name == name) return &v;
        return nullptr;
    }
};

namespace detail {

inline void set_deviation(IdentityVariant& v, double lhs) {
    if (!v.value) return;
    v.abs_dev = std::abs(*v.value - lhs);
    v.rel_dev = lhs != 0 ? *v.abs_dev / std::abs(lhs) : *v.abs_dev;
}

inline IdentityVariant exact_variant(std::string name, const Rational& value, const BigInt& lhs) {
    IdentityVariant v;
    v.name = std::move(name);
    const Rational diff = value - Rational(lhs);
    v.value = static_cast<double>(value);
    if (denominator(value) == 1) v.exact = numerator(value);
    v.abs_dev = static_cast<double>(abs(diff));
    v.rel_dev = lhs != 0 ? static_cast<double>(abs(diff) / Rational(lhs)) : *v.abs_dev;
    v.matches = diff == 0;
    return v;
}

}  // namespace detail

/// m! against its partial-permutation decomposition and two alternate
/// closed forms:
///   partial_permutation_sum   sum_t binom(m,t) D_{m-t}          (exact)
///   alternating_series_form   [sum_t (-1)^t m^t / t!] [(m+1)! - 1]
///   hyperbolic_form           [cosh(m-1) + sinh(m-1)] (m-1)! + 1
/// Throws if the first variant is not exact, which would be a kernel bug.
inline IdentityReport verify_factorial_identity(int m) {
    if (m < 0 || m > 20) throw DomainError("verify_factorial_identity: need 0 <= m <= 20");
    IdentityReport rep;
    rep.identity = "factorial";
    rep.m = m;
    const BigInt lhs = factorial(m);
    rep.lhs_exact = lhs;
    rep.lhs = static_cast<double>(lhs);

    BigInt pp = 0;
    for (int t = 0; t <= m; ++t) pp += partial_permutation_count(m, t);
    rep.variants.push_back(detail::exact_variant("partial_permutation_sum", Rational(pp), lhs));
    if (!rep.variants.back().matches)
        throw ContractViolation("partial permutation decomposition of m! is not exact");

    Rational series = 0;
    BigInt power = 1;
    for (int t = 0; t <= m; ++t) {
        const Rational term(power, factorial(t));
        series += (t % 2 == 0) ? term : Rational(-term);
        power *= m;
    }
    rep.variants.push_back(
        detail::exact_variant("alternating_series_form", series * Rational(factorial(m + 1) - 1), lhs));

    IdentityVariant hyp;
    hyp.name = "hyperbolic_form";
    if (m >= 1) {
        const long double x = m - 1;
        const long double fact = static_cast<long double>(factorial(m - 1));
        hyp.value = static_cast<double>((std::cosh(x) + std::sinh(x)) * fact + 1.0L);
        detail::set_deviation(hyp, rep.lhs);
        hyp.matches = false;
    }
    rep.variants.push_back(hyp);
    return rep;
}

/// Alternate hyperbolic constants next to the standard definitions:
///   cosh(1) = (e + 1/e)/2 vs the alternate (e + 1/e) = cosh(1)/2, and
///   e^{artanh x} = sqrt((1+x)/(1-x)) vs the alternate (1+x)/sqrt((1-x)^2).
inline IdentityReport verify_hyperbolic_constants(double x) {
    if (!(x > -1.0 && x < 1.0)) throw DomainError("verify_hyperbolic_constants: need |x| < 1");
    IdentityReport rep;
    rep.identity = "hyperbolic_constants";
    rep.lhs = std::exp(std::atanh(x));
    const double e = std::exp(1.0);

    auto add = [&](std::string name, double value, double reference) {
        IdentityVariant v;
        v.name = std::move(name);
        v.value = value;
        v.abs_dev = std::abs(value - reference);
        v.rel_dev = reference != 0 ? *v.abs_dev / std::abs(reference) : *v.abs_dev;
        v.matches = *v.abs_dev <= 1e-12 * std::max(1.0, std::abs(reference));
        rep.variants.push_back(std::move(v));
    };
    add("exp_artanh_standard", std::sqrt((1 + x) / (1 - x)), rep.lhs);
    add("exp_artanh_alternate", (1 + x) / std::sqrt((1 - x) * (1 - x)), rep.lhs);
    // The cosh(1) pair is compared on its own reference value.
    add("cosh1_standard", (e + 1 / e) / 2, std::cosh(1.0));
    add("cosh1_alternate", 2 * (e + 1 / e), std::cosh(1.0));
    return rep;
}

// ---------------------------------------------------------------------------
// Square structure.

struct SquareCell {
    int factor = 0;
    int position = 0;
    friend bool operator==(const SquareCell&, const SquareCell&) = default;
};

struct SquareStructure {
    int m = 0;
    FactorSet factors;
    // All 2^m subsets as bitmasks over factor indices, ordered by
    // (cardinality, lexicographic index sequence).
    std::vector<std::uint32_t> subsets;
    // difference_columns[k-1] holds the size-k differences from x0.
    std::vector<std::vector<std::uint32_t>> difference_columns;
    std::vector<std::vector<SquareCell>> rows;
    std::vector<std::vector<SquareCell>> columns;

    std::vector<std::string> subset_labels(std::uint32_t mask) const {
        std::vector<std::string> out;
        for (int i = 0; i < m; ++i)
            if (mask & (1u << i)) out.push_back(factors.label(static_cast<std::size_t>(i)));
        return out;
    }
};

inline constexpr int kMaxSquareFactors = 12;

namespace detail {

inline bool subset_less(std::uint32_t a, std::uint32_t b) {
    const int ca = std::popcount(a), cb = std::popcount(b);
    if (ca != cb) return ca < cb;
    // Lexicographic on ascending index lists.
    while (a != 0 && b != 0) {
        const int ia = std::countr_zero(a), ib = std::countr_zero(b);
        if (ia != ib) return ia < ib;
        a &= a - 1;
        b &= b - 1;
    }
    return false;
}

}  // namespace detail

/// All subsets of the factor set plus a cyclic m x m Latin arrangement:
/// row r, position c holds factor (r + c) mod m, so distinct rows are
/// derangements of each other.
inline SquareStructure enumerate_square(const FactorSet& factors) {
    const int m = static_cast<int>(factors.size());
    if (m < 1) throw DomainError("enumerate_square: need at least one factor");
    if (m > kMaxSquareFactors) throw DomainError("enumerate_square: at most 12 factors (2^m enumeration)");
    SquareStructure sq;
    sq.m = m;
    sq.factors = factors;
    const std::uint32_t total = 1u << m;
    sq.subsets.resize(total);
    for (std::uint32_t s = 0; s < total; ++s) sq.subsets[s] = s;
    std::sort(sq.subsets.begin(), sq.subsets.end(), detail::subset_less);

    sq.difference_columns.resize(static_cast<std::size_t>(m));
    for (auto s : sq.subsets)
        if (s != 0) sq.difference_columns[static_cast<std::size_t>(std::popcount(s) - 1)].push_back(s);

    sq.rows.assign(m, std::vector<SquareCell>(m));
    sq.columns.assign(m, std::vector<SquareCell>(m));
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < m; ++c) {
            const int f = (r + c) % m;
            sq.rows[r][c] = {f, c};
            sq.columns[c][r] = {f, r};
        }
    return sq;
}

/// Every factor exactly once per row and once per column.
inline bool is_latin(const SquareStructure& sq) {
    const auto check = [&](const std::vector<std::vector<SquareCell>>& lines) {
        if (lines.size() != static_cast<std::size_t>(sq.m)) return false;
        for (const auto& line : lines) {
            if (line.size() != static_cast<std::size_t>(sq.m)) return false;
            std::vector<int> seen(sq.m, 0);
            for (const auto& cell : line) {
                if (cell.factor < 0 || cell.factor >= sq.m || seen[cell.factor]++) return false;
            }
        }
        return true;
    };
    return check(sq.rows) && check(sq.columns);
}

}  // namespace bexg
