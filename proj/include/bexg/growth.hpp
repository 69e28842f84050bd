#pragma once

// Growth regimes on a discrete clock:
//   CF    binomial doubling, rebalanced every 2 time units (m = 1).
//   EV    exponential, one derangement completes every e time units.
//   EVCF  balance phases follow F_{t+1} = F_{t-1} + F_t (m - 1/m) and
//         alternate with growth phases of length 2/m.
// Growth is measured by successive ratios of finite differences, which is
// 2 for doubling, phi for Fibonacci, and 0 for a constant series.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bexg/combinatorics.hpp"
#include "bexg/error.hpp"

namespace bexg {

enum class Regime { CF, EV, EVCF };
enum class Phase { Growth, Balance };

inline std::string_view to_string(Regime r) {
    switch (r) {
        case Regime::CF: return "cf";
        case Regime::EV: return "ev";
        case Regime::EVCF: return "evcf";
    }
    return "?";
}

inline std::string_view to_string(Phase p) { return p == Phase::Growth ? "growth" : "balance"; }

inline std::optional<Regime> parse_regime(std::string_view s) {
    if (s == "cf") return Regime::CF;
    if (s == "ev") return Regime::EV;
    if (s == "evcf") return Regime::EVCF;
    return std::nullopt;
}

/// Bandwidth giving one unit of hyperbolic angle per balance phase: coth(1).
inline const double kUnitCycleBandwidth = 1.0 / std::tanh(1.0);

/// Clamp for artanh near omega = 1.
inline constexpr double kArtanhEpsilon = 1e-12;

struct GrowthConfig {
    int m = 2;
    int steps = 40;
    Regime regime = Regime::EVCF;
    std::uint64_t seed = 0;  // recorded for provenance; the recurrences are deterministic
    double n_a0 = 1.0;
    double n_abar0 = 1.0;
    // Balance multiplier for EVCF; defaults to m - 1/m. Setting 1 gives the
    // plain Fibonacci limit.
    std::optional<Rational> balance_multiplier;
    // Bandwidth used by the hyperbolic embedding of balance phases.
    double omega = kUnitCycleBandwidth;
};

struct GrowthRecord {
    double t = 0;
    double n_a = 0;
    double n_abar = 0;
    double n = 0;
    Phase phase = Phase::Growth;
    int cycle = 0;
    double derangements = 0;  // accumulated growth phases (radial coordinate)
};

struct GrowthTrajectory {
    Regime regime = Regime::EVCF;
    int m = 1;
    double omega = kUnitCycleBandwidth;
    std::vector<GrowthRecord> records;
    bool overflow = false;  // simulation stopped early: values left double range
};

struct CycleLengths {
    Rational balance;
    Rational full;
    Rational growth;
};

/// (m - 1/m, m + 1/m, 2/m), exact.
inline CycleLengths cycle_lengths(int m) {
    if (m < 1) throw DomainError("cycle_lengths: m must be >= 1");
    const Rational md = m, inv(1, m);
    return {md - inv, md + inv, 2 * inv};
}

/// F_0 = 0, F_1 = 1, F_{t+1} = F_{t-1} + F_t * multiplier, exact.
inline std::vector<Rational> balance_sequence(const Rational& multiplier, int count) {
    std::vector<Rational> f;
    if (count <= 0) return f;
    f.reserve(static_cast<std::size_t>(count));
    f.emplace_back(0);
    if (count > 1) f.emplace_back(1);
    while (static_cast<int>(f.size()) < count) {
        const auto n = f.size();
        f.push_back(f[n - 2] + f[n - 1] * multiplier);
    }
    return f;
}

namespace detail {

inline void validate(const GrowthConfig& cfg) {
    if (cfg.steps < 1) throw ConfigError("growth: steps must be >= 1");
    if (!(cfg.n_a0 > 0) || !(cfg.n_abar0 > 0)) throw ConfigError("growth: initial sizes must be positive");
}

}  // namespace detail

/// EV-CF growth. Each cycle is a balance phase of length m - 1/m (n_abar
/// advances one term of the balance sequence) followed by a growth phase of
/// length 2/m (n_a doubles). The clock ticks in units of 1/m so phase
/// boundaries are exact. n stays at m + 1/m.
inline GrowthTrajectory simulate_evcf_growth(const GrowthConfig& cfg) {
    detail::validate(cfg);
    if (cfg.m < 2) throw ConfigError("evcf growth requires m >= 2");
    const int m = cfg.m;
    const Rational mult = cfg.balance_multiplier.value_or(Rational(m * m - 1, m));
    const auto fib = balance_sequence(mult, cfg.steps + 2);
    const long long balance_ticks = static_cast<long long>(m) * m - 1;
    const long long cycle_ticks = static_cast<long long>(m) * m + 1;
    const double n_fixed = m + 1.0 / m;

    GrowthTrajectory tr;
    tr.regime = Regime::EVCF;
    tr.m = m;
    tr.omega = cfg.omega;
    tr.records.push_back({0.0, cfg.n_a0, cfg.n_abar0 * static_cast<double>(fib[1]), n_fixed, Phase::Growth, 0, 0.0});

    double n_a = cfg.n_a0;
    for (int k = 1; k <= cfg.steps; ++k) {
        const long long start = (k - 1) * cycle_ticks;
        const double n_abar = cfg.n_abar0 * static_cast<double>(fib[static_cast<std::size_t>(k + 1)]);
        const double grown = n_a * 2.0;
        if (!std::isfinite(n_abar) || !std::isfinite(grown)) {
            tr.overflow = true;
            break;
        }
        tr.records.push_back({static_cast<double>(start + balance_ticks) / m, n_a, n_abar, n_fixed, Phase::Balance,
                              k, static_cast<double>(k - 1)});
        n_a = grown;
        tr.records.push_back({static_cast<double>(start + cycle_ticks) / m, n_a, n_abar, n_fixed, Phase::Growth, k,
                              static_cast<double>(k)});
    }
    return tr;
}

/// CF growth (m = 1): every unit added to n_a is matched by one in n_abar,
/// so n_a / n_abar returns to its initial value at each cycle end (t = 2k).
/// n holds the cycle length m + 1/m = 2.
inline GrowthTrajectory simulate_cf_growth(const GrowthConfig& cfg) {
    detail::validate(cfg);
    GrowthTrajectory tr;
    tr.regime = Regime::CF;
    tr.m = 1;
    tr.omega = cfg.omega;
    const double n_fixed = 2.0;
    double n_a = cfg.n_a0, n_abar = cfg.n_abar0;
    tr.records.push_back({0.0, n_a, n_abar, n_fixed, Phase::Balance, 0, 0.0});
    for (int k = 1; k <= cfg.steps; ++k) {
        if (!std::isfinite(n_a * 2.0)) {
            tr.overflow = true;
            break;
        }
        n_a *= 2.0;
        tr.records.push_back({2.0 * k - 1.0, n_a, n_abar, n_fixed, Phase::Growth, k, static_cast<double>(k)});
        n_abar *= 2.0;
        tr.records.push_back({2.0 * k, n_a, n_abar, n_fixed, Phase::Balance, k, static_cast<double>(k)});
    }
    return tr;
}

/// EV growth at unitary bandwidth: n(t) = n_a0 exp(t / e), sampled at unit
/// time. All of n is growth; n_abar is untouched and there are no balance
/// phases. derangements = t / e.
inline GrowthTrajectory simulate_ev_growth(const GrowthConfig& cfg) {
    detail::validate(cfg);
    GrowthTrajectory tr;
    tr.regime = Regime::EV;
    tr.m = cfg.m;
    tr.omega = 1.0;
    constexpr double e = std::numbers::e;
    for (int k = 0; k <= cfg.steps; ++k) {
        const double t = k;
        const double n = cfg.n_a0 * std::exp(t / e);
        if (!std::isfinite(n)) {
            tr.overflow = true;
            break;
        }
        tr.records.push_back({t, n, cfg.n_abar0, n, Phase::Growth, static_cast<int>(std::floor(t / e)), t / e});
    }
    return tr;
}

inline GrowthTrajectory simulate(const GrowthConfig& cfg) {
    switch (cfg.regime) {
        case Regime::CF: return simulate_cf_growth(cfg);
        case Regime::EV: return simulate_ev_growth(cfg);
        case Regime::EVCF: return simulate_evcf_growth(cfg);
    }
    throw ConfigError("unknown regime");
}

// ---------------------------------------------------------------------------
// Rates.

struct RateEstimate {
    double rate_n_abar = 0;       // growth factor of n_abar per cycle
    double rate_n_a = 0;          // growth factor of n_a per cycle
    double ratio = 0;             // rate_n_abar / rate_n_a
    double cosh_per_growth = 0;   // growth factor of the derivative track of n_abar over rate_n_a
    int window = 0;
    int cycles = 0;               // cycle-end samples available
};

/// Last record of every cycle (cycle 0 is the initial state).
inline std::vector<GrowthRecord> cycle_ends(const GrowthTrajectory& tr) {
    std::vector<GrowthRecord> out;
    for (const auto& r : tr.records) {
        if (!out.empty() && out.back().cycle == r.cycle)
            out.back() = r;
        else
            out.push_back(r);
    }
    return out;
}

namespace detail {

inline std::vector<double> differences(const std::vector<double>& x) {
    std::vector<double> d;
    for (std::size_t i = 1; i < x.size(); ++i) d.push_back(x[i] - x[i - 1]);
    return d;
}

// Mean of d[i] / d[i-1] over the last `window` ratios; 0/0-style terms count as 0.
inline double trailing_growth_factor(const std::vector<double>& d, int window) {
    if (d.size() < 2) return 0.0;
    const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(window), d.size() - 1);
    double sum = 0;
    for (std::size_t i = d.size() - w; i < d.size(); ++i) sum += d[i - 1] != 0 ? d[i] / d[i - 1] : 0.0;
    return sum / static_cast<double>(w);
}

}  // namespace detail

inline RateEstimate estimate_rates(const GrowthTrajectory& tr, int window) {
    if (window < 2) throw ConfigError("estimate_rates: window must be >= 2");
    const auto ends = cycle_ends(tr);
    if (ends.size() < static_cast<std::size_t>(2 * window))
        throw InsufficientData("estimate_rates: trajectory shorter than twice the window");
    std::vector<double> a, abar;
    for (const auto& r : ends) {
        a.push_back(r.n_a);
        abar.push_back(r.n_abar);
    }
    RateEstimate est;
    est.window = window;
    est.cycles = static_cast<int>(ends.size());
    const auto da = detail::differences(a);
    const auto dabar = detail::differences(abar);
    est.rate_n_a = detail::trailing_growth_factor(da, window);
    est.rate_n_abar = detail::trailing_growth_factor(dabar, window);
    const double cosh_track = detail::trailing_growth_factor(detail::differences(dabar), window);
    est.ratio = est.rate_n_a != 0 ? est.rate_n_abar / est.rate_n_a : 0.0;
    est.cosh_per_growth = est.rate_n_a != 0 ? cosh_track / est.rate_n_a : 0.0;
    return est;
}

// ---------------------------------------------------------------------------
// Hyperbolic embedding.

struct HyperbolicPoint {
    double radial = 0;   // accumulated derangements
    double angular = 0;  // accumulated hyperbolic angle of balance phases
    bool saturated = false;
};

/// Angle contributed by one balance phase at bandwidth omega: artanh(1/omega),
/// with 1/omega clamped below 1 - epsilon.
inline double balance_angle(double omega, bool* saturated = nullptr) {
    if (!(omega > 0)) throw DomainError("balance_angle: omega must be positive");
    double inv = 1.0 / omega;
    const bool clamp = inv >= 1.0 - kArtanhEpsilon;
    if (clamp) inv = 1.0 - kArtanhEpsilon;
    if (saturated) *saturated = clamp;
    return std::atanh(inv);
}

/// Growth phases move outward (radial = derangements), balance phases rotate
/// (angular += artanh(1/omega)). The initial record sits at angle 0.
inline std::vector<HyperbolicPoint> hyperbolic_embed(const GrowthTrajectory& tr) {
    std::vector<HyperbolicPoint> pts;
    pts.reserve(tr.records.size());
    double angle = 0;
    bool saturated_any = false;
    for (std::size_t i = 0; i < tr.records.size(); ++i) {
        const auto& r = tr.records[i];
        if (i > 0 && r.phase == Phase::Balance) {
            bool sat = false;
            angle += balance_angle(tr.omega, &sat);
            saturated_any = saturated_any || sat;
        }
        pts.push_back({r.derangements, angle, saturated_any});
    }
    return pts;
}

/// Combinatorial state at each cycle end: m = balance phases completed,
/// n = growth phases completed. Used for the reciprocal-Pythagorean diagnostic.
inline std::vector<CombinatorialState> trajectory_states(const GrowthTrajectory& tr) {
    std::vector<CombinatorialState> out;
    int balances = 0;
    int growths = 0;
    const auto& recs = tr.records;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        if (i > 0) (recs[i].phase == Phase::Balance ? balances : growths)++;
        if (i + 1 == recs.size() || recs[i + 1].cycle != recs[i].cycle) out.push_back(make_state(balances, growths));
    }
    return out;
}

}  // namespace bexg
