#pragma once

// Two-population rock-paper-scissors under replicator dynamics with a common
// unobserved noise, and the two-phase protocol that first fills a balanced
// counterfactual ledger before competitive play.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "bexg/error.hpp"

namespace bexg {

enum Action : int { Rock = 0, Paper = 1, Scissors = 2 };
inline constexpr int kActions = 3;

/// payoff[i][j]: utility of playing i against j.
using Payoff = std::array<std::array<double, kActions>, kActions>;

/// win +1, lose -1, tie 0.
inline Payoff standard_rps() {
    return {{{0.0, -1.0, 1.0}, {1.0, 0.0, -1.0}, {-1.0, 1.0, 0.0}}};
}

struct GameSpec {
    Payoff payoff = standard_rps();
    double noise_sd = 0.1;
    double dt = 0.01;
    std::uint64_t seed = 0;
};

struct StrategyState {
    std::array<double, kActions> p{1.0 / 3, 1.0 / 3, 1.0 / 3};

    static StrategyState center() { return {}; }
    static StrategyState vertex(Action a) {
        StrategyState s;
        s.p = {0.0, 0.0, 0.0};
        s.p[a] = 1.0;
        return s;
    }
    double sum() const { return p[0] + p[1] + p[2]; }
    bool on_simplex(double tol) const {
        for (double x : p)
            if (!(x >= -tol && x <= 1.0 + tol)) return false;
        return std::abs(sum() - 1.0) <= tol;
    }
    friend bool operator==(const StrategyState&, const StrategyState&) = default;
};

using NoiseDraw = std::array<double, kActions>;
using StrategyTrajectory = std::vector<StrategyState>;

inline void validate(const GameSpec& spec) {
    if (!(spec.noise_sd >= 0)) throw ConfigError("noise_sd must be >= 0");
    if (!(spec.dt > 0)) throw ConfigError("dt must be > 0");
}

/// One Euler step of x_i += dt x_i (f_i - fbar), f = payoff * opponent + noise,
/// then clipped and renormalised onto the simplex.
inline StrategyState replicator_step(const StrategyState& own, const StrategyState& opponent, const Payoff& payoff,
                                     double dt, const NoiseDraw& shared_noise) {
    if (!own.on_simplex(1e-9) || !opponent.on_simplex(1e-9))
        throw ContractViolation("replicator_step: state off the simplex");
    std::array<double, kActions> f{};
    double fbar = 0;
    for (int i = 0; i < kActions; ++i) {
        for (int j = 0; j < kActions; ++j) f[i] += payoff[i][j] * opponent.p[j];
        f[i] += shared_noise[i];
        fbar += own.p[i] * f[i];
    }
    StrategyState next;
    double total = 0;
    for (int i = 0; i < kActions; ++i) {
        next.p[i] = std::max(0.0, own.p[i] + dt * own.p[i] * (f[i] - fbar));
        total += next.p[i];
    }
    if (!(total > 0)) throw ContractViolation("replicator_step: state collapsed");
    for (auto& x : next.p) x /= total;
    return next;
}

inline StrategyState replicator_step(const StrategyState& own, const StrategyState& opponent, const GameSpec& spec,
                                     const NoiseDraw& shared_noise) {
    return replicator_step(own, opponent, spec.payoff, spec.dt, shared_noise);
}

/// Mean Euclidean distance from (1/3, 1/3, 1/3).
inline double nash_distance(const StrategyTrajectory& traj) {
    if (traj.empty()) throw InsufficientData("nash_distance: empty trajectory");
    double sum = 0;
    for (const auto& s : traj) {
        double d2 = 0;
        for (double x : s.p) d2 += (x - 1.0 / 3) * (x - 1.0 / 3);
        sum += std::sqrt(d2);
    }
    return sum / static_cast<double>(traj.size());
}

/// Independent, reproducible seed for run `index` (splitmix64).
inline std::uint64_t run_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

struct GameRun {
    std::uint64_t seed = 0;
    StrategyTrajectory player1;
    StrategyTrajectory player2;

    /// Mean of both players' Nash distances.
    double nash_distance() const { return 0.5 * (bexg::nash_distance(player1) + bexg::nash_distance(player2)); }
};

namespace detail {

class NoiseSource {
  public:
    NoiseSource(std::uint64_t seed, double sd) : rng_(seed), sd_(sd) {}
    NoiseDraw draw() {
        NoiseDraw e{};
        if (sd_ == 0) return e;
        for (auto& x : e) x = dist_(rng_) * sd_;
        return e;
    }

  private:
    std::mt19937_64 rng_;
    std::normal_distribution<double> dist_{0.0, 1.0};
    double sd_;
};

inline void play(GameRun& run, const Payoff& payoff, double dt, int steps, NoiseSource* noise) {
    StrategyState x = StrategyState::center(), y = StrategyState::center();
    run.player1.reserve(static_cast<std::size_t>(steps) + 1);
    run.player2.reserve(static_cast<std::size_t>(steps) + 1);
    run.player1.push_back(x);
    run.player2.push_back(y);
    for (int t = 0; t < steps; ++t) {
        const NoiseDraw e = noise ? noise->draw() : NoiseDraw{};
        const StrategyState nx = replicator_step(x, y, payoff, dt, e);
        const StrategyState ny = replicator_step(y, x, payoff, dt, e);
        x = nx;
        y = ny;
        run.player1.push_back(x);
        run.player2.push_back(y);
    }
}

}  // namespace detail

/// Both players start at the centre and observe noisy payoffs each step; the
/// same per-action noise vector enters both players' utilities.
inline std::vector<GameRun> run_baseline(const GameSpec& spec, int steps, int runs) {
    validate(spec);
    if (runs < 1) throw ConfigError("run_baseline: runs must be >= 1");
    if (steps < 0) throw ConfigError("run_baseline: steps must be >= 0");
    std::vector<GameRun> out(static_cast<std::size_t>(runs));
    for (int r = 0; r < runs; ++r) {
        auto& run = out[static_cast<std::size_t>(r)];
        run.seed = run_seed(spec.seed, static_cast<std::uint64_t>(r));
        detail::NoiseSource noise(run.seed, spec.noise_sd);
        detail::play(run, spec.payoff, spec.dt, steps, &noise);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Counterfactual ledger.

struct LedgerCell {
    long long count = 0;
    double mean_utility = 0;  // running mean of observed utility for (own, opponent)
};

class CounterfactualLedger {
  public:
    explicit CounterfactualLedger(long long k_min = 1, double balance_tolerance = 0.0)
        : k_min_(k_min), tolerance_(balance_tolerance) {}

    void record(int own, int opponent, double utility) {
        auto& c = cells_.at(own).at(opponent);
        ++c.count;
        c.mean_utility += (utility - c.mean_utility) / static_cast<double>(c.count);
    }

    const LedgerCell& cell(int own, int opponent) const { return cells_.at(own).at(opponent); }
    long long k_min() const noexcept { return k_min_; }
    double balance_tolerance() const noexcept { return tolerance_; }

    long long min_count() const {
        long long m = cells_[0][0].count;
        for (const auto& row : cells_)
            for (const auto& c : row) m = std::min(m, c.count);
        return m;
    }
    long long max_count() const {
        long long m = 0;
        for (const auto& row : cells_)
            for (const auto& c : row) m = std::max(m, c.count);
        return m;
    }

    /// Every cell reaches k_min and per-action observation counts are balanced.
    bool complete() const {
        if (min_count() < k_min_) return false;
        std::array<long long, kActions> per_action{};
        for (int i = 0; i < kActions; ++i)
            for (int j = 0; j < kActions; ++j) per_action[i] += cells_[i][j].count;
        const auto [lo, hi] = std::minmax_element(per_action.begin(), per_action.end());
        return static_cast<double>(*hi) <= static_cast<double>(*lo) * (1.0 + tolerance_);
    }

    Payoff estimated_payoff() const {
        Payoff p{};
        for (int i = 0; i < kActions; ++i)
            for (int j = 0; j < kActions; ++j) p[i][j] = cells_[i][j].mean_utility;
        return p;
    }

  private:
    std::array<std::array<LedgerCell, kActions>, kActions> cells_{};
    long long k_min_;
    double tolerance_;
};

struct TwoPhaseRun {
    GameRun run;  // phase-2 trajectories
    CounterfactualLedger ledger;
    long long phase1_rounds = 0;
};

/// Phase 1: deterministic round-robin over the 9 action pairs; each play
/// records player 1's noisy utility in cell (a, b) and player 2's in (b, a),
/// until the ledger is complete. A mirror pair (a, a) shares one noise draw
/// and is recorded once. Phase 2: replicator play against the frozen
/// ledger means, with no further noise.
inline std::vector<TwoPhaseRun> run_two_phase(const GameSpec& spec, long long k_min, int steps, int runs,
                                              double balance_tolerance = 0.0) {
    validate(spec);
    if (k_min < 1) throw ConfigError("run_two_phase: k_min must be >= 1");
    if (runs < 1) throw ConfigError("run_two_phase: runs must be >= 1");
    if (steps < 0) throw ConfigError("run_two_phase: steps must be >= 0");
    std::vector<TwoPhaseRun> out;
    out.reserve(static_cast<std::size_t>(runs));
    for (int r = 0; r < runs; ++r) {
        TwoPhaseRun tp{GameRun{}, CounterfactualLedger(k_min, balance_tolerance), 0};
        tp.run.seed = run_seed(spec.seed, static_cast<std::uint64_t>(r));
        detail::NoiseSource noise(tp.run.seed, spec.noise_sd);
        while (!tp.ledger.complete()) {
            for (int a = 0; a < kActions; ++a)
                for (int b = 0; b < kActions; ++b) {
                    const NoiseDraw e = noise.draw();
                    tp.ledger.record(a, b, spec.payoff[a][b] + e[a]);
                    if (a != b) tp.ledger.record(b, a, spec.payoff[b][a] + e[b]);
                }
            ++tp.phase1_rounds;
        }
        detail::play(tp.run, tp.ledger.estimated_payoff(), spec.dt, steps, nullptr);
        out.push_back(std::move(tp));
    }
    return out;
}

}  // namespace bexg
