#pragma once

// Command implementations shared by the CLI and the in-process tests. Every
// command reads a Config, writes payload files through io::Output and never
// embeds wall-clock data in payloads.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "bexg/combinatorics.hpp"
#include "bexg/error.hpp"
#include "bexg/fitting.hpp"
#include "bexg/games.hpp"
#include "bexg/growth.hpp"
#include "bexg/io.hpp"
#include "bexg/spatial.hpp"

namespace bexg::pipeline {

using io::Config;
using io::fmt;
using io::Json;
using io::Output;
using io::UsageError;

// ---------------------------------------------------------------------------
// Rank-frequency model comparison.

struct RankObservations {
    std::vector<Point> local;               // (local rank, share)
    std::vector<RankObservation> global;    // (global rank, share)
};

/// One observation per (sub-location, tracked factor): its share of the
/// sub-location's tracked units, indexed by local rank and by window rank.
inline RankObservations rank_observations(const RankTable& rt) {
    RankObservations obs;
    const auto global = rank_counts(rt.totals, rt.tracked);
    for (const auto& c : rt.cells) {
        long long total = 0;
        for (auto v : c.counts) total += v;
        if (total == 0) continue;
        for (std::size_t f = 0; f < rt.m(); ++f) {
            const double share = static_cast<double>(c.counts[f]) / static_cast<double>(total);
            obs.local.push_back({static_cast<double>(c.ranks[f]), share});
            obs.global.push_back({static_cast<double>(global[f]), share});
        }
    }
    return obs;
}

struct RankModels {
    CothFit coth;
    ZipfFit zipf;
    ModelComparison comparison;
    std::size_t n = 0;
};

inline RankModels compare_rank_models(const RankTable& rt, const FitOptions& opt = {}) {
    const auto obs = rank_observations(rt);
    RankModels r;
    r.n = obs.local.size();
    r.coth = fit_coth(obs.local, Branch::Positive, opt);
    r.zipf = fit_rank_zipf(obs.global, opt);
    r.comparison = compare_bic(r.coth, r.zipf, r.n);
    return r;
}

// ---------------------------------------------------------------------------
// Per-location spatial analysis.

struct SpatialParams {
    double s0 = 0.1;
    double delta_s = 0.1;
    int levels = 15;
    double cell = 0.1;
    std::size_t m = 6;
    double tau = kDefaultBalanceTolerance;
    FitOptions fit;
};

struct FactorSlack {
    std::size_t factor = 0;
    CatenaryFit fit;
    double sag = 0;        // height between hanging point and lowest point
    double per_level = 0;  // sag divided by the number of level steps
};

struct LocationAnalysis {
    GeoPoint x0;
    bool empty = false;
    std::vector<std::size_t> tracked;
    std::vector<RankTable> tables;
    std::optional<SquareDetection> detection;
    std::vector<std::pair<std::size_t, std::vector<AcfPoint>>> acf;
    std::vector<FactorSlack> slack;
    std::optional<CothFit> r_omega_fit;
    std::optional<CothFit> r0_fit;
    std::optional<std::pair<double, double>> angle_split;
    std::optional<RankModels> models;
    std::vector<io::RunError> errors;
    std::vector<std::string> notes;
};

namespace detail {

// InsufficientData (and DomainError when `degenerate_ok`) become notes.
template <class F>
void stage(LocationAnalysis& a, const std::string& name, F&& f, bool degenerate_ok = false) {
    try {
        f();
    } catch (const InsufficientData& e) {
        a.notes.push_back(name + ": skipped, " + e.what());
    } catch (const DomainError& e) {
        if (degenerate_ok)
            a.notes.push_back(name + ": degenerate, " + e.what());
        else
            a.errors.push_back({name, e.what()});
    } catch (const std::exception& e) {
        a.errors.push_back({name, e.what()});
    }
}

inline UnitTable subset(const UnitTable& t, std::span<const std::size_t> members) {
    UnitTable out;
    out.factors = t.factors;
    out.units.reserve(members.size());
    for (auto i : members) out.units.push_back(t.units[i]);
    return out;
}

}  // namespace detail

/// Rank tables, square detection, correlation profiles with catenary fits,
/// coth fits to the band edges and the coth/Zipf comparison around x0.
inline LocationAnalysis analyze_location(const UnitTable& table, GeoPoint x0, const SpatialParams& p) {
    LocationAnalysis a;
    a.x0 = x0;
    const CellGrid grid{x0, p.cell};
    const auto levels = build_levels(table, x0, p.s0, p.delta_s, p.levels);
    const auto last = levels.windows.size() - 1;
    if (levels.windows[last].member_count == 0) {
        a.empty = true;
        a.notes.push_back("empty window at every level");
        return a;
    }
    a.tracked = top_factors(table, p.m, levels.members(last));
    a.tables = rank_tables(table, levels, a.tracked, grid);
    for (const auto& rt : a.tables)
        if (rt.empty()) a.notes.push_back("empty window at s=" + fmt(rt.s));

    detail::stage(a, "detect_square", [&] {
        std::vector<RankTable> nonempty;
        for (const auto& rt : a.tables)
            if (!rt.empty()) nonempty.push_back(rt);
        a.detection = detect_square(nonempty, p.tau);
    });

    const auto window = detail::subset(table, levels.members(last));
    for (auto f : a.tracked) {
        detail::stage(a, "acf:" + table.factors.label(f), [&] {
            auto prof = acf_profile(window, f, grid, p.s0, p.delta_s, p.levels);
            std::vector<Point> pts;
            for (const auto& q : prof)
                if (q.correlation) pts.push_back({q.s, *q.correlation});
            a.acf.emplace_back(f, std::move(prof));
            FactorSlack fs;
            fs.factor = f;
            fs.fit = fit_catenary(pts, p.fit);
            fs.sag = catenary_sag(fs.fit, pts.front().x, pts.back().x);
            fs.per_level = fs.sag / static_cast<double>(std::max<std::size_t>(1, pts.size() - 1));
            a.slack.push_back(fs);
        });
    }

    if (a.detection) {
        std::vector<Point> hi, lo;
        for (const auto& band : a.detection->levels) {
            double sw = 0, s0 = 0;
            int n = 0;
            for (std::size_t f = 0; f < band.r0.size(); ++f)
                if (band.r0[f] > 0) {
                    sw += band.r_omega[f];
                    s0 += band.r0[f];
                    ++n;
                }
            if (n == 0) continue;
            hi.push_back({band.s, sw / n});
            lo.push_back({band.s, s0 / n});
        }
        detail::stage(a, "coth:r_omega", [&] { a.r_omega_fit = fit_coth(hi, Branch::Positive, p.fit); });
        detail::stage(a, "coth:r0", [&] { a.r0_fit = fit_coth(lo, Branch::Negative, p.fit); });
        if (a.r_omega_fit && a.r0_fit)
            detail::stage(
                a, "angle_split", [&] { a.angle_split = branch_angle_split(*a.r_omega_fit, *a.r0_fit); }, true);
        const auto& det_table = a.tables.at(static_cast<std::size_t>(a.detection->levels.at(
            static_cast<std::size_t>(a.detection->detection_level)).level_index));
        detail::stage(a, "compare_bic", [&] { a.models = compare_rank_models(det_table, p.fit); });
    }
    return a;
}

// ---------------------------------------------------------------------------
// JSON helpers.

inline Json to_json(const IdentityReport& r) {
    Json variants = Json::array();
    for (const auto& v : r.variants) {
        Json j;
        j["name"] = v.name;
        j["value"] = io::json_number(v.value);
        j["exact"] = v.exact ? Json(v.exact->str()) : Json(nullptr);
        j["abs_dev"] = io::json_number(v.abs_dev);
        j["rel_dev"] = io::json_number(v.rel_dev);
        j["matches"] = v.matches;
        variants.push_back(j);
    }
    Json j;
    j["identity"] = r.identity;
    j["m"] = r.m;
    j["lhs"] = io::json_number(r.lhs);
    j["lhs_exact"] = r.lhs_exact ? Json(r.lhs_exact->str()) : Json(nullptr);
    j["variants"] = variants;
    return j;
}

inline std::string rational_str(const Rational& q) {
    const BigInt num = boost::multiprecision::numerator(q), den = boost::multiprecision::denominator(q);
    return den == 1 ? num.str() : num.str() + "/" + den.str();
}

inline Rational parse_rational(const std::string& s) {
    try {
        const auto slash = s.find('/');
        if (slash == std::string::npos) return Rational(BigInt(s));
        return Rational(BigInt(s.substr(0, slash)), BigInt(s.substr(slash + 1)));
    } catch (const std::exception&) {
        throw UsageError("expected an integer or p/q rational, got '" + s + "'");
    }
}

inline Json to_json(const CatenaryFit& f) {
    Json j;
    j["model"] = "catenary";
    j["h"] = io::json_number(f.h);
    j["x_c"] = io::json_number(f.x_c);
    j["y_offset"] = io::json_number(f.y_offset);
    j["rss"] = io::json_number(f.rss);
    j["n_points"] = f.n_points;
    j["log_likelihood"] = io::json_number(gaussian_log_likelihood(f.rss, f.n_points));
    j["converged"] = f.converged;
    j["linear_fallback"] = f.linear_fallback;
    if (f.linear_fallback) {
        j["slope"] = io::json_number(f.slope);
        j["intercept"] = io::json_number(f.intercept);
    }
    return j;
}

inline Json to_json(const CothFit& f) {
    Json j;
    j["model"] = "coth";
    j["branch"] = to_string(f.branch);
    j["a"] = io::json_number(f.a);
    j["b"] = io::json_number(f.b);
    j["s_c"] = io::json_number(f.s_c);
    j["c"] = io::json_number(f.c);
    j["rss"] = io::json_number(f.rss);
    j["n_points"] = f.n_points;
    j["log_likelihood"] = io::json_number(f.log_likelihood());
    j["s_range"] = {io::json_number(f.s_min), io::json_number(f.s_max)};
    j["converged"] = f.converged;
    return j;
}

inline Json to_json(const ZipfFit& f) {
    Json j;
    j["model"] = f.rank_exponent ? "rank_zipf" : "pareto";
    j["alpha"] = io::json_number(f.alpha);
    j["x_min"] = io::json_number(f.x_min);
    j["standard_error"] = io::json_number(f.standard_error);
    j["log_likelihood"] = io::json_number(f.log_likelihood);
    j["n"] = f.n;
    j["degenerate"] = f.degenerate;
    if (f.rank_exponent) j["rank_exponent"] = io::json_number(*f.rank_exponent);
    return j;
}

inline Json to_json(const ModelComparison& c) {
    Json j;
    j["bic_coth"] = io::json_number(c.bic_coth);
    j["bic_zipf"] = io::json_number(c.bic_zipf);
    j["likelihood_ratio"] = io::json_number(c.likelihood_ratio);
    j["log_likelihood_ratio"] = io::json_number((c.bic_zipf - c.bic_coth) / 2);
    j["preferred"] = to_string(c.preferred);
    j["likelihoods"] = "coth: Gaussian residuals of share on local rank; zipf: Gaussian residuals of share on window rank";
    return j;
}

inline Json detection_json(const SquareDetection& d) {
    Json j;
    j["s_sq"] = d.s_sq ? Json(*d.s_sq) : Json(nullptr);
    j["omega_hat"] = d.omega_hat;
    j["coverage"] = d.coverage;
    j["theta1"] = io::json_number(d.theta1);
    j["balance_ok"] = d.balance_ok;
    j["detection_level"] = d.detection_level;
    j["r0"] = d.r0;
    j["r_omega"] = d.r_omega;
    Json lv = Json::array();
    for (const auto& b : d.levels)
        lv.push_back({{"s", io::json_number(b.s)},
                      {"cells", b.cells},
                      {"coverage_fraction", io::json_number(b.coverage_fraction)},
                      {"full_coverage", b.full_coverage},
                      {"balance_ok", b.balance_ok}});
    j["levels"] = lv;
    return j;
}

// ---------------------------------------------------------------------------
// Command table.

struct KeyInfo {
    std::string key;
    std::string help;
};

struct CommandInfo {
    std::string name;
    std::string help;
    std::vector<KeyInfo> keys;
};

inline const std::vector<KeyInfo>& synthetic_keys() {
    static const std::vector<KeyInfo> k{
        {"squares", "planted squares m:omega:s_sq separated by ';' (default 6:6:0.6)"},
        {"n_locations", "number of grid cells (default 225)"},
        {"units_per_location", "units per cell per planted square (default 294)"},
        {"noise", "probability of resampling a unit's label (default 0)"},
        {"rank_exponent", "Zipf exponent of planted rank weights (default 1)"},
        {"lat0", "grid origin latitude (default 40)"},
        {"lon0", "grid origin longitude (default -100)"},
        {"years", "number of yearly snapshots (default 1)"},
        {"year", "first year (default 2020)"},
    };
    return k;
}

inline const std::vector<CommandInfo>& commands() {
    static const std::vector<CommandInfo> table = [] {
        std::vector<CommandInfo> t{
            {"kernels",
             "exact identity reports and derangement/Fibonacci tables",
             {{"m_max", "largest m for identity reports, <= 20 (default 12)"},
              {"n_max", "largest n for kernel tables, <= 20 (default 20)"},
              {"x", "argument of the hyperbolic-constant check, |x| < 1 (default 0.5)"}}},
            {"simulate",
             "growth trajectory, rates and hyperbolic embedding",
             {{"regime", "cf, ev or evcf (default evcf)"},
              {"m", "factor count (default 1 for cf, 2 otherwise)"},
              {"steps", "cycles or time units to simulate (default 40)"},
              {"window", "rate averaging window (default 4)"},
              {"multiplier", "evcf balance multiplier: integer, p/q or 'auto' for m - 1/m (default 1)"}}},
            {"rps",
             "rock-paper-scissors replicator runs",
             {{"mode", "baseline, two-phase or both (default both)"},
              {"runs", "matched seeds per mode (default 10)"},
              {"steps", "replicator steps (default 5000)"},
              {"noise_sd", "sd of the shared payoff noise (default 0.1)"},
              {"dt", "Euler step (default 0.01)"},
              {"k_min", "ledger observations per cell before phase 2 (default 100)"}}},
            {"generate", "synthetic microdata with planted squares", synthetic_keys()},
            {"spatial",
             "rank tables, square detection, correlation profiles and fits per reference location",
             {{"input", "microdata CSV; omitted means synthetic data from the generator keys"},
              {"x0", "reference locations lat:lon separated by ';'"},
              {"s0", "first window radius (default 0.1)"},
              {"delta_s", "window radius step (default 0.1)"},
              {"levels", "number of windows (default 15)"},
              {"cell", "sub-location cell size (default: generator cell, else delta_s)"},
              {"m", "tracked factor count (default: first planted m, else 6)"},
              {"tau", "balance tolerance (default 0.25)"},
              {"fit_starts", "coth multi-starts (default 8)"},
              {"fit_tolerance", "relative convergence tolerance of the fits (default 1e-9)"}}},
            {"fit",
             "fit a curve model to CSV data",
             {{"input", "CSV with columns x,y (catenary, coth) or value (zipf)"},
              {"model", "catenary, coth or zipf"},
              {"branch", "coth branch: positive or negative (default positive)"},
              {"x_min", "zipf threshold (default: smallest value)"},
              {"standardize_m", "standardize catenary input to reach m before fitting"},
              {"fit_starts", "coth multi-starts (default 8)"},
              {"fit_tolerance", "relative convergence tolerance (default 1e-9)"}}},
            {"spectrum",
             "periodogram of a series",
             {{"input", "CSV with a value column"},
              {"series", "generated series when no input: cosh_sinh or sine (default cosh_sinh)"},
              {"t_max", "cosh_sinh: sample t over [0, t_max] (default 100)"},
              {"period", "sine: period in samples (default 8)"},
              {"samples", "generated series length (default 1024)"}}},
        };
        for (auto& k : synthetic_keys()) t[4].keys.push_back(k);
        for (auto& c : t) {
            c.keys.push_back({"seed", "random seed"});
            c.keys.push_back({"jobs", "worker threads (default 1)"});
        }
        return t;
    }();
    return table;
}

inline const CommandInfo& command_info(const std::string& name) {
    for (const auto& c : commands())
        if (c.name == name) return c;
    throw UsageError("unknown command '" + name + "'");
}

inline void check_keys(const std::string& command, const Config& cfg) {
    const auto& info = command_info(command);
    for (const auto& [k, _] : cfg.values()) {
        if (k == "out") continue;
        const bool known = std::any_of(info.keys.begin(), info.keys.end(), [&](const KeyInfo& ki) { return ki.key == k; });
        if (!known) throw UsageError(command + ": unknown key '" + k + "'");
    }
}

inline FitOptions fit_options(const Config& cfg) {
    FitOptions opt;
    opt.starts = static_cast<int>(cfg.integer("fit_starts", opt.starts));
    opt.tolerance = cfg.real("fit_tolerance", opt.tolerance);
    if (opt.starts < 1 || !(opt.tolerance > 0)) throw UsageError("fit_starts must be >= 1 and fit_tolerance > 0");
    return opt;
}

inline std::uint64_t require_seed(const Config& cfg, const std::string& command) {
    if (!cfg.has("seed")) throw UsageError(command + ": an explicit seed is required");
    return cfg.u64("seed", 0);
}

// ---------------------------------------------------------------------------
// Commands.

inline void cmd_kernels(const Config& cfg, Output& out) {
    const auto m_max = cfg.integer("m_max", 12), n_max = cfg.integer("n_max", 20);
    if (m_max < 0 || m_max > 20 || n_max < 0 || n_max > 20) throw UsageError("kernels: m_max and n_max must lie in 0..20");
    const double x = cfg.real("x", 0.5);
    if (!(std::abs(x) < 1)) throw UsageError("kernels: |x| must be < 1");
    Json ids = Json::array();
    for (int m = 0; m <= m_max; ++m) ids.push_back(to_json(verify_factorial_identity(m)));
    out.json("identities.json", {{"identities", ids}, {"hyperbolic_constants", to_json(verify_hyperbolic_constants(x))}});
    std::vector<std::vector<std::string>> rows;
    for (int n = 0; n <= n_max; ++n)
        rows.push_back({std::to_string(n), derangement_count(n).str(), factorial(n).str(),
                        rational_str(derangement_fraction(n)), fmt(derangement_ratio(n)), fibonacci_diagonal(n).str()});
    out.csv("kernels.csv", {"n", "d_n", "n_factorial", "d_n_over_n_factorial", "d_n_over_n_factorial_float", "fibonacci_diagonal"},
            rows);
}

inline void cmd_simulate(const Config& cfg, Output& out) {
    const auto regime = parse_regime(cfg.str("regime", "evcf"));
    if (!regime) throw UsageError("simulate: regime must be one of {cf, ev, evcf}, got '" + cfg.str("regime") + "'");
    GrowthConfig g;
    g.regime = *regime;
    g.m = static_cast<int>(cfg.integer("m", *regime == Regime::CF ? 1 : 2));
    g.steps = static_cast<int>(cfg.integer("steps", 40));
    g.seed = cfg.u64("seed", 0);
    const std::string mult = cfg.str("multiplier", "1");
    if (*regime == Regime::EVCF && mult != "auto") g.balance_multiplier = parse_rational(mult);
    const int window = static_cast<int>(cfg.integer("window", 4));
    const auto tr = simulate(g);

    std::vector<std::vector<std::string>> rows, hyp;
    for (const auto& r : tr.records)
        rows.push_back({fmt(r.t), fmt(r.n_a), fmt(r.n_abar), fmt(r.n), std::string(to_string(r.phase)), std::to_string(r.cycle)});
    out.csv("trajectory.csv", {"t", "n_a", "n_abar", "n", "phase", "cycle"}, rows);
    const auto pts = hyperbolic_embed(tr);
    for (std::size_t i = 0; i < pts.size(); ++i)
        hyp.push_back({fmt(tr.records[i].t), fmt(pts[i].radial), fmt(pts[i].angular), pts[i].saturated ? "1" : "0"});
    out.csv("hyperbolic.csv", {"t", "radial", "angular", "saturated"}, hyp);

    Json body;
    body["regime"] = std::string(to_string(tr.regime));
    body["m"] = tr.m;
    body["steps"] = g.steps;
    if (*regime == Regime::EVCF)
        body["multiplier"] = g.balance_multiplier ? rational_str(*g.balance_multiplier) : rational_str(Rational(g.m * g.m - 1, g.m));
    body["overflow"] = tr.overflow;
    try {
        const auto est = estimate_rates(tr, window);
        body["rate_n_abar"] = io::json_number(est.rate_n_abar);
        body["rate_n_a"] = io::json_number(est.rate_n_a);
        body["ratio"] = io::json_number(est.ratio);
        body["cosh_per_growth"] = io::json_number(est.cosh_per_growth);
        body["window"] = est.window;
        body["cycles"] = est.cycles;
    } catch (const std::exception& e) {
        out.error("estimate_rates", e.what());
    }
    out.json("rates.json", body);
}

namespace detail {

inline double median(std::vector<double> v) {
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline void write_strategy(Output& out, const std::string& name, const StrategyTrajectory& tr) {
    std::vector<std::vector<std::string>> rows;
    rows.reserve(tr.size());
    for (std::size_t t = 0; t < tr.size(); ++t)
        rows.push_back({std::to_string(t), fmt(tr[t].p[0]), fmt(tr[t].p[1]), fmt(tr[t].p[2])});
    out.csv(name, {"step", "p_rock", "p_paper", "p_scissors"}, rows);
}

}  // namespace detail

inline void cmd_rps(const Config& cfg, Output& out) {
    GameSpec spec;
    spec.seed = require_seed(cfg, "rps");
    spec.noise_sd = cfg.real("noise_sd", 0.1);
    spec.dt = cfg.real("dt", 0.01);
    const std::string mode = cfg.str("mode", "both");
    if (mode != "baseline" && mode != "two-phase" && mode != "both")
        throw UsageError("rps: mode must be baseline, two-phase or both");
    const int runs = static_cast<int>(cfg.integer("runs", 10));
    const int steps = static_cast<int>(cfg.integer("steps", 5000));
    const long long k_min = cfg.integer("k_min", 100);
    if (runs < 1) throw UsageError("rps: runs must be >= 1");

    Json body;
    body["noise_sd"] = spec.noise_sd;
    body["dt"] = spec.dt;
    body["steps"] = steps;
    if (mode != "two-phase") {
        const auto base = run_baseline(spec, steps, runs);
        Json list = Json::array();
        std::vector<double> d;
        for (std::size_t r = 0; r < base.size(); ++r) {
            d.push_back(base[r].nash_distance());
            list.push_back({{"run", r}, {"seed", base[r].seed}, {"nash_distance", io::json_number(d.back())}});
            detail::write_strategy(out, "rps_baseline_" + std::to_string(r) + "_p1.csv", base[r].player1);
            detail::write_strategy(out, "rps_baseline_" + std::to_string(r) + "_p2.csv", base[r].player2);
        }
        body["baseline"] = {{"runs", list}, {"median_nash_distance", io::json_number(detail::median(d))}};
    }
    if (mode != "baseline") {
        const auto two = run_two_phase(spec, k_min, steps, runs);
        Json list = Json::array();
        std::vector<double> d;
        for (std::size_t r = 0; r < two.size(); ++r) {
            const auto& tp = two[r];
            d.push_back(tp.run.nash_distance());
            Json payoff = Json::array();
            for (const auto& row : tp.ledger.estimated_payoff()) payoff.push_back({row[0], row[1], row[2]});
            list.push_back({{"run", r},
                            {"seed", tp.run.seed},
                            {"nash_distance", io::json_number(d.back())},
                            {"phase1_rounds", tp.phase1_rounds},
                            {"ledger_min_count", tp.ledger.min_count()},
                            {"ledger_max_count", tp.ledger.max_count()},
                            {"estimated_payoff", payoff}});
            detail::write_strategy(out, "rps_two_phase_" + std::to_string(r) + "_p1.csv", tp.run.player1);
            detail::write_strategy(out, "rps_two_phase_" + std::to_string(r) + "_p2.csv", tp.run.player2);
        }
        body["two_phase"] = {{"k_min", k_min}, {"runs", list}, {"median_nash_distance", io::json_number(detail::median(d))}};
    }
    out.json("rps_summary.json", body);
}

inline std::vector<PlantedSquare> parse_squares(const std::string& s) {
    std::vector<PlantedSquare> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ';')) {
        if (item.empty()) continue;
        PlantedSquare sq;
        char c1 = 0, c2 = 0;
        std::istringstream is(item);
        is.imbue(std::locale::classic());
        if (!(is >> sq.m >> c1 >> sq.omega >> c2 >> sq.s_sq) || c1 != ':' || c2 != ':' || !(is >> std::ws).eof())
            throw UsageError("squares: expected m:omega:s_sq, got '" + item + "'");
        out.push_back(sq);
    }
    if (out.empty()) throw UsageError("squares: no planted squares given");
    return out;
}

inline std::vector<GeoPoint> parse_points(const std::string& s) {
    std::vector<GeoPoint> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ';')) {
        if (item.empty()) continue;
        GeoPoint p;
        char c = 0;
        std::istringstream is(item);
        is.imbue(std::locale::classic());
        if (!(is >> p.lat >> c >> p.lon) || c != ':' || !(is >> std::ws).eof())
            throw UsageError("x0: expected lat:lon, got '" + item + "'");
        if (!valid_coordinates(p.lat, p.lon)) throw UsageError("x0: coordinates out of range in '" + item + "'");
        out.push_back(p);
    }
    return out;
}

struct SyntheticYears {
    std::vector<SyntheticData> years;
    SyntheticConfig config;
};

inline SyntheticYears synthetic_from_config(const Config& cfg, const std::string& command) {
    SyntheticYears sy;
    auto& sc = sy.config;
    sc.squares = parse_squares(cfg.str("squares", "6:6:0.6"));
    sc.n_locations = static_cast<int>(cfg.integer("n_locations", 225));
    sc.units_per_location = static_cast<int>(cfg.integer("units_per_location", 294));
    sc.noise = cfg.real("noise", 0.0);
    sc.rank_exponent = cfg.real("rank_exponent", 1.0);
    sc.x0 = {cfg.real("lat0", 40.0), cfg.real("lon0", -100.0)};
    sc.seed = require_seed(cfg, command);
    const auto years = cfg.integer("years", 1);
    if (years < 1 || years > 100) throw UsageError(command + ": years must lie in 1..100");
    const auto year0 = cfg.integer("year", 2020);
    for (long long y = 0; y < years; ++y) {
        auto c = sc;
        c.seed = run_seed(sc.seed, static_cast<std::uint64_t>(y));
        c.year = static_cast<int>(year0 + y);
        sy.years.push_back(generate_synthetic(c));
    }
    return sy;
}

inline UnitTable merge_years(const std::vector<SyntheticData>& years) {
    UnitTable t;
    t.factors = years.front().table.factors;
    std::int64_t id = 1;
    for (const auto& y : years)
        for (auto u : y.table.units) {
            u.unit_id = id++;
            t.units.push_back(u);
        }
    return t;
}

inline void write_units(Output& out, const std::string& name, const UnitTable& t) {
    std::vector<std::vector<std::string>> rows;
    rows.reserve(t.size());
    for (const auto& u : t.units)
        rows.push_back({std::to_string(u.unit_id), fmt(u.lat), fmt(u.lon), t.factors.label(u.factor), std::to_string(u.year)});
    out.csv(name, {"unit_id", "lat", "lon", "factor", "year"}, rows);
}

inline void cmd_generate(const Config& cfg, Output& out) {
    const auto sy = synthetic_from_config(cfg, "generate");
    write_units(out, "units.csv", merge_years(sy.years));
    const auto& first = sy.years.front();
    Json truth = Json::array();
    for (std::size_t q = 0; q < first.truth.size(); ++q) {
        const auto& t = first.truth[q];
        std::vector<std::string> labels;
        for (auto f : t.factors) labels.push_back(first.table.factors.label(f));
        truth.push_back({{"m", sy.config.squares[q].m},
                         {"omega", t.omega},
                         {"s_sq_config", sy.config.squares[q].s_sq},
                         {"s_sq", t.s_sq ? Json(*t.s_sq) : Json(nullptr)},
                         {"band_radius", t.band_radius ? Json(*t.band_radius) : Json(nullptr)},
                         {"block_cells", t.block},
                         {"factors", labels}});
    }
    out.json("truth.json", {{"cell", first.grid.cell},
                            {"origin", {first.grid.origin.lat, first.grid.origin.lon}},
                            {"n_locations", sy.config.n_locations},
                            {"units_per_location", sy.config.units_per_location},
                            {"noise", sy.config.noise},
                            {"squares", truth}});
}

namespace detail {

inline void write_location(Output& out, std::size_t k, const UnitTable& table, const LocationAnalysis& a,
                           const SpatialParams& p) {
    const std::string tag = std::to_string(k);
    std::vector<std::vector<std::string>> ranks;
    for (const auto& rt : a.tables)
        for (const auto& c : rt.cells)
            for (std::size_t f = 0; f < rt.m(); ++f)
                ranks.push_back({std::to_string(rt.level_index), c.key.id(), table.factors.label(rt.tracked[f]),
                                 std::to_string(c.counts[f]), std::to_string(c.ranks[f])});
    out.csv("ranks_" + tag + ".csv", {"level", "cell_id", "factor", "count", "rank"}, ranks);

    std::vector<std::vector<std::string>> acf;
    for (const auto& [f, prof] : a.acf)
        for (const auto& q : prof) acf.push_back({table.factors.label(f), fmt(q.s), q.correlation ? fmt(*q.correlation) : "nan"});
    out.csv("acf_" + tag + ".csv", {"factor", "s", "corr"}, acf);

    auto fit_csv = [&](const std::string& name, const CothFit& fit, bool upper) {
        std::vector<std::vector<std::string>> rows;
        for (const auto& band : a.detection->levels) {
            double sum = 0;
            int n = 0;
            for (std::size_t f = 0; f < band.r0.size(); ++f)
                if (band.r0[f] > 0) {
                    sum += upper ? band.r_omega[f] : band.r0[f];
                    ++n;
                }
            if (n) rows.push_back({fmt(band.s), fmt(sum / n), fmt(fit(band.s))});
        }
        out.csv(name, {"x", "y", "y_fit"}, rows);
    };
    if (a.r_omega_fit) fit_csv("fit_" + tag + "_r_omega.csv", *a.r_omega_fit, true);
    if (a.r0_fit) fit_csv("fit_" + tag + "_r0.csv", *a.r0_fit, false);

    Json body;
    body["x0"] = {a.x0.lat, a.x0.lon};
    body["params"] = {{"s0", p.s0}, {"delta_s", p.delta_s}, {"levels", p.levels}, {"cell", p.cell}, {"m", p.m}, {"tau", p.tau}};
    body["empty"] = a.empty;
    std::vector<std::string> tracked;
    for (auto f : a.tracked) tracked.push_back(table.factors.label(f));
    body["tracked"] = tracked;
    body["detection"] = a.detection ? detection_json(*a.detection) : Json(nullptr);
    Json slack = Json::array();
    double per_factor = 0, per_level = 0;
    for (const auto& s : a.slack) {
        slack.push_back({{"factor", table.factors.label(s.factor)},
                         {"sag", io::json_number(s.sag)},
                         {"sag_per_level", io::json_number(s.per_level)},
                         {"fit", to_json(s.fit)}});
        per_factor += s.sag;
        per_level += s.per_level;
    }
    body["catenary"] = {{"fits", slack},
                        {"mean_sag_per_factor", a.slack.empty() ? Json(nullptr) : io::json_number(per_factor / a.slack.size())},
                        {"mean_sag_per_level", a.slack.empty() ? Json(nullptr) : io::json_number(per_level / a.slack.size())}};
    body["coth_r_omega"] = a.r_omega_fit ? to_json(*a.r_omega_fit) : Json(nullptr);
    body["coth_r0"] = a.r0_fit ? to_json(*a.r0_fit) : Json(nullptr);
    body["angle_split"] = a.angle_split ? Json{a.angle_split->first, a.angle_split->second} : Json(nullptr);
    if (a.models)
        body["model_comparison"] = {{"n", a.models->n},
                                    {"coth", to_json(a.models->coth)},
                                    {"zipf", to_json(a.models->zipf)},
                                    {"bic", to_json(a.models->comparison)}};
    else
        body["model_comparison"] = nullptr;
    body["notes"] = a.notes;
    out.json("spatial_" + tag + ".json", body);
    if (a.detection) {
        auto det = detection_json(*a.detection);
        out.json("detection_" + tag + ".json", {{"s_sq", det["s_sq"]},
                                                {"omega_hat", det["omega_hat"]},
                                                {"coverage", det["coverage"]},
                                                {"theta1", det["theta1"]}});
    }
}

inline void run_pool(std::size_t n, int jobs, const std::function<void(std::size_t)>& task) {
    const auto workers = static_cast<std::size_t>(std::clamp(jobs, 1, 64));
    if (workers == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) task(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) task(i);
        });
    for (auto& t : pool) t.join();
}

}  // namespace detail

inline void cmd_spatial(const Config& cfg, Output& out) {
    SpatialParams p;
    p.s0 = cfg.real("s0", 0.1);
    p.delta_s = cfg.real("delta_s", 0.1);
    p.levels = static_cast<int>(cfg.integer("levels", 15));
    p.tau = cfg.real("tau", kDefaultBalanceTolerance);
    p.fit = fit_options(cfg);
    if (!(p.delta_s > 0) || p.levels < 1 || !(p.s0 >= 0)) throw UsageError("spatial: need s0 >= 0, delta_s > 0, levels >= 1");

    std::map<int, UnitTable> years;
    std::vector<GeoPoint> x0s;
    if (cfg.has("input")) {
        std::ifstream in(cfg.str("input"));
        if (!in) throw UsageError("spatial: cannot open input " + cfg.str("input"));
        auto ing = ingest_microdata(in);
        for (const auto& r : ing.rejected) out.error("ingest", "line " + std::to_string(r.line) + ": " + r.reason);
        years = split_by_year(ing.table);
        p.cell = cfg.real("cell", p.delta_s);
        p.m = static_cast<std::size_t>(cfg.integer("m", 6));
        if (!cfg.has("x0")) throw UsageError("spatial: x0 is required with input data");
        x0s = parse_points(cfg.str("x0"));
    } else {
        const auto sy = synthetic_from_config(cfg, "spatial");
        for (const auto& y : sy.years) years[y.table.units.empty() ? 0 : y.table.units.front().year] = y.table;
        p.cell = cfg.real("cell", sy.years.front().grid.cell);
        p.m = static_cast<std::size_t>(cfg.integer("m", sy.config.squares.front().m));
        x0s = cfg.has("x0") ? parse_points(cfg.str("x0")) : std::vector<GeoPoint>{sy.config.x0};
    }
    if (!(p.cell > 0) || p.m < 1) throw UsageError("spatial: need cell > 0 and m >= 1");
    if (x0s.empty()) throw UsageError("spatial: no reference locations");
    if (years.empty()) throw UsageError("spatial: no units to analyse");
    const UnitTable& table = years.begin()->second;

    std::vector<std::vector<std::string>> summary(x0s.size());
    detail::run_pool(x0s.size(), static_cast<int>(cfg.integer("jobs", 1)), [&](std::size_t k) {
        const std::string tag = "x0[" + std::to_string(k) + "]";
        try {
            const auto a = analyze_location(table, x0s[k], p);
            detail::write_location(out, k, table, a, p);
            for (const auto& e : a.errors) out.error(tag + " " + e.stage, e.message);
            if (years.size() > 1) {
                std::vector<std::vector<std::string>> acc;
                const CellGrid grid{x0s[k], p.cell};
                for (auto it = years.begin(); std::next(it) != years.end(); ++it) {
                    const auto pts = baseline_accuracy_vs_level(it->second, std::next(it)->second, grid, p.s0, p.delta_s, p.levels);
                    for (const auto& q : pts)
                        acc.push_back({std::to_string(it->first), fmt(q.s), fmt(q.accuracy), std::to_string(q.predictions)});
                }
                out.csv("accuracy_" + std::to_string(k) + ".csv", {"year", "s", "accuracy", "predictions"}, acc);
            }
            const auto& d = a.detection;
            summary[k] = {std::to_string(k),
                          fmt(x0s[k].lat),
                          fmt(x0s[k].lon),
                          a.empty ? "empty" : (a.errors.empty() ? "ok" : "partial"),
                          d && d->s_sq ? fmt(*d->s_sq) : "",
                          d ? std::to_string(d->omega_hat) : "",
                          d ? fmt(d->theta1) : "",
                          a.models ? to_string(a.models->comparison.preferred) : "",
                          a.models ? fmt(a.models->comparison.likelihood_ratio) : ""};
        } catch (const std::exception& e) {
            out.error(tag, e.what());
            summary[k] = {std::to_string(k), fmt(x0s[k].lat), fmt(x0s[k].lon), "failed", "", "", "", "", ""};
        }
    });
    out.csv("spatial_summary.csv",
            {"x0_index", "lat", "lon", "status", "s_sq", "omega_hat", "theta1", "preferred", "likelihood_ratio"}, summary);
}

namespace detail {

/// Reads numeric CSV columns by header name; '#' lines are skipped.
inline std::map<std::string, std::vector<double>> read_columns(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open input " + path);
    std::string line;
    std::vector<std::string> header;
    std::map<std::string, std::vector<double>> cols;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto fields = bexg::detail::split_csv_line(line);
        for (auto& f : fields) f = bexg::detail::trim(f);
        if (header.empty()) {
            header = fields;
            continue;
        }
        if (fields.size() != header.size()) throw ParseError(lineno, "field count differs from header");
        for (std::size_t i = 0; i < fields.size(); ++i) {
            double v = 0;
            if (!bexg::detail::parse_number(fields[i], v)) throw ParseError(lineno, "bad number '" + fields[i] + "'");
            cols[header[i]].push_back(v);
        }
    }
    if (header.empty()) throw ParseError(lineno, "missing header");
    for (const auto& h : header) cols[h];
    return cols;
}

inline const std::vector<double>& column(const std::map<std::string, std::vector<double>>& cols, const std::string& name) {
    const auto it = cols.find(name);
    if (it == cols.end()) throw UsageError("input has no column '" + name + "'");
    return it->second;
}

}  // namespace detail

inline void cmd_fit(const Config& cfg, Output& out) {
    if (!cfg.has("input")) throw UsageError("fit: input is required");
    const std::string model = cfg.str("model", "catenary");
    const auto cols = detail::read_columns(cfg.str("input"));
    const FitOptions opt = fit_options(cfg);
    if (model == "zipf") {
        const auto& v = detail::column(cols, "value");
        const double x_min = cfg.has("x_min") ? cfg.real("x_min", 1.0)
                                              : (v.empty() ? 1.0 : *std::min_element(v.begin(), v.end()));
        out.json("fit.json", to_json(fit_zipf(v, x_min)));
        return;
    }
    const auto& xs = detail::column(cols, "x");
    const auto& ys = detail::column(cols, "y");
    std::vector<Point> pts;
    for (std::size_t i = 0; i < xs.size(); ++i) pts.push_back({xs[i], ys[i]});
    std::function<double(double)> curve;
    Json body;
    if (model == "catenary") {
        if (cfg.has("standardize_m")) pts = standardize_catenary(pts, cfg.real("standardize_m", 1.0));
        const auto f = fit_catenary(pts, opt);
        body = to_json(f);
        double lo = pts.front().x, hi = pts.front().x;
        for (const auto& q : pts) {
            lo = std::min(lo, q.x);
            hi = std::max(hi, q.x);
        }
        body["sag"] = io::json_number(catenary_sag(f, lo, hi));
        curve = [f](double x) { return f(x); };
    } else if (model == "coth") {
        const std::string b = cfg.str("branch", "positive");
        if (b != "positive" && b != "negative") throw UsageError("fit: branch must be positive or negative");
        const auto f = fit_coth(pts, b == "positive" ? Branch::Positive : Branch::Negative, opt);
        body = to_json(f);
        curve = [f](double x) { return f(x); };
    } else {
        throw UsageError("fit: model must be catenary, coth or zipf");
    }
    out.json("fit.json", body);
    std::vector<std::vector<std::string>> rows;
    for (const auto& q : pts) rows.push_back({fmt(q.x), fmt(q.y), fmt(curve(q.x))});
    out.csv("fit.csv", {"x", "y", "y_fit"}, rows);
}

inline void cmd_spectrum(const Config& cfg, Output& out) {
    std::vector<double> series;
    Json body;
    if (cfg.has("input")) {
        series = detail::column(detail::read_columns(cfg.str("input")), "value");
        body["source"] = "input";
    } else {
        const std::string kind = cfg.str("series", "cosh_sinh");
        const auto n = cfg.integer("samples", 1024);
        if (n < 8 || n > 1'000'000) throw UsageError("spectrum: samples must lie in 8..1000000");
        if (kind == "cosh_sinh") {
            const double t_max = cfg.real("t_max", 100.0);
            for (long long i = 0; i < n; ++i) {
                const double t = t_max * static_cast<double>(i) / static_cast<double>(n - 1);
                series.push_back(std::cosh(t) + std::sinh(t));
            }
        } else if (kind == "sine") {
            const double period = cfg.real("period", 8.0);
            for (long long i = 0; i < n; ++i) series.push_back(std::sin(2 * std::numbers::pi * static_cast<double>(i) / period));
        } else {
            throw UsageError("spectrum: series must be cosh_sinh or sine");
        }
        body["source"] = kind;
    }
    const auto bins = periodogram(series);
    std::vector<std::vector<std::string>> rows;
    double total = 0, peak_power = -1, peak_freq = 0;
    for (const auto& b : bins) {
        rows.push_back({fmt(b.frequency), fmt(b.power)});
        total += b.power;
        if (b.power > peak_power) {
            peak_power = b.power;
            peak_freq = b.frequency;
        }
    }
    double mean = 0, var = 0;
    for (double x : series) mean += x;
    mean /= static_cast<double>(series.size());
    for (double x : series) var += (x - mean) * (x - mean);
    var /= static_cast<double>(series.size());
    out.csv("spectrum.csv", {"frequency", "power"}, rows);
    body["n"] = series.size();
    body["variance"] = io::json_number(var);
    body["total_power"] = io::json_number(total);
    body["peak_frequency"] = io::json_number(peak_freq);
    body["peak_share"] = io::json_number(total > 0 ? peak_power / total : 0.0);
    out.json("spectrum.json", body);
}

/// Validates keys, runs `command` into `out_dir` and returns the exit code
/// (0 complete, 3 partial failure). Usage problems throw UsageError.
inline int run(const std::string& command, const Config& cfg, const std::filesystem::path& out_dir) {
    check_keys(command, cfg);
    static const std::map<std::string, void (*)(const Config&, Output&)> dispatch{
        {"kernels", cmd_kernels}, {"simulate", cmd_simulate}, {"rps", cmd_rps},       {"generate", cmd_generate},
        {"spatial", cmd_spatial}, {"fit", cmd_fit},           {"spectrum", cmd_spectrum},
    };
    Output out(out_dir, command, cfg);
    try {
        dispatch.at(command)(cfg, out);
    } catch (const UsageError&) {
        throw;
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception& e) {
        out.error(command, e.what());
    }
    return out.finish();
}

}  // namespace bexg::pipeline
