#pragma once

// Curve models and model selection: catenary and coth least squares,
// Pareto / rank-Zipf estimates, BIC comparison, a direct periodogram and
// Pareto outcome shares.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "bexg/detail/levenberg_marquardt.hpp"
#include "bexg/error.hpp"

namespace bexg {

struct Point {
    double x = 0;
    double y = 0;
};

struct FitOptions {
    int starts = 8;            // coth multi-starts
    double tolerance = 1e-9;   // relative convergence on the search parameter
};

inline double gaussian_log_likelihood(double rss, std::size_t n) {
    const double nn = static_cast<double>(n);
    const double var = std::max(rss / nn, 1e-300);
    return -0.5 * nn * (std::log(2 * std::numbers::pi * var) + 1.0);
}

namespace detail {

inline double golden_section(auto&& f, double lo, double hi, double tol, int max_iter = 200) {
    const double g = (std::sqrt(5.0) - 1) / 2;
    double a = lo, b = hi;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < max_iter && (b - a) > tol * std::max(1.0, std::abs(a) + std::abs(b)); ++i) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    return fc <= fd ? c : d;
}

// Grid scan then golden refinement of the best bracket.
inline double grid_golden(auto&& f, double lo, double hi, int grid, double tol) {
    double best_x = lo, best_f = std::numeric_limits<double>::infinity();
    int best_i = 0;
    for (int i = 0; i <= grid; ++i) {
        const double x = lo + (hi - lo) * i / grid;
        const double v = f(x);
        if (v < best_f) {
            best_f = v;
            best_x = x;
            best_i = i;
        }
    }
    const double a = lo + (hi - lo) * std::max(0, best_i - 1) / grid;
    const double b = lo + (hi - lo) * std::min(grid, best_i + 1) / grid;
    const double x = golden_section(f, a, b, tol);
    return f(x) <= best_f ? x : best_x;
}

struct LinearFit {
    double slope = 0, intercept = 0, rss = 0, sst = 0;
};

inline LinearFit linear_fit(const std::vector<Point>& pts) {
    const double n = static_cast<double>(pts.size());
    double mx = 0, my = 0;
    for (const auto& p : pts) {
        mx += p.x;
        my += p.y;
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0;
    LinearFit lf;
    for (const auto& p : pts) {
        sxx += (p.x - mx) * (p.x - mx);
        sxy += (p.x - mx) * (p.y - my);
        lf.sst += (p.y - my) * (p.y - my);
    }
    lf.slope = sxx > 0 ? sxy / sxx : 0;
    lf.intercept = my - lf.slope * mx;
    for (const auto& p : pts) {
        const double e = p.y - (lf.intercept + lf.slope * p.x);
        lf.rss += e * e;
    }
    return lf;
}

inline void require_distinct_x(std::vector<Point>& pts, const char* who) {
    std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x < b.x; });
    for (std::size_t i = 1; i < pts.size(); ++i)
        if (pts[i].x == pts[i - 1].x) throw DomainError(std::string(who) + ": x values must be distinct");
    for (const auto& p : pts)
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw DomainError(std::string(who) + ": non-finite point");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Catenary y = h cosh((x - x_c) / h) + y_offset.

struct CatenaryFit {
    double h = std::numeric_limits<double>::quiet_NaN();
    double x_c = 0;
    double y_offset = 0;
    double rss = 0;
    std::size_t n_points = 0;
    bool converged = false;
    bool linear_fallback = false;  // collinear input; slope/intercept hold the line
    double slope = 0;
    double intercept = 0;

    double operator()(double x) const {
        if (linear_fallback) return intercept + slope * x;
        return h * std::cosh((x - x_c) / h) + y_offset;
    }
};

namespace detail {

struct CatenaryInner {
    double x_c = 0, y_offset = 0, rss = std::numeric_limits<double>::infinity();
};

inline CatenaryInner catenary_rss(const std::vector<Point>& pts, double h, double x_c) {
    CatenaryInner r;
    r.x_c = x_c;
    double mean = 0;
    for (const auto& p : pts) {
        const double u = (p.x - x_c) / h;
        if (std::abs(u) > 700) return r;
        mean += p.y - h * std::cosh(u);
    }
    mean /= static_cast<double>(pts.size());
    double rss = 0;
    for (const auto& p : pts) {
        const double e = p.y - h * std::cosh((p.x - x_c) / h) - mean;
        rss += e * e;
    }
    r.y_offset = mean;
    r.rss = std::isfinite(rss) ? rss : std::numeric_limits<double>::infinity();
    return r;
}

inline CatenaryInner catenary_inner(const std::vector<Point>& pts, double h) {
    const double lo = pts.front().x, hi = pts.back().x, span = hi - lo;
    auto f = [&](double xc) { return catenary_rss(pts, h, xc).rss; };
    const double xc = grid_golden(f, lo - span, hi + span, 120, 1e-12);
    return catenary_rss(pts, h, xc);
}

}  // namespace detail

/// Nested search: golden section over log h, inner grid-and-refine over x_c
/// with y_offset in closed form, then a joint Levenberg-Marquardt polish.
inline CatenaryFit fit_catenary(std::vector<Point> pts, const FitOptions& opt = {}) {
    if (pts.size() < 4) throw InsufficientData("fit_catenary: need at least 4 points");
    detail::require_distinct_x(pts, "fit_catenary");
    CatenaryFit fit;
    fit.n_points = pts.size();
    const auto lin = detail::linear_fit(pts);
    double ymin = pts[0].y, ymax = pts[0].y;
    for (const auto& p : pts) {
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
    }
    if (lin.rss <= 1e-20 + 1e-14 * lin.sst) {
        fit.linear_fallback = true;
        fit.slope = lin.slope;
        fit.intercept = lin.intercept;
        fit.rss = lin.rss;
        return fit;
    }
    const double lo = std::log(1e-6), hi = std::log(10 * (ymax - ymin));
    auto outer = [&](double logh) { return detail::catenary_inner(pts, std::exp(logh)).rss; };
    const double logh = detail::grid_golden(outer, lo, std::max(hi, lo + 1), 60, opt.tolerance * 1e-2);
    const double h0 = std::exp(logh);
    auto inner = detail::catenary_inner(pts, h0);

    Eigen::VectorXd p(3);
    p << h0, inner.x_c, inner.y_offset;
    auto resid = [&](const Eigen::VectorXd& q, Eigen::VectorXd& r) {
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            r[ii] = q[0] > 0 ? pts[i].y - (q[0] * std::cosh((pts[i].x - q[1]) / q[0]) + q[2])
                             : std::numeric_limits<double>::infinity();
        }
    };
    const auto lm = detail::levenberg_marquardt(resid, p, static_cast<Eigen::Index>(pts.size()));
    if (lm.rss <= inner.rss && lm.params[0] > 0) {
        fit.h = lm.params[0];
        fit.x_c = lm.params[1];
        fit.y_offset = lm.params[2];
        fit.rss = lm.rss;
        fit.converged = lm.converged || std::abs(fit.h - h0) <= opt.tolerance * h0;
    } else {
        fit.h = h0;
        fit.x_c = inner.x_c;
        fit.y_offset = inner.y_offset;
        fit.rss = inner.rss;
        fit.converged = true;
    }
    return fit;
}

/// Moves the lowest point to the origin and rescales x so the farthest point
/// sits at distance m from it.
inline std::vector<Point> standardize_catenary(std::vector<Point> pts, double m) {
    if (pts.empty()) throw InsufficientData("standardize_catenary: no points");
    if (!(m > 0)) throw DomainError("standardize_catenary: m must be > 0");
    const auto low = *std::min_element(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.y < b.y; });
    double reach = 0;
    for (const auto& p : pts) reach = std::max(reach, std::abs(p.x - low.x));
    const double scale = reach > 0 ? m / reach : 1.0;
    for (auto& p : pts) p = {(p.x - low.x) * scale, p.y - low.y};
    return pts;
}

/// Height of the higher hanging point over the curve's lowest point on [x_lo, x_hi].
inline double catenary_sag(const CatenaryFit& fit, double x_lo, double x_hi) {
    if (x_hi < x_lo) std::swap(x_lo, x_hi);
    const double top = std::max(fit(x_lo), fit(x_hi));
    double bottom = std::min(fit(x_lo), fit(x_hi));
    if (!fit.linear_fallback && fit.x_c > x_lo && fit.x_c < x_hi) bottom = std::min(bottom, fit(fit.x_c));
    return top - bottom;
}

// ---------------------------------------------------------------------------
// coth branches r = a coth(b (s - s_c)) + c.

enum class Branch { Positive, Negative };  // s > s_c or s < s_c

inline const char* to_string(Branch b) { return b == Branch::Positive ? "positive" : "negative"; }

struct CothFit {
    double a = 0;
    double b = 1;
    double s_c = 0;
    double c = 0;
    Branch branch = Branch::Positive;
    double rss = 0;
    std::size_t n_points = 0;
    double s_min = 0;
    double s_max = 0;
    bool converged = false;

    double operator()(double s) const { return a / std::tanh(b * (s - s_c)) + c; }
    double log_likelihood() const { return gaussian_log_likelihood(rss, n_points); }
};

/// Least squares on the declared branch: s_c is kept outside the data range
/// (below it for the positive branch, above it for the negative one). With
/// `fixed_center` the centre is not fitted and must not straddle the points.
inline CothFit fit_coth(std::vector<Point> pts, Branch branch, const FitOptions& opt = {},
                        std::optional<double> fixed_center = std::nullopt) {
    if (pts.size() < 5) throw InsufficientData("fit_coth: need at least 5 points");
    for (const auto& p : pts)
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw DomainError("fit_coth: non-finite point");
    std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x < b.x; });
    if (!(pts.back().x > pts.front().x)) throw DomainError("fit_coth: need at least two distinct s values");
    const double s_min = pts.front().x, s_max = pts.back().x, span = s_max - s_min;
    const bool pos = branch == Branch::Positive;
    if (fixed_center) {
        const double sc = *fixed_center;
        if ((pos && !(sc < s_min)) || (!pos && !(sc > s_max)))
            throw DomainError("fit_coth: branch violation, points straddle the centre");
    }
    const auto n = static_cast<Eigen::Index>(pts.size());
    auto center = [&](double u) {
        if (fixed_center) return *fixed_center;
        const double gap = std::exp(std::clamp(u, -700.0, 700.0));
        return pos ? s_min - gap : s_max + gap;
    };
    // params: a, log b, log gap, c
    auto resid = [&](const Eigen::VectorXd& q, Eigen::VectorXd& r) {
        const double b = std::exp(std::clamp(q[1], -700.0, 700.0)), sc = center(q[2]);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& p = pts[static_cast<std::size_t>(i)];
            r[i] = p.y - (q[0] / std::tanh(b * (p.x - sc)) + q[3]);
        }
    };
    // For fixed (b, s_c) the model is linear in (a, c).
    auto linear_start = [&](double b, double sc) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (const auto& p : pts) {
            const double x = 1.0 / std::tanh(b * (p.x - sc));
            sx += x;
            sy += p.y;
            sxx += x * x;
            sxy += x * p.y;
        }
        const double nn = static_cast<double>(pts.size());
        const double det = nn * sxx - sx * sx;
        const double a = std::abs(det) > 1e-300 ? (nn * sxy - sx * sy) / det : 0.0;
        return std::pair{a, (sy - a * sx) / nn};
    };
    const double b_mult[] = {0.25, 1.0, 4.0, 16.0};
    const double gap_mult[] = {0.05, 0.5};
    CothFit best;
    best.rss = std::numeric_limits<double>::infinity();
    detail::LmOptions lmo;
    lmo.tolerance = std::min(1e-12, opt.tolerance);
    for (int k = 0; k < std::max(1, opt.starts); ++k) {
        const double b0 = b_mult[k % 4] / span;
        const double gap0 = gap_mult[(k / 4) % 2] * span * (1 + k / 8);
        const double u0 = std::log(gap0);
        const auto [a0, c0] = linear_start(b0, center(u0));
        Eigen::VectorXd p(4);
        p << a0, std::log(b0), u0, c0;
        const auto lm = detail::levenberg_marquardt(resid, p, n, lmo);
        if (lm.rss < best.rss) {
            best.a = lm.params[0];
            best.b = std::exp(lm.params[1]);
            best.s_c = center(lm.params[2]);
            best.c = lm.params[3];
            best.rss = lm.rss;
            best.converged = lm.converged;
        }
    }
    if (!std::isfinite(best.rss)) throw DomainError("fit_coth: no finite fit");
    best.branch = branch;
    best.n_points = pts.size();
    best.s_min = s_min;
    best.s_max = s_max;
    return best;
}

// ---------------------------------------------------------------------------
// Power laws.

inline constexpr double kZipfAlphaCap = 1e6;

struct ZipfFit {
    double alpha = 0;
    double x_min = 1;
    double log_likelihood = 0;
    std::size_t n = 0;
    double standard_error = 0;
    bool degenerate = false;
    std::optional<double> rank_exponent;  // set by fit_rank_zipf
};

/// Continuous Pareto MLE with x_min fixed.
inline ZipfFit fit_zipf(const std::vector<double>& values, double x_min) {
    if (!(x_min > 0)) throw DomainError("fit_zipf: x_min must be > 0");
    if (values.size() < 10) throw InsufficientData("fit_zipf: need at least 10 values");
    double log_sum = 0;
    for (double v : values) {
        if (!(v >= x_min)) throw DomainError("fit_zipf: value below x_min");
        log_sum += std::log(v / x_min);
    }
    ZipfFit z;
    z.x_min = x_min;
    z.n = values.size();
    const double n = static_cast<double>(z.n);
    if (log_sum <= n / (kZipfAlphaCap - 1)) {
        z.alpha = kZipfAlphaCap;
        z.degenerate = true;
    } else {
        z.alpha = 1 + n / log_sum;
    }
    z.standard_error = (z.alpha - 1) / std::sqrt(n);
    z.log_likelihood = n * std::log((z.alpha - 1) / x_min) - z.alpha * log_sum;
    return z;
}

struct RankObservation {
    double rank = 1;   // global rank of the observed factor
    double share = 0;  // observed frequency share
};

/// Single-permutation Zipf regression share = y1 (rank / rank_min)^-s with y1
/// the mean share at the lowest rank. alpha reports the Pareto shape 1 + 1/s
/// that matches exponent s; the likelihood is Gaussian on residuals.
inline ZipfFit fit_rank_zipf(const std::vector<RankObservation>& obs, const FitOptions& opt = {}) {
    if (obs.size() < 2) throw InsufficientData("fit_rank_zipf: need at least 2 observations");
    double rmin = std::numeric_limits<double>::infinity();
    for (const auto& o : obs) {
        if (!(o.rank > 0)) throw DomainError("fit_rank_zipf: ranks must be > 0");
        rmin = std::min(rmin, o.rank);
    }
    double y1 = 0;
    int n1 = 0;
    for (const auto& o : obs)
        if (o.rank == rmin) {
            y1 += o.share;
            ++n1;
        }
    y1 /= n1;
    auto rss = [&](double s) {
        double r = 0;
        for (const auto& o : obs) {
            const double e = o.share - y1 * std::pow(o.rank / rmin, -s);
            r += e * e;
        }
        return r;
    };
    const double s = detail::grid_golden(rss, 0.0, 10.0, 200, opt.tolerance);
    ZipfFit z;
    z.n = obs.size();
    z.x_min = 1;
    z.rank_exponent = s;
    if (s <= 1.0 / (kZipfAlphaCap - 1)) {
        z.alpha = kZipfAlphaCap;
        z.degenerate = true;
    } else {
        z.alpha = 1 + 1 / s;
    }
    z.standard_error = std::numeric_limits<double>::quiet_NaN();
    z.log_likelihood = gaussian_log_likelihood(rss(s), z.n);
    return z;
}

enum class Model { Coth, Zipf };
inline const char* to_string(Model m) { return m == Model::Coth ? "coth" : "zipf"; }

struct ModelComparison {
    double bic_coth = 0;
    double bic_zipf = 0;
    double likelihood_ratio = 1;  // of coth over zipf
    Model preferred = Model::Zipf;
};

inline constexpr int kCothParameters = 4;
inline constexpr int kZipfParameters = 1;

inline ModelComparison compare_bic(const CothFit& coth, const ZipfFit& zipf, std::size_t n) {
    if (coth.n_points != n || zipf.n != n) throw ContractViolation("compare_bic: fits use different observation counts");
    if (n < 1) throw InsufficientData("compare_bic: no observations");
    const double ln_n = std::log(static_cast<double>(n));
    ModelComparison mc;
    mc.bic_coth = kCothParameters * ln_n - 2 * coth.log_likelihood();
    mc.bic_zipf = kZipfParameters * ln_n - 2 * zipf.log_likelihood;
    mc.likelihood_ratio = std::exp((mc.bic_zipf - mc.bic_coth) / 2);
    mc.preferred = mc.bic_coth < mc.bic_zipf ? Model::Coth : Model::Zipf;
    return mc;
}

// ---------------------------------------------------------------------------
// Spectra and shares.

struct SpectrumBin {
    double frequency = 0;  // cycles per sample
    double power = 0;
};

/// One-sided power of the mean-removed series at k/n, k = 1..n/2, scaled so
/// the powers sum to the (population) variance.
inline std::vector<SpectrumBin> periodogram(const std::vector<double>& series) {
    const std::size_t n = series.size();
    if (n < 8) throw InsufficientData("periodogram: need at least 8 samples");
    double mean = 0;
    for (double x : series) mean += x;
    mean /= static_cast<double>(n);
    std::vector<double> x(n);
    for (std::size_t t = 0; t < n; ++t) x[t] = series[t] - mean;
    std::vector<std::complex<double>> twiddle(n);
    for (std::size_t k = 0; k < n; ++k)
        twiddle[k] = std::polar(1.0, -2 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
    const double nn = static_cast<double>(n);
    std::vector<SpectrumBin> out;
    for (std::size_t k = 1; k <= n / 2; ++k) {
        std::complex<double> X = 0;
        for (std::size_t t = 0; t < n; ++t) X += x[t] * twiddle[(k * t) % n];
        const double scale = (2 * k == n) ? 1.0 : 2.0;
        out.push_back({static_cast<double>(k) / nn, scale * std::norm(X) / (nn * nn)});
    }
    return out;
}

/// Share of outcomes held by the top fraction p under Pareto shape alpha.
inline double pareto_shares(double alpha, double p) {
    if (!(alpha > 1)) throw DomainError("pareto_shares: alpha <= 1 has infinite mean");
    if (!(p > 0 && p <= 1)) throw DomainError("pareto_shares: p must be in (0, 1]");
    if (std::isinf(alpha)) return p;
    return std::pow(p, 1 - 1 / alpha);
}

/// Samples of a coth branch on `count` evenly spaced levels in [s_lo, s_hi],
/// scaled so the secant slope magnitude over the range equals `slope`.
/// Positive branches rise (a < 0), negative branches fall (a > 0).
inline std::vector<Point> planted_branch_points(Branch branch, double slope, double s_lo, double s_hi, int count,
                                                double noise_sd = 0.0, std::uint64_t seed = 0) {
    if (count < 2 || !(s_hi > s_lo)) throw ConfigError("planted_branch_points: need count >= 2 and s_hi > s_lo");
    if (!(slope > 0)) throw ConfigError("planted_branch_points: slope must be > 0");
    const double span = s_hi - s_lo;
    const bool pos = branch == Branch::Positive;
    const double b = 1.0 / span;
    const double s_c = pos ? s_lo - 0.25 * span : s_hi + 0.25 * span;
    auto g = [&](double s) { return 1.0 / std::tanh(b * (s - s_c)); };
    const double secant = (g(s_hi) - g(s_lo)) / span;
    const double a = (pos ? -1.0 : 1.0) * slope / std::abs(secant);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<Point> out;
    for (int k = 0; k < count; ++k) {
        const double s = s_lo + span * k / (count - 1);
        double r = a * g(s);
        if (noise_sd > 0) r += noise_sd * noise(rng);
        out.push_back({s, r});
    }
    return out;
}

/// Secant angles of two fitted branches over their common range, normalised
/// to shares.
inline std::pair<double, double> branch_angle_split(const CothFit& positive, const CothFit& negative) {
    if (positive.branch != Branch::Positive || negative.branch != Branch::Negative)
        throw ContractViolation("branch_angle_split: need one positive and one negative branch");
    const double lo = std::max(positive.s_min, negative.s_min);
    const double hi = std::min(positive.s_max, negative.s_max);
    if (!(hi > lo)) throw ContractViolation("branch_angle_split: branches share no level range");
    auto angle = [&](const CothFit& f) { return std::atan(std::abs(f(hi) - f(lo)) / (hi - lo)); };
    const double tp = angle(positive), tn = angle(negative);
    if (!(tp + tn > 0)) throw DomainError("branch_angle_split: zero combined angle");
    return {tp / (tp + tn), tn / (tp + tn)};
}

}  // namespace bexg
