#pragma once

// Spatial microdata: ingestion, a synthetic generator with planted rank bands,
// nested Chebyshev windows around a reference location, per-sub-location
// rank tables, square (full factor x rank coverage) detection, the
// correlation-vs-level profile and a baseline growth predictor.
//
// Distances are Chebyshev on raw lat/lon degrees. Sub-locations are cells of
// a square grid anchored at a chosen origin; a unit belongs to the cell whose
// centre is nearest on each axis.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bexg/error.hpp"
#include "bexg/factor_set.hpp"

namespace bexg {

struct GeoPoint {
    double lat = 0;
    double lon = 0;
    friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

inline double chebyshev(const GeoPoint& a, const GeoPoint& b) {
    return std::max(std::abs(a.lat - b.lat), std::abs(a.lon - b.lon));
}

/// Slack on window membership so grid-aligned points on the boundary count.
inline constexpr double kRadiusEpsilon = 1e-9;

struct UnitRecord {
    std::int64_t unit_id = 0;
    double lat = 0;
    double lon = 0;
    std::size_t factor = 0;  // index into the table's FactorSet
    int year = 0;

    GeoPoint point() const { return {lat, lon}; }
};

struct UnitTable {
    FactorSet factors;
    std::vector<UnitRecord> units;

    std::size_t size() const noexcept { return units.size(); }
    bool empty() const noexcept { return units.empty(); }
};

inline bool valid_coordinates(double lat, double lon) {
    return lat >= -90.0 && lat <= 90.0 && lon >= -180.0 && lon <= 180.0;
}

// ---------------------------------------------------------------------------
// Ingestion.

struct RejectedRow {
    std::size_t line = 0;
    std::string reason;
};

struct IngestResult {
    UnitTable table;
    std::vector<RejectedRow> rejected;
    bool has_year = false;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

template <class T>
bool parse_number(const std::string& s, T& out) {
    std::istringstream ss(s);
    ss.imbue(std::locale::classic());
    ss >> out;
    return !ss.fail() && ss.eof();
}

}  // namespace detail

/// Reads `unit_id,lat,lon,factor[,year]` CSV. Blank lines and lines starting
/// with '#' are skipped. Malformed rows throw ParseError; rows with
/// out-of-range coordinates are collected in `rejected`.
inline IngestResult ingest_microdata(std::istream& in) {
    IngestResult res;
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    std::size_t expected = 4;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        if (detail::trim(line).empty() || line[0] == '#') continue;
        auto fields = detail::split_csv_line(line);
        for (auto& f : fields) f = detail::trim(f);
        if (!header_seen) {
            const std::vector<std::string> base{"unit_id", "lat", "lon", "factor"};
            if (fields.size() < 4 || !std::equal(base.begin(), base.end(), fields.begin()) ||
                (fields.size() == 5 && fields[4] != "year") || fields.size() > 5)
                throw ParseError(lineno, "expected header unit_id,lat,lon,factor[,year]");
            res.has_year = fields.size() == 5;
            expected = fields.size();
            header_seen = true;
            continue;
        }
        if (fields.size() != expected)
            throw ParseError(lineno, "expected " + std::to_string(expected) + " fields, got " +
                                         std::to_string(fields.size()));
        UnitRecord u;
        if (!detail::parse_number(fields[0], u.unit_id)) throw ParseError(lineno, "bad unit_id '" + fields[0] + "'");
        if (!detail::parse_number(fields[1], u.lat)) throw ParseError(lineno, "bad lat '" + fields[1] + "'");
        if (!detail::parse_number(fields[2], u.lon)) throw ParseError(lineno, "bad lon '" + fields[2] + "'");
        if (fields[3].empty()) throw ParseError(lineno, "empty factor");
        if (res.has_year && !detail::parse_number(fields[4], u.year))
            throw ParseError(lineno, "bad year '" + fields[4] + "'");
        if (!valid_coordinates(u.lat, u.lon)) {
            res.rejected.push_back({lineno, "coordinates out of range"});
            continue;
        }
        u.factor = res.table.factors.add(fields[3]);
        res.table.units.push_back(u);
    }
    return res;
}

/// Splits a table by its year column; every part keeps the full FactorSet.
inline std::map<int, UnitTable> split_by_year(const UnitTable& table) {
    std::map<int, UnitTable> out;
    for (const auto& u : table.units) {
        auto& t = out[u.year];
        if (t.factors.empty()) t.factors = table.factors;
        t.units.push_back(u);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Grid of sub-locations.

struct CellKey {
    std::int64_t i = 0;  // latitude index
    std::int64_t j = 0;  // longitude index
    friend bool operator==(const CellKey&, const CellKey&) = default;
    friend auto operator<=>(const CellKey&, const CellKey&) = default;
    std::string id() const { return std::to_string(i) + ":" + std::to_string(j); }
};

struct CellGrid {
    GeoPoint origin;
    double cell = 1.0;

    CellKey key(const GeoPoint& p) const {
        return {static_cast<std::int64_t>(std::llround((p.lat - origin.lat) / cell)),
                static_cast<std::int64_t>(std::llround((p.lon - origin.lon) / cell))};
    }
    GeoPoint center(const CellKey& k) const {
        return {origin.lat + static_cast<double>(k.i) * cell, origin.lon + static_cast<double>(k.j) * cell};
    }
};

// ---------------------------------------------------------------------------
// Levels.

struct LevelWindow {
    GeoPoint x0;
    double s = 0;
    int level_index = 0;
    std::size_t member_count = 0;  // prefix length of LevelSet::order
};

/// Nested windows around x0 with radii s0 + k * delta_s. Units are sorted once
/// by distance, so each window is a prefix of `order`.
struct LevelSet {
    GeoPoint x0;
    std::vector<std::size_t> order;  // unit indices by (distance, index)
    std::vector<double> distance;    // distance of order[k]
    std::vector<LevelWindow> windows;

    std::span<const std::size_t> members(std::size_t level) const {
        return std::span<const std::size_t>(order).first(windows.at(level).member_count);
    }
};

inline LevelSet build_levels(const UnitTable& table, GeoPoint x0, double s0, double delta_s, int count) {
    if (!(delta_s > 0)) throw ConfigError("build_levels: delta_s must be > 0");
    if (count < 1) throw ConfigError("build_levels: count must be >= 1");
    if (!(s0 >= 0)) throw ConfigError("build_levels: s0 must be >= 0");
    LevelSet ls;
    ls.x0 = x0;
    std::vector<std::pair<double, std::size_t>> d;
    d.reserve(table.size());
    for (std::size_t i = 0; i < table.size(); ++i) d.emplace_back(chebyshev(table.units[i].point(), x0), i);
    std::sort(d.begin(), d.end());
    ls.order.reserve(d.size());
    ls.distance.reserve(d.size());
    for (const auto& [dist, idx] : d) {
        ls.order.push_back(idx);
        ls.distance.push_back(dist);
    }
    for (int k = 0; k < count; ++k) {
        const double s = s0 + k * delta_s;
        const auto end = std::upper_bound(ls.distance.begin(), ls.distance.end(), s + kRadiusEpsilon);
        ls.windows.push_back({x0, s, k, static_cast<std::size_t>(end - ls.distance.begin())});
    }
    return ls;
}

// ---------------------------------------------------------------------------
// Rank tables.

struct CellRanks {
    CellKey key;
    std::vector<long long> counts;  // per tracked factor
    std::vector<int> ranks;         // 1..m, a permutation
    bool tie = false;               // some ranks decided by label order
};

struct RankTable {
    int level_index = 0;
    double s = 0;
    std::vector<std::size_t> tracked;  // factor indices
    std::vector<CellRanks> cells;      // sorted by key
    std::vector<long long> totals;     // window aggregate per tracked factor

    bool empty() const noexcept { return cells.empty(); }
    std::size_t m() const noexcept { return tracked.size(); }
};

/// Dense ranks 1..m by descending count; equal counts fall back to factor index.
inline std::vector<int> rank_counts(std::span<const long long> counts, std::span<const std::size_t> factor_index,
                                    bool* tie = nullptr) {
    const std::size_t m = counts.size();
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (counts[a] != counts[b]) return counts[a] > counts[b];
        return factor_index[a] < factor_index[b];
    });
    std::vector<int> ranks(m);
    bool t = false;
    for (std::size_t r = 0; r < m; ++r) {
        ranks[idx[r]] = static_cast<int>(r) + 1;
        if (r > 0 && counts[idx[r]] == counts[idx[r - 1]]) t = true;
    }
    if (tie) *tie = t;
    return ranks;
}

/// Top-m factors by frequency over `members` (or the whole table when empty),
/// ties by index. Returned in factor-index order.
inline std::vector<std::size_t> top_factors(const UnitTable& table, std::size_t m,
                                            std::span<const std::size_t> members = {}) {
    std::vector<long long> freq(table.factors.size(), 0);
    if (members.empty())
        for (const auto& u : table.units) ++freq[u.factor];
    else
        for (auto i : members) ++freq[table.units[i].factor];
    std::vector<std::size_t> idx(freq.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return freq[a] > freq[b]; });
    idx.resize(std::min(m, idx.size()));
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Per-cell counts and ranks of the tracked factors within window `level`.
/// Cells holding none of the tracked factors are omitted.
inline RankTable rank_table(const UnitTable& table, const LevelSet& levels, std::size_t level,
                            std::span<const std::size_t> tracked, const CellGrid& grid) {
    RankTable rt;
    rt.level_index = levels.windows.at(level).level_index;
    rt.s = levels.windows.at(level).s;
    rt.tracked.assign(tracked.begin(), tracked.end());
    const std::size_t m = tracked.size();
    rt.totals.assign(m, 0);
    std::vector<int> slot(table.factors.size(), -1);
    for (std::size_t k = 0; k < m; ++k) slot.at(tracked[k]) = static_cast<int>(k);

    std::map<CellKey, std::vector<long long>> counts;
    for (auto ui : levels.members(level)) {
        const auto& u = table.units[ui];
        const int k = slot[u.factor];
        if (k < 0) continue;
        auto& c = counts[grid.key(u.point())];
        if (c.empty()) c.assign(m, 0);
        ++c[static_cast<std::size_t>(k)];
        ++rt.totals[static_cast<std::size_t>(k)];
    }
    rt.cells.reserve(counts.size());
    for (auto& [key, c] : counts) {
        CellRanks cr;
        cr.key = key;
        cr.ranks = rank_counts(c, tracked, &cr.tie);
        cr.counts = std::move(c);
        rt.cells.push_back(std::move(cr));
    }
    return rt;
}

inline std::vector<RankTable> rank_tables(const UnitTable& table, const LevelSet& levels,
                                          std::span<const std::size_t> tracked, const CellGrid& grid) {
    std::vector<RankTable> out;
    out.reserve(levels.windows.size());
    for (std::size_t k = 0; k < levels.windows.size(); ++k) out.push_back(rank_table(table, levels, k, tracked, grid));
    return out;
}

// ---------------------------------------------------------------------------
// Square detection.

struct LevelBand {
    double s = 0;
    int level_index = 0;
    std::size_t cells = 0;
    double coverage_fraction = 0;
    bool full_coverage = false;
    bool balance_ok = false;
    std::vector<int> r0;       // per tracked factor, 0 when absent
    std::vector<int> r_omega;  // per tracked factor, 0 when absent
};

struct SquareDetection {
    std::vector<std::size_t> tracked;
    std::optional<double> s_sq;
    std::optional<int> s_sq_level;
    int detection_level = 0;  // s_sq level, or the last level when no square completes
    std::vector<std::vector<bool>> coverage;  // [factor][rank-1] at detection level
    std::vector<int> r0;
    std::vector<int> r_omega;
    int omega_hat = 0;  // modal inclusive band width r_omega - r0 + 1
    bool balance_ok = false;
    double theta1 = 0;  // atan2(mean r_omega, mean r0)
    std::vector<LevelBand> levels;
};

inline constexpr double kDefaultBalanceTolerance = 0.25;

namespace detail {

struct BandScan {
    LevelBand band;
    std::vector<std::vector<bool>> coverage;
};

inline BandScan scan_level(const RankTable& rt, double tau) {
    const std::size_t m = rt.m();
    BandScan out;
    out.band.s = rt.s;
    out.band.level_index = rt.level_index;
    out.band.cells = rt.cells.size();
    out.band.r0.assign(m, 0);
    out.band.r_omega.assign(m, 0);
    out.coverage.assign(m, std::vector<bool>(m, false));
    for (const auto& c : rt.cells)
        for (std::size_t f = 0; f < m; ++f) {
            const int r = c.ranks[f];
            out.coverage[f][static_cast<std::size_t>(r - 1)] = true;
            out.band.r0[f] = out.band.r0[f] == 0 ? r : std::min(out.band.r0[f], r);
            out.band.r_omega[f] = std::max(out.band.r_omega[f], r);
        }
    std::size_t covered = 0;
    for (const auto& row : out.coverage) covered += static_cast<std::size_t>(std::count(row.begin(), row.end(), true));
    out.band.coverage_fraction = m ? static_cast<double>(covered) / static_cast<double>(m * m) : 0.0;
    out.band.full_coverage = m > 0 && covered == m * m;
    if (m > 0 && !rt.empty()) {
        const auto [lo, hi] = std::minmax_element(rt.totals.begin(), rt.totals.end());
        out.band.balance_ok = *hi > 0 && static_cast<double>(*lo) >= (1.0 - tau) * static_cast<double>(*hi);
    }
    return out;
}

}  // namespace detail

/// Scans levels in increasing order. A square completes at the first level
/// where every tracked factor attains every rank in some sub-location and
/// every factor's window total is within tau of the top factor's total.
inline SquareDetection detect_square(const std::vector<RankTable>& levels, double tau = kDefaultBalanceTolerance) {
    if (levels.empty()) throw InsufficientData("detect_square: need at least one level");
    SquareDetection det;
    det.tracked = levels.front().tracked;
    const std::size_t m = det.tracked.size();
    std::vector<std::vector<bool>> detection_coverage;
    for (std::size_t k = 0; k < levels.size(); ++k) {
        if (levels[k].tracked != det.tracked) throw ContractViolation("detect_square: tracked factors differ by level");
        auto scan = detail::scan_level(levels[k], tau);
        const bool square = scan.band.full_coverage && scan.band.balance_ok;
        det.levels.push_back(scan.band);
        if (square && !det.s_sq) {
            det.s_sq = scan.band.s;
            det.s_sq_level = static_cast<int>(k);
            detection_coverage = std::move(scan.coverage);
        } else if (!det.s_sq && k + 1 == levels.size()) {
            detection_coverage = std::move(scan.coverage);
        }
    }
    det.detection_level = det.s_sq_level.value_or(static_cast<int>(levels.size()) - 1);
    const auto& band = det.levels[static_cast<std::size_t>(det.detection_level)];
    det.coverage = std::move(detection_coverage);
    det.r0 = band.r0;
    det.r_omega = band.r_omega;
    det.balance_ok = band.balance_ok;

    std::map<int, int> widths;
    double sum0 = 0, sum_w = 0;
    int present = 0;
    for (std::size_t f = 0; f < m; ++f) {
        if (band.r0[f] == 0) continue;
        ++widths[band.r_omega[f] - band.r0[f] + 1];
        sum0 += band.r0[f];
        sum_w += band.r_omega[f];
        ++present;
    }
    int best = 0;
    for (const auto& [w, n] : widths)
        if (n >= best) {  // ties go to the wider band
            best = n;
            det.omega_hat = w;
        }
    if (present > 0) det.theta1 = std::atan2(sum_w / present, sum0 / present);
    return det;
}

// ---------------------------------------------------------------------------
// Synthetic generator.

struct PlantedSquare {
    int m = 6;
    int omega = 6;
    double s_sq = 0.6;
};

struct SyntheticConfig {
    std::vector<PlantedSquare> squares{PlantedSquare{}};
    int n_locations = 225;
    int units_per_location = 294;  // per planted square, per cell
    double noise = 0.0;            // probability a unit's label is resampled
    std::uint64_t seed = 1;
    GeoPoint x0{40.0, -100.0};
    double rank_exponent = 1.0;    // rank weights r^-exponent (Zipf)
    int year = 0;
};

struct PlantedTruth {
    int omega = 0;
    std::vector<std::size_t> factors;    // factor indices of this square's group
    int block = 1;                       // rotation block size in cells
    std::optional<double> band_radius;   // radius at which every rotation is present
    std::optional<double> s_sq;          // radius of first balanced full coverage (omega == m)
};

struct SyntheticData {
    UnitTable table;
    CellGrid grid;
    std::vector<PlantedTruth> truth;
};

namespace detail {

// Largest-remainder split of `units` by weights; ranks must stay strictly separated.
inline std::vector<long long> planted_counts(int units, int m, double exponent) {
    std::vector<double> w(static_cast<std::size_t>(m));
    double total = 0;
    for (int r = 0; r < m; ++r) total += (w[static_cast<std::size_t>(r)] = std::pow(r + 1.0, -exponent));
    std::vector<long long> c(w.size());
    std::vector<std::pair<double, int>> frac;
    long long used = 0;
    for (int r = 0; r < m; ++r) {
        const double exact = units * w[static_cast<std::size_t>(r)] / total;
        c[static_cast<std::size_t>(r)] = static_cast<long long>(std::floor(exact + 1e-9));
        used += c[static_cast<std::size_t>(r)];
        frac.emplace_back(-(exact - std::floor(exact + 1e-9)), r);
    }
    std::sort(frac.begin(), frac.end());
    for (long long k = 0; k < units - used; ++k) ++c[static_cast<std::size_t>(frac[static_cast<std::size_t>(k)].second)];
    for (std::size_t r = 1; r < c.size(); ++r)
        if (c[r] >= c[r - 1]) throw ConfigError("units_per_location too small to separate planted ranks");
    return c;
}

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    return a / b - ((a % b != 0) && ((a < 0) != (b < 0)));
}

// Rank (0-based) of local factor `f` under rotation `rot`: bands of width
// omega, rotated cyclically inside each band.
inline int planted_rank(int f, int rot, int m, int omega) {
    const int band = f / omega;
    const int lo = band * omega;
    const int width = std::min(omega, m - lo);
    const int local = f - lo;
    return lo + ((local - rot % width) % width + width) % width;
}

// (I + J) mod omega over odd blocks of `block` cells centred on the origin.
inline int block_rotation(std::int64_t i, std::int64_t j, int block, int omega) {
    const std::int64_t h = (block - 1) / 2;
    const std::int64_t w = omega;
    const auto s = floor_div(i + h, block) + floor_div(j + h, block);
    return static_cast<int>((s % w + w) % w);
}

struct PlantedRings {
    std::optional<int> all_rotations;  // first ring where every rotation is present
    std::optional<int> square;         // ... and expected window totals are balanced (omega == m only)
};

inline PlantedRings planted_rings(int block, int omega, int m, const std::vector<long long>& counts, int max_ring,
                                  double tau) {
    PlantedRings pr;
    std::vector<long long> rot_cells(static_cast<std::size_t>(omega), 0);
    for (int ring = 0; ring <= max_ring; ++ring) {
        auto add = [&](std::int64_t i, std::int64_t j) { ++rot_cells[static_cast<std::size_t>(block_rotation(i, j, block, omega))]; };
        if (ring == 0) {
            add(0, 0);
        } else {
            for (int k = -ring; k <= ring; ++k) {
                add(-ring, k);
                add(ring, k);
            }
            for (int k = -ring + 1; k <= ring - 1; ++k) {
                add(k, -ring);
                add(k, ring);
            }
        }
        const bool all = std::all_of(rot_cells.begin(), rot_cells.end(), [](long long c) { return c > 0; });
        if (!all) continue;
        if (!pr.all_rotations) pr.all_rotations = ring;
        if (omega != m || m < 2) return pr;
        long long lo = std::numeric_limits<long long>::max(), hi = 0;
        for (int f = 0; f < m; ++f) {
            long long total = 0;
            for (int r = 0; r < omega; ++r)
                total += rot_cells[static_cast<std::size_t>(r)] * counts[static_cast<std::size_t>(planted_rank(f, r, m, omega))];
            lo = std::min(lo, total);
            hi = std::max(hi, total);
        }
        if (static_cast<double>(lo) >= (1.0 - tau) * static_cast<double>(hi)) {
            pr.square = ring;
            return pr;
        }
    }
    return pr;
}

inline std::optional<int> planted_ring(const PlantedRings& pr, int omega, int m) {
    return (omega == m && m > 1) ? pr.square : pr.all_rotations;
}

}  // namespace detail

/// Cells on a grid around x0 (the n_locations nearest in Chebyshev order).
/// Each planted square owns a group of m factors; a cell's rotation for that
/// square is (I + J) mod omega over odd blocks of cells, and ranks rotate
/// cyclically within bands of width omega. The finest square sets the cell
/// size; every square gets the block size whose planted window first shows
/// full coverage with balanced totals (tolerance kDefaultBalanceTolerance)
/// closest to its s_sq. Ground truth reports the realised radii.
inline SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
    if (cfg.squares.empty()) throw ConfigError("generate_synthetic: need at least one planted square");
    if (cfg.n_locations < 1) throw ConfigError("generate_synthetic: n_locations must be >= 1");
    if (cfg.units_per_location < 1) throw ConfigError("generate_synthetic: units_per_location must be >= 1");
    if (!(cfg.noise >= 0 && cfg.noise < 1)) throw ConfigError("generate_synthetic: noise must be in [0, 1)");
    for (const auto& sq : cfg.squares) {
        if (sq.m < 1) throw ConfigError("planted square: m must be >= 1");
        if (sq.omega < 1 || sq.omega > sq.m) throw ConfigError("planted square: need 1 <= omega <= m");
        if (!(sq.s_sq > 0)) throw ConfigError("planted square: s_sq must be > 0");
        if (sq.omega > cfg.n_locations) throw ConfigError("planted square: omega exceeds available cells");
    }
    const double tau = kDefaultBalanceTolerance;
    std::vector<std::vector<long long>> counts;
    for (const auto& sq : cfg.squares) counts.push_back(detail::planted_counts(cfg.units_per_location, sq.m, cfg.rank_exponent));

    double cell = 0;
    for (std::size_t q = 0; q < cfg.squares.size(); ++q) {
        const auto& sq = cfg.squares[q];
        const auto ring = detail::planted_ring(detail::planted_rings(1, sq.omega, sq.m, counts[q], 4 * sq.omega + 4, tau),
                                               sq.omega, sq.m);
        const double c = ring && *ring > 0 ? sq.s_sq / *ring : sq.s_sq;
        cell = cell == 0 ? c : std::min(cell, c);
    }

    SyntheticData out;
    out.grid = CellGrid{cfg.x0, cell};

    // Cell offsets nearest-first.
    const int half = static_cast<int>(std::ceil((std::sqrt(static_cast<double>(cfg.n_locations)) - 1) / 2)) + 1;
    std::vector<CellKey> cells;
    for (int i = -half; i <= half; ++i)
        for (int j = -half; j <= half; ++j) cells.push_back({i, j});
    std::sort(cells.begin(), cells.end(), [](const CellKey& a, const CellKey& b) {
        const auto ra = std::max(std::abs(a.i), std::abs(a.j)), rb = std::max(std::abs(b.i), std::abs(b.j));
        if (ra != rb) return ra < rb;
        return a < b;
    });
    cells.resize(static_cast<std::size_t>(cfg.n_locations));
    const int full_ring = static_cast<int>(std::floor((std::sqrt(static_cast<double>(cfg.n_locations)) - 1) / 2 + 1e-12));

    std::vector<std::string> labels;
    std::size_t next_factor = 0;
    for (std::size_t q = 0; q < cfg.squares.size(); ++q) {
        const auto& sq = cfg.squares[q];
        PlantedTruth t;
        t.omega = sq.omega;
        const double target = sq.s_sq / cell;
        const int limit = 3 * static_cast<int>(std::ceil(target)) + 4 * sq.omega + 4;
        double best_err = std::numeric_limits<double>::infinity();
        detail::PlantedRings best;
        for (int b = 1; b <= 2 * static_cast<int>(std::ceil(target)) + 1; b += 2) {
            const auto pr = detail::planted_rings(b, sq.omega, sq.m, counts[q], limit, tau);
            const auto ring = detail::planted_ring(pr, sq.omega, sq.m);
            if (!ring) continue;
            const double err = std::abs(*ring - target);
            if (err < best_err - 1e-12) {
                best_err = err;
                best = pr;
                t.block = b;
            }
            if (sq.omega == 1) break;
        }
        if (!best.all_rotations) throw ConfigError("generate_synthetic: planted square cannot be realised");
        const int needed = *detail::planted_ring(best, sq.omega, sq.m);
        if (needed > full_ring)
            throw ConfigError("generate_synthetic: n_locations too small to realise the planted square (need " +
                              std::to_string((2 * needed + 1) * (2 * needed + 1)) + ")");
        t.band_radius = *best.all_rotations * cell;
        if (best.square && sq.omega == sq.m && sq.m > 1) t.s_sq = *best.square * cell;
        for (int f = 0; f < sq.m; ++f) {
            std::string label = "g" + std::to_string(q) + "_f" + (f + 1 < 10 ? "0" : "") + std::to_string(f + 1);
            labels.push_back(label);
            t.factors.push_back(next_factor++);
        }
        out.truth.push_back(std::move(t));
    }
    out.table.factors = FactorSet(labels);

    auto rotation = [&](const CellKey& k, std::size_t q) {
        return detail::block_rotation(k.i, k.j, out.truth[q].block, out.truth[q].omega);
    };

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::int64_t next_id = 1;
    for (const auto& k : cells) {
        const GeoPoint c = out.grid.center(k);
        if (!valid_coordinates(c.lat, c.lon)) throw ConfigError("generate_synthetic: grid leaves lat/lon range");
        for (std::size_t q = 0; q < cfg.squares.size(); ++q) {
            const auto& sq = cfg.squares[q];
            const auto& t = out.truth[q];
            const auto& cnt = counts[q];
            const int rot = rotation(k, q);
            // by_rank[r] = local factor holding rank r in this cell.
            std::vector<int> by_rank(static_cast<std::size_t>(sq.m));
            for (int f = 0; f < sq.m; ++f) by_rank[static_cast<std::size_t>(detail::planted_rank(f, rot, sq.m, sq.omega))] = f;
            std::discrete_distribution<int> resample(cnt.begin(), cnt.end());
            for (int r = 0; r < sq.m; ++r)
                for (long long n = 0; n < cnt[static_cast<std::size_t>(r)]; ++n) {
                    int rank = r;
                    if (cfg.noise > 0 && unif(rng) < cfg.noise) rank = resample(rng);
                    UnitRecord u;
                    u.unit_id = next_id++;
                    u.lat = c.lat;
                    u.lon = c.lon;
                    u.factor = t.factors[static_cast<std::size_t>(by_rank[static_cast<std::size_t>(rank)])];
                    u.year = cfg.year;
                    out.table.units.push_back(u);
                }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Share fields on the grid: per cell counts with Chebyshev window sums via 2D
// prefix sums. Windows around a base location are whole cells within
// floor(s / cell) rings of it.

namespace detail {

class ShareField {
  public:
    ShareField(const UnitTable& table, const CellGrid& grid, std::size_t factors) : factors_(factors) {
        if (table.empty()) return;
        std::int64_t i0 = INT64_MAX, i1 = INT64_MIN, j0 = INT64_MAX, j1 = INT64_MIN;
        std::vector<CellKey> keys;
        keys.reserve(table.size());
        for (const auto& u : table.units) {
            const auto k = grid.key(u.point());
            keys.push_back(k);
            i0 = std::min(i0, k.i);
            i1 = std::max(i1, k.i);
            j0 = std::min(j0, k.j);
            j1 = std::max(j1, k.j);
        }
        i0_ = i0;
        j0_ = j0;
        rows_ = static_cast<std::size_t>(i1 - i0 + 1);
        cols_ = static_cast<std::size_t>(j1 - j0 + 1);
        if (static_cast<double>(rows_) * static_cast<double>(cols_) * static_cast<double>(factors_ + 1) > 6.4e7)
            throw ConfigError("cell size too fine for the spatial extent of the data");
        prefix_.assign((rows_ + 1) * (cols_ + 1) * (factors_ + 1), 0);
        for (std::size_t n = 0; n < keys.size(); ++n) {
            const auto r = static_cast<std::size_t>(keys[n].i - i0_) + 1, c = static_cast<std::size_t>(keys[n].j - j0_) + 1;
            ++at(r, c, factors_);
            if (table.units[n].factor < factors_) ++at(r, c, table.units[n].factor);
        }
        for (std::size_t r = 1; r <= rows_; ++r)
            for (std::size_t c = 1; c <= cols_; ++c)
                for (std::size_t f = 0; f <= factors_; ++f)
                    at(r, c, f) += at(r - 1, c, f) + at(r, c - 1, f) - at(r - 1, c - 1, f);
        std::map<CellKey, bool> occupied;
        for (const auto& k : keys) occupied[k] = true;
        for (const auto& [k, _] : occupied) cells_.push_back(k);
    }

    const std::vector<CellKey>& cells() const { return cells_; }

    // Count of factor f (f == factors for the total) within `rings` of cell k.
    long long window(const CellKey& k, std::int64_t rings, std::size_t f) const {
        if (cells_.empty()) return 0;
        const auto clamp_r = [&](std::int64_t v) { return std::clamp<std::int64_t>(v, 0, static_cast<std::int64_t>(rows_)); };
        const auto clamp_c = [&](std::int64_t v) { return std::clamp<std::int64_t>(v, 0, static_cast<std::int64_t>(cols_)); };
        const auto r0 = static_cast<std::size_t>(clamp_r(k.i - rings - i0_));
        const auto r1 = static_cast<std::size_t>(clamp_r(k.i + rings - i0_ + 1));
        const auto c0 = static_cast<std::size_t>(clamp_c(k.j - rings - j0_));
        const auto c1 = static_cast<std::size_t>(clamp_c(k.j + rings - j0_ + 1));
        if (r1 <= r0 || c1 <= c0) return 0;
        return get(r1, c1, f) - get(r0, c1, f) - get(r1, c0, f) + get(r0, c0, f);
    }

    std::optional<double> share(const CellKey& k, std::int64_t rings, std::size_t f) const {
        const long long total = window(k, rings, factors_);
        if (total == 0) return std::nullopt;
        return static_cast<double>(window(k, rings, f)) / static_cast<double>(total);
    }

  private:
    long long& at(std::size_t r, std::size_t c, std::size_t f) { return prefix_[(r * (cols_ + 1) + c) * (factors_ + 1) + f]; }
    long long get(std::size_t r, std::size_t c, std::size_t f) const {
        return prefix_[(r * (cols_ + 1) + c) * (factors_ + 1) + f];
    }

    std::size_t factors_ = 0;
    std::int64_t i0_ = 0, j0_ = 0;
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<long long> prefix_;
    std::vector<CellKey> cells_;
};

inline std::int64_t rings_for(double s, double cell) {
    return static_cast<std::int64_t>(std::floor(s / cell + kRadiusEpsilon));
}

inline std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) return std::nullopt;
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    const double scale = 1e-24 * static_cast<double>(n);
    if (sxx <= scale || syy <= scale) return std::nullopt;
    if (x == y) return 1.0;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace detail

struct AcfPoint {
    double s = 0;
    std::optional<double> correlation;  // absent when a share vector has zero variance
};

/// Pearson correlation, across base locations (occupied cells), between a
/// factor's share in the s0 window and its share in the window of radius s.
inline std::vector<AcfPoint> acf_profile(const UnitTable& table, std::size_t factor, const CellGrid& grid, double s0,
                                         double delta_s, int count) {
    if (count < 2) throw InsufficientData("acf_profile: need at least 2 levels");
    if (factor >= table.factors.size()) throw DomainError("acf_profile: unknown factor");
    detail::ShareField field(table, grid, table.factors.size());
    if (field.cells().size() < 2) throw InsufficientData("acf_profile: need at least 2 base locations");
    const auto r0 = detail::rings_for(s0, grid.cell);
    std::vector<double> local;
    for (const auto& k : field.cells()) local.push_back(field.share(k, r0, factor).value_or(0.0));
    std::vector<AcfPoint> out;
    for (int lvl = 0; lvl < count; ++lvl) {
        const double s = s0 + lvl * delta_s;
        const auto rings = detail::rings_for(s, grid.cell);
        std::vector<double> wide;
        for (const auto& k : field.cells()) wide.push_back(field.share(k, rings, factor).value_or(0.0));
        out.push_back({s, detail::pearson(local, wide)});
    }
    return out;
}

struct AccuracyPoint {
    double s = 0;
    double accuracy = 0;
    std::size_t predictions = 0;
};

/// Baseline growth predictor: a factor's share at a location is predicted to
/// grow from year t to t+1 iff its share in the radius-s window around the
/// location at year t exceeds the local (s0) share. Accuracy is measured
/// against realised local growth over locations present in both years.
inline std::vector<AccuracyPoint> baseline_accuracy_vs_level(const UnitTable& year_t, const UnitTable& year_t1,
                                                             const CellGrid& grid, double s0, double delta_s, int count) {
    if (year_t1.empty()) throw InsufficientData("baseline_accuracy_vs_level: second year missing");
    if (year_t.empty()) throw InsufficientData("baseline_accuracy_vs_level: first year missing");
    if (count < 1) throw ConfigError("baseline_accuracy_vs_level: count must be >= 1");
    // Align factor indices by label.
    const auto& fs = year_t.factors;
    UnitTable next;
    next.factors = fs;
    for (auto u : year_t1.units) {
        const auto idx = fs.index_of(year_t1.factors.label(u.factor));
        if (!idx) throw ContractViolation("baseline_accuracy_vs_level: factor sets differ");
        u.factor = *idx;
        next.units.push_back(u);
    }
    const std::size_t m = fs.size();
    detail::ShareField now(year_t, grid, m), later(next, grid, m);
    const auto r0 = detail::rings_for(s0, grid.cell);
    std::vector<CellKey> common;
    std::set_intersection(now.cells().begin(), now.cells().end(), later.cells().begin(), later.cells().end(),
                          std::back_inserter(common));
    std::vector<AccuracyPoint> out;
    for (int lvl = 0; lvl < count; ++lvl) {
        const double s = s0 + lvl * delta_s;
        const auto rings = detail::rings_for(s, grid.cell);
        std::size_t hits = 0, total = 0;
        for (const auto& k : common)
            for (std::size_t f = 0; f < m; ++f) {
                const double p_now = now.share(k, r0, f).value_or(0.0);
                const double p_later = later.share(k, r0, f).value_or(0.0);
                const double p_wide = now.share(k, rings, f).value_or(0.0);
                const bool grows = p_later > p_now + 1e-12;
                const bool predicted = p_wide > p_now + 1e-12;
                hits += grows == predicted;
                ++total;
            }
        out.push_back({s, total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0, total});
    }
    return out;
}

}  // namespace bexg
