#pragma once

// Monte Carlo local limit checks, probes of the regularity conditions on the
// marginal characteristic functions, and the anti-clustering diagnostic.

#include "lltlab/charfn.hpp"
#include "lltlab/core.hpp"
#include "lltlab/kernel.hpp"
#include "lltlab/stable.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace lltlab {

struct IntervalEstimate {
    double estimate = 0.0;
    double stderr_ = 0.0;
    std::size_t hits = 0;
};

/// Fraction of replicas with c - u <= S_n <= d - u and its binomial standard
/// error. `slack` widens the interval on both sides (lattice sums).
inline IntervalEstimate interval_prob(const TrajectoryBatch& batch, double c, double d, double u,
                                      double slack = 0.0) {
    require(!batch.sums.empty(), "interval probability needs a nonempty batch");
    require(c <= d, "interval needs c <= d");
    const double lo = c - u - slack, hi = d - u + slack;
    std::size_t hits = 0;
    for (double s : batch.sums) hits += (s >= lo && s <= hi) ? 1 : 0;
    const double count = static_cast<double>(batch.sums.size());
    const double p = static_cast<double>(hits) / count;
    return {p, std::sqrt(p * (1.0 - p) / count), hits};
}

/// #{k in Z : lo <= offset + k h <= hi}; `offset` is the lattice offset of S_n.
inline std::int64_t lattice_count(double lo, double hi, double h, double offset) {
    require(h > 0.0, "lattice span must be positive");
    if (hi < lo) return 0;
    constexpr double snap = 1e-9;
    const double a = (lo - offset) / h, b = (hi - offset) / h;
    const auto k_lo = static_cast<std::int64_t>(std::ceil(a - snap));
    const auto k_hi = static_cast<std::int64_t>(std::floor(b + snap));
    return std::max<std::int64_t>(0, k_hi - k_lo + 1);
}

// ---------------------------------------------------------------------------
// Experiments and reports
// ---------------------------------------------------------------------------

struct LLTExperiment {
    ChainModel model;
    Functional functional;
    std::vector<std::size_t> ns{};
    std::size_t replicas = 200000;
    NormalizerSchedule normalizers{};
    StableLaw limit = StableLaw::standard_normal();
    bool fit_scale = false;  ///< refit the limit scale at each n from the empirical characteristic function
    std::vector<double> fit_grid = linspace(0.05, 0.8, 16);
    double c = -0.5;
    double d = 0.5;
    double shift_bound = 10.0;
    std::size_t shift_count = 41;
    bool lattice = false;
    double tolerance = 0.10;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    void validate() const {
        require(c < d || (lattice && c <= d), "interval needs c < d");
        require(replicas >= 1000, "replicas must be at least 1000");
        require(!ns.empty(), "n schedule is empty");
        require(normalizers.n == ns, "normalizer schedule does not match the n schedule");
        require(shift_count >= 1, "shift grid is empty");
        require(shift_bound >= 0.0, "shift bound must be nonnegative");
        if (lattice) require(functional.lattice().has_value(), "lattice experiment needs lattice metadata");
        limit.validate();
    }
};

struct LLTRow {
    std::size_t n = 0;
    double bn = 0.0;
    double sup_discrepancy = 0.0;
    double stderr_max = 0.0;  ///< largest B_n * stderr over the shift grid
    double worst_shift = 0.0;
    double scale = 0.0;       ///< limit scale used at this n
    bool pass = false;
};

struct LLTReport {
    std::vector<LLTRow> rows;
    std::vector<double> shifts;
    double tolerance = 0.0;
    bool lattice = false;

    bool pass() const {
        return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const LLTRow& r) { return r.pass; });
    }

    std::string to_csv() const {
        std::ostringstream out;
        out.precision(17);
        out << "n,B_n,sup_discrepancy,stderr_max,pass\n";
        for (const auto& r : rows)
            out << r.n << ',' << r.bn << ',' << r.sup_discrepancy << ',' << r.stderr_max << ','
                << (r.pass ? "true" : "false") << '\n';
        return out.str();
    }

    json to_json() const {
        json rows_json = json::array();
        for (const auto& r : rows)
            rows_json.push_back({{"n", r.n},
                                 {"B_n", r.bn},
                                 {"sup_discrepancy", r.sup_discrepancy},
                                 {"stderr_max", r.stderr_max},
                                 {"worst_shift", r.worst_shift},
                                 {"limit_scale", r.scale},
                                 {"pass", r.pass}});
        return {{"lattice", lattice}, {"tolerance", tolerance}, {"shifts", shifts}, {"rows", rows_json},
                {"pass", pass()}};
    }
};

/// 41 (by default) equally spaced shifts on |u| <= A, or the lattice points
/// m h inside the window thinned to at most `count` points.
inline std::vector<double> shift_grid(const LLTExperiment& e) {
    if (!e.lattice) return e.shift_count == 1 ? std::vector<double>{0.0} : linspace(-e.shift_bound, e.shift_bound, e.shift_count);
    const double h = e.functional.lattice()->span;
    const auto m_max = static_cast<std::int64_t>(std::floor(e.shift_bound / h + 1e-9));
    const std::int64_t total = 2 * m_max + 1;
    const std::int64_t stride = std::max<std::int64_t>(1, (total + static_cast<std::int64_t>(e.shift_count) - 1) /
                                                             static_cast<std::int64_t>(e.shift_count));
    std::vector<double> shifts;
    for (std::int64_t m = -(m_max / stride) * stride; m <= m_max; m += stride) shifts.push_back(static_cast<double>(m) * h);
    return shifts;
}

namespace detail {
inline LLTReport run_llt(const LLTExperiment& e,
                         const std::function<std::optional<TrajectoryBatch>(std::size_t)>& provided = {}) {
    e.validate();
    LLTReport report;
    report.tolerance = e.tolerance;
    report.lattice = e.lattice;
    report.shifts = shift_grid(e);
    require(!report.shifts.empty(), "shift grid is empty");
    for (std::size_t i = 0; i < e.ns.size(); ++i) {
        const std::size_t n = e.ns[i];
        const double bn = e.normalizers.bn[i];
        require(bn > 0.0, "B_n must be positive");
        std::optional<TrajectoryBatch> given = provided ? provided(n) : std::nullopt;
        SimulationOptions opts;
        opts.threads = e.threads;
        opts.salt = n;
        const TrajectoryBatch batch =
            given ? std::move(*given) : simulate_partial_sums(e.model, e.functional, n, e.replicas, e.seed, opts);
        StableLaw limit = e.limit;
        if (e.fit_scale) limit.scale = fit_stable_scale(batch.sums, bn, limit.p, e.fit_grid);
        const double cutoff = stable_cutoff(limit);
        LLTRow row;
        row.n = n;
        row.bn = bn;
        row.scale = limit.scale;
        for (double u : report.shifts) {
            const double density = detail::inversion_integral(limit, -u / bn, cutoff);
            double target = 0.0;
            IntervalEstimate est;
            if (e.lattice) {
                const Lattice& lat = *e.functional.lattice();
                const double offset = static_cast<double>(n) * lat.offset;
                target = lat.span * static_cast<double>(lattice_count(e.c - u, e.d - u, lat.span, offset)) * density;
                est = interval_prob(batch, e.c, e.d, u, 1e-9 * lat.span);
            } else {
                target = (e.d - e.c) * density;
                est = interval_prob(batch, e.c, e.d, u);
            }
            const double discrepancy = std::abs(bn * est.estimate - target);
            if (discrepancy > row.sup_discrepancy) {
                row.sup_discrepancy = discrepancy;
                row.worst_shift = u;
            }
            row.stderr_max = std::max(row.stderr_max, bn * est.stderr_);
        }
        row.pass = row.sup_discrepancy < e.tolerance;
        report.rows.push_back(row);
    }
    return report;
}
}  // namespace detail

/// sup over the shift grid of |B_n P(c - u <= S_n <= d - u) - (d - c) h_L(-u / B_n)|.
inline LLTReport nonlattice_discrepancy(const LLTExperiment& e) {
    require(!e.lattice, "use lattice_discrepancy for lattice experiments");
    return detail::run_llt(e);
}

/// Lattice variant: the target is h #{k : c - u <= n offset + k h <= d - u} h_L(-u / B_n).
inline LLTReport lattice_discrepancy(const LLTExperiment& e) {
    require(e.lattice, "use nonlattice_discrepancy for non-lattice experiments");
    const Lattice& lat = *e.functional.lattice();
    for (double u : shift_grid(e)) {
        const double m = u / lat.span;
        require(std::abs(m - std::round(m)) <= 1e-9, "lattice shift " + std::to_string(u) + " is off the lattice");
    }
    return detail::run_llt(e);
}

/// Law of S_n for i.i.d. steps with finitely many integer-valued outcomes,
/// by repeated convolution. Returns (minimum value, probabilities).
inline std::pair<std::int64_t, std::vector<double>> integer_sum_law(const std::vector<std::int64_t>& values,
                                                                    const std::vector<double>& probs,
                                                                    std::size_t n) {
    require(values.size() == probs.size() && !values.empty(), "law needs matching values and probabilities");
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    const std::int64_t lo = *mn, width = *mx - *mn;
    std::vector<double> law{1.0};
    for (std::size_t step = 0; step < n; ++step) {
        std::vector<double> next(law.size() + static_cast<std::size_t>(width), 0.0);
        for (std::size_t i = 0; i < law.size(); ++i)
            for (std::size_t j = 0; j < values.size(); ++j)
                next[i + static_cast<std::size_t>(values[j] - lo)] += law[i] * probs[j];
        law = std::move(next);
    }
    return {lo * static_cast<std::int64_t>(n), law};
}

// ---------------------------------------------------------------------------
// Condition probes
// ---------------------------------------------------------------------------

struct PowerFit {
    double coefficient = 0.0;
    double exponent = 0.0;
    bool valid = false;
};

/// Least squares fit of log y = log c + q log x over points with y > 0.
inline PowerFit fit_power_law(const std::vector<double>& x, const std::vector<double>& y) {
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    std::size_t m = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(y[i] > 0.0) || x[i] == 0.0) continue;
        const double lx = std::log(std::abs(x[i])), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++m;
    }
    PowerFit fit;
    const double mm = static_cast<double>(m);
    const double denom = mm * sxx - sx * sx;
    if (m < 2 || !(std::abs(denom) > 0.0)) return fit;
    fit.exponent = (mm * sxy - sx * sy) / denom;
    fit.coefficient = std::exp((sy - fit.exponent * sx) / mm);
    fit.valid = true;
    return fit;
}

struct ConditionACurve {
    std::vector<double> u;
    std::vector<double> g;          ///< (a^4 / 16) sum (1 - |f_k(u / B_n)|^2)
    std::vector<double> g_printed;  ///< same with a^2 / 2^4
    double a = 0.0;
    PowerFit fit;
    bool verifiable = false;

    std::string to_csv() const {
        std::ostringstream out;
        out.precision(17);
        out << "u,g,g_printed\n";
        for (std::size_t i = 0; i < u.size(); ++i) out << u[i] << ',' << g[i] << ',' << g_printed[i] << '\n';
        return out.str();
    }
};

/// u -> (a^4 / 16) sum_{k=1}^n (1 - |f_k(u / B_n)|^2) on 1 <= |u| <= delta B_n
/// with a power-law fit c |u|^q.
inline ConditionACurve condition_A_probe(const ChainModel& model, const Functional& f, std::size_t n, double bn,
                                         double delta, const std::vector<double>& u_grid) {
    f.check_compatible(model);
    require(bn > 0.0, "B_n must be positive");
    ConditionACurve out;
    out.a = effective_floor(model.require_floor());
    require(out.a > 0.0, "condition A probe needs a > 0");
    const auto marginals = model.finite().marginals(n);
    const double proof = std::pow(out.a, 4) / 16.0, printed = out.a * out.a / 16.0;
    for (double u : u_grid) {
        require(std::abs(u) >= 1.0 && std::abs(u) <= delta * bn, "probe frequencies must satisfy 1 <= |u| <= delta B_n");
        const double deficit = charfn_deficit(marginals, f, u / bn);
        out.u.push_back(u);
        out.g.push_back(proof * deficit);
        out.g_printed.push_back(printed * deficit);
    }
    out.fit = fit_power_law(out.u, out.g);
    out.verifiable = out.fit.valid && out.fit.coefficient > 0.0 &&
                     std::any_of(out.g.begin(), out.g.end(), [](double v) { return v > 0.0; });
    return out;
}

struct ConditionBRow {
    std::size_t n = 0;
    double bn = 0.0;
    double min_value = 0.0;          ///< min over the window of (a^4 / (16 ln B_n)) sum (1 - |f_k(t)|^2)
    double min_value_printed = 0.0;  ///< a^2 / 2^4 variant
    bool exceeds_one = false;
};

struct ConditionBReport {
    double u = 0.0;
    double eps = 0.0;
    double a = 0.0;
    std::vector<ConditionBRow> rows;

    std::string to_csv() const {
        std::ostringstream out;
        out.precision(17);
        out << "n,B_n,min_value,min_value_printed,exceeds_one\n";
        for (const auto& r : rows)
            out << r.n << ',' << r.bn << ',' << r.min_value << ',' << r.min_value_printed << ','
                << (r.exceeds_one ? "true" : "false") << '\n';
        return out.str();
    }
};

inline ConditionBReport condition_B_probe(const ChainModel& model, const Functional& f, double u, double eps,
                                          const NormalizerSchedule& schedule, std::size_t window_points = 41) {
    f.check_compatible(model);
    require(eps > 0.0, "window half-width must be positive");
    ConditionBReport out{u, eps, effective_floor(model.require_floor()), {}};
    require(out.a > 0.0, "condition B probe needs a > 0");
    const auto window = linspace(u - eps, u + eps, window_points);
    for (std::size_t i = 0; i < schedule.n.size(); ++i) {
        const std::size_t n = schedule.n[i];
        const double bn = schedule.bn[i];
        require(bn > 1.0, "condition B probe needs B_n > 1");
        const auto marginals = model.finite().marginals(n);
        double least = std::numeric_limits<double>::infinity();
        for (double t : window) least = std::min(least, charfn_deficit(marginals, f, t));
        ConditionBRow row;
        row.n = n;
        row.bn = bn;
        row.min_value = std::pow(out.a, 4) / (16.0 * std::log(bn)) * least;
        row.min_value_printed = out.a * out.a / (16.0 * std::log(bn)) * least;
        row.exceeds_one = row.min_value > 1.0;
        out.rows.push_back(row);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Anti-clustering
// ---------------------------------------------------------------------------

struct WilsonInterval {
    double lo = 0.0;
    double hi = 1.0;
};

inline WilsonInterval wilson_interval(std::size_t hits, std::size_t trials, double z = 1.96) {
    if (trials == 0) return {};
    const double m = static_cast<double>(trials);
    const double p = static_cast<double>(hits) / m;
    const double denom = 1.0 + z * z / m;
    const double centre = (p + z * z / (2.0 * m)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / m + z * z / (4.0 * m * m)) / denom;
    return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

struct DJRow {
    double x = 0.0;
    std::size_t k = 0;
    std::size_t n = 0;
    double bn = 0.0;
    std::size_t conditioning = 0;  ///< replicas with |X_1| > x B_n
    std::size_t hits = 0;          ///< ... that also have |X_k| > x B_n
    double estimate = 0.0;
    WilsonInterval interval;
    bool sufficient = false;
};

struct DJTable {
    std::vector<DJRow> rows;
    std::size_t min_conditioning = 0;
    bool monotone = false;  ///< estimates non-increasing in n for every (x, k)
    bool decaying = false;  ///< ... and the last estimate below the first

    bool pass() const { return monotone && decaying; }

    std::string to_csv() const {
        std::ostringstream out;
        out.precision(17);
        out << "x,k,n,B_n,conditioning,hits,estimate,wilson_lo,wilson_hi\n";
        for (const auto& r : rows)
            out << r.x << ',' << r.k << ',' << r.n << ',' << r.bn << ',' << r.conditioning << ',' << r.hits << ','
                << r.estimate << ',' << r.interval.lo << ',' << r.interval.hi << '\n';
        return out.str();
    }
};

/// Estimates P(|X_k| > x B_n | |X_1| > x B_n) from one batch holding X_1 and
/// every X_k. Rows with fewer than `min_conditioning` events are reported
/// as insufficient and skipped by the monotonicity diagnostic.
inline DJTable dj_clustering_check(const ChainModel& model, const Functional& f, const std::vector<double>& xs,
                                   const std::vector<std::size_t>& ks, const NormalizerSchedule& schedule,
                                   std::size_t replicas, std::uint64_t seed, unsigned threads = 1,
                                   std::size_t min_conditioning = 30) {
    require(!xs.empty() && !ks.empty() && !schedule.n.empty(), "clustering check needs x, k and n values");
    for (std::size_t k : ks) require(k >= 2, "lag index k must be at least 2");
    for (double x : xs) require(x > 0.0, "threshold multiplier x must be positive");
    const std::size_t length = *std::max_element(ks.begin(), ks.end());
    SimulationOptions opts;
    opts.threads = threads;
    opts.record_steps.push_back(1);
    for (std::size_t k : ks) opts.record_steps.push_back(k);
    const TrajectoryBatch batch = simulate_partial_sums(model, f, length, replicas, seed, opts);

    DJTable table;
    table.min_conditioning = min_conditioning;
    table.monotone = true;
    table.decaying = true;
    for (double x : xs)
        for (std::size_t ki = 0; ki < ks.size(); ++ki) {
            double previous = std::numeric_limits<double>::infinity();
            std::optional<double> first;
            for (std::size_t i = 0; i < schedule.n.size(); ++i) {
                DJRow row;
                row.x = x;
                row.k = ks[ki];
                row.n = schedule.n[i];
                row.bn = schedule.bn[i];
                const double level = x * row.bn;
                for (std::size_t r = 0; r < replicas; ++r) {
                    if (std::abs(batch.increment(r, 0)) <= level) continue;
                    ++row.conditioning;
                    if (std::abs(batch.increment(r, ki + 1)) > level) ++row.hits;
                }
                row.sufficient = row.conditioning >= min_conditioning && row.conditioning > 0;
                row.estimate = row.conditioning ? static_cast<double>(row.hits) / static_cast<double>(row.conditioning) : 0.0;
                row.interval = wilson_interval(row.hits, row.conditioning);
                if (row.sufficient) {
                    if (row.estimate > previous) table.monotone = false;
                    previous = row.estimate;
                    if (!first) first = row.estimate;
                }
                table.rows.push_back(row);
            }
            if (!first || !(previous < *first)) table.decaying = false;
        }
    return table;
}

}  // namespace lltlab
