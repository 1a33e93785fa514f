#pragma once

// Exact dependence coefficients between sigma(xi_m) and sigma(xi_{m+k}) for
// finite chains. Every coefficient is an extremum over event pairs; on finite
// spaces those extrema are attained at atoms, which is what the fast paths
// use. brute_force_extrema enumerates events directly and serves as the oracle.

#include "lltlab/core.hpp"
#include "lltlab/kernel.hpp"

#include "json.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace lltlab {

inline constexpr double kInequalityTolerance = 1e-12;

/// J(x, y) = P(xi_m = x, xi_{m+k} = y) with its marginals.
struct JointLaw {
    RealMatrix joint;
    std::vector<double> row;  ///< law of xi_m
    std::vector<double> col;  ///< law of xi_{m+k}

    static JointLaw from_matrix(RealMatrix j) {
        JointLaw law;
        law.row.assign(j.rows(), 0.0);
        law.col.assign(j.cols(), 0.0);
        double total = 0.0;
        for (std::size_t x = 0; x < j.rows(); ++x)
            for (std::size_t y = 0; y < j.cols(); ++y) {
                require(j(x, y) >= 0.0, "joint law has a negative entry");
                law.row[x] += j(x, y);
                law.col[y] += j(x, y);
                total += j(x, y);
            }
        require(std::abs(total - 1.0) <= 1e-12, "joint law mass differs from one");
        law.joint = std::move(j);
        return law;
    }

    std::vector<std::size_t> live_rows() const {
        std::vector<std::size_t> out;
        for (std::size_t x = 0; x < row.size(); ++x)
            if (row[x] > 0.0) out.push_back(x);
        require(!out.empty(), "joint law has no row of positive mass");
        return out;
    }

    std::vector<std::size_t> live_cols() const {
        std::vector<std::size_t> out;
        for (std::size_t y = 0; y < col.size(); ++y)
            if (col[y] > 0.0) out.push_back(y);
        require(!out.empty(), "joint law has no column of positive mass");
        return out;
    }
};

/// Law of (xi_m, xi_{m+k}): J(x, y) = P_m(x) (Q_{m+1} ... Q_{m+k})(x, y).
inline JointLaw joint_law(const ChainModel& model, std::size_t m, std::size_t k) {
    const FiniteChain& chain = model.finite();
    require(m >= 1 && k >= 1, "joint_law needs m >= 1 and k >= 1");
    const auto pm = chain.marginal(m);
    const FiniteKernel step = k_step_kernel(model, m, k);
    RealMatrix j(chain.size(), chain.size());
    for (std::size_t x = 0; x < chain.size(); ++x)
        for (std::size_t y = 0; y < chain.size(); ++y) j(x, y) = pm[x] * step(x, y);
    JointLaw law;
    law.row = pm;
    law.col.assign(chain.size(), 0.0);
    for (std::size_t x = 0; x < chain.size(); ++x)
        for (std::size_t y = 0; y < chain.size(); ++y) law.col[y] += j(x, y);
    law.joint = std::move(j);
    return law;
}

namespace detail {
template <typename Reduce>
double atom_ratio_extremum(const JointLaw& j, double init, Reduce reduce) {
    double best = init;
    for (std::size_t x : j.live_rows())
        for (std::size_t y : j.live_cols()) best = reduce(best, j.joint(x, y) / (j.row[x] * j.col[y]));
    return best;
}
}  // namespace detail

/// inf P(A and B) / (P(A) P(B)).
inline double psi_prime(const JointLaw& j) {
    return detail::atom_ratio_extremum(j, std::numeric_limits<double>::infinity(),
                                       [](double a, double b) { return std::min(a, b); });
}

/// sup P(A and B) / (P(A) P(B)).
inline double psi_star(const JointLaw& j) {
    return detail::atom_ratio_extremum(j, 0.0, [](double a, double b) { return std::max(a, b); });
}

/// sup (P(A and B) - P(A) P(B)) / P(A): the largest row-wise sum of positive
/// deviations P(y | x) - c(y).
inline double phi(const JointLaw& j) {
    double best = 0.0;
    for (std::size_t x : j.live_rows()) {
        double excess = 0.0;
        for (std::size_t y = 0; y < j.col.size(); ++y)
            excess += std::max(0.0, j.joint(x, y) / j.row[x] - j.col[y]);
        best = std::max(best, excess);
    }
    return best;
}

/// sup |P(A and B) - P(A) P(B)| / (P(A) P(B)), evaluated on atoms.
inline double psi(const JointLaw& j) {
    return detail::atom_ratio_extremum(j, 0.0, [](double a, double b) { return std::max(a, std::abs(b - 1.0)); });
}

/// Singular values, sorted descending.
inline std::vector<double> singular_values(const RealMatrix& a) {
    Eigen::MatrixXd m(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) m(i, j) = a(i, j);
    const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
    return {sv.data(), sv.data() + sv.size()};
}

inline double rho_max_correlation(const JointLaw& j) {
    const auto rows = j.live_rows();
    const auto cols = j.live_cols();
    RealMatrix m(rows.size(), cols.size());
    for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = 0; b < cols.size(); ++b) {
            const double rc = j.row[rows[a]] * j.col[cols[b]];
            m(a, b) = (j.joint(rows[a], cols[b]) - rc) / std::sqrt(rc);
        }
    const auto sv = singular_values(m);
    return std::clamp(sv.front(), 0.0, 1.0);
}

struct EventExtrema {
    double inf_ratio = 0.0;
    double sup_ratio = 0.0;
    double phi_sup = 0.0;
    double psi_sup = 0.0;
};

/// Exhaustive search over all pairs of nonempty events (A, B) with
/// P(A) P(B) > 0. Limited to 12 atoms per side.
inline EventExtrema brute_force_extrema(const JointLaw& j) {
    const std::size_t s1 = j.joint.rows(), s2 = j.joint.cols();
    require(s1 <= 12 && s2 <= 12, "brute-force enumeration is limited to 12 atoms per side");
    const std::uint32_t na = 1u << s1, nb = 1u << s2;
    std::vector<double> pb(nb, 0.0);
    for (std::uint32_t b = 1; b < nb; ++b) {
        const unsigned low = static_cast<unsigned>(__builtin_ctz(b));
        pb[b] = pb[b & (b - 1)] + j.col[low];
    }
    EventExtrema out{std::numeric_limits<double>::infinity(), 0.0, -std::numeric_limits<double>::infinity(), 0.0};
    std::vector<double> col_a(s2), joint_ab(nb);
    for (std::uint32_t a = 1; a < na; ++a) {
        double pa = 0.0;
        std::fill(col_a.begin(), col_a.end(), 0.0);
        for (std::size_t x = 0; x < s1; ++x)
            if (a & (1u << x)) {
                pa += j.row[x];
                for (std::size_t y = 0; y < s2; ++y) col_a[y] += j.joint(x, y);
            }
        if (pa <= 0.0) continue;
        joint_ab[0] = 0.0;
        for (std::uint32_t b = 1; b < nb; ++b) {
            const unsigned low = static_cast<unsigned>(__builtin_ctz(b));
            joint_ab[b] = joint_ab[b & (b - 1)] + col_a[low];
            out.phi_sup = std::max(out.phi_sup, (joint_ab[b] - pa * pb[b]) / pa);
            if (pb[b] <= 0.0) continue;
            const double ratio = joint_ab[b] / (pa * pb[b]);
            out.inf_ratio = std::min(out.inf_ratio, ratio);
            out.sup_ratio = std::max(out.sup_ratio, ratio);
            out.psi_sup = std::max(out.psi_sup, std::abs(ratio - 1.0));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Variance sandwich
// ---------------------------------------------------------------------------

struct VarianceRatioRow {
    std::size_t n = 0;
    double sigma2 = 0.0;  ///< E S_n^2 (centered summands)
    double tau2 = 0.0;    ///< sum of Var(X_j)
    double ratio = 0.0;
    bool inside = false;
};

struct VarianceRatioReport {
    double a = 0.0;
    double lower = 0.0;  ///< a / (2 - a)
    double upper = 0.0;  ///< (2 - a) / a
    std::vector<VarianceRatioRow> rows;
    bool all_inside = true;
};

/// Independent steps admit every a < 1; bounds are evaluated at this value.
inline constexpr double kIndependentFloor = 1.0 - 1e-9;

inline double effective_floor(double a) { return std::min(a, kIndependentFloor); }

/// Exact sigma_n^2 and tau_n^2 via the recursion
/// w_k(y) = E[S_k 1{xi_k = y}] = sum_x w_{k-1}(x) Q_k(x, y) + P_k(y) g_k(y),
/// with every g_k centered under P_k.
inline VarianceRatioReport variance_ratio_check(const ChainModel& model, const Functional& f,
                                                const std::vector<std::size_t>& ns) {
    const FiniteChain& chain = model.finite();
    f.check_compatible(model);
    require(!ns.empty(), "variance_ratio_check needs at least one n");
    const double raw_a = model.require_floor();
    require(raw_a > 0.0, "variance sandwich needs a positive lower psi floor");
    VarianceRatioReport report;
    report.a = effective_floor(raw_a);
    report.lower = report.a / (2.0 - report.a);
    report.upper = (2.0 - report.a) / report.a;

    const std::size_t n_max = *std::max_element(ns.begin(), ns.end());
    const std::size_t s = chain.size();
    std::vector<double> marginal = chain.initial;
    std::vector<double> w(s, 0.0);
    double sigma2 = 0.0, tau2 = 0.0;
    std::size_t next_row = 0;
    std::vector<std::size_t> sorted = ns;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t k = 1; k <= n_max; ++k) {
        std::vector<double> carried(s, 0.0);
        if (k >= 2) {
            const RealMatrix& q = chain.kernel_matrix(k);
            marginal = left_multiply(marginal, q);
            carried = left_multiply(w, q);
        }
        const auto& g = f.table(k);
        double mean = 0.0;
        for (std::size_t y = 0; y < s; ++y) mean += marginal[y] * g[y];
        double var = 0.0, cross = 0.0;
        for (std::size_t y = 0; y < s; ++y) {
            const double gc = g[y] - mean;
            var += marginal[y] * gc * gc;
            cross += carried[y] * gc;
            w[y] = carried[y] + marginal[y] * gc;
        }
        sigma2 += var + 2.0 * cross;
        tau2 += var;
        while (next_row < sorted.size() && sorted[next_row] == k) {
            require(tau2 > 0.0, "functional is degenerate (zero variance)");
            VarianceRatioRow row{k, sigma2, tau2, sigma2 / tau2, false};
            row.inside = row.ratio >= report.lower - kInequalityTolerance &&
                         row.ratio <= report.upper + kInequalityTolerance;
            report.all_inside = report.all_inside && row.inside;
            report.rows.push_back(row);
            ++next_row;
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Inequality report
// ---------------------------------------------------------------------------

struct InequalityCheck {
    std::string name;
    std::size_t lag = 0;
    std::size_t lag2 = 0;  ///< second lag for the product property
    double lhs = 0.0;
    double rhs = 0.0;
    bool pass = true;
};

struct MixingReport {
    std::vector<std::size_t> lags;
    std::vector<double> psi_prime, psi_star, psi, phi, rho, bound;
    double a = 0.0;                 ///< psi_prime at lag 1 (min over swept starts)
    std::size_t sweep_first = 1;    ///< starting steps m swept for every lag
    std::size_t sweep_last = 1;
    std::vector<InequalityCheck> checks;
    double max_violation = -std::numeric_limits<double>::infinity();
    bool all_pass = true;

    std::string to_csv() const {
        std::ostringstream out;
        out.precision(17);
        out << "lag,psi_prime,psi_star,psi,phi,rho,bound_1_minus_a_pow_k\n";
        for (std::size_t i = 0; i < lags.size(); ++i)
            out << lags[i] << ',' << psi_prime[i] << ',' << psi_star[i] << ',' << psi[i] << ',' << phi[i] << ','
                << rho[i] << ',' << bound[i] << '\n';
        return out.str();
    }

    nlohmann::json to_json() const {
        nlohmann::json checks_json = nlohmann::json::array();
        for (const auto& c : checks)
            checks_json.push_back({{"name", c.name}, {"lag", c.lag}, {"lag2", c.lag2}, {"lhs", c.lhs},
                                   {"rhs", c.rhs}, {"pass", c.pass}});
        return {{"lags", lags},     {"psi_prime", psi_prime}, {"psi_star", psi_star},
                {"psi", psi},       {"phi", phi},             {"rho", rho},
                {"bound", bound},   {"a", a},                 {"sweep", {sweep_first, sweep_last}},
                {"checks", checks_json}, {"max_violation", max_violation}, {"all_pass", all_pass}};
    }
};

/// Per-lag coefficients (extrema over starting steps m in the sweep) and
/// pass/fail on every inequality relating them.
inline MixingReport mixing_inequality_report(const ChainModel& model, std::size_t max_lag) {
    const FiniteChain& chain = model.finite();
    require(max_lag >= 1, "need at least one lag");
    MixingReport report;
    report.sweep_last = chain.floor_steps();
    auto add_check = [&](std::string name, std::size_t lag, std::size_t lag2, double lhs, double rhs) {
        const bool pass = lhs <= rhs + kInequalityTolerance;
        report.max_violation = std::max(report.max_violation, lhs - rhs);
        report.all_pass = report.all_pass && pass;
        report.checks.push_back({std::move(name), lag, lag2, lhs, rhs, pass});
    };

    for (std::size_t k = 1; k <= max_lag; ++k) {
        double pp = std::numeric_limits<double>::infinity(), ps = 0.0, ph = 0.0, rh = 0.0, ps_abs = 0.0;
        double pair_rho_slack = -std::numeric_limits<double>::infinity();
        double pair_phi_slack = -std::numeric_limits<double>::infinity();
        for (std::size_t m = report.sweep_first; m <= report.sweep_last; ++m) {
            const JointLaw j = joint_law(model, m, k);
            const double jp = psi_prime(j), js = psi_star(j), jf = phi(j), jr = rho_max_correlation(j);
            pair_rho_slack = std::max(pair_rho_slack, jr - (1.0 - jp));
            pair_phi_slack = std::max(pair_phi_slack, jf - (1.0 - jp));
            pp = std::min(pp, jp);
            ps = std::max(ps, js);
            ph = std::max(ph, jf);
            rh = std::max(rh, jr);
            ps_abs = std::max(ps_abs, psi(j));
        }
        report.lags.push_back(k);
        report.psi_prime.push_back(pp);
        report.psi_star.push_back(ps);
        report.phi.push_back(ph);
        report.rho.push_back(rh);
        report.psi.push_back(ps_abs);
        add_check("rho <= 1 - psi_prime (per start)", k, 0, pair_rho_slack, 0.0);
        add_check("phi <= 1 - psi_prime (per start)", k, 0, pair_phi_slack, 0.0);
        const double identity = std::max(ps - 1.0, 1.0 - pp);
        add_check("psi = max(psi_star - 1, 1 - psi_prime)", k, 0, std::abs(ps_abs - identity), 0.0);
    }
    report.a = report.psi_prime.front();
    const double one_minus_a = 1.0 - report.a;
    for (std::size_t i = 0; i < report.lags.size(); ++i) {
        const std::size_t k = report.lags[i];
        report.bound.push_back(std::pow(one_minus_a, static_cast<double>(k)));
        add_check("1 - psi_prime_k <= (1 - a)^k", k, 0, 1.0 - report.psi_prime[i], report.bound[i]);
        add_check("phi_k <= (1 - a)^k", k, 0, report.phi[i], report.bound[i]);
        add_check("rho_k <= (1 - a)^k", k, 0, report.rho[i], report.bound[i]);
    }
    for (std::size_t k = 1; k <= max_lag; ++k)
        for (std::size_t l = k; k + l <= max_lag; ++l)
            add_check("1 - psi_prime_{k+m} <= (1 - psi_prime_k)(1 - psi_prime_m)", k, l,
                      1.0 - report.psi_prime[k + l - 1],
                      (1.0 - report.psi_prime[k - 1]) * (1.0 - report.psi_prime[l - 1]));
    return report;
}

/// psi' of the lag-1 pair law of a lazy-refresh chain with uniform refresh,
/// read on `bins` equal cells of [0, 1]. Coarser fields can only raise psi',
/// so this is a ceiling for the constant a of the continuous chain.
inline double lazy_refresh_binned_floor(const ChainModel& model, std::size_t bins) {
    const ContinuousChain& c = model.continuous();
    if (c.rule != TransitionRule::lazy_refresh) throw ValidationError("binned floor needs a lazy-refresh chain");
    if (bins < 2) throw ValidationError("binned floor needs at least two cells");
    std::vector<std::vector<double>> rows(bins, std::vector<double>(bins, (1.0 - c.stay_probability) / bins));
    for (std::size_t i = 0; i < bins; ++i) rows[i][i] += c.stay_probability;
    const std::vector<double> uniform(bins, 1.0 / static_cast<double>(bins));
    return psi_prime(joint_law(build_finite_chain({FiniteKernel::from_rows(rows)}, uniform), 1, 1));
}

}  // namespace lltlab
