#pragma once

// Characteristic functions of partial sums of finite chains through products
// of transfer matrices T_k(x, y) = Q_k(x, y) exp(i u g_k(y)), plus pointwise
// checks of the bounds that control them.

#include "lltlab/core.hpp"
#include "lltlab/kernel.hpp"
#include "lltlab/mixing.hpp"
#include "lltlab/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace lltlab {

inline constexpr double kBoundTolerance = 1e-10;

/// Q_k(x, y) exp(i u g_k(y)).
inline ComplexMatrix transfer_step(const ChainModel& model, const Functional& f, std::size_t k, double u) {
    const FiniteChain& chain = model.finite();
    f.check_compatible(model);
    const FiniteKernel q = chain.kernel(k);
    const auto& g = f.table(k);
    ComplexMatrix t(chain.size(), chain.size());
    for (std::size_t y = 0; y < chain.size(); ++y) {
        const Complex phase = std::polar(1.0, u * g[y]);
        for (std::size_t x = 0; x < chain.size(); ++x) t(x, y) = q(x, y) * phase;
    }
    return t;
}

enum class Provenance { exact, empirical };

struct CharfnCurve {
    std::vector<double> grid;
    std::vector<Complex> values;
    std::vector<double> bound;  ///< factorization bound per grid point; empty if not computed
    std::size_t n = 0;
    Provenance provenance = Provenance::exact;

    std::string to_csv() const {
        std::ostringstream out;
        out.precision(17);
        out << "u,re,im,modulus,nagaev_bound\n";
        for (std::size_t i = 0; i < grid.size(); ++i) {
            out << grid[i] << ',' << values[i].real() << ',' << values[i].imag() << ',' << std::abs(values[i])
                << ',';
            if (!bound.empty()) out << bound[i];
            out << '\n';
        }
        return out.str();
    }
};

namespace detail {
inline Complex weighted_phase_sum(const std::vector<double>& weights, const std::vector<double>& g, double u) {
    Complex sum{0.0, 0.0};
    for (std::size_t y = 0; y < weights.size(); ++y) sum += weights[y] * std::polar(1.0, u * g[y]);
    return sum;
}
}  // namespace detail

/// f_k(u) = E exp(i u X_k).
inline Complex marginal_charfn(const ChainModel& model, const Functional& f, std::size_t k, double u) {
    f.check_compatible(model);
    require(k >= 1, "step index starts at 1");
    return detail::weighted_phase_sum(model.finite().marginal(k), f.table(k), u);
}

/// E exp(i u S_n) by the forward recursion v_k(y) = sum_x v_{k-1}(x) Q_k(x, y) e^{i u g_k(y)}.
inline Complex sum_charfn_exact(const ChainModel& model, const Functional& f, std::size_t n, double u) {
    const FiniteChain& chain = model.finite();
    f.check_compatible(model);
    require(n >= 1, "n must be at least 1");
    const std::size_t s = chain.size();
    std::vector<Complex> v(s);
    const auto& g1 = f.table(1);
    for (std::size_t x = 0; x < s; ++x) v[x] = chain.initial[x] * std::polar(1.0, u * g1[x]);
    std::vector<Complex> phases(s), next(s);
    for (std::size_t k = 2; k <= n; ++k) {
        const RealMatrix& q = chain.kernel_matrix(k);
        const auto& g = f.table(k);
        for (std::size_t y = 0; y < s; ++y) phases[y] = std::polar(1.0, u * g[y]);
        std::fill(next.begin(), next.end(), Complex{});
        for (std::size_t x = 0; x < s; ++x) {
            if (v[x] == Complex{}) continue;
            for (std::size_t y = 0; y < s; ++y) next[y] += v[x] * q(x, y);
        }
        for (std::size_t y = 0; y < s; ++y) v[y] = next[y] * phases[y];
    }
    Complex total{};
    for (const auto& c : v) total += c;
    return total;
}

inline CharfnCurve exact_curve(const ChainModel& model, const Functional& f, std::size_t n,
                               const std::vector<double>& grid) {
    CharfnCurve curve;
    curve.grid = grid;
    curve.n = n;
    curve.provenance = Provenance::exact;
    curve.values.reserve(grid.size());
    for (double u : grid) curve.values.push_back(sum_charfn_exact(model, f, n, u));
    return curve;
}

/// Mean of exp(i u s / scale) over a sample.
inline Complex empirical_charfn(const std::vector<double>& sample, double u, double scale = 1.0) {
    require(!sample.empty(), "empirical characteristic function needs a sample");
    double re = 0.0, im = 0.0;
    for (double s : sample) {
        const double arg = u * s / scale;
        re += std::cos(arg);
        im += std::sin(arg);
    }
    const double count = static_cast<double>(sample.size());
    return {re / count, im / count};
}

inline CharfnCurve empirical_curve(const TrajectoryBatch& batch, const std::vector<double>& grid,
                                   double scale = 1.0) {
    CharfnCurve curve;
    curve.grid = grid;
    curve.n = batch.n;
    curve.provenance = Provenance::empirical;
    for (double u : grid) curve.values.push_back(empirical_charfn(batch.sums, u, scale));
    return curve;
}

// ---------------------------------------------------------------------------
// Factorization bound
// ---------------------------------------------------------------------------

/// The constant a used in the bounds: the model's lower psi floor, with
/// exactly independent steps evaluated at 1 - 1e-9.
inline double bound_floor(const ChainModel& model) {
    const double a = effective_floor(model.require_floor());
    require(a > 0.0, "bound needs a positive lower psi floor");
    return a;
}

/// sum_{j=1}^n (1 - |f_j(u)|^2) given the marginals P_1..P_n.
inline double charfn_deficit(const std::vector<std::vector<double>>& marginals, const Functional& f, double u) {
    double total = 0.0;
    for (std::size_t j = 1; j <= marginals.size(); ++j)
        total += 1.0 - std::norm(detail::weighted_phase_sum(marginals[j - 1], f.table(j), u));
    return total;
}

/// exp(-(a^4 / 16) sum_{j=1}^n (1 - |f_j(u)|^2)).
inline double nagaev_bound(const ChainModel& model, const Functional& f, std::size_t n, double u) {
    f.check_compatible(model);
    const double a = bound_floor(model);
    const auto marginals = model.finite().marginals(n);
    return std::exp(-std::pow(a, 4) / 16.0 * charfn_deficit(marginals, f, u));
}

struct FactorizationCheck {
    CharfnCurve curve;
    double a = 0.0;
    double max_violation = -std::numeric_limits<double>::infinity();  ///< max(|phi| - bound)
    bool pass = false;
};

inline FactorizationCheck verify_factorization(const ChainModel& model, const Functional& f, std::size_t n,
                                               const std::vector<double>& grid) {
    f.check_compatible(model);
    FactorizationCheck out;
    out.a = bound_floor(model);
    const double coefficient = std::pow(out.a, 4) / 16.0;
    const auto marginals = model.finite().marginals(n);
    out.curve = exact_curve(model, f, n, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double bound = std::exp(-coefficient * charfn_deficit(marginals, f, grid[i]));
        out.curve.bound.push_back(bound);
        out.max_violation = std::max(out.max_violation, std::abs(out.curve.values[i]) - bound);
    }
    out.pass = out.max_violation <= kBoundTolerance;
    return out;
}

// ---------------------------------------------------------------------------
// Two-step lemmas
// ---------------------------------------------------------------------------

/// psi' between sigma(xi_{k-1}) and sigma(X_k); the atoms of X_k are the
/// distinct values of g_k. Step 1 has an independent predecessor.
inline double psi_prime_state_to_value(const ChainModel& model, const Functional& f, std::size_t k) {
    if (k == 1) return 1.0;
    const FiniteChain& chain = model.finite();
    const auto prev = chain.marginal(k - 1);
    const RealMatrix& q = chain.kernel_matrix(k);
    const auto& g = f.table(k);
    std::map<double, std::vector<std::size_t>> groups;
    for (std::size_t y = 0; y < g.size(); ++y) groups[g[y]].push_back(y);
    RealMatrix joint(chain.size(), groups.size());
    std::size_t col = 0;
    for (const auto& [value, states] : groups) {
        for (std::size_t x = 0; x < chain.size(); ++x)
            for (std::size_t y : states) joint(x, col) += prev[x] * q(x, y);
        ++col;
    }
    return psi_prime(JointLaw::from_matrix(std::move(joint)));
}

/// Largest value of |E(e^{iuX_k} | xi_{k-1} = y)|^2 - [1 - psi'^2 (1 - |f_k(u)|^2)]
/// over states of positive mass and grid points.
inline double lemma_estimate2_check(const ChainModel& model, const Functional& f, std::size_t k,
                                    const std::vector<double>& grid) {
    const FiniteChain& chain = model.finite();
    f.check_compatible(model);
    require(k >= 1, "step index starts at 1");
    const double pp = psi_prime_state_to_value(model, f, k);
    const FiniteKernel q = chain.kernel(k);
    const auto prev = chain.marginal(k - 1);
    const auto cur = chain.marginal(k);
    const auto& g = f.table(k);
    double worst = -std::numeric_limits<double>::infinity();
    for (double u : grid) {
        const double fk2 = std::norm(detail::weighted_phase_sum(cur, g, u));
        const double rhs = 1.0 - pp * pp * (1.0 - fk2);
        for (std::size_t y = 0; y < chain.size(); ++y) {
            if (prev[y] <= 0.0) continue;
            const double lhs = std::norm(detail::weighted_phase_sum(q.matrix().row(y), g, u));
            worst = std::max(worst, lhs - rhs);
        }
    }
    return worst;
}

/// Norm of T_{k-1} o T_k from L1(P_k) to L1(P_{k-2}): the largest weighted
/// column sum  max_z sum_x P_{k-2}(x) |A(x, z)| / P_k(z).
inline double composed_transfer_norm(const ChainModel& model, const Functional& f, std::size_t k, double u) {
    const FiniteChain& chain = model.finite();
    require(k >= 2, "composed transfer operator needs k >= 2");
    const ComplexMatrix composed = transfer_step(model, f, k - 1, u) * transfer_step(model, f, k, u);
    const auto before = chain.marginal(k - 2);
    const auto after = chain.marginal(k);
    double norm = 0.0;
    for (std::size_t z = 0; z < chain.size(); ++z) {
        if (after[z] <= 0.0) continue;
        double column = 0.0;
        for (std::size_t x = 0; x < chain.size(); ++x) column += before[x] * std::abs(composed(x, z));
        norm = std::max(norm, column / after[z]);
    }
    return norm;
}

/// Largest value of ||T_{k-1} o T_k||_1 - [1 - (a^4 / 8)(1 - |f_{k-1}(u)|^2)].
inline double lemma_estimate3_check(const ChainModel& model, const Functional& f, std::size_t k,
                                    const std::vector<double>& grid) {
    f.check_compatible(model);
    require(k >= 2, "lemma check needs k >= 2");
    const double a = bound_floor(model);
    const auto prev = model.finite().marginal(k - 1);
    double worst = -std::numeric_limits<double>::infinity();
    for (double u : grid) {
        const double fk = std::norm(detail::weighted_phase_sum(prev, f.table(k - 1), u));
        const double rhs = 1.0 - std::pow(a, 4) / 8.0 * (1.0 - fk);
        worst = std::max(worst, composed_transfer_norm(model, f, k, u) - rhs);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Tail integrals of |E exp(i t S_n / B_n)|
// ---------------------------------------------------------------------------

struct TailIntegral {
    double value = 0.0;
    std::size_t panels = 0;
};

/// Integral of |E exp(i t S_n / B_n)| over T < |t| <= upper_factor * B_n,
/// where upper_factor is D (non-lattice) or pi / h (lattice). Lattice
/// functionals split the range at half-periods pi B_n / h.
inline TailIntegral charfn_tail_integral(const ChainModel& model, const Functional& f, std::size_t n, double bn,
                                         double t_low, double upper_factor, double rel_tol = 1e-6) {
    f.check_compatible(model);
    require(bn > 0.0, "B_n must be positive");
    require(upper_factor > 0.0, "upper limit factor must be positive");
    const double upper = upper_factor * bn;
    TailIntegral out;
    if (t_low >= upper) return out;
    auto integrand = [&](double t) { return std::abs(sum_charfn_exact(model, f, n, t / bn)); };
    std::vector<double> cuts{std::max(t_low, 0.0)};
    if (f.lattice()) {
        const double half_period = kPi * bn / f.lattice()->span;
        for (double c = half_period; c < upper; c += half_period)
            if (c > cuts.back()) cuts.push_back(c);
    }
    cuts.push_back(upper);
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const auto piece = simpson_dyadic(integrand, cuts[i], cuts[i + 1], rel_tol, std::size_t{1} << 22, 32, 1e-15);
        out.value += 2.0 * piece.value;  // |phi(-t)| = |phi(t)|
        out.panels += piece.panels;
    }
    return out;
}

/// B_n times the integral of |E exp(i t S_n)| over delta < |t| <= D.
inline double charfn_window_integral(const ChainModel& model, const Functional& f, std::size_t n, double bn,
                                     double delta, double upper, double rel_tol = 1e-6) {
    f.check_compatible(model);
    require(delta >= 0.0, "delta must be nonnegative");
    if (delta >= upper) return 0.0;
    auto integrand = [&](double t) { return std::abs(sum_charfn_exact(model, f, n, t)); };
    return 2.0 * bn * simpson_dyadic(integrand, delta, upper, rel_tol, std::size_t{1} << 22, 32, 1e-300).value;
}

}  // namespace lltlab
