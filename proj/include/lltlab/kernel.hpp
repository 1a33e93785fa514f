#pragma once

// Chain models, functionals and seeded simulation of partial sums.
//
// Indexing follows the chain (xi_k)_{k>=1}: `initial` is the law P_1 of xi_1,
// kernel k >= 2 maps xi_{k-1} to xi_k, and X_k = g_k(xi_k). Step 1 has a
// virtual predecessor xi_0 drawn independently from P_1, which lets every
// two-step quantity be written for k >= 1 without changing the law of
// (xi_k)_{k>=1}.

#include "lltlab/core.hpp"
#include "lltlab/digest.hpp"
#include "lltlab/quadrature.hpp"
#include "lltlab/random.hpp"
#include "lltlab/tail.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace lltlab {

using json = nlohmann::json;

inline constexpr double kRowSumTolerance = 1e-12;

// ---------------------------------------------------------------------------
// Finite kernels
// ---------------------------------------------------------------------------

class FiniteKernel {
public:
    FiniteKernel() = default;

    explicit FiniteKernel(RealMatrix rows) : rows_(std::move(rows)) {
        require(rows_.rows() == rows_.cols() && rows_.rows() > 0, "kernel must be square and nonempty");
        for (std::size_t i = 0; i < rows_.rows(); ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < rows_.cols(); ++j) {
                require(rows_(i, j) >= 0.0, "kernel entry (" + std::to_string(i) + "," + std::to_string(j) +
                                                ") is negative");
                sum += rows_(i, j);
            }
            require(std::abs(sum - 1.0) <= kRowSumTolerance,
                    "kernel row " + std::to_string(i) + " sums to " + std::to_string(sum));
        }
    }

    static FiniteKernel from_rows(const std::vector<std::vector<double>>& rows) {
        return FiniteKernel(RealMatrix::from_rows(rows));
    }

    /// Every row equal to `law`.
    static FiniteKernel independent(const std::vector<double>& law) {
        RealMatrix m(law.size(), law.size());
        for (std::size_t i = 0; i < law.size(); ++i)
            for (std::size_t j = 0; j < law.size(); ++j) m(i, j) = law[j];
        return FiniteKernel(std::move(m));
    }

    std::size_t size() const noexcept { return rows_.rows(); }
    double operator()(std::size_t x, std::size_t y) const { return rows_(x, y); }
    const RealMatrix& matrix() const noexcept { return rows_; }

    std::vector<std::vector<double>> to_rows() const {
        std::vector<std::vector<double>> out(size());
        for (std::size_t i = 0; i < size(); ++i) out[i] = rows_.row(i);
        return out;
    }

private:
    RealMatrix rows_;
};

inline void validate_probability_vector(const std::vector<double>& p, const std::string& what) {
    require(!p.empty(), what + " is empty");
    double sum = 0.0;
    for (double v : p) {
        require(v >= 0.0, what + " has a negative entry");
        sum += v;
    }
    require(std::abs(sum - 1.0) <= kRowSumTolerance, what + " does not sum to one");
}

/// Stationary law of an irreducible kernel: solves pi (Q - I) = 0 with the
/// last equation replaced by sum(pi) = 1, Gaussian elimination with partial
/// pivoting.
inline std::vector<double> stationary_distribution(const FiniteKernel& q) {
    const std::size_t s = q.size();
    RealMatrix a(s, s + 1);
    for (std::size_t eq = 0; eq < s; ++eq)
        for (std::size_t x = 0; x < s; ++x) a(eq, x) = q(x, eq) - (x == eq ? 1.0 : 0.0);
    for (std::size_t x = 0; x < s; ++x) a(s - 1, x) = 1.0;
    a(s - 1, s) = 1.0;
    for (std::size_t col = 0; col < s; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < s; ++r)
            if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
        require(std::abs(a(pivot, col)) > 1e-14, "kernel has no unique stationary law");
        if (pivot != col)
            for (std::size_t c = 0; c <= s; ++c) std::swap(a(col, c), a(pivot, c));
        for (std::size_t r = 0; r < s; ++r) {
            if (r == col) continue;
            const double factor = a(r, col) / a(col, col);
            if (factor == 0.0) continue;
            for (std::size_t c = col; c <= s; ++c) a(r, c) -= factor * a(col, c);
        }
    }
    std::vector<double> pi(s);
    for (std::size_t x = 0; x < s; ++x) pi[x] = std::max(0.0, a(x, s) / a(x, x));
    const double total = std::accumulate(pi.begin(), pi.end(), 0.0);
    for (double& v : pi) v /= total;
    // one polishing sweep; harmless when already exact
    for (int sweep = 0; sweep < 4; ++sweep) {
        auto next = left_multiply(pi, q.matrix());
        const double t = std::accumulate(next.begin(), next.end(), 0.0);
        for (double& v : next) v /= t;
        pi = std::move(next);
    }
    return pi;
}

/// Finite-state chain, possibly inhomogeneous: kernels Q_2, Q_3, ... are taken
/// from `kernels` cyclically.
struct FiniteChain {
    std::vector<double> initial;
    std::vector<FiniteKernel> kernels;
    std::size_t horizon = 16;  ///< steps swept when an infimum over k is approximated

    std::size_t size() const noexcept { return initial.size(); }
    bool homogeneous() const noexcept { return kernels.size() == 1; }

    void validate() const {
        validate_probability_vector(initial, "initial law");
        require(!kernels.empty(), "finite chain needs at least one kernel");
        for (const auto& k : kernels) require(k.size() == initial.size(), "kernel size differs from state count");
        require(horizon >= 1, "horizon must be at least 1");
    }

    /// Q_k for k >= 2; Q_1 is the virtual independent step.
    FiniteKernel kernel(std::size_t k) const {
        require(k >= 1, "kernel index starts at 1");
        if (k == 1) return FiniteKernel::independent(initial);
        return kernels[(k - 2) % kernels.size()];
    }

    const RealMatrix& kernel_matrix(std::size_t k) const {
        require(k >= 2, "kernel_matrix index starts at 2");
        return kernels[(k - 2) % kernels.size()].matrix();
    }

    /// P_1, ..., P_n.
    std::vector<std::vector<double>> marginals(std::size_t n) const {
        std::vector<std::vector<double>> out;
        out.reserve(n);
        if (n == 0) return out;
        out.push_back(initial);
        for (std::size_t k = 2; k <= n; ++k) out.push_back(left_multiply(out.back(), kernel_matrix(k)));
        return out;
    }

    /// P_k for k >= 0 (P_0 = P_1 by the virtual-step convention).
    std::vector<double> marginal(std::size_t k) const {
        if (k <= 1) return initial;
        return marginals(k).back();
    }

    /// Number of steps over which the inf of Q_k(x,y)/P_k(y) is taken.
    std::size_t floor_steps() const {
        if (homogeneous() && max_abs_difference(left_multiply(initial, kernels[0].matrix()), initial) <= 1e-13)
            return 1;
        return std::max(horizon, kernels.size());
    }

    /// min over steps k >= 2 and (x, y) with P_{k-1}(x) > 0, P_k(y) > 0 of
    /// Q_k(x, y) / P_k(y).
    double lower_psi_floor() const {
        double best = std::numeric_limits<double>::infinity();
        std::vector<double> prev = initial;
        const std::size_t steps = floor_steps();
        for (std::size_t k = 2; k <= steps + 1; ++k) {
            const RealMatrix& q = kernel_matrix(k);
            const auto next = left_multiply(prev, q);
            for (std::size_t x = 0; x < size(); ++x) {
                if (prev[x] <= 0.0) continue;
                for (std::size_t y = 0; y < size(); ++y)
                    if (next[y] > 0.0) best = std::min(best, q(x, y) / next[y]);
            }
            prev = next;
        }
        return std::clamp(best, 0.0, 1.0);
    }
};

// ---------------------------------------------------------------------------
// Continuous-state models (sampling only)
// ---------------------------------------------------------------------------

enum class InitialLaw { uniform, gauss_measure, tail };
enum class TransitionRule { lazy_refresh, gauss_map, independent, copy };

/// Continuous chain described by an initial sampler and a transition rule.
/// Never exposes a density.
struct ContinuousChain {
    InitialLaw initial = InitialLaw::uniform;
    TransitionRule rule = TransitionRule::lazy_refresh;
    double stay_probability = 0.5;  ///< lazy_refresh only
    TailModel tail;                 ///< InitialLaw::tail only
    TailSampler tail_sampler;       ///< built from `tail` by set_tail
    std::size_t burn_in = 0;        ///< gauss_map iterations before xi_1

    template <typename Rng>
    double draw_fresh(Rng& rng) const {
        switch (initial) {
            case InitialLaw::uniform: return rng.uniform();
            case InitialLaw::gauss_measure: return gauss_inverse_cdf(rng.uniform_open());
            case InitialLaw::tail: return tail_sampler(rng);
        }
        return 0.0;
    }

    void set_tail(const TailModel& t) {
        tail = t;
        tail_sampler = TailSampler(t);
    }

    template <typename Rng>
    double draw_initial(Rng& rng) const {
        double x = draw_fresh(rng);
        if (rule == TransitionRule::gauss_map)
            for (std::size_t i = 0; i < burn_in; ++i) x = gauss_step(x, rng);
        return x;
    }

    template <typename Rng>
    double step(double x, Rng& rng) const {
        switch (rule) {
            case TransitionRule::lazy_refresh:
                return rng.uniform() < stay_probability ? x : draw_fresh(rng);
            case TransitionRule::gauss_map: return gauss_step(x, rng);
            case TransitionRule::independent: return draw_fresh(rng);
            case TransitionRule::copy: return x;
        }
        return x;
    }

    /// Inverse of F(x) = log2(1 + x), the Gauss measure's distribution function.
    static double gauss_inverse_cdf(double u) { return std::exp2(u) - 1.0; }

    /// x -> 1/x mod 1, re-drawing from the Gauss measure when the iterate lands
    /// on 0 or 1 in floating point.
    template <typename Rng>
    static double gauss_step(double x, Rng& rng) {
        const double inv = 1.0 / x;
        const double next = inv - std::floor(inv);
        if (!(next > 0.0 && next < 1.0)) return gauss_inverse_cdf(rng.uniform_open());
        return next;
    }
};

// ---------------------------------------------------------------------------
// Chain model
// ---------------------------------------------------------------------------

/// Extra facts reported by the truncated Gibbs-type builder.
struct GibbsInfo {
    std::size_t truncation = 0;
    double truncation_mass = 0.0;        ///< reference mass beyond the truncation, folded into state N
    std::vector<double> reference;        ///< truncated reference law pi
    double gibbs_constant = 0.0;          ///< min over (i, j) of p(i, j) / pi_j
    double reference_drift = 0.0;         ///< ||pi P - pi||_inf
    double stationarity_residual = 0.0;   ///< ||P_1 Q - P_1||_inf for the returned initial law
};

class ChainModel {
public:
    ChainModel(std::string kind, json parameters, FiniteChain chain)
        : kind_(std::move(kind)), parameters_(std::move(parameters)), chain_(std::move(chain)) {
        std::get<FiniteChain>(chain_).validate();
        floor_ = std::get<FiniteChain>(chain_).lower_psi_floor();
    }

    ChainModel(std::string kind, json parameters, ContinuousChain chain, std::optional<double> floor)
        : kind_(std::move(kind)), parameters_(std::move(parameters)), chain_(std::move(chain)), floor_(floor) {}

    const std::string& kind() const noexcept { return kind_; }
    const json& parameters() const noexcept { return parameters_; }
    bool is_finite() const noexcept { return std::holds_alternative<FiniteChain>(chain_); }

    const FiniteChain& finite() const {
        if (!is_finite()) throw ValidationError("operation needs a finite-state model, got '" + kind_ + "'");
        return std::get<FiniteChain>(chain_);
    }

    const ContinuousChain& continuous() const {
        if (is_finite()) throw ValidationError("operation needs a continuous model, got '" + kind_ + "'");
        return std::get<ContinuousChain>(chain_);
    }

    /// The constant a: computed for finite models, reported for continuous
    /// ones (absent when unknown).
    std::optional<double> lower_psi_floor() const noexcept { return floor_; }

    double require_floor() const {
        if (!floor_) throw ValidationError("lower psi floor of model '" + kind_ + "' is unknown");
        return *floor_;
    }

    const std::optional<GibbsInfo>& gibbs_info() const noexcept { return gibbs_; }
    void set_gibbs_info(GibbsInfo info) { gibbs_ = std::move(info); }

    json to_json() const {
        json j;
        j["kind"] = kind_;
        j["parameters"] = parameters_;
        j["truncation"] = gibbs_ ? json(gibbs_->truncation) : json(nullptr);
        j["seed_policy"] = "counter_stream(master_seed, replica)";
        return j;
    }

    std::string digest() const { return sha256_hex(to_json().dump()); }

private:
    std::string kind_;
    json parameters_;
    std::variant<FiniteChain, ContinuousChain> chain_;
    std::optional<double> floor_;
    std::optional<GibbsInfo> gibbs_;
};

/// Generic finite chain from an explicit kernel list; the initial law defaults
/// to the stationary law of the first kernel.
inline ChainModel build_finite_chain(std::vector<FiniteKernel> kernels,
                                     std::optional<std::vector<double>> initial = std::nullopt,
                                     std::size_t horizon = 16) {
    require(!kernels.empty(), "finite chain needs at least one kernel");
    FiniteChain chain;
    chain.initial = initial ? *initial : stationary_distribution(kernels.front());
    chain.kernels = std::move(kernels);
    chain.horizon = horizon;
    json params;
    params["initial"] = chain.initial;
    json ks = json::array();
    for (const auto& k : chain.kernels) ks.push_back(k.to_rows());
    params["kernels"] = ks;
    params["horizon"] = horizon;
    return ChainModel("finite", std::move(params), std::move(chain));
}

/// I.i.d. finite chain: every kernel row equals `law`.
inline ChainModel build_iid_finite(const std::vector<double>& law) {
    validate_probability_vector(law, "i.i.d. law");
    return build_finite_chain({FiniteKernel::independent(law)}, law);
}

/// Stationary continuous chain on [0, 1]: stay put with probability 1/2,
/// otherwise redraw uniformly.
inline ChainModel build_example1() {
    ContinuousChain c;
    c.initial = InitialLaw::uniform;
    c.rule = TransitionRule::lazy_refresh;
    c.stay_probability = 0.5;
    return ChainModel("example1", json{{"stay_probability", 0.5}, {"initial", "uniform[0,1]"}}, c, 0.5);
}

/// Truncated chain p(i, j) = pi_j + (delta_{ij} - delta_{i+1,j}) eps_i on
/// {1..N}. The reference mass beyond N is folded into state N (row N becomes
/// the reference law), and the chain starts from its stationary law.
inline ChainModel build_gibbs_chain(const std::function<double(std::size_t)>& pi,
                                    const std::function<double(std::size_t)>& eps, std::size_t truncation) {
    require(truncation >= 2, "truncation must be at least 2");
    const std::size_t n = truncation;
    std::vector<double> ref(n), e(n, 0.0);
    double total = 0.0;
    for (std::size_t j = 1; j <= n; ++j) {
        ref[j - 1] = pi(j);
        require(ref[j - 1] > 0.0, "reference law must be positive on {1..N}");
        total += ref[j - 1];
    }
    require(total <= 1.0 + 1e-12, "reference law has mass above one");
    const double residual = std::max(0.0, 1.0 - total);
    ref[n - 1] += residual;
    for (std::size_t i = 1; i < n; ++i) {
        e[i - 1] = eps(i);
        require(e[i - 1] >= 0.0, "eps_" + std::to_string(i) + " is negative");
        require(e[i - 1] <= std::min(1.0 - ref[i - 1], ref[i]) + 1e-15,
                "eps_" + std::to_string(i) + " exceeds min(1 - pi_i, pi_{i+1})");
    }
    RealMatrix p(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) p(i, j) = ref[j];
        if (i + 1 < n) {
            p(i, i) += e[i];
            p(i, i + 1) -= e[i];
        }
    }
    FiniteKernel kernel(p);  // validates rows

    GibbsInfo info;
    info.truncation = n;
    info.truncation_mass = residual;
    info.reference = ref;
    info.gibbs_constant = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) info.gibbs_constant = std::min(info.gibbs_constant, p(i, j) / ref[j]);
    info.reference_drift = max_abs_difference(left_multiply(ref, p), ref);

    FiniteChain chain;
    chain.initial = stationary_distribution(kernel);
    chain.kernels = {kernel};
    info.stationarity_residual = max_abs_difference(left_multiply(chain.initial, p), chain.initial);
    require(info.stationarity_residual <= 1e-10, "stationary law of the truncated kernel failed to converge");

    std::vector<double> eps_used(e.begin(), e.end() - 1);
    json params{{"reference", ref}, {"eps", eps_used}};
    ChainModel model("gibbs", std::move(params), std::move(chain));
    model.set_gibbs_info(std::move(info));
    return model;
}

inline ChainModel build_gibbs_chain(const std::vector<double>& pi, const std::vector<double>& eps,
                                    std::size_t truncation) {
    require(pi.size() >= truncation, "reference law shorter than the truncation");
    require(eps.size() + 1 >= truncation, "eps needs N - 1 entries");
    return build_gibbs_chain([&](std::size_t j) { return pi[j - 1]; },
                             [&](std::size_t i) { return eps[i - 1]; }, truncation);
}

/// pi_j = 2^-j, eps_i = 2^-(2+i).
inline ChainModel build_example3(std::size_t truncation = 20) {
    auto model = build_gibbs_chain([](std::size_t j) { return std::ldexp(1.0, -static_cast<int>(j)); },
                                   [](std::size_t i) { return std::ldexp(1.0, -static_cast<int>(2 + i)); },
                                   truncation);
    return model;
}

/// Continued-fraction digits under the Gauss measure.
inline ChainModel build_gauss_chain(std::size_t burn_in = 0) {
    ContinuousChain c;
    c.initial = InitialLaw::gauss_measure;
    c.rule = TransitionRule::gauss_map;
    c.burn_in = burn_in;
    return ChainModel("gauss", json{{"burn_in", burn_in}}, c, std::nullopt);
}

inline json tail_to_json(const TailModel& t) {
    json j{{"p", t.p}, {"x0", t.x0}, {"c_plus", t.c_plus}, {"kappa", t.ell.kappa}};
    if (t.ell.kind == SlowlyVarying::Kind::log_power) j["log_power"] = t.ell.gamma;
    return j;
}

/// I.i.d. draws from a tail model (recentered for p > 1).
inline ChainModel build_iid_tail(const TailModel& tail) {
    tail.validate();
    ContinuousChain c;
    c.initial = InitialLaw::tail;
    c.rule = TransitionRule::independent;
    c.set_tail(tail);
    return ChainModel("iid_tail", json{{"tail", tail_to_json(tail)}}, c, 1.0);
}

/// xi_k = xi_1 for every k: perfect clustering.
inline ChainModel build_copy_tail(const TailModel& tail) {
    tail.validate();
    ContinuousChain c;
    c.initial = InitialLaw::tail;
    c.rule = TransitionRule::copy;
    c.set_tail(tail);
    return ChainModel("copy_tail", json{{"tail", tail_to_json(tail)}}, c, 0.0);
}

// ---------------------------------------------------------------------------
// Functionals
// ---------------------------------------------------------------------------

struct Lattice {
    double span = 1.0;
    double offset = 0.0;
};

/// Per-step maps g_k turning states into summands X_k = g_k(xi_k).
class Functional {
public:
    enum class Formula { table, identity, shift, gauss_digit, pareto_transform, zero };

    /// Homogeneous finite-state table.
    static Functional values(std::vector<double> g, std::optional<Lattice> lattice = std::nullopt) {
        return per_step({std::move(g)}, lattice);
    }

    /// Tables g_1, g_2, ... used cyclically.
    static Functional per_step(std::vector<std::vector<double>> tables,
                               std::optional<Lattice> lattice = std::nullopt) {
        require(!tables.empty(), "functional needs at least one table");
        Functional f;
        f.formula_ = Formula::table;
        f.tables_ = std::move(tables);
        for (const auto& t : f.tables_) require(t.size() == f.tables_.front().size(), "ragged functional tables");
        f.lattice_ = lattice;
        f.check_lattice();
        return f;
    }

    static Functional identity(std::optional<Lattice> lattice = std::nullopt) {
        Functional f;
        f.formula_ = Formula::identity;
        f.lattice_ = lattice;
        f.check_lattice();
        return f;
    }

    /// x -> x - shift.
    static Functional shift(double amount) {
        Functional f;
        f.formula_ = Formula::shift;
        f.shift_ = amount;
        return f;
    }

    /// x -> floor(1/x), integer lattice.
    static Functional gauss_digit() {
        Functional f;
        f.formula_ = Formula::gauss_digit;
        f.lattice_ = Lattice{1.0, 0.0};
        return f;
    }

    /// Maps a uniform state on [0, 1] to a symmetric Pareto value with
    /// P(|X| > t) = (x0 / t)^p.
    static Functional pareto_transform(double p, double x0 = 1.0) {
        require(p > 0.0 && x0 > 0.0, "pareto transform needs p > 0 and x0 > 0");
        Functional f;
        f.formula_ = Formula::pareto_transform;
        f.tail_p_ = p;
        f.tail_x0_ = x0;
        return f;
    }

    static Functional zero() {
        Functional f;
        f.formula_ = Formula::zero;
        f.lattice_ = Lattice{1.0, 0.0};
        return f;
    }

    Formula formula() const noexcept { return formula_; }
    bool is_table() const noexcept { return formula_ == Formula::table; }
    const std::optional<Lattice>& lattice() const noexcept { return lattice_; }
    std::size_t table_count() const noexcept { return tables_.size(); }
    std::size_t state_count() const noexcept { return tables_.empty() ? 0 : tables_.front().size(); }

    /// g_k as a table (finite models only), k >= 1.
    const std::vector<double>& table(std::size_t k) const {
        require(is_table(), "functional is not tabulated");
        require(k >= 1, "functional step starts at 1");
        return tables_[(k - 1) % tables_.size()];
    }

    double operator()(std::size_t k, double state) const {
        switch (formula_) {
            case Formula::table: return table(k)[static_cast<std::size_t>(state)];
            case Formula::identity: return state;
            case Formula::shift: return state - shift_;
            case Formula::gauss_digit: return std::floor(1.0 / state);
            case Formula::pareto_transform: {
                const double y = 2.0 * state - 1.0;
                const double mag = tail_x0_ * std::pow(std::max(std::abs(y), 0x1.0p-53), -1.0 / tail_p_);
                return y < 0.0 ? -mag : mag;
            }
            case Formula::zero: return 0.0;
        }
        return 0.0;
    }

    /// Throws if the functional cannot be applied to `model`.
    void check_compatible(const ChainModel& model) const {
        if (model.is_finite()) {
            require(is_table(), "finite models need a tabulated functional");
            require(state_count() == model.finite().size(),
                    "functional has " + std::to_string(state_count()) + " states, model has " +
                        std::to_string(model.finite().size()));
        } else {
            require(!is_table(), "continuous models need a formula functional");
        }
    }

    bool is_zero() const {
        if (formula_ == Formula::zero) return true;
        if (!is_table()) return false;
        for (const auto& t : tables_)
            for (double v : t)
                if (v != 0.0) return false;
        return true;
    }

    json to_json() const {
        json j;
        switch (formula_) {
            case Formula::table: j = {{"kind", "table"}, {"tables", tables_}}; break;
            case Formula::identity: j = {{"kind", "identity"}}; break;
            case Formula::shift: j = {{"kind", "shift"}, {"shift", shift_}}; break;
            case Formula::gauss_digit: j = {{"kind", "gauss_digit"}}; break;
            case Formula::pareto_transform: j = {{"kind", "pareto_transform"}, {"p", tail_p_}, {"x0", tail_x0_}}; break;
            case Formula::zero: j = {{"kind", "zero"}}; break;
        }
        if (lattice_) j["lattice"] = {{"h", lattice_->span}, {"offset", lattice_->offset}};
        return j;
    }

private:
    void check_lattice() const {
        if (!lattice_) return;
        require(lattice_->span > 0.0, "lattice span h must be positive");
        for (const auto& t : tables_)
            for (double v : t) {
                const double m = (v - lattice_->offset) / lattice_->span;
                require(std::abs(m - std::round(m)) * lattice_->span <= 1e-12,
                        "functional value " + std::to_string(v) + " is off the declared lattice");
            }
    }

    Formula formula_ = Formula::zero;
    std::vector<std::vector<double>> tables_;
    std::optional<Lattice> lattice_;
    double shift_ = 0.0;
    double tail_p_ = 1.5;
    double tail_x0_ = 1.0;
};

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

struct TrajectoryBatch {
    std::size_t n = 0;
    std::size_t replicas = 0;
    std::vector<double> sums;                 ///< S_n per replica
    std::vector<std::size_t> recorded_steps;  ///< steps k whose X_k were kept
    std::vector<double> increments;           ///< replicas x recorded_steps, row-major
    std::uint64_t master_seed = 0;
    std::string model_digest;

    double increment(std::size_t replica, std::size_t slot) const {
        return increments[replica * recorded_steps.size() + slot];
    }

    std::string to_csv() const {
        std::ostringstream out;
        out.precision(17);
        out << "replica,s_n\n";
        for (std::size_t r = 0; r < replicas; ++r) out << r << ',' << sums[r] << '\n';
        return out.str();
    }
};

struct SimulationOptions {
    unsigned threads = 1;
    std::vector<std::size_t> record_steps;  ///< 1-based steps to keep X_k for
    std::uint64_t salt = 0;                 ///< separates independent studies on one seed
};

namespace detail {
/// Cumulative rows for inverse-CDF sampling of categorical laws.
struct CategoricalTable {
    std::vector<std::vector<double>> cumulative;

    static std::vector<double> cumulate(const std::vector<double>& p) {
        std::vector<double> c(p.size());
        std::partial_sum(p.begin(), p.end(), c.begin());
        c.back() = std::numeric_limits<double>::infinity();
        return c;
    }

    static std::size_t draw(const std::vector<double>& cum, double u) {
        return static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    }
};
}  // namespace detail

/// R realizations of S_n = X_1 + ... + X_n. Replica r draws from
/// ReplicaStream(seed, r, salt) only, so results do not depend on `threads`.
inline TrajectoryBatch simulate_partial_sums(const ChainModel& model, const Functional& f, std::size_t n,
                                             std::size_t replicas, std::uint64_t seed,
                                             const SimulationOptions& options = {}) {
    require(n >= 1, "trajectory length n must be at least 1");
    require(replicas >= 1, "replica count must be at least 1");
    f.check_compatible(model);
    for (std::size_t s : options.record_steps) require(s >= 1 && s <= n, "recorded step outside [1, n]");

    TrajectoryBatch batch;
    batch.n = n;
    batch.replicas = replicas;
    batch.sums.assign(replicas, 0.0);
    batch.recorded_steps = options.record_steps;
    batch.increments.assign(replicas * options.record_steps.size(), 0.0);
    batch.master_seed = seed;
    batch.model_digest = sha256_hex(json{{"model", model.to_json()}, {"functional", f.to_json()}}.dump());

    // slot lookup for recorded steps
    std::map<std::size_t, std::vector<std::size_t>> slots;
    for (std::size_t i = 0; i < options.record_steps.size(); ++i) slots[options.record_steps[i]].push_back(i);
    const std::size_t width = options.record_steps.size();

    auto record = [&](std::size_t r, std::size_t k, double x) {
        if (slots.empty()) return;
        auto it = slots.find(k);
        if (it == slots.end()) return;
        for (std::size_t slot : it->second) batch.increments[r * width + slot] = x;
    };

    if (model.is_finite()) {
        const FiniteChain& chain = model.finite();
        const auto init = detail::CategoricalTable::cumulate(chain.initial);
        std::vector<detail::CategoricalTable> tables(chain.kernels.size());
        for (std::size_t i = 0; i < chain.kernels.size(); ++i)
            for (std::size_t x = 0; x < chain.size(); ++x)
                tables[i].cumulative.push_back(detail::CategoricalTable::cumulate(chain.kernels[i].matrix().row(x)));
        std::vector<const std::vector<double>*> values;
        for (std::size_t k = 1; k <= f.table_count(); ++k) values.push_back(&f.table(k));
        parallel_for(replicas, options.threads, [&](std::size_t r) {
            ReplicaStream rng(seed, r, options.salt);
            std::size_t state = detail::CategoricalTable::draw(init, rng.uniform());
            double sum = 0.0;
            for (std::size_t k = 1; k <= n; ++k) {
                if (k >= 2) {
                    const auto& table = tables[(k - 2) % tables.size()];
                    state = detail::CategoricalTable::draw(table.cumulative[state], rng.uniform());
                }
                const double x = (*values[(k - 1) % values.size()])[state];
                sum += x;
                record(r, k, x);
            }
            batch.sums[r] = sum;
        });
    } else {
        const ContinuousChain& chain = model.continuous();
        parallel_for(replicas, options.threads, [&](std::size_t r) {
            ReplicaStream rng(seed, r, options.salt);
            double state = chain.draw_initial(rng);
            double sum = 0.0;
            for (std::size_t k = 1; k <= n; ++k) {
                if (k >= 2) state = chain.step(state, rng);
                const double x = f(k, state);
                sum += x;
                record(r, k, x);
            }
            batch.sums[r] = sum;
        });
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Exact linear algebra on finite models
// ---------------------------------------------------------------------------

/// Q_{m+1} ... Q_{m+k}: the law of xi_{m+k} given xi_m.
inline FiniteKernel k_step_kernel(const ChainModel& model, std::size_t m, std::size_t k) {
    const FiniteChain& chain = model.finite();
    require(m >= 1 && k >= 1, "k_step_kernel needs m >= 1 and k >= 1");
    RealMatrix product = chain.kernel_matrix(m + 1);
    for (std::size_t step = m + 2; step <= m + k; ++step) product = product * chain.kernel_matrix(step);
    // renormalize accumulated rounding so the result passes the row-sum check
    for (std::size_t i = 0; i < product.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < product.cols(); ++j) sum += product(i, j);
        for (std::size_t j = 0; j < product.cols(); ++j) product(i, j) /= sum;
    }
    return FiniteKernel(std::move(product));
}

/// Var(g) under the uniform law on [0, 1], by quadrature.
inline double uniform_variance(const std::function<double(double)>& g) {
    const auto mean = simpson_dyadic(g, 0.0, 1.0, 1e-12).value;
    const auto second = simpson_dyadic([&](double x) { return (g(x) - mean) * (g(x) - mean); }, 0.0, 1.0, 1e-12);
    return second.value;
}

/// c^2 = lim Var(S_n)/n = Var(X_0) + 2 sum_k Cov(X_0, X_k) for a stationary
/// homogeneous model. Finite models sum the series through matrix powers;
/// lazy-refresh models use Cov(X_0, X_k) = s^k Var(X_0).
inline double long_run_variance(const ChainModel& model, const Functional& f) {
    f.check_compatible(model);
    const double a = model.require_floor();
    require(a > 0.0, "long-run variance needs a positive lower psi floor");
    if (!model.is_finite()) {
        const ContinuousChain& c = model.continuous();
        require(c.rule == TransitionRule::lazy_refresh && c.initial == InitialLaw::uniform,
                "long-run variance of continuous models is available for lazy-refresh chains only");
        require(f.formula() != Functional::Formula::pareto_transform, "functional has infinite variance");
        const double var = uniform_variance([&](double x) { return f(1, x); });
        return var * (1.0 + c.stay_probability) / (1.0 - c.stay_probability);
    }
    const FiniteChain& chain = model.finite();
    require(chain.homogeneous(), "long-run variance needs a homogeneous chain");
    require(f.table_count() == 1, "long-run variance needs a homogeneous functional");
    const auto& pi = chain.initial;
    require(max_abs_difference(left_multiply(pi, chain.kernels[0].matrix()), pi) <= 1e-12,
            "long-run variance needs a stationary initial law");
    const auto& g = f.table(1);
    double mean = 0.0;
    for (std::size_t x = 0; x < pi.size(); ++x) mean += pi[x] * g[x];
    std::vector<double> centered(g.size());
    for (std::size_t x = 0; x < g.size(); ++x) centered[x] = g[x] - mean;
    double var = 0.0;
    for (std::size_t x = 0; x < pi.size(); ++x) var += pi[x] * centered[x] * centered[x];
    double total = var;
    std::vector<double> v = centered;
    int small = 0;
    for (std::size_t k = 1; k < 1000000; ++k) {
        v = right_multiply(chain.kernels[0].matrix(), v);
        double cov = 0.0;
        for (std::size_t x = 0; x < pi.size(); ++x) cov += pi[x] * centered[x] * v[x];
        total += 2.0 * cov;
        small = std::abs(cov) < 1e-12 * std::max(1.0, var) ? small + 1 : 0;
        if (small >= 3) return total;
    }
    throw ConvergenceError("autocovariance series did not decay");
}

/// Empirical extrema of P(A and B) / (P(A) P(B)) over pairs of categories of
/// (xi_1, xi_{1+lag}), cells with fewer than `min_count` expected hits skipped.
struct LagRatioEstimate {
    double min_ratio = 0.0;
    double max_ratio = 0.0;
    std::size_t cells_used = 0;
};

inline LagRatioEstimate empirical_lag_ratio_extrema(const ChainModel& model,
                                                    const std::function<std::size_t(double)>& categorize,
                                                    std::size_t categories, std::size_t lag, std::size_t replicas,
                                                    std::uint64_t seed, double min_count = 1000.0,
                                                    unsigned threads = 1) {
    const ContinuousChain& chain = model.continuous();
    require(categories >= 2 && lag >= 1 && replicas >= 1, "invalid lag-ratio parameters");
    std::vector<std::size_t> first(replicas), second(replicas);
    parallel_for(replicas, threads, [&](std::size_t r) {
        ReplicaStream rng(seed, r, 0x1a9);
        double x = chain.draw_initial(rng);
        first[r] = std::min(categorize(x), categories - 1);
        for (std::size_t k = 0; k < lag; ++k) x = chain.step(x, rng);
        second[r] = std::min(categorize(x), categories - 1);
    });
    std::vector<double> row(categories, 0.0), col(categories, 0.0), joint(categories * categories, 0.0);
    for (std::size_t r = 0; r < replicas; ++r) {
        row[first[r]] += 1.0;
        col[second[r]] += 1.0;
        joint[first[r] * categories + second[r]] += 1.0;
    }
    const double total = static_cast<double>(replicas);
    LagRatioEstimate out{std::numeric_limits<double>::infinity(), 0.0, 0};
    for (std::size_t i = 0; i < categories; ++i)
        for (std::size_t j = 0; j < categories; ++j) {
            const double expected = row[i] * col[j] / total;
            if (expected < min_count) continue;
            const double ratio = joint[i * categories + j] / expected;
            out.min_ratio = std::min(out.min_ratio, ratio);
            out.max_ratio = std::max(out.max_ratio, ratio);
            ++out.cells_used;
        }
    require(out.cells_used > 0, "no cell reached the minimum expected count");
    return out;
}

}  // namespace lltlab
