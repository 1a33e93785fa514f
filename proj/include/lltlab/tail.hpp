#pragma once

#include "lltlab/core.hpp"
#include "lltlab/random.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <limits>
#include <string>

namespace lltlab {

/// Slowly varying factor of a regularly varying tail.
struct SlowlyVarying {
    enum class Kind { constant, log_power };
    Kind kind = Kind::constant;
    double kappa = 1.0;
    double gamma = 0.0;  ///< exponent of log x for log_power

    static SlowlyVarying constant(double kappa) { return {Kind::constant, kappa, 0.0}; }
    static SlowlyVarying log_power(double kappa, double gamma) { return {Kind::log_power, kappa, gamma}; }

    double operator()(double x) const {
        return kind == Kind::constant ? kappa : kappa * std::pow(std::log(x), gamma);
    }
};

/// Two-sided regularly varying law: P(|X| > x) = x^-p l(x) for x >= x0, the
/// remaining mass sitting at |X| = x0, sign + with probability c_plus.
struct TailModel {
    double p = 1.5;
    SlowlyVarying ell;
    double c_plus = 0.5;
    double x0 = 1.0;

    /// Pure Pareto from x0: P(|X| > x) = (x0/x)^p.
    static TailModel pareto(double p, double x0 = 1.0, double c_plus = 0.5) {
        TailModel t{p, SlowlyVarying::constant(std::pow(x0, p)), c_plus, x0};
        t.validate();
        return t;
    }

    double c_minus() const { return 1.0 - c_plus; }
    bool symmetric() const { return c_plus == 0.5; }

    /// x^-p l(x); meaningful for x >= x0.
    double tail_function(double x) const { return std::pow(x, -p) * ell(x); }

    /// P(|X| > x) for all x >= 0.
    double survival(double x) const { return x < x0 ? 1.0 : tail_function(x); }

    void validate() const {
        require(p > 0.0 && p < 2.0, "tail index p must lie in (0, 2)");
        require(c_plus >= 0.0 && c_plus <= 1.0, "c_plus must lie in [0, 1]");
        require(x0 > 0.0, "tail cutoff x0 must be positive");
        require(ell.kappa > 0.0, "slowly varying constant kappa must be positive");
        if (ell.kind == SlowlyVarying::Kind::log_power) {
            require(x0 > 1.0, "log-power slowly varying factor needs x0 > 1");
            // x^-p (log x)^gamma is decreasing once log x > gamma / p.
            require(std::log(x0) >= ell.gamma / p, "tail function must be decreasing above x0");
        }
        require(tail_function(x0) <= 1.0 + 1e-12, "tail mass above x0 exceeds one");
    }

    /// E|X|; infinite for p <= 1.
    double mean_abs() const {
        if (p <= 1.0) return std::numeric_limits<double>::infinity();
        // |X| >= x0 always, so E|X| = x0 + int_{x0}^inf P(|X| > x) dx.
        if (ell.kind == SlowlyVarying::Kind::constant)
            return x0 + ell.kappa * std::pow(x0, 1.0 - p) / (p - 1.0);
        // substitute y = log x: kappa int_{log x0}^inf y^gamma e^{-(p-1) y} dy
        const double q = p - 1.0;
        return x0 + ell.kappa * std::pow(q, -(ell.gamma + 1.0)) *
                        boost::math::tgamma(ell.gamma + 1.0, q * std::log(x0));
    }

    /// E X for p > 1; zero for symmetric laws.
    double mean() const {
        if (c_plus == 0.5) return 0.0;
        return (c_plus - c_minus()) * mean_abs();
    }

    /// Solves x^-p l(x) = level for x >= x0 (level <= tail_function(x0)).
    double inverse_tail(double level) const {
        if (ell.kind == SlowlyVarying::Kind::constant) return std::pow(ell.kappa / level, 1.0 / p);
        double lo = std::log(x0);
        double hi = lo + 1.0;
        while (tail_function(std::exp(hi)) > level) hi = lo + 2.0 * (hi - lo);
        for (int i = 0; i < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++i) {
            const double mid = 0.5 * (lo + hi);
            (tail_function(std::exp(mid)) > level ? lo : hi) = mid;
        }
        return std::exp(0.5 * (lo + hi));
    }
};

/// Tail draws with the per-model constants computed once: sign + with
/// probability c_plus, magnitude by inverting the tail function (the atom at
/// x0 absorbs the mass below it), recentered by the analytic mean for p > 1.
class TailSampler {
public:
    TailSampler() = default;
    explicit TailSampler(const TailModel& tail)
        : tail_(tail),
          atom_level_(tail.tail_function(tail.x0)),
          inverse_p_(1.0 / tail.p),
          log_kappa_(std::log(tail.ell.kappa)),
          centre_(tail.p > 1.0 ? tail.mean() : 0.0),
          constant_(tail.ell.kind == SlowlyVarying::Kind::constant) {}

    template <typename Rng>
    double raw(Rng& rng) const {
        const double sign_draw = rng.uniform();
        const double u = rng.uniform_open_closed();
        double magnitude = tail_.x0;
        if (u <= atom_level_)
            magnitude = constant_ ? std::exp(inverse_p_ * (log_kappa_ - std::log(u))) : tail_.inverse_tail(u);
        return sign_draw < tail_.c_plus ? magnitude : -magnitude;
    }

    template <typename Rng>
    double operator()(Rng& rng) const {
        return raw(rng) - centre_;
    }

private:
    TailModel tail_;
    double atom_level_ = 1.0;
    double inverse_p_ = 1.0;
    double log_kappa_ = 0.0;
    double centre_ = 0.0;
    bool constant_ = true;
};

/// Draw without recentering.
template <typename Rng>
double sample_tail_raw(const TailModel& tail, Rng& rng) {
    return TailSampler(tail).raw(rng);
}

/// Draw from the tail model. For p > 1 the draw is recentered by the analytic
/// mean so that E X = 0.
template <typename Rng>
double sample_tail_increment(const TailModel& tail, Rng& rng) {
    return TailSampler(tail)(rng);
}

}  // namespace lltlab
