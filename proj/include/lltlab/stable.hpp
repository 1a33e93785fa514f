#pragma once

// Strictly stable laws, Fourier-inversion densities, normalizing sequences
// and truncated second moments.

#include "lltlab/core.hpp"
#include "lltlab/kernel.hpp"
#include "lltlab/quadrature.hpp"
#include "lltlab/random.hpp"
#include "lltlab/tail.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace lltlab {

/// Strictly stable law with |f(t)| = exp(-|c t|^p) and skewness beta.
struct StableLaw {
    double p = 2.0;
    double scale = 1.0 / std::numbers::sqrt2;
    double beta = 0.0;

    static StableLaw standard_normal() { return {2.0, 1.0 / std::numbers::sqrt2, 0.0}; }
    static StableLaw standard_cauchy() { return {1.0, 1.0, 0.0}; }

    void validate() const {
        require(p > 0.0 && p <= 2.0, "stable index p must lie in (0, 2]");
        require(scale > 0.0, "stable scale must be positive");
        require(beta >= -1.0 && beta <= 1.0, "skewness beta must lie in [-1, 1]");
        require(beta == 0.0 || (p != 1.0 && p != 2.0), "skewness must be 0 when p is 1 or 2");
    }

    bool symmetric() const { return beta == 0.0; }

    /// exp(-|c t|^p (1 - i beta sign(t) tan(pi p / 2))).
    Complex charfn(double t) const {
        if (t == 0.0) return {1.0, 0.0};
        const double m = std::pow(std::abs(scale * t), p);
        const double skew = beta == 0.0 ? 0.0 : beta * (t > 0.0 ? 1.0 : -1.0) * std::tan(kPi * p / 2.0);
        return std::exp(Complex{-m, m * skew});
    }

    json to_json() const { return {{"p", p}, {"scale", scale}, {"beta", beta}}; }
};

inline Complex stable_charfn(const StableLaw& law, double t) {
    law.validate();
    return law.charfn(t);
}

/// Frequency T with  int_T^inf exp(-(c t)^p) dt < tol.
inline double stable_cutoff(const StableLaw& law, double tol = 1e-10) {
    auto tail = [&](double t) {
        return boost::math::tgamma(1.0 / law.p, std::pow(law.scale * t, law.p)) / (law.scale * law.p);
    };
    double lo = 0.0, hi = 1.0 / law.scale;
    while (tail(hi) >= tol) hi *= 2.0;
    for (int i = 0; i < 100 && hi - lo > 1e-9 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        (tail(mid) >= tol ? lo : hi) = mid;
    }
    return hi;
}

namespace detail {
inline constexpr double kInversionStep = 0.01;
inline constexpr double kOriginWindow = 0.5;
inline constexpr int kOriginPanels = 40;
using InversionRule = boost::math::quadrature::gauss<double, 15>;
// 15-point panels of this many steps keep every node gap below one step
inline constexpr double kStepsPerPanel = 9.0;

inline double inversion_integral(const StableLaw& law, double x, double cutoff) {
    auto integrand = [&](double t) { return (law.charfn(t) * std::polar(1.0, -t * x)).real(); };
    const double step = std::min(kInversionStep, x == 0.0 ? kInversionStep : 1.0 / (4.0 * std::abs(x)));
    const double split = std::min(kOriginWindow, cutoff);
    // |t|^p is not smooth at the origin: panels shrink geometrically towards it
    double total = 0.0;
    double right = split;
    for (int j = 0; j < kOriginPanels; ++j) {
        const double left = 0.5 * right;
        const auto pieces = static_cast<std::size_t>(std::ceil((right - left) / (kStepsPerPanel * step)));
        const double w = (right - left) / static_cast<double>(pieces);
        for (std::size_t i = 0; i < pieces; ++i)
            total += InversionRule::integrate(integrand, left + w * static_cast<double>(i),
                                              left + w * static_cast<double>(i + 1));
        right = left;
    }
    total += InversionRule::integrate(integrand, 0.0, right);
    if (cutoff > split) {
        const auto pieces = static_cast<std::size_t>(std::ceil((cutoff - split) / (kStepsPerPanel * step)));
        const double w = (cutoff - split) / static_cast<double>(pieces);
        for (std::size_t i = 0; i < pieces; ++i)
            total += InversionRule::integrate(integrand, split + w * static_cast<double>(i),
                                              split + w * static_cast<double>(i + 1));
    }
    return total / kPi;
}
}  // namespace detail

/// h_L(x) = (1 / pi) int_0^T Re(f(t) e^{-itx}) dt.
inline double stable_density(const StableLaw& law, double x) {
    law.validate();
    return detail::inversion_integral(law, x, stable_cutoff(law));
}

struct DensityCurve {
    StableLaw law;
    std::vector<double> x;
    std::vector<double> h;

    std::string to_csv() const {
        std::ostringstream out;
        out.precision(17);
        out << "x,h_L\n";
        for (std::size_t i = 0; i < x.size(); ++i) out << x[i] << ',' << h[i] << '\n';
        return out.str();
    }

    double minimum() const { return h.empty() ? 0.0 : *std::min_element(h.begin(), h.end()); }
};

inline DensityCurve tabulate_density(const StableLaw& law, const std::vector<double>& xs, unsigned threads = 1) {
    law.validate();
    const double cutoff = stable_cutoff(law);
    DensityCurve curve{law, xs, std::vector<double>(xs.size())};
    parallel_for(xs.size(), threads,
                 [&](std::size_t i) { curve.h[i] = detail::inversion_integral(law, xs[i], cutoff); });
    return curve;
}

struct DensityMass {
    double inner = 0.0;   ///< quadrature over [-X, X]
    double tail = 0.0;    ///< asymptotic mass beyond |x| > X
    double total = 0.0;
    double minimum = 0.0; ///< smallest density value on the grid
    double half_width = 0.0;
};

/// Total mass of the inverted density: Simpson on x = c sinh(s) over
/// |x| <= X plus the leading terms of the tail expansion
/// (2 / pi) sum_k (-1)^{k+1} Gamma(pk) / k! sin(k pi p / 2) (c / X)^{pk}.
inline DensityMass density_mass(const StableLaw& law, double half_width_scales = 0.0, double ds = 0.01,
                                unsigned threads = 1) {
    law.validate();
    // the skewed tail expansion keeps one term, so skewed laws integrate further out
    if (half_width_scales <= 0.0) half_width_scales = law.symmetric() ? 40.0 : 400.0;
    DensityMass out;
    out.half_width = half_width_scales * law.scale;
    const double s_max = std::asinh(half_width_scales);
    auto intervals = static_cast<std::size_t>(std::ceil(2.0 * s_max / ds));
    intervals += intervals % 2;
    const double hs = 2.0 * s_max / static_cast<double>(intervals);
    std::vector<double> xs(intervals + 1);
    for (std::size_t i = 0; i <= intervals; ++i)
        xs[i] = law.scale * std::sinh(-s_max + hs * static_cast<double>(i));
    const DensityCurve curve = tabulate_density(law, xs, threads);
    double sum = 0.0;
    for (std::size_t i = 0; i <= intervals; ++i) {
        const double jacobian = law.scale * std::cosh(-s_max + hs * static_cast<double>(i));
        const double weight = (i == 0 || i == intervals) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        sum += weight * curve.h[i] * jacobian;
    }
    out.inner = sum * hs / 3.0;
    out.minimum = curve.minimum();
    if (law.p < 2.0) {
        // only the leading term is free of beta
        const int terms = law.symmetric() ? 3 : 1;
        const double ratio = 1.0 / half_width_scales;
        for (int k = 1; k <= terms; ++k) {
            const double pk = law.p * k;
            const double sign = k % 2 ? 1.0 : -1.0;
            out.tail += sign * std::tgamma(pk) / std::tgamma(k + 1.0) * std::sin(k * kPi * law.p / 2.0) *
                        std::pow(ratio, pk);
        }
        out.tail *= 2.0 / kPi;
    }
    out.total = out.inner + out.tail;
    return out;
}

/// Scale of the strictly stable limit of n^{-1/p} sums of i.i.d. symmetric
/// draws with P(|X| > x) = x^{-p}, 1 < p < 2: (Gamma(1 - p) cos(pi p / 2))^{1/p}.
inline double pareto_stable_scale(double p) {
    require(p > 0.0 && p < 2.0 && p != 1.0, "closed-form scale needs p in (0, 2) without 1");
    return std::pow(std::tgamma(1.0 - p) * std::cos(kPi * p / 2.0), 1.0 / p);
}

// ---------------------------------------------------------------------------
// Normalizers
// ---------------------------------------------------------------------------

enum class NormalizerMethod { tail_solve, variance, c_sqrt_n, mean_abs };

inline std::string to_string(NormalizerMethod m) {
    switch (m) {
        case NormalizerMethod::tail_solve: return "tail_solve";
        case NormalizerMethod::variance: return "variance";
        case NormalizerMethod::c_sqrt_n: return "c_sqrt_n";
        case NormalizerMethod::mean_abs: return "mean_abs";
    }
    return "unknown";
}

inline NormalizerMethod normalizer_method_from_string(const std::string& s) {
    if (s == "tail_solve") return NormalizerMethod::tail_solve;
    if (s == "variance") return NormalizerMethod::variance;
    if (s == "c_sqrt_n") return NormalizerMethod::c_sqrt_n;
    if (s == "mean_abs") return NormalizerMethod::mean_abs;
    throw ValidationError("unknown normalizer method '" + s + "'");
}

struct NormalizerSchedule {
    NormalizerMethod method = NormalizerMethod::tail_solve;
    std::vector<std::size_t> n;
    std::vector<double> bn;

    bool strictly_increasing() const {
        for (std::size_t i = 1; i < bn.size(); ++i)
            if (!(n[i] > n[i - 1] && bn[i] > bn[i - 1])) return false;
        return true;
    }

    std::string to_csv() const {
        std::ostringstream out;
        out.precision(17);
        out << "n,B_n,method\n";
        for (std::size_t i = 0; i < n.size(); ++i) out << n[i] << ',' << bn[i] << ',' << to_string(method) << '\n';
        return out.str();
    }
};

/// |n P(|X| > B) - 1|.
inline double normalizer_residual(const TailModel& tail, std::size_t n, double b) {
    return std::abs(static_cast<double>(n) * tail.survival(b) - 1.0);
}

/// B_n solving n x^{-p} l(x) = 1 above x0.
inline double solve_normalizer(const TailModel& tail, std::size_t n) {
    tail.validate();
    require(n >= 1, "n must be at least 1");
    const double level = 1.0 / static_cast<double>(n);
    if (tail.tail_function(tail.x0) < level)
        throw ValidationError("no normalizer above x0 for n = " + std::to_string(n) + " (n too small)");
    const double b = tail.inverse_tail(level);
    if (normalizer_residual(tail, n, b) > 1e-10)
        throw ConvergenceError("normalizer residual above 1e-10 at n = " + std::to_string(n));
    return b;
}

inline NormalizerSchedule tail_solve_schedule(const TailModel& tail, const std::vector<std::size_t>& ns) {
    NormalizerSchedule s{NormalizerMethod::tail_solve, ns, {}};
    for (std::size_t n : ns) s.bn.push_back(solve_normalizer(tail, n));
    return s;
}

inline NormalizerSchedule c_sqrt_n_schedule(double c, const std::vector<std::size_t>& ns) {
    require(c > 0.0, "c must be positive");
    NormalizerSchedule s{NormalizerMethod::c_sqrt_n, ns, {}};
    for (std::size_t n : ns) s.bn.push_back(c * std::sqrt(static_cast<double>(n)));
    return s;
}

/// sqrt(mean S_n^2).
inline double variance_normalizer(const TrajectoryBatch& batch) {
    double sum = 0.0;
    for (double s : batch.sums) sum += s * s;
    require(sum > 0.0, "degenerate sample: all sums are zero");
    return std::sqrt(sum / static_cast<double>(batch.sums.size()));
}

/// sqrt(pi / 2) mean |S_n|.
inline double mean_abs_normalizer(const TrajectoryBatch& batch) {
    double sum = 0.0;
    for (double s : batch.sums) sum += std::abs(s);
    require(sum > 0.0, "degenerate sample: all sums are zero");
    return std::sqrt(kPi / 2.0) * sum / static_cast<double>(batch.sums.size());
}

inline NormalizerSchedule empirical_schedule(NormalizerMethod method, const std::vector<TrajectoryBatch>& batches) {
    require(method == NormalizerMethod::variance || method == NormalizerMethod::mean_abs,
            "empirical schedules use the variance or mean_abs method");
    NormalizerSchedule s{method, {}, {}};
    for (const auto& b : batches) {
        s.n.push_back(b.n);
        s.bn.push_back(method == NormalizerMethod::variance ? variance_normalizer(b) : mean_abs_normalizer(b));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Truncated second moment H(x) = E X^2 1{|X| <= x}
// ---------------------------------------------------------------------------

struct TruncatedMoment {
    std::vector<double> x;
    std::vector<double> h;
    std::vector<double> ratio;  ///< H(2x) / H(x)
    bool slowly_varying = false;
};

namespace detail {
inline TruncatedMoment finish_truncated_moment(TruncatedMoment out, const std::function<double(double)>& moment,
                                               double tolerance) {
    for (double x : out.x) {
        const double hx = moment(x);
        out.h.push_back(hx);
        out.ratio.push_back(hx > 0.0 ? moment(2.0 * x) / hx : 1.0);
    }
    out.slowly_varying = !out.ratio.empty() && std::abs(out.ratio.back() - 1.0) <= tolerance;
    return out;
}
}  // namespace detail

/// H on a grid from a sample; the diagnostic flags slow variation when the
/// last ratio is within `tolerance` of 1.
inline TruncatedMoment truncated_second_moment(std::vector<double> sample, const std::vector<double>& x_grid,
                                               double tolerance = 0.05) {
    require(!sample.empty(), "truncated second moment needs a sample");
    for (double& s : sample) s = std::abs(s);
    std::sort(sample.begin(), sample.end());
    std::vector<double> cumulative(sample.size() + 1, 0.0);
    for (std::size_t i = 0; i < sample.size(); ++i) cumulative[i + 1] = cumulative[i] + sample[i] * sample[i];
    const double count = static_cast<double>(sample.size());
    auto moment = [&](double x) {
        const auto k = static_cast<std::size_t>(std::upper_bound(sample.begin(), sample.end(), x) - sample.begin());
        return cumulative[k] / count;
    };
    return detail::finish_truncated_moment(TruncatedMoment{x_grid, {}, {}, false}, moment, tolerance);
}

/// H for a finite law given by values and probabilities.
inline TruncatedMoment truncated_second_moment(const std::vector<double>& values, const std::vector<double>& probs,
                                               const std::vector<double>& x_grid, double tolerance = 0.05) {
    require(values.size() == probs.size() && !values.empty(), "finite law needs matching values and probabilities");
    auto moment = [&](double x) {
        double m = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i)
            if (std::abs(values[i]) <= x) m += probs[i] * values[i] * values[i];
        return m;
    };
    return detail::finish_truncated_moment(TruncatedMoment{x_grid, {}, {}, false}, moment, tolerance);
}

// ---------------------------------------------------------------------------
// Scale fit
// ---------------------------------------------------------------------------

/// c fitted from -ln|f_hat(t)| = c^p |t|^p by least squares through the
/// origin, f_hat the empirical characteristic function of sample / bn.
inline double fit_stable_scale(const std::vector<double>& sample, double bn, double p,
                               const std::vector<double>& t_grid) {
    require(!sample.empty(), "scale fit needs a sample");
    require(bn > 0.0, "B_n must be positive");
    double sxy = 0.0, sxx = 0.0;
    for (double t : t_grid) {
        double re = 0.0, im = 0.0;
        for (double s : sample) {
            const double arg = t * s / bn;
            re += std::cos(arg);
            im += std::sin(arg);
        }
        const double count = static_cast<double>(sample.size());
        const double modulus = std::hypot(re, im) / count;
        if (!(modulus > 0.0 && modulus < 1.0)) continue;
        const double xval = std::pow(std::abs(t), p);
        sxy += xval * -std::log(modulus);
        sxx += xval * xval;
    }
    if (!(sxx > 0.0 && sxy > 0.0)) throw ConvergenceError("stable scale fit has no usable frequencies");
    return std::pow(sxy / sxx, 1.0 / p);
}

}  // namespace lltlab
