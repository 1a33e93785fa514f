#pragma once

#include "lltlab/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

namespace lltlab {

struct QuadratureResult {
    double value = 0.0;
    std::size_t panels = 0;  ///< Simpson panels (pairs of subintervals) used
    double last_change = 0.0;
};

/// Composite Simpson rule on `intervals` (rounded up to even) equal pieces.
template <typename F>
double composite_simpson(F&& f, double a, double b, std::size_t intervals) {
    if (!(b > a)) return 0.0;
    intervals = std::max<std::size_t>(2, intervals + (intervals % 2));
    const double h = (b - a) / static_cast<double>(intervals);
    double odd = 0.0, even = 0.0;
    for (std::size_t i = 1; i < intervals; ++i) {
        const double v = f(a + h * static_cast<double>(i));
        (i % 2 ? odd : even) += v;
    }
    return h / 3.0 * (f(a) + 4.0 * odd + 2.0 * even + f(b));
}

/// Composite Simpson with the step no larger than `max_step`.
template <typename F>
double simpson_with_step(F&& f, double a, double b, double max_step) {
    if (!(b > a)) return 0.0;
    const auto intervals = static_cast<std::size_t>(std::ceil((b - a) / max_step));
    return composite_simpson(f, a, b, intervals);
}

/// Composite Simpson with dyadic refinement: the panel count doubles until two
/// successive estimates agree to `rel_tol` (relative) or `abs_tol`. Previous
/// nodes are reused, so each refinement only evaluates the new midpoints.
/// Two consecutive agreements are required so that an oscillatory integrand
/// sampled at its zeros cannot stop the refinement early.
template <typename F>
QuadratureResult simpson_dyadic(F&& f, double a, double b, double rel_tol = 1e-6,
                                std::size_t max_panels = std::size_t{1} << 22,
                                std::size_t initial_panels = 16, double abs_tol = 1e-14) {
    QuadratureResult out;
    if (!(b > a)) return out;
    std::size_t n = std::max<std::size_t>(2, 2 * initial_panels);  // subintervals
    double h = (b - a) / static_cast<double>(n);
    double ends = f(a) + f(b);
    double interior_even = 0.0;  // nodes shared with the coarser grid
    double interior_odd = 0.0;   // midpoints added at this level
    for (std::size_t i = 1; i < n; ++i) {
        const double v = f(a + h * static_cast<double>(i));
        (i % 2 ? interior_odd : interior_even) += v;
    }
    double estimate = h / 3.0 * (ends + 4.0 * interior_odd + 2.0 * interior_even);
    int agreements = 0;
    while (true) {
        if (n / 2 >= max_panels)
            throw ConvergenceError("Simpson refinement hit the panel cap on [" + std::to_string(a) +
                                   ", " + std::to_string(b) + "]");
        interior_even += interior_odd;
        interior_odd = 0.0;
        n *= 2;
        h *= 0.5;
        for (std::size_t i = 1; i < n; i += 2) interior_odd += f(a + h * static_cast<double>(i));
        const double refined = h / 3.0 * (ends + 4.0 * interior_odd + 2.0 * interior_even);
        const double change = std::abs(refined - estimate);
        estimate = refined;
        agreements = change <= std::max(rel_tol * std::abs(refined), abs_tol) ? agreements + 1 : 0;
        if (agreements == 2) {
            out.value = refined;
            out.panels = n / 2;
            out.last_change = change;
            return out;
        }
    }
}

}  // namespace lltlab
