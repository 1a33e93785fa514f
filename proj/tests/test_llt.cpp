#include "lltlab/llt.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace lltlab;

namespace {

ChainModel two_state() {
    return build_finite_chain({FiniteKernel::from_rows({{0.6, 0.4}, {0.4, 0.6}})});
}

Functional pm1() { return Functional::values({-1.0, 1.0}, Lattice{2.0, -1.0}); }

ChainModel lazy_walk() { return build_iid_finite({1.0 / 3, 1.0 / 3, 1.0 / 3}); }
Functional walk_steps() { return Functional::values({-1.0, 0.0, 1.0}, Lattice{1.0, 0.0}); }

}  // namespace

TEST(LLT, ZeroFunctionalIntervalProbabilities) {
    const auto batch = simulate_partial_sums(build_example1(), Functional::zero(), 10, 2000, 1);
    EXPECT_EQ(interval_prob(batch, -0.5, 0.5, 0.0).estimate, 1.0);
    EXPECT_EQ(interval_prob(batch, 0.5, 1.0, 0.0).estimate, 0.0);
    EXPECT_EQ(interval_prob(batch, -0.5, 0.5, 3.0).estimate, 0.0);
    EXPECT_EQ(interval_prob(batch, 0.0, 0.0, 0.0).stderr_, 0.0);
}

TEST(LLT, LatticeCount) {
    EXPECT_EQ(lattice_count(-0.5, 0.5, 1.0, 0.0), 1);
    EXPECT_EQ(lattice_count(0.0, 0.0, 1.0, 0.0), 1);
    EXPECT_EQ(lattice_count(0.1, 0.9, 1.0, 0.0), 0);
    EXPECT_EQ(lattice_count(-3.0, 3.0, 2.0, 1.0), 4);  // -3, -1, 1, 3
    EXPECT_EQ(lattice_count(-3.0, 3.0, 2.0, 0.0), 3);
    EXPECT_EQ(lattice_count(1.0, 0.0, 1.0, 0.0), 0);
}

TEST(LLT, SumLawMatchesConvolutionOracle) {
    const auto [lo, law] = integer_sum_law({-1, 0, 1}, {0.2, 0.5, 0.3}, 9);
    const auto ref = oracle::convolve_power({0.2, 0.5, 0.3}, 9);
    EXPECT_EQ(lo, -9);
    ASSERT_EQ(law.size(), ref.size());
    for (std::size_t i = 0; i < law.size(); ++i) EXPECT_NEAR(law[i], ref[i], 1e-15);
}

TEST(LLT, LazyWalkSmallNAgainstConvolution) {
    const std::size_t replicas = 100000;
    for (std::size_t n : {4u, 8u, 16u}) {
        SimulationOptions opts;
        opts.salt = n;
        const auto batch = simulate_partial_sums(lazy_walk(), walk_steps(), n, replicas, 5, opts);
        const auto law = oracle::convolve_power({1.0 / 3, 1.0 / 3, 1.0 / 3}, n);
        const double exact = law[n];
        const auto est = interval_prob(batch, 0.0, 0.0, 0.0, 1e-9);
        const double se = std::sqrt(exact * (1 - exact) / replicas);
        EXPECT_LT(std::abs(est.estimate - exact), 3.0 * se) << "n = " << n;
    }
}

TEST(LLT, ShiftGrids) {
    LLTExperiment e{.model = two_state(), .functional = pm1()};
    const auto plain = shift_grid(e);
    ASSERT_EQ(plain.size(), 41u);
    EXPECT_DOUBLE_EQ(plain.front(), -10.0);
    EXPECT_DOUBLE_EQ(plain[20], 0.0);
    e.lattice = true;
    e.shift_count = 5;
    const auto lat = shift_grid(e);
    EXPECT_LE(lat.size(), 5u);
    EXPECT_NE(std::find(lat.begin(), lat.end(), 0.0), lat.end());
    for (double u : lat) EXPECT_EQ(std::fmod(u, 2.0), 0.0);
}

TEST(LLT, Example1GaussianRegime) {
    LLTExperiment e{.model = build_example1(), .functional = Functional::shift(0.5)};
    e.ns = {64};
    e.replicas = 100000;
    e.normalizers = c_sqrt_n_schedule(std::sqrt(long_run_variance(e.model, e.functional)), e.ns);
    e.seed = 4;
    const LLTReport r = nonlattice_discrepancy(e);
    ASSERT_EQ(r.rows.size(), 1u);
    EXPECT_TRUE(r.pass()) << r.rows[0].sup_discrepancy;
    EXPECT_LT(r.rows[0].sup_discrepancy, 5.0 * r.rows[0].stderr_max + 0.02);
    EXPECT_THROW(lattice_discrepancy(e), ValidationError);
}

TEST(LLT, LazyWalkLattice) {
    LLTExperiment e{.model = lazy_walk(), .functional = walk_steps()};
    e.ns = {64, 256};
    e.replicas = 100000;
    e.normalizers = c_sqrt_n_schedule(std::sqrt(2.0 / 3.0), e.ns);
    e.c = e.d = 0.0;
    e.shift_bound = 0.0;
    e.shift_count = 1;
    e.lattice = true;
    e.tolerance = 0.05;
    e.seed = 6;
    const LLTReport r = lattice_discrepancy(e);
    EXPECT_TRUE(r.pass());
    for (const auto& row : r.rows) EXPECT_LT(row.sup_discrepancy, 4.0 * row.stderr_max + 0.01);
}

TEST(LLT, TwoStateLatticeWithOffset) {
    // S_n lives on 2Z for even n; the target counts the single point 0 with weight h = 2
    LLTExperiment e{.model = two_state(), .functional = pm1()};
    e.ns = {64};
    e.replicas = 100000;
    e.normalizers = c_sqrt_n_schedule(std::sqrt(1.5), e.ns);
    e.c = -0.5;
    e.d = 0.5;
    e.shift_bound = 6.0;
    e.shift_count = 7;
    e.lattice = true;
    e.tolerance = 0.05;
    e.seed = 10;
    const LLTReport r = lattice_discrepancy(e);
    EXPECT_TRUE(r.pass()) << r.rows[0].sup_discrepancy;
}

TEST(LLT, StableRegimeWithClosedFormScale) {
    const TailModel tail = TailModel::pareto(1.5);
    LLTExperiment e{.model = build_iid_tail(tail), .functional = Functional::identity()};
    e.ns = {256};
    e.replicas = 50000;
    e.normalizers = tail_solve_schedule(tail, e.ns);
    e.limit = StableLaw{1.5, pareto_stable_scale(1.5), 0.0};
    e.seed = 12;
    const LLTReport r = nonlattice_discrepancy(e);
    EXPECT_TRUE(r.pass()) << r.rows[0].sup_discrepancy;
}

TEST(LLT, ValidationRejectsMismatchedSchedules) {
    LLTExperiment e{.model = build_example1(), .functional = Functional::shift(0.5)};
    e.ns = {64, 128};
    e.normalizers = c_sqrt_n_schedule(0.5, {64});
    EXPECT_THROW(nonlattice_discrepancy(e), ValidationError);
    e.normalizers = c_sqrt_n_schedule(0.5, e.ns);
    e.replicas = 10;
    EXPECT_THROW(nonlattice_discrepancy(e), ValidationError);
}

TEST(LLT, PowerFitIsExactOnPowers) {
    std::vector<double> x, y;
    for (double v : {1.0, 2.0, 5.0, 11.0}) {
        x.push_back(v);
        y.push_back(3.0 * v * v);
    }
    const PowerFit fit = fit_power_law(x, y);
    EXPECT_TRUE(fit.valid);
    EXPECT_NEAR(fit.exponent, 2.0, 1e-12);
    EXPECT_NEAR(fit.coefficient, 3.0, 1e-11);
}

TEST(LLT, ConditionAOnTwoState) {
    const ChainModel m = two_state();
    const std::size_t n = 1024;
    const double bn = std::sqrt(1.5 * n);
    std::vector<double> u;
    for (int i = 0; i < 40; ++i) u.push_back(std::min(0.5 * bn, std::exp(std::log(0.5 * bn) * i / 39.0)));
    const auto curve = condition_A_probe(m, pm1(), n, bn, 0.5, u);
    EXPECT_TRUE(curve.verifiable);
    EXPECT_GE(curve.fit.exponent, 1.8);
    EXPECT_LE(curve.fit.exponent, 2.2);
    for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(curve.g_printed[i] * curve.a * curve.a, curve.g[i], 1e-14);
}

TEST(LLT, ConditionAOnZeroFunctional) {
    const auto curve = condition_A_probe(two_state(), Functional::values({0.0, 0.0}), 64, 8.0, 0.5, {1.0, 2.0, 4.0});
    for (double g : curve.g) EXPECT_EQ(g, 0.0);
    EXPECT_FALSE(curve.verifiable);
}

TEST(LLT, ConditionBOnTwoState) {
    const std::vector<std::size_t> ns{1024, 2048, 4096, 8192, 16384};
    const auto report = condition_B_probe(two_state(), pm1(), 1.0, 0.1, c_sqrt_n_schedule(std::sqrt(1.5), ns));
    ASSERT_EQ(report.rows.size(), ns.size());
    for (std::size_t i = 1; i < ns.size(); ++i) {
        EXPECT_TRUE(report.rows[i].exceeds_one) << "n = " << ns[i];
        EXPECT_GT(report.rows[i].min_value, report.rows[i - 1].min_value);
    }
}

TEST(LLT, WilsonInterval) {
    const auto w = wilson_interval(0, 100);
    EXPECT_EQ(w.lo, 0.0);
    EXPECT_GT(w.hi, 0.0);
    const auto v = wilson_interval(50, 100);
    EXPECT_LT(v.lo, 0.5);
    EXPECT_GT(v.hi, 0.5);
    EXPECT_NEAR(v.lo + v.hi, 1.0, 1e-14);
}

TEST(LLT, ClusteringDecaysForIndependentPareto) {
    const TailModel tail = TailModel::pareto(1.5);
    const auto schedule = tail_solve_schedule(tail, {100, 1000, 10000});
    const DJTable t = dj_clustering_check(build_iid_tail(tail), Functional::identity(), {1.0}, {2}, schedule,
                                          2000000, 99);
    EXPECT_TRUE(t.pass());
    ASSERT_EQ(t.rows.size(), 3u);
    // independence: the conditional law equals the unconditional one, P(|X| > B_n) = 1 / n
    const auto w = wilson_interval(t.rows[0].hits, t.rows[0].conditioning, 3.0);
    EXPECT_LE(w.lo, 0.01);
    EXPECT_GE(w.hi, 0.01);
}

TEST(LLT, ClusteringOfCopyChainIsOne) {
    const TailModel tail = TailModel::pareto(1.5);
    const auto schedule = tail_solve_schedule(tail, {100, 1000, 10000});
    const DJTable t =
        dj_clustering_check(build_copy_tail(tail), Functional::identity(), {1.0}, {2, 5}, schedule, 200000, 7);
    for (const auto& row : t.rows)
        if (row.conditioning > 0) EXPECT_EQ(row.estimate, 1.0);
    EXPECT_FALSE(t.pass());
}

TEST(LLT, ReportsSerialize) {
    LLTReport r;
    r.rows.push_back({128, 5.0, 0.02, 0.01, 1.0, 0.7, true});
    EXPECT_EQ(r.to_csv(), "n,B_n,sup_discrepancy,stderr_max,pass\n128,5,0.02,0.01,true\n");
    EXPECT_TRUE(r.to_json()["pass"].get<bool>());
}
