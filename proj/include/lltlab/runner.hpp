#pragma once

// Config-driven experiment runner shared by the llt-lab tool and the
// acceptance suite. One run writes its artifacts plus manifest.json into an
// output directory.

#include "lltlab/charfn.hpp"
#include "lltlab/config.hpp"
#include "lltlab/core.hpp"
#include "lltlab/digest.hpp"
#include "lltlab/kernel.hpp"
#include "lltlab/llt.hpp"
#include "lltlab/mixing.hpp"
#include "lltlab/stable.hpp"

#include "json.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace lltlab {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitValidation = 2, kExitConvergence = 3, kExitAssert = 4 };

struct RunOptions {
    std::optional<fs::path> out_dir;
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    bool assert_checks = false;
    std::optional<std::string> expected_kind;
};

struct RunOutcome {
    int exit_code = kExitOk;
    bool pass = false;
    fs::path out_dir;
    json manifest;
    std::string message;
};

class ArtifactWriter {
public:
    explicit ArtifactWriter(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

    void write(const std::string& name, const std::string& content) {
        const fs::path path = dir_ / name;
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write artifact " + path.string());
        out << content;
        out.close();
        entries_.push_back({{"file", name}, {"sha256", sha256_hex(content)}, {"bytes", content.size()}});
    }

    void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

    const json& entries() const noexcept { return entries_; }
    const fs::path& dir() const noexcept { return dir_; }

private:
    fs::path dir_;
    json entries_ = json::array();
};

namespace detail {

struct Context {
    ObjectReader& params;
    std::optional<ModelSpec>& model;
    std::optional<Functional>& functional;
    std::uint64_t seed;
    unsigned threads;
    ArtifactWriter& out;
};

struct Verdict {
    bool pass = true;
    json summary = json::object();
};

inline const ChainModel& need_model(Context& ctx) {
    if (!ctx.model) throw ValidationError("config.model: is required for this experiment kind");
    return ctx.model->model;
}

inline const Functional& need_functional(Context& ctx) {
    if (!ctx.functional) throw ValidationError("config.functional: is required for this experiment kind");
    return *ctx.functional;
}

inline std::vector<double> read_grid_param(Context& ctx, const std::string& key, double lo, double hi,
                                           std::int64_t points) {
    json resolved;
    std::vector<double> grid;
    if (ctx.params.has(key)) {
        grid = read_grid(ctx.params.child(key), resolved, lo, hi, points);
    } else {
        const json empty = json::object();
        grid = read_grid(ObjectReader(empty, ctx.params.field(key)), resolved, lo, hi, points);
    }
    ctx.params.resolved()[key] = resolved;
    return grid;
}

inline double model_scale(const ChainModel& model, const Functional& f) {
    return std::sqrt(long_run_variance(model, f));
}

// ---------------------------------------------------------------------------

inline Verdict run_simulate(Context& ctx) {
    const ChainModel& model = need_model(ctx);
    const Functional& f = need_functional(ctx);
    const std::size_t n = ctx.params.count("n", 1);
    const std::size_t replicas = ctx.params.count("replicas", 1);
    SimulationOptions opts;
    opts.threads = ctx.threads;
    opts.record_steps = ctx.params.counts("record_steps", 1, std::vector<std::size_t>{});
    ctx.params.finish();
    const TrajectoryBatch batch = simulate_partial_sums(model, f, n, replicas, ctx.seed, opts);
    double mean = 0.0;
    for (double s : batch.sums) mean += s;
    mean /= static_cast<double>(replicas);
    double var = 0.0;
    for (double s : batch.sums) var += (s - mean) * (s - mean);
    var = replicas > 1 ? var / static_cast<double>(replicas - 1) : 0.0;
    ctx.out.write("batch.csv", batch.to_csv());
    Verdict v;
    v.summary = {{"n", n},
                 {"replicas", replicas},
                 {"mean", mean},
                 {"variance", var},
                 {"variance_over_n", var / static_cast<double>(n)},
                 {"model_digest", batch.model_digest}};
    if (model.kind() == "example1") {
        v.summary["a_asserted"] = *model.lower_psi_floor();
        v.summary["a_binned_16"] = lazy_refresh_binned_floor(model, 16);
    }
    if (!batch.recorded_steps.empty()) {
        std::ostringstream inc;
        inc.precision(17);
        inc << "replica";
        for (std::size_t s : batch.recorded_steps) inc << ",x_" << s;
        inc << '\n';
        for (std::size_t r = 0; r < replicas; ++r) {
            inc << r;
            for (std::size_t i = 0; i < batch.recorded_steps.size(); ++i) inc << ',' << batch.increment(r, i);
            inc << '\n';
        }
        ctx.out.write("increments.csv", inc.str());
    }
    ctx.out.write_json("summary.json", v.summary);
    return v;
}

inline Verdict run_mixing(Context& ctx) {
    const ChainModel& model = need_model(ctx);
    const std::size_t max_lag = ctx.params.count("max_lag", 1, 5);
    const bool brute = ctx.params.boolean("brute_force", true);
    const auto variance_n = ctx.params.counts("variance_n", 1, std::vector<std::size_t>{10, 100, 1000});
    ctx.params.finish();

    const MixingReport report = mixing_inequality_report(model, max_lag);
    Verdict v;
    v.pass = report.all_pass;
    v.summary["a"] = report.a;
    v.summary["inequalities_pass"] = report.all_pass;
    v.summary["max_inequality_slack"] = report.max_violation;
    ctx.out.write("mixing.csv", report.to_csv());
    ctx.out.write_json("mixing.json", report.to_json());

    if (brute && model.finite().size() <= 12) {
        double worst = 0.0;
        for (std::size_t k = 1; k <= max_lag; ++k)
            for (std::size_t m = report.sweep_first; m <= report.sweep_last; ++m) {
                const JointLaw j = joint_law(model, m, k);
                const EventExtrema e = brute_force_extrema(j);
                worst = std::max({worst, std::abs(e.inf_ratio - psi_prime(j)), std::abs(e.sup_ratio - psi_star(j)),
                                  std::abs(e.phi_sup - phi(j))});
            }
        v.summary["brute_force_max_difference"] = worst;
        v.pass = v.pass && worst <= 1e-12;
    }
    if (ctx.functional) {
        const VarianceRatioReport vr = variance_ratio_check(model, *ctx.functional, variance_n);
        json rows = json::array();
        for (const auto& r : vr.rows)
            rows.push_back({{"n", r.n}, {"sigma2", r.sigma2}, {"tau2", r.tau2}, {"ratio", r.ratio}, {"inside", r.inside}});
        const json variance{{"a", vr.a}, {"lower", vr.lower}, {"upper", vr.upper}, {"rows", rows}, {"all_inside", vr.all_inside}};
        ctx.out.write_json("variance.json", variance);
        v.summary["variance"] = variance;
        v.pass = v.pass && vr.all_inside;
    }
    return v;
}

inline Verdict run_charfn_bound(Context& ctx) {
    const ChainModel& model = need_model(ctx);
    const Functional& f = need_functional(ctx);
    const auto ns = ctx.params.counts("n", 1, std::vector<std::size_t>{64});
    const auto grid = read_grid_param(ctx, "grid", -kPi, kPi, 200);
    const std::size_t lemma_steps = ctx.params.count("lemma_steps", 2, 8);
    const auto lemma_grid = read_grid_param(ctx, "lemma_grid", -kPi, kPi, 100);
    ctx.params.finish();

    Verdict v;
    json per_n = json::array();
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t n : ns) {
        const FactorizationCheck check = verify_factorization(model, f, n, grid);
        ctx.out.write("charfn_n" + std::to_string(n) + ".csv", check.curve.to_csv());
        per_n.push_back({{"n", n}, {"max_violation", check.max_violation}, {"pass", check.pass}});
        worst = std::max(worst, check.max_violation);
        v.pass = v.pass && check.pass;
    }
    double lemma2 = -std::numeric_limits<double>::infinity(), lemma3 = lemma2;
    for (std::size_t k = 1; k <= lemma_steps; ++k) {
        lemma2 = std::max(lemma2, lemma_estimate2_check(model, f, k, lemma_grid));
        if (k >= 2) lemma3 = std::max(lemma3, lemma_estimate3_check(model, f, k, lemma_grid));
    }
    v.pass = v.pass && lemma2 <= kBoundTolerance && lemma3 <= kBoundTolerance;
    v.summary = {{"a", bound_floor(model)},
                 {"factorization", per_n},
                 {"max_violation", worst},
                 {"lemma_estimate2_max_violation", lemma2},
                 {"lemma_estimate3_max_violation", lemma3},
                 {"lemma_steps", lemma_steps}};
    ctx.out.write_json("bound.json", v.summary);
    return v;
}

inline Verdict run_stable_density(Context& ctx) {
    ObjectReader lr = ctx.params.child("law");
    const StableLaw law = read_stable(lr);
    lr.finish();
    ctx.params.adopt("law", lr);
    const auto grid = read_grid_param(ctx, "grid", -10.0, 10.0, 401);
    const bool mass = ctx.params.boolean("mass", true);
    std::optional<TailModel> tail;
    std::vector<std::size_t> normalizer_n;
    if (ctx.params.has("normalizer")) {
        ObjectReader nr = ctx.params.child("normalizer");
        tail = read_tail(nr.child("tail"));
        nr.resolved()["tail"] = tail_resolved(*tail);
        normalizer_n = nr.counts("n", 1);
        nr.finish();
        ctx.params.adopt("normalizer", nr);
    }
    ctx.params.finish();

    Verdict v;
    const DensityCurve curve = tabulate_density(law, grid, ctx.threads);
    ctx.out.write("density.csv", curve.to_csv());
    v.summary["law"] = law.to_json();
    v.summary["grid_minimum"] = curve.minimum();
    v.pass = curve.minimum() >= -1e-9;
    if (mass) {
        const DensityMass m = density_mass(law, 0.0, 0.01, ctx.threads);
        v.summary["mass"] = {{"inner", m.inner}, {"tail", m.tail}, {"total", m.total},
                             {"half_width", m.half_width}, {"minimum", m.minimum}};
        v.pass = v.pass && std::abs(m.total - 1.0) <= 1e-6 && m.minimum >= -1e-9;
    }
    if (tail) {
        const NormalizerSchedule s = tail_solve_schedule(*tail, normalizer_n);
        ctx.out.write("normalizers.csv", s.to_csv());
        double worst = 0.0;
        for (std::size_t i = 0; i < s.n.size(); ++i) worst = std::max(worst, normalizer_residual(*tail, s.n[i], s.bn[i]));
        v.summary["normalizer_max_residual"] = worst;
        v.summary["normalizer_increasing"] = s.strictly_increasing();
        v.pass = v.pass && worst <= 1e-10 && s.strictly_increasing();
    }
    ctx.out.write_json("density.json", v.summary);
    return v;
}

inline Verdict run_llt(Context& ctx) {
    const ChainModel& model = need_model(ctx);
    const Functional& f = need_functional(ctx);
    LLTExperiment e{.model = model, .functional = f};
    e.seed = ctx.seed;
    e.threads = ctx.threads;
    e.ns = ctx.params.counts("n", 1);
    e.replicas = ctx.params.count("replicas", 1000, 200000);
    const auto interval = ctx.params.numbers("interval", std::vector<double>{-0.5, 0.5});
    if (interval.size() != 2 || interval[0] > interval[1])
        ctx.params.fail("interval", "must be [c, d] with c <= d");
    e.c = interval[0];
    e.d = interval[1];
    e.shift_bound = ctx.params.number("shift_bound", 10.0);
    e.shift_count = ctx.params.count("shift_count", 1, 41);
    e.lattice = ctx.params.boolean("lattice", false);
    e.tolerance = ctx.params.number("tolerance", 0.10);
    if (e.lattice && !f.lattice()) ctx.params.fail("lattice", "the functional declares no lattice");

    ObjectReader lr = ctx.params.child("limit");
    e.limit = read_stable(lr);
    if (e.limit.p < 1.0) lr.fail("p", "LLT experiments need p >= 1; no centering is defined below 1");
    e.fit_scale = lr.boolean("fit_scale", false);
    lr.finish();
    ctx.params.adopt("limit", lr);
    if (e.fit_scale) e.fit_grid = read_grid_param(ctx, "fit_grid", 0.05, 0.8, 16);

    ObjectReader nr = ctx.params.child("normalizer");
    const std::string method_name = nr.choice("method", {"tail_solve", "variance", "c_sqrt_n", "mean_abs"});
    const NormalizerMethod method = normalizer_method_from_string(method_name);
    const bool gaussian = e.limit.p == 2.0;
    if (gaussian && method == NormalizerMethod::tail_solve)
        nr.fail("method", "Gaussian limits take variance, c_sqrt_n or mean_abs");
    if (!gaussian && method != NormalizerMethod::tail_solve)
        nr.fail("method", "stable limits with p < 2 require tail_solve");

    std::optional<std::vector<TrajectoryBatch>> batches;
    if (method == NormalizerMethod::tail_solve) {
        std::optional<TailModel> tail;
        if (nr.has("tail")) {
            tail = read_tail(nr.child("tail"));
            nr.resolved()["tail"] = tail_resolved(*tail);
        } else if (ctx.model->tail) {
            tail = ctx.model->tail;
        } else {
            nr.fail("tail", "is required when the model has no tail");
        }
        if (tail->p == 1.0 && !tail->symmetric()) nr.fail("tail", "p = 1 requires a symmetric tail (c_plus = 0.5)");
        e.normalizers = tail_solve_schedule(*tail, e.ns);
    } else if (method == NormalizerMethod::c_sqrt_n) {
        const double c = nr.has("c") ? nr.number("c") : model_scale(model, f);
        if (!(c > 0.0)) nr.fail("c", "must be positive");
        nr.resolved()["c"] = c;
        e.normalizers = c_sqrt_n_schedule(c, e.ns);
    } else {
        batches.emplace();
        for (std::size_t n : e.ns) {
            SimulationOptions opts;
            opts.threads = ctx.threads;
            opts.salt = n;
            batches->push_back(simulate_partial_sums(model, f, n, e.replicas, ctx.seed, opts));
        }
        e.normalizers = empirical_schedule(method, *batches);
    }
    nr.finish();
    ctx.params.adopt("normalizer", nr);

    std::optional<ObjectReader> conv;
    std::vector<std::size_t> conv_n;
    std::size_t conv_replicas = 0;
    if (ctx.params.has("convolution_check")) {
        conv.emplace(ctx.params.child("convolution_check"));
        conv_n = conv->counts("n", 1);
        conv_replicas = conv->count("replicas", 1000, 100000);
        conv->finish();
        ctx.params.adopt("convolution_check", *conv);
    }
    ctx.params.finish();

    std::function<std::optional<TrajectoryBatch>(std::size_t)> provided;
    if (batches)
        provided = [&](std::size_t n) -> std::optional<TrajectoryBatch> {
            for (auto& b : *batches)
                if (b.n == n) return b;
            return std::nullopt;
        };
    if (e.lattice) {
        const Lattice& lat = *f.lattice();
        for (double u : shift_grid(e))
            require(std::abs(u / lat.span - std::round(u / lat.span)) <= 1e-9, "lattice shift off the lattice");
    }
    const LLTReport report = detail::run_llt(e, provided);
    ctx.out.write("normalizers.csv", e.normalizers.to_csv());
    ctx.out.write("llt.csv", report.to_csv());
    ctx.out.write_json("llt.json", report.to_json());
    Verdict v;
    v.pass = report.pass();
    v.summary["llt"] = report.to_json();
    v.summary["llt"].erase("shifts");
    v.summary["normalizer_method"] = method_name;

    if (conv) {
        const FiniteChain& chain = model.finite();
        if (!chain.homogeneous() || chain.kernels[0].matrix().rows() == 0)
            throw ValidationError("config.parameters.convolution_check: needs an i.i.d. finite model");
        for (std::size_t x = 0; x < chain.size(); ++x)
            for (std::size_t y = 0; y < chain.size(); ++y)
                if (chain.kernels[0](x, y) != chain.initial[y])
                    throw ValidationError("config.parameters.convolution_check: needs an i.i.d. finite model");
        std::vector<std::int64_t> values;
        for (double g : f.table(1)) {
            if (g != std::round(g))
                throw ValidationError("config.parameters.convolution_check: needs integer-valued functional");
            values.push_back(static_cast<std::int64_t>(g));
        }
        json rows = json::array();
        bool ok = true;
        for (std::size_t n : conv_n) {
            const auto [lo, law] = integer_sum_law(values, chain.initial, n);
            double exact = 0.0;
            for (std::size_t i = 0; i < law.size(); ++i) {
                const double s = static_cast<double>(lo + static_cast<std::int64_t>(i));
                if (s >= e.c - 1e-9 && s <= e.d + 1e-9) exact += law[i];
            }
            SimulationOptions opts;
            opts.threads = ctx.threads;
            opts.salt = 0xC0117 + n;
            const TrajectoryBatch b = simulate_partial_sums(model, f, n, conv_replicas, ctx.seed, opts);
            const IntervalEstimate est = interval_prob(b, e.c, e.d, 0.0, 1e-9);
            const double se = std::sqrt(exact * (1.0 - exact) / static_cast<double>(conv_replicas));
            const bool inside = std::abs(est.estimate - exact) <= 3.0 * se;
            ok = ok && inside;
            rows.push_back({{"n", n}, {"exact", exact}, {"estimate", est.estimate}, {"stderr", se}, {"within_3_stderr", inside}});
        }
        ctx.out.write_json("convolution.json", rows);
        v.summary["convolution_check"] = rows;
        v.pass = v.pass && ok;
    }
    return v;
}

inline Verdict run_dj_check(Context& ctx) {
    const ChainModel& model = need_model(ctx);
    const Functional& f = need_functional(ctx);
    const auto xs = ctx.params.numbers("x", std::vector<double>{1.0});
    const auto ks = ctx.params.counts("k", 2, std::vector<std::size_t>{2});
    const auto ns = ctx.params.counts("n", 1, std::vector<std::size_t>{100, 1000, 10000});
    const std::size_t replicas = ctx.params.count("replicas", 1, 10000000);
    const std::size_t min_conditioning = ctx.params.count("min_conditioning", 1, 30);
    std::optional<TailModel> tail;
    if (ctx.params.has("tail")) {
        tail = read_tail(ctx.params.child("tail"));
        ctx.params.resolved()["tail"] = tail_resolved(*tail);
    } else if (ctx.model->tail) {
        tail = ctx.model->tail;
    } else {
        ctx.params.fail("tail", "is required when the model has no tail");
    }
    ctx.params.finish();
    const NormalizerSchedule schedule = tail_solve_schedule(*tail, ns);
    const DJTable table = dj_clustering_check(model, f, xs, ks, schedule, replicas, ctx.seed, ctx.threads, min_conditioning);
    ctx.out.write("dj.csv", table.to_csv());
    Verdict v;
    v.pass = table.pass();
    json rows = json::array();
    for (const auto& r : table.rows)
        rows.push_back({{"x", r.x}, {"k", r.k}, {"n", r.n}, {"B_n", r.bn}, {"conditioning", r.conditioning},
                        {"hits", r.hits}, {"estimate", r.estimate}, {"wilson", {r.interval.lo, r.interval.hi}},
                        {"sufficient", r.sufficient}});
    v.summary = {{"rows", rows}, {"monotone", table.monotone}, {"decaying", table.decaying}};
    ctx.out.write_json("dj.json", v.summary);
    return v;
}

inline Verdict run_conditions(Context& ctx) {
    const ChainModel& model = need_model(ctx);
    const Functional& f = need_functional(ctx);
    const double scale = ctx.params.has("c") ? ctx.params.number("c") : model_scale(model, f);
    ctx.params.resolved()["c"] = scale;

    ObjectReader ar = ctx.params.child("A");
    const std::size_t a_n = ar.count("n", 1, 1024);
    const double delta = ar.number("delta", 0.5);
    const std::size_t points = ar.count("points", 2, 40);
    ar.finish();
    ctx.params.adopt("A", ar);

    ObjectReader br = ctx.params.child("B");
    const double u = br.number("u", 1.0);
    const double eps = br.number("eps", 0.1);
    const auto b_n = br.counts("n", 2, std::vector<std::size_t>{1024, 2048, 4096, 8192, 16384});
    const std::size_t window = br.count("window_points", 2, 41);
    const std::size_t from_n = br.count("from_n", 1, 2048);
    br.finish();
    ctx.params.adopt("B", br);
    const auto range = ctx.params.numbers("exponent_range", std::vector<double>{1.8, 2.2});
    if (range.size() != 2 || range[0] > range[1]) ctx.params.fail("exponent_range", "must be [lo, hi]");
    ctx.params.finish();

    Verdict v;
    const double bn = scale * std::sqrt(static_cast<double>(a_n));
    if (!(delta * bn > 1.0)) throw ValidationError("config.parameters.A.delta: delta B_n must exceed 1");
    std::vector<double> grid(points);
    for (std::size_t i = 0; i < points; ++i)
        grid[i] = std::exp(std::log(delta * bn) * static_cast<double>(i) / static_cast<double>(points - 1));
    const ConditionACurve a_curve = condition_A_probe(model, f, a_n, bn, delta, grid);
    ctx.out.write("condition_a.csv", a_curve.to_csv());
    const bool a_ok = a_curve.verifiable && a_curve.fit.exponent >= range[0] && a_curve.fit.exponent <= range[1];

    const NormalizerSchedule schedule = c_sqrt_n_schedule(scale, b_n);
    const ConditionBReport b_report = condition_B_probe(model, f, u, eps, schedule, window);
    ctx.out.write("condition_b.csv", b_report.to_csv());
    bool b_ok = true;
    for (const auto& r : b_report.rows)
        if (r.n >= from_n) b_ok = b_ok && r.exceeds_one;

    v.pass = a_ok && b_ok;
    v.summary = {{"a", a_curve.a},
                 {"A", {{"n", a_n}, {"B_n", bn}, {"verifiable", a_curve.verifiable},
                        {"fit_coefficient", a_curve.fit.coefficient}, {"fit_exponent", a_curve.fit.exponent},
                        {"pass", a_ok}}},
                 {"B", {{"u", u}, {"eps", eps}, {"pass", b_ok}}}};
    json rows = json::array();
    for (const auto& r : b_report.rows)
        rows.push_back({{"n", r.n}, {"B_n", r.bn}, {"min_value", r.min_value},
                        {"min_value_printed", r.min_value_printed}, {"exceeds_one", r.exceeds_one}});
    v.summary["B"]["rows"] = rows;
    ctx.out.write_json("conditions.json", v.summary);
    return v;
}

inline void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

}  // namespace detail

/// Runs one experiment document. Validation problems map to exit 2,
/// non-convergence to 3, failed checks to 4 when `assert_checks` is set.
inline RunOutcome run_experiment(const json& config, const RunOptions& options) {
    RunOutcome outcome;
    try {
        ObjectReader root(config, "config");
        const std::int64_t version = root.integer("schema_version");
        if (version != kSchemaVersion) root.fail("schema_version", "unsupported version " + std::to_string(version));
        const std::string kind = root.choice("kind", experiment_kinds());
        if (options.expected_kind && *options.expected_kind != kind)
            root.fail("kind", "is '" + kind + "' but the subcommand is '" + *options.expected_kind + "'");
        std::uint64_t seed = root.seed("seed", 0);
        if (options.seed) {
            seed = *options.seed;
            root.resolved()["seed"] = seed;
        }
        std::optional<std::string> output;
        if (root.has("output")) output = root.string("output");

        std::optional<ModelSpec> model;
        if (root.has("model")) {
            model = read_model(root.child("model"));
            root.resolved()["model"] = model->resolved;
        }
        std::optional<Functional> functional;
        if (root.has("functional")) {
            json resolved;
            functional = read_functional(root.child("functional"), resolved);
            root.resolved()["functional"] = resolved;
            if (model) at_path("config.functional", [&] {
                functional->check_compatible(model->model);
                return 0;
            });
        }
        const json empty = json::object();
        ObjectReader params = root.has("parameters") ? root.child("parameters") : ObjectReader(empty, "config.parameters");
        root.finish();

        outcome.out_dir = options.out_dir ? *options.out_dir : fs::path(output ? *output : "runs/" + kind);
        // stale artifacts from an earlier run would be mixed into the manifest
        if (fs::exists(outcome.out_dir / "manifest.json")) fs::remove(outcome.out_dir / "manifest.json");
        ArtifactWriter writer(outcome.out_dir);
        detail::Context ctx{params, model, functional, seed, std::max(1u, options.threads), writer};
        detail::Verdict verdict;
        if (kind == "simulate") verdict = detail::run_simulate(ctx);
        else if (kind == "mixing") verdict = detail::run_mixing(ctx);
        else if (kind == "charfn-bound") verdict = detail::run_charfn_bound(ctx);
        else if (kind == "stable-density") verdict = detail::run_stable_density(ctx);
        else if (kind == "llt") verdict = detail::run_llt(ctx);
        else if (kind == "dj-check") verdict = detail::run_dj_check(ctx);
        else verdict = detail::run_conditions(ctx);
        root.resolved()["parameters"] = params.resolved();

        outcome.pass = verdict.pass;
        outcome.exit_code = (options.assert_checks && !verdict.pass) ? kExitAssert : kExitOk;
        json artifacts = writer.entries();
        artifacts.push_back({{"file", "resolved_config.json"}, {"sha256", sha256_hex(root.resolved().dump(2) + "\n")}});
        detail::write_text(outcome.out_dir / "resolved_config.json", root.resolved().dump(2) + "\n");
        outcome.manifest = {{"tool", "llt-lab"},
                            {"schema_version", kSchemaVersion},
                            {"kind", kind},
                            {"config", root.resolved()},
                            {"artifacts", artifacts},
                            {"summary", verdict.summary},
                            {"pass", verdict.pass},
                            {"assert", options.assert_checks},
                            {"threads", ctx.threads},
                            {"exit_code", outcome.exit_code}};
        detail::write_text(outcome.out_dir / "manifest.json", outcome.manifest.dump(2) + "\n");
        outcome.message = kind + ": " + (verdict.pass ? "pass" : "FAIL") + " (" + outcome.out_dir.string() + ")";
    } catch (const ValidationError& e) {
        outcome.exit_code = kExitValidation;
        outcome.message = std::string("validation error: ") + e.what();
    } catch (const json::exception& e) {
        outcome.exit_code = kExitValidation;
        outcome.message = std::string("validation error: ") + e.what();
    } catch (const ConvergenceError& e) {
        outcome.exit_code = kExitConvergence;
        outcome.message = std::string("numeric non-convergence: ") + e.what();
    }
    return outcome;
}

inline RunOutcome run_config_file(const std::string& path, const RunOptions& options) {
    try {
        return run_experiment(load_json_file(path), options);
    } catch (const ValidationError& e) {
        return {kExitValidation, false, {}, {}, std::string("validation error: ") + e.what()};
    }
}

// ---------------------------------------------------------------------------
// Consolidated report
// ---------------------------------------------------------------------------

struct ReportOutcome {
    int exit_code = kExitOk;
    json summary;
    std::string table;
};

inline ReportOutcome summarize_manifests(const fs::path& dir) {
    ReportOutcome out;
    json runs = json::array(), unreadable = json::array();
    std::vector<fs::path> manifests;
    if (fs::is_directory(dir))
        for (const auto& entry : fs::recursive_directory_iterator(dir))
            if (entry.is_regular_file() && entry.path().filename() == "manifest.json") manifests.push_back(entry.path());
    std::sort(manifests.begin(), manifests.end());
    std::size_t passed = 0;
    std::ostringstream table;
    table << std::left << std::setw(16) << "kind" << std::setw(6) << "pass" << "directory\n";
    for (const auto& path : manifests) {
        try {
            std::ifstream in(path);
            const json m = json::parse(in);
            const bool pass = m.at("pass").get<bool>();
            const std::string kind = m.at("kind").get<std::string>();
            passed += pass ? 1 : 0;
            const std::string where = fs::relative(path.parent_path(), dir).string();
            runs.push_back({{"kind", kind}, {"pass", pass}, {"directory", where}});
            table << std::setw(16) << kind << std::setw(6) << (pass ? "yes" : "no") << where << '\n';
        } catch (const std::exception& e) {
            unreadable.push_back({{"manifest", path.string()}, {"error", e.what()}});
        }
    }
    out.summary = {{"runs", runs}, {"unreadable", unreadable}, {"passed", passed}, {"total", runs.size()}};
    for (const auto& u : unreadable)
        table << "unreadable: " << u["manifest"].get<std::string>() << " (" << u["error"].get<std::string>() << ")\n";
    table << passed << '/' << runs.size() << " pass\n";
    out.table = table.str();
    out.exit_code = runs.empty() ? kExitValidation : kExitOk;
    return out;
}

}  // namespace lltlab
