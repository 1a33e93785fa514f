// Acceptance run: one line per criterion, nonzero exit when any fails.

#include "lltlab/runner.hpp"
#include "oracles.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <sys/wait.h>

using namespace lltlab;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct ToolRun {
    int exit_code = -1;
    double seconds = 0.0;
    json manifest;
};

struct Setup {
    fs::path tool, configs, work;
};

ToolRun run_tool(const Setup& s, const std::string& name, unsigned threads) {
    const json config = json::parse(std::ifstream(s.configs / (name + ".json")));
    const fs::path out = s.work / ("t" + std::to_string(threads)) / name;
    fs::remove_all(out);
    const std::string cmd = s.tool.string() + " " + config.at("kind").get<std::string>() + " --config " +
                            (s.configs / (name + ".json")).string() + " --out " + out.string() +
                            " --threads " + std::to_string(threads) + " > " + (out.string() + ".log") + " 2>&1";
    fs::create_directories(out.parent_path());
    ToolRun r;
    const auto start = Clock::now();
    const int status = std::system(cmd.c_str());
    r.seconds = seconds_since(start);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    if (fs::exists(out / "manifest.json")) r.manifest = json::parse(std::ifstream(out / "manifest.json"));
    return r;
}

struct Line {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

int failures = 0;

void report(int id, Line& line, double seconds, double limit) {
    line.require(seconds < limit, "runtime");
    if (!line.pass) ++failures;
    std::printf("criterion %2d  %s  %.1fs (limit %.0fs) %s\n", id, line.pass ? "PASS" : "FAIL", seconds, limit,
                line.detail.str().c_str());
    std::fflush(stdout);
}

bool ran_ok(const ToolRun& r) { return r.exit_code == kExitOk && r.manifest.is_object(); }

ChainModel random_chain(std::size_t s, std::uint64_t seed) {
    ReplicaStream rng(seed, s, 0xacce);
    return build_finite_chain({FiniteKernel::from_rows(oracle::random_stochastic(s, rng))});
}

ChainModel two_state() { return build_finite_chain({FiniteKernel::from_rows({{0.6, 0.4}, {0.4, 0.6}})}); }

struct FiniteCase {
    std::string name;
    ChainModel model;
    Functional functional;
};

// every shipped config with a finite-state model and a functional
std::vector<FiniteCase> finite_cases(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<FiniteCase> out;
    for (const auto& path : files) {
        const json c = json::parse(std::ifstream(path));
        if (!c.contains("model") || !c.contains("functional")) continue;
        ModelSpec spec = read_model(ObjectReader(c["model"], "config.model"));
        if (!spec.model.is_finite()) continue;
        json resolved;
        Functional f = read_functional(ObjectReader(c["functional"], "config.functional"), resolved);
        out.push_back({path.stem().string(), std::move(spec.model), std::move(f)});
    }
    return out;
}

bool near_rel(double x, double target, double tol) { return std::abs(x / target - 1.0) <= tol; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    Setup s;
    app.add_option("--tool", s.tool, "llt-lab binary")->required()->check(CLI::ExistingFile);
    app.add_option("--configs", s.configs, "config directory")->required()->check(CLI::ExistingDirectory);
    app.add_option("--work", s.work, "scratch directory")->required();
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(s.work);

    std::map<std::string, ToolRun> runs;
    auto run = [&](const std::string& name) -> const ToolRun& {
        if (!runs.count(name)) runs[name] = run_tool(s, name, 1);
        return runs[name];
    };
    auto fmt = [](double v) {
        std::ostringstream o;
        o.precision(4);
        o << v;
        return o.str();
    };

    // 1: atom formulas against exhaustive event search
    {
        Line line;
        const auto start = Clock::now();
        double worst = 0.0;
        for (std::uint64_t i = 0; i < 20; ++i) {
            const ChainModel m = random_chain(2 + i % 3, 1000 + i);
            for (std::size_t k = 1; k <= 3; ++k) {
                const JointLaw j = joint_law(m, 1, k);
                const EventExtrema e = brute_force_extrema(j);
                worst = std::max({worst, std::abs(psi_prime(j) - e.inf_ratio), std::abs(psi_star(j) - e.sup_ratio),
                                  std::abs(phi(j) - e.phi_sup)});
            }
        }
        line.require(worst <= 1e-12, "atom vs brute force");
        line.detail << "max |atom - brute| = " << fmt(worst);
        report(1, line, seconds_since(start), 10);
    }

    // 2: inequality suite and two-state values
    {
        Line line;
        const auto start = Clock::now();
        const MixingReport ts = mixing_inequality_report(two_state(), 5);
        line.require(ts.all_pass, "two-state inequalities");
        line.require(std::abs(ts.psi_prime[0] - 0.8) <= 1e-12, "psi'_1 = 0.8");
        line.require(std::abs(ts.rho[0] - 0.2) <= 1e-9, "rho_1 = 0.2");
        line.require(std::abs(ts.phi[0] - 0.1) <= 1e-12, "phi_1 = 0.1");
        line.require(std::abs(ts.psi_prime[1] - 0.96) <= 1e-12, "psi'_2 = 0.96");
        const MixingReport ex3 = mixing_inequality_report(build_example3(20), 5);
        line.require(ex3.all_pass, "example 3 inequalities");
        double worst = std::max(ts.max_violation, ex3.max_violation);
        for (std::uint64_t i = 0; i < 20; ++i) {
            const MixingReport r = mixing_inequality_report(random_chain(3, 2000 + i), 5);
            line.require(r.all_pass, "random chain " + std::to_string(i));
            worst = std::max(worst, r.max_violation);
        }
        double secs = seconds_since(start);
        for (const char* name : {"two_state_mixing", "example3_mixing"}) {
            const ToolRun& r = run(name);
            secs += r.seconds;
            line.require(ran_ok(r) && r.manifest["summary"]["inequalities_pass"].get<bool>(), name);
        }
        line.detail << "psi'_1 " << fmt(ts.psi_prime[0]) << " rho_1 " << fmt(ts.rho[0]) << " phi_1 "
                    << fmt(ts.phi[0]) << " psi'_2 " << fmt(ts.psi_prime[1]) << " max slack " << fmt(worst);
        report(2, line, secs, 10);
    }

    // 3: factorization bound through the tool
    {
        Line line;
        double secs = 0.0;
        const std::map<std::string, std::vector<std::size_t>> expected_n{
            {"two_state_charfn", {16, 64, 256}}, {"example3_charfn", {64}}, {"iid_pm1_charfn", {5, 50}}};
        for (const auto& [name, ns] : expected_n) {
            const ToolRun& r = run(name);
            secs += r.seconds;
            if (!ran_ok(r)) {
                line.require(false, name + " run");
                continue;
            }
            const json& sm = r.manifest["summary"];
            const json& grid = r.manifest["config"]["parameters"]["grid"];
            line.require(grid["points"].get<int>() == 200, name + " grid");
            line.require(r.manifest["config"]["parameters"]["n"].get<std::vector<std::size_t>>() == ns, name + " n");
            const double v = sm["max_violation"].get<double>();
            line.require(v <= 1e-10, name + " violation");
            line.detail << name << " a=" << fmt(sm["a"].get<double>()) << " max=" << fmt(v) << "; ";
        }
        const auto a_of = [&](const char* n) { return runs[n].manifest["summary"]["a"].get<double>(); };
        line.require(std::abs(a_of("two_state_charfn") - 0.8) <= 1e-12, "two-state a");
        line.require(std::abs(a_of("example3_charfn") - 0.5) <= 1e-5, "example 3 a");
        line.require(a_of("iid_pm1_charfn") >= 1.0 - 1e-8, "iid a");
        report(3, line, secs, 30);
    }

    const std::vector<FiniteCase> cases = finite_cases(s.configs);

    // 4: lemma estimates on every finite config
    {
        Line line;
        const auto start = Clock::now();
        const auto grid = linspace(-kPi, kPi, 100);
        double w2 = -INFINITY, w3 = -INFINITY;
        for (const auto& c : cases)
            for (std::size_t k = 1; k <= 8; ++k) {
                const double v2 = lemma_estimate2_check(c.model, c.functional, k, grid);
                line.require(v2 <= 1e-10, c.name + " estimate2 k=" + std::to_string(k));
                w2 = std::max(w2, v2);
                if (k < 2) continue;
                const double v3 = lemma_estimate3_check(c.model, c.functional, k, grid);
                line.require(v3 <= 1e-10, c.name + " estimate3 k=" + std::to_string(k));
                w3 = std::max(w3, v3);
            }
        line.require(!cases.empty(), "no finite configs");
        line.detail << cases.size() << " configs, max estimate2 " << fmt(w2) << " estimate3 " << fmt(w3);
        report(4, line, seconds_since(start), 30);
    }

    // 5: variance sandwich
    {
        Line line;
        const auto start = Clock::now();
        for (const auto& c : cases) {
            const auto r = variance_ratio_check(c.model, c.functional, {10, 100, 1000});
            line.require(r.all_inside, c.name);
            for (const auto& row : r.rows)
                line.require(row.ratio >= r.lower - 1e-12 && row.ratio <= r.upper + 1e-12, c.name + " bounds");
        }
        const auto ts = variance_ratio_check(two_state(), Functional::values({-1.0, 1.0}), {100});
        const double ratio = ts.rows.at(0).ratio;
        line.require(ratio >= 1.45 && ratio <= 1.50, "two-state ratio at n=100");
        line.detail << cases.size() << " configs inside; two-state ratio(100) = " << fmt(ratio);
        report(5, line, seconds_since(start), 10);
    }

    // 6: stable density golden values and mass
    {
        Line line;
        const auto start = Clock::now();
        const double g = stable_density(StableLaw::standard_normal(), 0.0);
        const double c = stable_density(StableLaw::standard_cauchy(), 0.0);
        line.require(std::abs(g - 1.0 / std::sqrt(2.0 * kPi)) <= 1e-6, "gaussian h(0)");
        line.require(std::abs(c - 1.0 / kPi) <= 1e-6, "cauchy h(0)");
        double secs = seconds_since(start);
        line.detail << "|h(0) err| " << fmt(std::abs(g - 1.0 / std::sqrt(2.0 * kPi))) << ", "
                    << fmt(std::abs(c - 1.0 / kPi));
        for (const char* name : {"cauchy_density", "stable15_density", "gaussian_density"}) {
            const ToolRun& r = run(name);
            secs += r.seconds;
            if (!ran_ok(r)) {
                line.require(false, std::string(name) + " run");
                continue;
            }
            const double total = r.manifest["summary"]["mass"]["total"].get<double>();
            line.require(std::abs(total - 1.0) <= 1e-6, std::string(name) + " mass");
            line.detail << "; p=" << r.manifest["config"]["parameters"]["law"]["p"].get<double>()
                        << " |mass-1| " << fmt(std::abs(total - 1.0));
        }
        report(6, line, secs, 30);
    }

    // 7: normalizer solver
    {
        Line line;
        const auto start = Clock::now();
        const TailModel tail = TailModel::pareto(1.5);
        const double b = solve_normalizer(tail, 1000);
        line.require(near_rel(b, 100.0, 1e-10), "B_1000 = 100");
        double worst = 0.0;
        for (std::size_t n = 100; n <= 1000000; n *= 10)
            worst = std::max(worst, normalizer_residual(tail, n, solve_normalizer(tail, n)));
        line.require(worst <= 1e-10, "residual");
        double secs = seconds_since(start);
        const ToolRun& r = run("stable15_density");
        const double tool_residual = ran_ok(r) ? r.manifest["summary"]["normalizer_max_residual"].get<double>() : 1.0;
        line.require(tool_residual <= 1e-10, "stable15_density residual");
        line.detail << "B_1000 = " << std::setprecision(17) << b << " max residual " << fmt(worst) << " / "
                    << fmt(tool_residual);
        // density config already ran for criterion 6; only the solver counts here
        report(7, line, secs, 5);
    }

    auto llt_rows = [](const ToolRun& r) { return r.manifest["summary"]["llt"]["rows"]; };

    // 8: Gaussian regime
    {
        Line line;
        const ToolRun& r = run("example1_llt");
        if (ran_ok(r)) {
            const json& p = r.manifest["config"]["parameters"];
            line.require(p["n"] == json::array({512}) && p["replicas"] == 200000, "n, R");
            line.require(p["shift_count"] == 41 && p["shift_bound"].get<double>() == 10.0, "shifts");
            line.require(p["interval"] == json::array({-0.5, 0.5}), "interval");
            line.require(r.manifest["summary"]["normalizer_method"] == "c_sqrt_n", "normalizer");
            const json row = llt_rows(r).at(0);
            const double sup = row["sup_discrepancy"].get<double>();
            line.require(sup < 0.10, "sup");
            line.detail << "sup = " << fmt(sup) << " B_n = " << fmt(row["B_n"].get<double>());
        } else {
            line.require(false, "run");
        }
        report(8, line, r.seconds, 300);
    }

    // 9: lattice regime
    {
        Line line;
        const ToolRun& r = run("lazy_walk_llt");
        if (ran_ok(r)) {
            const json& p = r.manifest["config"]["parameters"];
            line.require(p["n"] == json::array({1024}) && p["lattice"] == true, "n, lattice");
            const json row = llt_rows(r).at(0);
            const double sup = row["sup_discrepancy"].get<double>();
            line.require(sup < 0.05, "sup");
            line.require(near_rel(row["B_n"].get<double>(), std::sqrt(2.0 * 1024 / 3.0), 1e-12), "B_n");
            const json& conv = r.manifest["summary"]["convolution_check"];
            line.require(conv.size() == 3, "convolution rows");
            for (const auto& c : conv) {
                const double gap = std::abs(c["estimate"].get<double>() - c["exact"].get<double>());
                line.require(c["n"].get<int>() <= 16 && gap <= 3.0 * c["stderr"].get<double>(),
                             "convolution n=" + std::to_string(c["n"].get<int>()));
            }
            line.detail << "|B_n P(S_n=0) - h(0)| = " << fmt(sup) << ", convolution n<=16 within 3 stderr";
        } else {
            line.require(false, "run");
        }
        report(9, line, r.seconds, 180);
    }

    // 10: stable regime and anti-clustering
    {
        Line line;
        const ToolRun& r = run("pareto_llt");
        const ToolRun& d = run("pareto_dj");
        if (ran_ok(r)) {
            const json& p = r.manifest["config"]["parameters"];
            line.require(p["n"] == json::array({4096}) && p["replicas"] == 200000, "n, R");
            line.require(p["limit"]["fit_scale"] == true, "fitted scale");
            const json row = llt_rows(r).at(0);
            line.require(near_rel(row["B_n"].get<double>(), std::pow(4096.0, 2.0 / 3.0), 1e-10), "B_n = n^(2/3)");
            const double sup = row["sup_discrepancy"].get<double>();
            line.require(sup < 0.10, "sup");
            line.detail << "sup = " << fmt(sup) << " fitted c = " << fmt(row["limit_scale"].get<double>());
        } else {
            line.require(false, "llt run");
        }
        if (ran_ok(d)) {
            const json& rows = d.manifest["summary"]["rows"];
            std::vector<double> est;
            std::vector<std::size_t> ns;
            for (const auto& row : rows) {
                est.push_back(row["estimate"].get<double>());
                ns.push_back(row["n"].get<std::size_t>());
            }
            line.require(ns == std::vector<std::size_t>{100, 1000, 10000}, "dj n");
            for (std::size_t i = 1; i < est.size(); ++i) line.require(est[i] <= est[i - 1], "dj monotone");
            line.require(!est.empty() && est.back() < est.front(), "dj decay");
            line.detail << "; DJ estimates";
            for (double e : est) line.detail << ' ' << fmt(e);
        } else {
            line.require(false, "dj run");
        }
        report(10, line, r.seconds + d.seconds, 600);
    }

    // 11: condition probes
    {
        Line line;
        const ToolRun& r = run("two_state_conditions");
        if (ran_ok(r)) {
            const json& sm = r.manifest["summary"];
            line.require(sm["B"]["u"].get<double>() == 1.0 && sm["B"]["eps"].get<double>() == 0.1, "u, eps");
            std::size_t checked = 0;
            double least = INFINITY;
            for (const auto& row : sm["B"]["rows"]) {
                if (row["n"].get<std::size_t>() < 2048) continue;
                ++checked;
                least = std::min(least, row["min_value"].get<double>());
                line.require(row["min_value"].get<double>() > 1.0, "B at n=" + std::to_string(row["n"].get<int>()));
            }
            line.require(checked >= 1, "B rows");
            const double e = sm["A"]["fit_exponent"].get<double>();
            line.require(e >= 1.8 && e <= 2.2, "A exponent");
            line.detail << "A exponent " << fmt(e) << ", least B minimum over n>=2048 " << fmt(least);
        } else {
            line.require(false, "run");
        }
        report(11, line, r.seconds, 60);
    }

    // 12: thread-count reproducibility over every config above
    {
        Line line;
        double secs = 0.0;
        std::size_t compared = 0;
        for (const auto& [name, single] : runs) {
            const ToolRun multi = run_tool(s, name, 8);
            secs += multi.seconds;
            const bool same = ran_ok(single) && ran_ok(multi) &&
                              single.manifest["artifacts"] == multi.manifest["artifacts"] &&
                              single.manifest["threads"] == 1 && multi.manifest["threads"] == 8;
            line.require(same, name);
            compared += same;
        }
        line.detail << compared << "/" << runs.size() << " configs with identical artifact digests";
        // no runtime bound; the limit only guards against a hang
        report(12, line, secs, 3000);
    }

    std::printf("%d of 12 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
