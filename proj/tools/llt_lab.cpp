// llt-lab: run local limit theorem experiments from JSON configs.

#include "lltlab/runner.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>

int main(int argc, char** argv) {
    using namespace lltlab;

    CLI::App app{"llt-lab: mixing, characteristic-function and local limit experiments"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::uint64_t seed = 0;
    bool assert_checks = false;
    unsigned threads = default_threads();

    for (const auto& kind : experiment_kinds()) {
        CLI::App* sub = app.add_subcommand(kind, "run a '" + kind + "' experiment");
        sub->add_option("--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed, "master seed, overrides the config");
        sub->add_flag("--assert", assert_checks, "exit 4 when a check fails");
        sub->add_option("--threads", threads, "worker threads (results do not depend on it)")
            ->check(CLI::Range(1u, 1024u));
    }

    std::string report_dir;
    CLI::App* report = app.add_subcommand("report", "summarize the manifests under a directory");
    report->add_option("dir", report_dir, "directory holding run outputs")->required();
    report->add_flag("--assert", assert_checks, "exit 4 when a run failed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    if (report->parsed()) {
        const ReportOutcome r = summarize_manifests(report_dir);
        std::cout << r.table;
        if (r.exit_code != kExitOk) {
            std::cerr << "no readable manifests under " << report_dir << '\n';
            return r.exit_code;
        }
        detail::write_text(fs::path(report_dir) / "report.json", r.summary.dump(2) + "\n");
        const bool all = r.summary["passed"] == r.summary["total"];
        return assert_checks && !all ? kExitAssert : kExitOk;
    }

    RunOptions options;
    for (const auto* sub : app.get_subcommands()) options.expected_kind = sub->get_name();
    if (!out_dir.empty()) options.out_dir = out_dir;
    if (app.get_subcommands().front()->count("--seed")) options.seed = seed;
    options.threads = threads;
    options.assert_checks = assert_checks;

    try {
        const RunOutcome outcome = run_config_file(config_path, options);
        (outcome.exit_code == kExitOk || outcome.exit_code == kExitAssert ? std::cout : std::cerr)
            << outcome.message << '\n';
        return outcome.exit_code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}
