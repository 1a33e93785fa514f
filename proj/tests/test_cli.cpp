#include "lltlab/runner.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

using namespace lltlab;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("lltlab_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

json two_state_mixing() {
    return json::parse(R"({
      "schema_version": 1, "kind": "mixing", "seed": 1,
      "model": {"kind": "finite", "kernels": [[[0.6, 0.4], [0.4, 0.6]]]},
      "functional": {"kind": "table", "values": [-1, 1]},
      "parameters": {"max_lag": 3, "variance_n": [10, 100]}
    })");
}

json small_llt() {
    return json::parse(R"({
      "schema_version": 1, "kind": "llt", "seed": 3,
      "model": {"kind": "example1"},
      "functional": {"kind": "shift", "shift": 0.5},
      "parameters": {"n": [32], "replicas": 20000, "normalizer": {"method": "c_sqrt_n"}, "limit": {"p": 2.0}}
    })");
}

RunOptions into(const fs::path& dir) {
    RunOptions o;
    o.out_dir = dir;
    return o;
}

int run_tool(const std::string& args) {
    const std::string cmd = std::string(LLTLAB_TOOL) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

}  // namespace

TEST(Cli, MixingRunWritesLagTable) {
    const fs::path dir = scratch("mixing");
    const RunOutcome r = run_experiment(two_state_mixing(), into(dir));
    EXPECT_EQ(r.exit_code, kExitOk) << r.message;
    EXPECT_TRUE(r.pass);
    std::ifstream csv(dir / "mixing.csv");
    std::string header;
    std::getline(csv, header);
    EXPECT_EQ(header.rfind("lag,psi_prime", 0), 0u);
    const json manifest = json::parse(std::ifstream(dir / "manifest.json"));
    EXPECT_EQ(manifest["kind"], "mixing");
    EXPECT_TRUE(manifest["pass"].get<bool>());
    for (const auto& a : manifest["artifacts"]) EXPECT_EQ(a["sha256"].get<std::string>().size(), 64u);
}

TEST(Cli, NegativeReplicasReportFieldPath) {
    json c = small_llt();
    c["parameters"]["replicas"] = -5;
    const RunOutcome r = run_experiment(c, into(scratch("negative")));
    EXPECT_EQ(r.exit_code, kExitValidation);
    EXPECT_NE(r.message.find("config.parameters.replicas"), std::string::npos) << r.message;
}

TEST(Cli, UnknownFieldsAreRejected) {
    json c = two_state_mixing();
    c["parameters"]["max_lags"] = 3;
    const RunOutcome r = run_experiment(c, into(scratch("unknown")));
    EXPECT_EQ(r.exit_code, kExitValidation);
    EXPECT_NE(r.message.find("config.parameters.max_lags"), std::string::npos) << r.message;
}

TEST(Cli, ModelErrorsReportFieldPath) {
    json c = two_state_mixing();
    c["model"]["kernels"] = json::parse("[[[0.6, 0.5], [0.4, 0.6]]]");
    const RunOutcome r = run_experiment(c, into(scratch("rows")));
    EXPECT_EQ(r.exit_code, kExitValidation);
    EXPECT_NE(r.message.find("config.model"), std::string::npos) << r.message;
}

TEST(Cli, StableIndexBelowOneIsRejected) {
    json c = small_llt();
    c["model"] = json::parse(R"({"kind": "iid_tail", "tail": {"p": 0.8}})");
    c["functional"] = json::parse(R"({"kind": "identity"})");
    c["parameters"]["limit"] = json::parse(R"({"p": 0.8})");
    c["parameters"]["normalizer"] = json::parse(R"({"method": "tail_solve"})");
    const RunOutcome r = run_experiment(c, into(scratch("below_one")));
    EXPECT_EQ(r.exit_code, kExitValidation);
    EXPECT_NE(r.message.find("config.parameters.limit.p"), std::string::npos) << r.message;
}

TEST(Cli, WrongSchemaVersion) {
    json c = two_state_mixing();
    c["schema_version"] = 7;
    EXPECT_EQ(run_experiment(c, into(scratch("schema"))).exit_code, kExitValidation);
}

TEST(Cli, KindMustMatchSubcommand) {
    RunOptions o = into(scratch("kind"));
    o.expected_kind = "llt";
    EXPECT_EQ(run_experiment(two_state_mixing(), o).exit_code, kExitValidation);
}

TEST(Cli, ResolvedConfigRecordsDefaults) {
    const fs::path dir = scratch("resolved");
    const RunOutcome r = run_experiment(small_llt(), into(dir));
    ASSERT_EQ(r.exit_code, kExitOk) << r.message;
    const json resolved = json::parse(std::ifstream(dir / "resolved_config.json"));
    EXPECT_EQ(resolved["parameters"]["interval"], json::parse("[-0.5, 0.5]"));
    EXPECT_TRUE(resolved["parameters"].contains("shift_count"));
}

TEST(Cli, SeedOverrideChangesArtifacts) {
    const fs::path a = scratch("seed_a"), b = scratch("seed_b");
    RunOptions oa = into(a), ob = into(b);
    ob.seed = 99;
    run_experiment(small_llt(), oa);
    run_experiment(small_llt(), ob);
    const json ma = json::parse(std::ifstream(a / "manifest.json"));
    const json mb = json::parse(std::ifstream(b / "manifest.json"));
    EXPECT_EQ(mb["config"]["seed"], 99);
    EXPECT_NE(ma["artifacts"], mb["artifacts"]);
}

TEST(Cli, ThreadCountDoesNotChangeArtifacts) {
    const fs::path a = scratch("threads_1"), b = scratch("threads_4");
    RunOptions oa = into(a), ob = into(b);
    ob.threads = 4;
    run_experiment(small_llt(), oa);
    run_experiment(small_llt(), ob);
    const json ma = json::parse(std::ifstream(a / "manifest.json"));
    const json mb = json::parse(std::ifstream(b / "manifest.json"));
    EXPECT_EQ(ma["artifacts"], mb["artifacts"]);
}

TEST(Cli, AssertTurnsFailureIntoExitFour) {
    json c = json::parse(R"({
      "schema_version": 1, "kind": "dj-check", "seed": 2,
      "model": {"kind": "copy_tail", "tail": {"p": 1.5}},
      "functional": {"kind": "identity"},
      "parameters": {"x": [1.0], "k": [2], "n": [100, 1000], "replicas": 20000}
    })");
    RunOptions o = into(scratch("assert"));
    EXPECT_EQ(run_experiment(c, o).exit_code, kExitOk);
    o.assert_checks = true;
    const RunOutcome r = run_experiment(c, o);
    EXPECT_EQ(r.exit_code, kExitAssert);
    EXPECT_FALSE(r.pass);
}

TEST(Cli, ReportOnEmptyDirectory) {
    EXPECT_EQ(summarize_manifests(scratch("empty")).exit_code, kExitValidation);
    EXPECT_EQ(summarize_manifests(fs::temp_directory_path() / "lltlab_cli_missing_dir").exit_code, kExitValidation);
}

TEST(Cli, ReportCountsPasses) {
    const fs::path root = scratch("report");
    for (int i = 0; i < 3; ++i) run_experiment(two_state_mixing(), into(root / ("run" + std::to_string(i))));
    const ReportOutcome all = summarize_manifests(root);
    EXPECT_EQ(all.exit_code, kExitOk);
    EXPECT_NE(all.table.find("3/3 pass"), std::string::npos) << all.table;

    json failing = json::parse(R"({
      "schema_version": 1, "kind": "dj-check", "seed": 2,
      "model": {"kind": "copy_tail", "tail": {"p": 1.5}},
      "functional": {"kind": "identity"},
      "parameters": {"x": [1.0], "k": [2], "n": [100, 1000], "replicas": 20000}
    })");
    run_experiment(failing, into(root / "run3"));
    const ReportOutcome mixed = summarize_manifests(root);
    EXPECT_EQ(mixed.summary["passed"], 3);
    EXPECT_EQ(mixed.summary["total"], 4);
    EXPECT_NE(mixed.table.find("dj-check        no"), std::string::npos) << mixed.table;
    EXPECT_NE(mixed.table.find("3/4 pass"), std::string::npos);
}

TEST(Cli, ToolExitCodes) {
    const fs::path dir = scratch("tool");
    const std::string configs = LLTLAB_CONFIGS;
    EXPECT_EQ(run_tool("mixing --config " + configs + "/two_state_mixing.json --out " + (dir / "mix").string()), 0);
    EXPECT_TRUE(fs::exists(dir / "mix" / "mixing.csv"));
    EXPECT_EQ(run_tool("charfn-bound --config " + configs + "/example3_charfn.json --assert --out " +
                       (dir / "bound").string()),
              0);
    const json bound = json::parse(std::ifstream(dir / "bound" / "manifest.json"));
    EXPECT_LE(bound["summary"]["max_violation"].get<double>(), 1e-10);

    json bad = small_llt();
    bad["parameters"]["replicas"] = -5;
    write_file(dir / "bad.json", bad.dump());
    EXPECT_EQ(run_tool("llt --config " + (dir / "bad.json").string() + " --out " + (dir / "bad").string()), 2);
    write_file(dir / "broken.json", "{ not json");
    EXPECT_EQ(run_tool("llt --config " + (dir / "broken.json").string()), 2);
    EXPECT_EQ(run_tool("llt"), 2);
    EXPECT_EQ(run_tool("mixing --config " + configs + "/two_state_mixing.json --threads 0"), 2);
    EXPECT_EQ(run_tool("llt --config " + configs + "/two_state_mixing.json"), 2);

    EXPECT_EQ(run_tool("report " + (dir / "nothing").string()), 2);
    EXPECT_EQ(run_tool("report " + dir.string()), 0);
    EXPECT_TRUE(fs::exists(dir / "report.json"));
}
