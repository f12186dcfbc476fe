// Tests for run directories, summary files, determinism and the CLI exit codes.

#include "qnls/config.hpp"
#include "qnls/errors.hpp"
#include "qnls/run.hpp"

#include <gtest/gtest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

namespace {

namespace fs = std::filesystem;
using namespace qnls;

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

nlohmann::json summary_of(const fs::path& dir) { return nlohmann::json::parse(slurp(dir / "summary.json")); }

// Small subcritical problem that solves in well under a second.
constexpr const char* kSmallSolve =
    "[model]\nN = 4\nm = 2\np = 2.5\nlambda = 100\n[grid]\nL = 20\nn = 32\n[run]\nseed = 7\n";

class RunTest : public ::testing::Test {
protected:
    void SetUp() override {
        root_ = fs::temp_directory_path() /
                ("qnls-run-" + std::to_string(::getpid()) + "-" +
                 ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(root_);
    }
    void TearDown() override { fs::remove_all(root_); }

    RunConfig config(const std::string& text) const {
        RunConfig c = parse_config_unvalidated(text);
        c.run.output_dir = root_.string();
        c.validate();
        return c;
    }

    fs::path root_;
};

TEST_F(RunTest, SolveWritesEveryArtifact) {
    const auto out = run_command("solve", config(kSmallSolve));
    EXPECT_EQ(out.status, kExitOk) << out.message;
    EXPECT_EQ(out.dir.parent_path(), root_);
    const std::string name = out.dir.filename().string();
    EXPECT_EQ(name.substr(name.size() - 6), "-solve");
    for (const char* f : {"config.echo", "diagnostics.csv", "solution-0.field", "summary.json"})
        EXPECT_TRUE(fs::exists(out.dir / f)) << f;
    for (const auto& e : fs::directory_iterator(out.dir))
        EXPECT_EQ(e.path().filename().string().find(".tmp"), std::string::npos) << "leftover temp file";

    const auto j = summary_of(out.dir);
    for (const char* key : {"command", "params", "converged", "energy_I", "energy_J", "mass", "mu", "residual_norm",
                            "sign_change", "constants"})
        EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_EQ(j["command"], "solve");
    EXPECT_TRUE(j["converged"].get<bool>());
    EXPECT_LT(j["energy_I"].get<double>(), 0.0);
    EXPECT_LT(j["sign_change"]["min"].get<double>(), 0.0);
    EXPECT_GT(j["sign_change"]["max"].get<double>(), 0.0);
    EXPECT_EQ(j["exit_status"], 0);

    // the echo is the exact parsed config and parses back to it
    EXPECT_TRUE(parse_config(slurp(out.dir / "config.echo")) == config(kSmallSolve));

    const std::string csv = slurp(out.dir / "diagnostics.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), kDiagnosticsCsvHeader);

    // the dump reloads to the values that produced the reported energy
    const auto v = load_field((out.dir / "solution-0.field").string());
    EXPECT_EQ(energy_I(v, DualMap{}, config(kSmallSolve).model), j["energy_I"].get<double>());
}

TEST_F(RunTest, RepeatedRunsAreBitIdentical) {
    const auto a = run_command("solve", config(kSmallSolve));
    const auto b = run_command("solve", config(kSmallSolve));
    ASSERT_NE(a.dir, b.dir);
    EXPECT_EQ(slurp(a.dir / "diagnostics.csv"), slurp(b.dir / "diagnostics.csv"));
    EXPECT_EQ(slurp(a.dir / "solution-0.field"), slurp(b.dir / "solution-0.field"));
    EXPECT_EQ(slurp(a.dir / "config.echo"), slurp(b.dir / "config.echo"));
}

TEST_F(RunTest, NonConvergedSolveIsANumericFailure) {
    const auto out = run_command("solve", config(std::string(kSmallSolve) + "[flow]\nmax_iters = 3\n"));
    EXPECT_EQ(out.status, kExitNumeric);
    const auto j = summary_of(out.dir);
    EXPECT_FALSE(j["converged"].get<bool>());
    EXPECT_EQ(j["exit_status"], 3);
    EXPECT_TRUE(fs::exists(out.dir / "solution-0.field"));
}

TEST_F(RunTest, MultisolveShortfallExitsWithFour) {
    const auto out =
        run_command("multisolve", config(std::string(kSmallSolve) + "k = 50\n[flow]\nmax_starts = 2\n"));
    EXPECT_EQ(out.status, kExitShortfall);
    const auto j = summary_of(out.dir);
    EXPECT_TRUE(j["shortfall"].get<bool>());
    EXPECT_EQ(j["starts_used"], 2);
    const auto found = j["found"].get<std::size_t>();
    EXPECT_EQ(j["solutions"].size(), found);
    for (std::size_t i = 0; i < found; ++i)
        EXPECT_TRUE(fs::exists(out.dir / ("solution-" + std::to_string(i) + ".field")));
}

TEST_F(RunTest, CertifyDualListsSixPassingChecks) {
    const auto out = run_command("certify-dual", config(""));
    EXPECT_EQ(out.status, kExitOk);
    const auto j = summary_of(out.dir);
    ASSERT_EQ(j["checks"].size(), 6u);
    for (const auto& c : j["checks"]) EXPECT_TRUE(c["pass"].get<bool>()) << c["name"];
    EXPECT_TRUE(j["constants"].contains("C1"));
    EXPECT_TRUE(j["constants"].contains("C2"));
}

TEST_F(RunTest, CheckEquivalencePasses) {
    const auto out = run_command("check-equivalence", config(""));
    EXPECT_EQ(out.status, kExitOk) << slurp(out.dir / "summary.json");
    EXPECT_TRUE(summary_of(out.dir)["all_pass"].get<bool>());
}

TEST_F(RunTest, ProbeWritesCurve) {
    const auto out = run_command("probe", config("[model]\np = 2.5\nlambda = 100\n[grid]\nL = 100\nn = 64\n"
                                                 "[run]\nlambda_grid = 10, 100\nprobe_widths = 12\n"));
    EXPECT_EQ(out.status, kExitOk);
    const std::string csv = slurp(out.dir / "curve.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "lambda,best_I");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
    const auto j = summary_of(out.dir);
    EXPECT_EQ(j["curve"].size(), 2u);
    EXPECT_TRUE(j["all_negative"].get<bool>());
}

TEST_F(RunTest, SweepWritesCurveAndStar) {
    const auto out = run_command("sweep", config("[model]\np = 3.5\n[grid]\nL = 100\nn = 64\n"
                                                 "[run]\nlambda_grid = 1e3, 1e5\nprobe_widths = 12\n"));
    EXPECT_EQ(out.status, kExitOk);
    EXPECT_TRUE(fs::exists(out.dir / "curve.csv"));
    const auto j = summary_of(out.dir);
    EXPECT_EQ(j["curve"].size(), 2u);
    EXPECT_TRUE(j.contains("lambda_star"));
}

TEST_F(RunTest, SweepOutsideIntermediateRegimeIsAParameterError) {
    EXPECT_THROW(run_command("sweep", config("[model]\np = 2.5\n")), ParameterError);
    EXPECT_FALSE(fs::exists(root_));
}

TEST_F(RunTest, UnknownCommandIsAParameterError) {
    EXPECT_THROW(run_command("dance", config("")), ParameterError);
}

// ---------------------------------------------------------------------------
// CLI

class CliTest : public RunTest {
protected:
    int run_cli(const std::string& args, bool with_env = true) {
        const fs::path cfg = root_ / "input.ini";
        fs::create_directories(root_);
        std::string cmd = std::string(QNLS_CLI_PATH) + " " + args + " >" + (root_ / "stdout.txt").string() +
                          " 2>" + (root_ / "stderr.txt").string();
        if (with_env) cmd = std::string(kOutputRootEnv) + "=" + (root_ / "out").string() + " " + cmd;
        const int rc = std::system(cmd.c_str());
        return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    }
    fs::path write_config(const std::string& text) {
        fs::create_directories(root_);
        const fs::path p = root_ / "input.ini";
        std::ofstream(p) << text;
        return p;
    }
};

TEST_F(CliTest, SolveUsesEnvironmentOutputRoot) {
    const auto cfg = write_config(kSmallSolve);
    EXPECT_EQ(run_cli("solve --config " + cfg.string()), 0) << slurp(root_ / "stderr.txt");
    const std::string printed = slurp(root_ / "stdout.txt");
    const fs::path dir = printed.substr(0, printed.find('\n'));
    EXPECT_EQ(dir.parent_path(), root_ / "out");
    EXPECT_TRUE(fs::exists(dir / "summary.json"));
}

TEST_F(CliTest, OverridesApplyAfterTheFile) {
    const auto cfg = write_config(kSmallSolve);
    EXPECT_EQ(run_cli("multisolve --config " + cfg.string() + " --set run.k=40 --set max_starts=1"), 4);
    EXPECT_EQ(run_cli("solve --config " + cfg.string() + " --set flow.max_iters=2"), 3);
}

TEST_F(CliTest, ParameterErrorsExitWithTwo) {
    const auto cfg = write_config(kSmallSolve);
    EXPECT_EQ(run_cli("solve --config " + cfg.string() + " --set model.N=5"), 2);
    EXPECT_NE(slurp(root_ / "stderr.txt").find("N-2m must not equal 1"), std::string::npos);
    EXPECT_EQ(run_cli("solve --config " + cfg.string() + " --set model.typo=1"), 2);
    EXPECT_EQ(run_cli("solve --config " + (root_ / "missing.ini").string()), 2);
    EXPECT_EQ(run_cli("fly --config " + cfg.string()), 2);
    EXPECT_EQ(run_cli("solve"), 2);
    EXPECT_EQ(run_cli("sweep --config " + cfg.string()), 2);
    EXPECT_FALSE(fs::exists(root_ / "out"));
}

}  // namespace
