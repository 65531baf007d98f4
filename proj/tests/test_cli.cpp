#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

Result run(const std::string& args) {
    const std::string cmd = std::string(SF_CLI) + " " + args + " 2>/dev/null";
    Result r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    std::array<char, 4096> buf;
    std::size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("sf_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }
    fs::path dir_;
};

const std::string kS = std::string(SF_CONFIG_DIR) + "/speechformer_s.conf";
const std::string kBase = std::string(SF_CONFIG_DIR) + "/baseline.conf";

} // namespace

TEST_F(Cli, ScheduleDefault) {
    const Result a = run("schedule --hop1-ms 10");
    EXPECT_EQ(a.code, 0);
    EXPECT_NE(a.out.find("tw_f\t5\n"), std::string::npos);
    EXPECT_NE(a.out.find("m1\t5\n"), std::string::npos);
    EXPECT_NE(a.out.find("hop2_ms\t50\n"), std::string::npos);
    EXPECT_EQ(run("schedule").out, a.out);
}

TEST_F(Cli, ScheduleRejectsZeroHop) { EXPECT_EQ(run("schedule --hop1-ms 0").code, 2); }

TEST_F(Cli, AnalyzeBaseline) {
    const Result r = run("analyze --config " + kBase + " --input-len 651 --dim 128");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("1.94G"), std::string::npos);
}

TEST_F(Cli, AnalyzeRatio) {
    const Result r = run("analyze --config " + kS + " --baseline-config " + kBase +
                         " --input-len 651 --format tsv");
    EXPECT_EQ(r.code, 0);
    const auto pos = r.out.find("flops_ratio\t");
    ASSERT_NE(pos, std::string::npos);
    EXPECT_NEAR(std::stod(r.out.substr(pos + 12)), 0.148, 0.005);
}

TEST_F(Cli, AnalyzeMissingConfig) {
    EXPECT_EQ(run("analyze --config " + path("nope.conf") + " --input-len 10").code, 2);
}

TEST_F(Cli, SynthWritesDeterministicFmat) {
    ASSERT_EQ(run("synth --rows 651 --cols 512 --seed 7 --out " + path("a.fmat")).code, 0);
    ASSERT_EQ(run("synth --rows 651 --cols 512 --seed 7 --out " + path("b.fmat")).code, 0);
    const std::string a = slurp(path("a.fmat"));
    EXPECT_EQ(a.size(), 24u + 651u * 512u * 4u);
    EXPECT_EQ(a.substr(0, 4), "FMAT");
    EXPECT_EQ(a, slurp(path("b.fmat")));
    EXPECT_EQ(run("synth --rows 0 --cols 512 --out " + path("c.fmat")).code, 2);
}

TEST_F(Cli, ForwardShapesAndDeterminism) {
    ASSERT_EQ(run("synth --rows 651 --cols 512 --seed 7 --out " + path("x.fmat")).code, 0);
    const std::string cmd = "forward --config " + kS + " --features " + path("x.fmat") + " --seed 3";
    const Result a = run(cmd);
    const Result b = run(cmd);
    EXPECT_EQ(a.code, 0);
    EXPECT_EQ(a.out, b.out);
    EXPECT_NE(a.out.find("stage\tframe\t651\t512\n"), std::string::npos);
    EXPECT_NE(a.out.find("stage\tphoneme\t131\t512\n"), std::string::npos);
    EXPECT_NE(a.out.find("stage\tword\t27\t512\n"), std::string::npos);
    EXPECT_NE(a.out.find("stage\tutterance\t7\t512\n"), std::string::npos);
    EXPECT_NE(a.out.find("logits\t"), std::string::npos);
}

TEST_F(Cli, ForwardWithCheckpointMatchesSeededInit) {
    ASSERT_EQ(run("synth --rows 60 --cols 512 --seed 1 --out " + path("x.fmat")).code, 0);
    ASSERT_EQ(run("init --config " + kS + " --seed 3 --out " + path("w.sfwt")).code, 0);
    const std::string base = "forward --config " + kS + " --features " + path("x.fmat");
    EXPECT_EQ(run(base + " --seed 3").out, run(base + " --checkpoint " + path("w.sfwt")).out);
}

TEST_F(Cli, ForwardDimMismatch) {
    ASSERT_EQ(run("synth --rows 20 --cols 128 --out " + path("x.fmat")).code, 0);
    EXPECT_EQ(run("forward --config " + kS + " --features " + path("x.fmat")).code, 2);
}

TEST_F(Cli, CheckOracleSuite) {
    const Result r = run("check --suite oracle --seed 5");
    EXPECT_EQ(r.code, 0);
    std::size_t lines = 0;
    for (std::size_t p = r.out.find("oracle/"); p != std::string::npos; p = r.out.find("oracle/", p + 1)) ++lines;
    EXPECT_GE(lines, 50u);
    EXPECT_NE(r.out.find("all checks passed"), std::string::npos);
}

TEST_F(Cli, CheckGradSuite) {
    const Result r = run("check --suite grad");
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out.find("\tfail"), std::string::npos);
    EXPECT_NE(r.out.find("grad/merging_block/weight"), std::string::npos);
}

TEST_F(Cli, UnknownSubcommandAndBadFlag) {
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("check --suite everything").code, 2);
    EXPECT_EQ(run("analyze --config " + kS + " --format xml").code, 2);
}
