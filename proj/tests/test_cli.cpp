// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

namespace {

namespace fs = std::filesystem;

int run(const std::string& args) {
    const std::string cmd = std::string("CSKNET_THREADS=1 ") + CSKNET_BIN + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

const char* kTiny =
    " --set 'widths=[4,8,8,8,8]' --set decoder_width=8 --set embed_dim=8 --batch-size 4";

class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        root = fs::temp_directory_path() / "csknet_cli_test";
        fs::remove_all(root);
        fs::create_directories(root);
        ASSERT_EQ(run("gen-data --out " + (root / "data").string() + " --count 10 --seed 2"), 0);
    }
    static void TearDownTestSuite() { fs::remove_all(root); }
    static std::string data() { return (root / "data").string(); }
    static fs::path root;
};

fs::path CliTest::root;

TEST_F(CliTest, GenDataWritesManifestAndConfig) {
    EXPECT_TRUE(fs::exists(root / "data" / "manifest.tsv"));
    EXPECT_TRUE(fs::exists(root / "data" / "config.json"));
    EXPECT_TRUE(fs::exists(root / "data" / "eo" / "000000.ppm") || !fs::is_empty(root / "data" / "eo"));
}

TEST_F(CliTest, UsageErrorsExitTwo) {
    EXPECT_EQ(run("gen-data --out " + (root / "x").string() + " --set no_such_key=1"), 2);
    EXPECT_EQ(run("train-stage1 --epochs"), 2);
    EXPECT_EQ(run("frobnicate"), 2);
    EXPECT_EQ(run("train-stage1 --data " + data() + " --out " + (root / "y").string() + " --batch-size 1"), 2);
}

TEST_F(CliTest, MissingDataExitsThree) {
    EXPECT_EQ(run("train-stage1 --data " + (root / "nowhere").string() + " --out " + (root / "z").string()), 3);
}

TEST_F(CliTest, TrainEvaluateAndReproduce) {
    const std::string s1a = (root / "s1a").string();
    const std::string s1b = (root / "s1b").string();
    const std::string s2 = (root / "s2").string();
    const std::string common = std::string(kTiny) + " --epochs 2 --data " + data();
    ASSERT_EQ(run("train-stage1 --modality eo --out " + s1a + common), 0);
    ASSERT_EQ(run("train-stage1 --modality eo --out " + s1b + common), 0);
    EXPECT_EQ(slurp(fs::path(s1a) / "metrics.tsv"), slurp(fs::path(s1b) / "metrics.tsv"));
    EXPECT_FALSE(slurp(fs::path(s1a) / "metrics.tsv").empty());

    ASSERT_EQ(run("train-stage2 --pretrained " + s1a + "/last.ckpt --out " + s2 + common), 0);
    const std::string trace = (root / "trace.txt").string();
    ASSERT_EQ(run("eval --checkpoint " + s2 + "/last.ckpt --mode ir-only --data " + data() + " --io-trace " + trace), 0);
    const std::string opened = slurp(trace);
    EXPECT_FALSE(opened.empty());
    EXPECT_EQ(opened.find("eo/"), std::string::npos);
    EXPECT_EQ(run("eval --checkpoint " + s2 + "/last.ckpt --mode fused --data " + data()), 0);
    EXPECT_EQ(run("eval --checkpoint " + s1a + "/last.ckpt --mode fused --data " + data()), 2);
}

}  // namespace
