// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#include "attnid/cli.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using namespace attnid;

namespace {

struct CliRun {
    int code;
    std::string out, err;
};

CliRun run(std::vector<std::string> args) {
    args.insert(args.begin(), "attnid");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("attnid_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    std::string p(const std::string& name) const { return (dir / name).string(); }

    /// Column `name` of a CSV written by the tool.
    std::vector<std::string> column(const std::string& file, const std::string& name) const {
        const auto rows = read_csv_file(p(file));
        const auto& header = rows.front();
        const auto at = std::find(header.begin(), header.end(), name) - header.begin();
        std::vector<std::string> out;
        for (std::size_t r = 1; r < rows.size(); ++r) out.push_back(rows[r].at(static_cast<std::size_t>(at)));
        return out;
    }

    fs::path dir;
};

TEST_F(CliTest, NullspaceOnExternalBundleReportsExpectedDimension) {
    Philox rng(5, 0);
    TensorBundle b;
    put_snapshot(b, fixture::random_snapshot(128, 128, 64, rng), false);
    save_bundle(b, p("head.atnt"));
    const CliRun r = run({"nullspace", "--input", p("head.atnt"), "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(column("nullspace.csv", "dim_LN_T"), std::vector<std::string>{"64"});
    EXPECT_EQ(column("nullspace.csv", "dim_LN_T1"), std::vector<std::string>{"63"});
    EXPECT_EQ(column("nullspace.csv", "rank_T"), std::vector<std::string>{"64"});
}

TEST_F(CliTest, UnknownFlagIsUsageError) {
    const CliRun r = run({"nullspace", "--bogus", "3"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("Usage"), std::string::npos) << r.err;
}

TEST_F(CliTest, MissingOrUnknownSubcommandIsUsageError) {
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"frobnicate"}).code, 2);
}

TEST_F(CliTest, InconsistentHeadDimensionIsUsageError) {
    EXPECT_EQ(run({"nullspace", "--dim", "16", "--heads", "2", "--dv", "4", "--out", dir.string()}).code, 2);
    EXPECT_EQ(run({"nullspace", "--dim", "16", "--heads", "3", "--out", dir.string()}).code, 2);
    EXPECT_EQ(run({"perturb", "--scale", "1.5", "--out", dir.string()}).code, 2);
}

TEST_F(CliTest, MissingInputIsAnalysisFailure) {
    const CliRun r = run({"nullspace", "--input", p("absent.atnt"), "--out", dir.string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_FALSE(r.err.empty());
}

TEST_F(CliTest, ConfigFileIsReadAndFlagsOverrideIt) {
    {
        std::ofstream f(p("run.cfg"));
        f << "len=7\nlayers=1\nout=" << dir.string() << "\n";
    }
    ASSERT_EQ(run({"forward", "--config", p("run.cfg")}).code, 0);
    TensorBundle b = load_bundle(p("trace.atnt"));
    EXPECT_EQ(b.matrix("X").rows(), 7u);
    EXPECT_EQ(b.metadata.at("layers"), "1");

    ASSERT_EQ(run({"forward", "--config", p("run.cfg"), "--len", "5"}).code, 0);
    b = load_bundle(p("trace.atnt"));
    EXPECT_EQ(b.matrix("X").rows(), 5u);
    EXPECT_EQ(b.matrix("tokens").cols(), 5u);
}

TEST_F(CliTest, TraceBundleFeedsTheAnalyses) {
    ASSERT_EQ(run({"forward", "--len", "12", "--out", dir.string()}).code, 0);
    const CliRun r = run({"effective", "--input", p("trace.atnt"), "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = read_csv_file(p("effective_correlation.csv"));
    EXPECT_EQ(rows.front(), (std::vector<std::string>{"d_s", "n", "mean_pearson"}));
    // Two layers x two heads of one 12-token sequence; d_v = 8 < 12.
    EXPECT_EQ(column("effective_correlation.csv", "n"), std::vector<std::string>{"4"});
    EXPECT_EQ(column("effective_per_head.csv", "pearson").size(), 4u);
    EXPECT_FALSE(column("effective_token_groups.csv", "group").empty());
    EXPECT_EQ(column("effective_triplets.csv", "value").size(), 4u * 3u * 144u);
}

TEST_F(CliTest, PerturbReportsEquivalentAlternatives) {
    const CliRun r = run({"perturb", "--len", "12", "--count", "2", "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const auto& v : column("perturb.csv", "pass")) EXPECT_EQ(v, "1");
    for (const auto& v : column("perturb.csv", "status")) EXPECT_EQ(v, "perturbed");
    for (const auto& v : column("perturb.csv", "max_attention_change")) EXPECT_GT(std::stod(v), 0.0);
    EXPECT_EQ(snapshots_from_bundle(load_bundle(p("perturbed.atnt"))).size(), 4u);
}

TEST_F(CliTest, ShortSequencesAreIdentifiable) {
    const CliRun r = run({"perturb", "--len", "6", "--count", "1", "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const auto& v : column("perturb.csv", "status")) EXPECT_EQ(v, "identifiable");
}

TEST_F(CliTest, TrainThenAttributeAndProbe) {
    ASSERT_EQ(run({"train", "--steps", "3", "--corpus-size", "10", "--len", "10", "--out", dir.string()}).code, 0);
    EXPECT_EQ(column("train_loss.csv", "loss").size(), 3u);
    const Model m = model_from_bundle(load_bundle(p("model.atnt")));
    EXPECT_EQ(m.config.layers, 2u);

    CliRun r = run({"attribute", "--input", p("model.atnt"), "--len", "8", "--count", "2", "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(column("attribution_non_max.csv", "layer"), (std::vector<std::string>{"1", "2"}));
    EXPECT_FALSE(column("attribution_locality.csv", "share").empty());

    r = run({"probe", "--input", p("model.atnt"), "--len", "8", "--count", "12", "--folds", "1", "--max-epochs",
             "2", "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    // Layers 0..2 x {linear, naive} x {cosine, l2}.
    EXPECT_EQ(column("probe_rates.csv", "rate_test").size(), 12u);
    EXPECT_EQ(column("probe_cross_layer.csv", "eval_layer").size(), 3u);
}

TEST_F(CliTest, VerifySubsetRuns) {
    const CliRun r = run({"verify", "--only", "A9", "--out", dir.string()});
    EXPECT_EQ(r.code, 0) << r.out << r.err;
    EXPECT_NE(r.out.find("PASS A9"), std::string::npos) << r.out;
    EXPECT_TRUE(fs::exists(p("a9_substitution.csv")));
}

} // namespace
