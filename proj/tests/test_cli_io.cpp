// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#include "attnid/bundle.hpp"
#include "attnid/corpus.hpp"
#include "attnid/csv.hpp"
#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>

using namespace attnid;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("attnid_test_" + name)).string();
}

std::string expect_parse_error_at(const std::string& bytes, std::size_t offset) {
    try {
        parse_bundle(bytes);
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset(), offset) << e.what();
        return e.what();
    }
    ADD_FAILURE() << "no parse error";
    return {};
}

} // namespace

TEST(Bundle, RoundTripIsBitExact) {
    TensorBundle b;
    b.metadata["seed"] = "42";
    b.put("weird", Matrix{{0.1, -0.0, 1e-310}, {std::numeric_limits<double>::max(), 3.0, -2.5}});
    b.tensors["vec"] = Tensor{{4}, {1, 2, 3, 4}};
    b.tensors["cube"] = Tensor{{2, 1, 2}, {5, 6, 7, 8}};
    b.tensors["empty"] = Tensor{{0, 3}, {}};
    const std::string path = temp_path("roundtrip.atnt");
    save_bundle(b, path);
    const TensorBundle r = load_bundle(path);
    std::filesystem::remove(path);
    EXPECT_EQ(r.metadata, b.metadata);
    ASSERT_EQ(r.tensors.size(), b.tensors.size());
    for (const auto& [name, t] : b.tensors) {
        const Tensor& u = r.tensors.at(name);
        EXPECT_EQ(u.shape, t.shape);
        ASSERT_EQ(u.data.size(), t.data.size());
        for (std::size_t i = 0; i < t.data.size(); ++i)
            EXPECT_EQ(std::bit_cast<std::uint64_t>(u.data[i]), std::bit_cast<std::uint64_t>(t.data[i]));
    }
    EXPECT_EQ(serialize_bundle(r), serialize_bundle(b));
}

TEST(Bundle, HeaderLayout) {
    TensorBundle b;
    b.put("A", Matrix{{1.5}});
    const std::string bytes = serialize_bundle(b);
    EXPECT_EQ(bytes.substr(0, 4), "ATNT");
    EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);
    EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 0u);
    std::uint32_t mlen;
    std::memcpy(&mlen, bytes.data() + 6, 4);
    EXPECT_EQ(bytes.size(), 10u + mlen + 8u);
    const auto manifest = nlohmann::json::parse(bytes.substr(10, mlen));
    EXPECT_EQ(manifest["tensors"][0]["name"], "A");
    EXPECT_EQ(manifest["tensors"][0]["rank"], 2);
    EXPECT_EQ(manifest["tensors"][0]["offset"], 0);
    double v;
    std::memcpy(&v, bytes.data() + 10 + mlen, 8);
    EXPECT_EQ(v, 1.5);
}

TEST(Bundle, ParseFailuresNameOffsets) {
    TensorBundle b;
    b.put("A", Matrix{{1.0, 2.0}});
    const std::string good = serialize_bundle(b);

    std::string bad = good;
    bad[0] = 'X';
    expect_parse_error_at(bad, 0);

    bad = good;
    bad[4] = 2;
    expect_parse_error_at(bad, 4);

    expect_parse_error_at(good.substr(0, 7), 7);
    expect_parse_error_at(good.substr(0, 20), 20);
    expect_parse_error_at(good.substr(0, good.size() - 3), good.size() - 3);
    EXPECT_THROW(load_bundle(temp_path("does_not_exist.atnt")), IoError);
}

TEST(Bundle, InconsistentShapeRejectedOnWrite) {
    TensorBundle b;
    b.tensors["bad"] = Tensor{{2, 2}, {1, 2, 3}};
    EXPECT_THROW(serialize_bundle(b), ShapeError);
}

TEST(Bundle, ExternalSnapshotIsUsable) {
    Philox rng(1);
    const HeadSnapshot s = fixture::random_snapshot(10, 8, 4, rng);
    TensorBundle b;
    b.creator = "external";
    put_snapshot(b, s, false);
    const auto loaded = snapshots_from_bundle(parse_bundle(serialize_bundle(b)));
    ASSERT_EQ(loaded.size(), 1u);
    const auto r = nullspace_report(loaded[0]);
    EXPECT_EQ(r.dim_LN_T, 6u);
    EXPECT_EQ(r.dim_LN_T1, 5u);
    EXPECT_THROW(snapshots_from_bundle(TensorBundle{}), InvalidArgument);
}

TEST(Bundle, ModelAndTraceRoundTrip) {
    ModelConfig c;
    c.layers = 2;
    c.dim = 8;
    c.ff_dim = 16;
    c.max_len = 12;
    c.seed = 9;
    const Model m = init(c);
    const Model back = model_from_bundle(parse_bundle(serialize_bundle(model_to_bundle(m))));
    EXPECT_EQ(back.config, m.config);
    auto a = named_parameters(m), b = named_parameters(back);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].second, *b[i].second);

    const auto seq = MarkovCorpus(9).generate(1, 10, 9).front();
    const auto trace = forward(m, seq);
    const auto tb = parse_bundle(serialize_bundle(trace_to_bundle(trace)));
    EXPECT_EQ(tb.matrix("X"), trace.X);
    EXPECT_EQ(tb.matrix("e2"), trace.hidden(2));
    const auto snaps = snapshots_from_bundle(tb);
    ASSERT_EQ(snaps.size(), 4u);
    EXPECT_EQ(snaps[3].layer, 2u);
    EXPECT_EQ(snaps[3].head, 1u);
    EXPECT_EQ(snaps[3].A, trace.attention[1][1]);
}

TEST(Csv, HeaderOnlyAndEscaping) {
    CsvTable t{{"a", "b,c"}, {}};
    EXPECT_EQ(to_csv(t), "a,\"b,c\"\n");
    t.add({std::string("x\"y"), 2LL});
    EXPECT_EQ(to_csv(t), "a,\"b,c\"\n\"x\"\"y\",2\n");
    EXPECT_THROW(t.add({1.0}), InvalidArgument);
    const auto parsed = parse_csv(to_csv(t));
    ASSERT_EQ(parsed.size(), 2u);
    EXPECT_EQ(parsed[0][1], "b,c");
    EXPECT_EQ(parsed[1][0], "x\"y");
}

TEST(Csv, NumbersRoundTripAt17Digits) {
    Philox rng(3);
    CsvTable t{{"v"}, {}};
    std::vector<double> vals{0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0, 1e-320};
    for (int i = 0; i < 200; ++i) vals.push_back(rng.normal() * std::pow(10.0, rng.normal() * 10));
    for (double v : vals) t.add({v});
    const std::string path = temp_path("numbers.csv");
    emit_csv(t, path);
    const auto rows = read_csv_file(path);
    std::filesystem::remove(path);
    ASSERT_EQ(rows.size(), vals.size() + 1);
    for (std::size_t i = 0; i < vals.size(); ++i) EXPECT_EQ(std::strtod(rows[i + 1][0].c_str(), nullptr), vals[i]);
    EXPECT_EQ(format_number(std::nan("")), "");
}

TEST(Csv, WriteFailureSurfaces) {
    EXPECT_THROW(emit_csv(CsvTable{{"a"}, {}}, "/nonexistent-dir/x.csv"), IoError);
}
