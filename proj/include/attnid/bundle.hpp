// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef ATTNID_BUNDLE_HPP
#define ATTNID_BUNDLE_HPP

// Tensor container ("ATNT"):
//
//   offset 0   magic "ATNT"
//   offset 4   u16 format version (little-endian)
//   offset 6   u32 manifest length N (little-endian)
//   offset 10  N bytes of UTF-8 JSON manifest
//   then       payload: raw little-endian binary64 values, row-major
//
// The manifest is {"version", "creator", "metadata": {..}, "tensors":
// [{"name", "rank", "dims", "offset"}]} where "offset" is relative to the
// start of the payload.

#include "attnid/errors.hpp"
#include "attnid/head_geometry.hpp"
#include "attnid/matrix.hpp"
#include "attnid/toy_transformer.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace attnid {

inline constexpr char kBundleMagic[4] = {'A', 'T', 'N', 'T'};
inline constexpr std::uint16_t kBundleVersion = 1;
inline constexpr std::size_t kBundleHeaderSize = 10;

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    static Tensor from_matrix(const Matrix& m) { return {{m.rows(), m.cols()}, m.values()}; }

    Matrix to_matrix() const {
        if (shape.size() == 2) return Matrix(shape[0], shape[1], data);
        if (shape.size() == 1) return Matrix(1, shape[0], data);
        throw ShapeError("tensor of rank " + std::to_string(shape.size()) + " is not a matrix");
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct TensorBundle {
    std::string creator = "attnid";
    std::map<std::string, std::string> metadata;
    std::map<std::string, Tensor> tensors;

    void put(const std::string& name, const Matrix& m) { tensors[name] = Tensor::from_matrix(m); }

    bool has(const std::string& name) const { return tensors.count(name) != 0; }

    Matrix matrix(const std::string& name) const {
        const auto it = tensors.find(name);
        if (it == tensors.end()) throw InvalidArgument("bundle has no tensor named '" + name + "'");
        return it->second.to_matrix();
    }
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "bundle I/O assumes a little-endian host");

template <class T>
void append_le(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <class T>
T read_le(const std::string& in, std::size_t offset) {
    T v;
    std::memcpy(&v, in.data() + offset, sizeof(T));
    return v;
}

} // namespace detail

inline std::string serialize_bundle(const TensorBundle& b) {
    nlohmann::ordered_json manifest;
    manifest["version"] = kBundleVersion;
    manifest["creator"] = b.creator;
    manifest["metadata"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : b.metadata) manifest["metadata"][k] = v;
    manifest["tensors"] = nlohmann::ordered_json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : b.tensors) {
        const std::size_t count = std::accumulate(t.shape.begin(), t.shape.end(), std::size_t{1}, std::multiplies<>{});
        if (count != t.data.size()) {
            throw ShapeError("tensor '" + name + "' declares " + std::to_string(count) + " values but holds " +
                             std::to_string(t.data.size()));
        }
        manifest["tensors"].push_back({{"name", name}, {"rank", t.shape.size()}, {"dims", t.shape}, {"offset", offset}});
        offset += t.data.size() * sizeof(double);
    }
    const std::string text = manifest.dump();
    std::string out(kBundleMagic, 4);
    detail::append_le<std::uint16_t>(out, kBundleVersion);
    detail::append_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    for (const auto& [name, t] : b.tensors)
        for (double v : t.data) detail::append_le<double>(out, v);
    return out;
}

inline TensorBundle parse_bundle(const std::string& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kBundleMagic, 4) != 0) throw ParseError(0, "bad magic, expected ATNT");
    if (bytes.size() < kBundleHeaderSize) throw ParseError(bytes.size(), "truncated header");
    const auto version = detail::read_le<std::uint16_t>(bytes, 4);
    if (version != kBundleVersion) throw ParseError(4, "unsupported format version " + std::to_string(version));
    const auto mlen = detail::read_le<std::uint32_t>(bytes, 6);
    if (bytes.size() < kBundleHeaderSize + mlen) throw ParseError(bytes.size(), "truncated manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.begin() + kBundleHeaderSize, bytes.begin() + kBundleHeaderSize + mlen);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(kBundleHeaderSize + e.byte, std::string("manifest is not valid JSON: ") + e.what());
    }
    const std::size_t payload = kBundleHeaderSize + mlen;
    TensorBundle b;
    try {
        b.creator = manifest.value("creator", "");
        if (manifest.contains("metadata"))
            for (const auto& [k, v] : manifest["metadata"].items()) b.metadata[k] = v.get<std::string>();
        for (const auto& entry : manifest.at("tensors")) {
            const auto name = entry.at("name").get<std::string>();
            Tensor t;
            t.shape = entry.at("dims").get<std::vector<std::size_t>>();
            if (entry.at("rank").get<std::size_t>() != t.shape.size())
                throw ParseError(kBundleHeaderSize, "tensor '" + name + "' rank does not match its dims");
            const std::size_t count =
                std::accumulate(t.shape.begin(), t.shape.end(), std::size_t{1}, std::multiplies<>{});
            const std::size_t start = payload + entry.at("offset").get<std::size_t>();
            if (start + count * sizeof(double) > bytes.size())
                throw ParseError(bytes.size(), "payload of tensor '" + name + "' is truncated");
            t.data.resize(count);
            std::memcpy(t.data.data(), bytes.data() + start, count * sizeof(double));
            if (!b.tensors.emplace(name, std::move(t)).second)
                throw ParseError(kBundleHeaderSize, "duplicate tensor name '" + name + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(kBundleHeaderSize, std::string("malformed manifest: ") + e.what());
    }
    return b;
}

inline void save_bundle(const TensorBundle& b, const std::string& path) {
    const std::string bytes = serialize_bundle(b);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write to '" + path + "' failed");
}

inline TensorBundle load_bundle(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for reading");
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_bundle(bytes);
}

// ---------------------------------------------------------------------------
// Domain objects <-> bundles

inline std::string snapshot_prefix(std::size_t layer, std::size_t head) {
    return "L" + std::to_string(layer) + ".H" + std::to_string(head) + ".";
}

inline void put_snapshot(TensorBundle& b, const HeadSnapshot& s, bool prefixed = true) {
    const std::string pre = prefixed ? snapshot_prefix(s.layer, s.head) : "";
    b.put(pre + "E", s.E);
    b.put(pre + "Wv", s.Wv);
    b.put(pre + "H", s.H);
    b.put(pre + "A", s.A);
}

/// Snapshots stored either as bare E/Wv/H/A (one head; layer/head taken
/// from metadata when present) or under "L<l>.H<h>." prefixes.
inline std::vector<HeadSnapshot> snapshots_from_bundle(const TensorBundle& b) {
    std::vector<HeadSnapshot> out;
    if (b.has("E") && b.has("Wv") && b.has("H") && b.has("A")) {
        HeadSnapshot s;
        s.layer = b.metadata.count("layer") ? std::stoul(b.metadata.at("layer")) : 1;
        s.head = b.metadata.count("head") ? std::stoul(b.metadata.at("head")) : 0;
        s.E = b.matrix("E");
        s.Wv = b.matrix("Wv");
        s.H = b.matrix("H");
        s.A = b.matrix("A");
        out.push_back(std::move(s));
    }
    std::vector<std::pair<std::size_t, std::size_t>> heads;
    for (const auto& [name, t] : b.tensors) {
        std::size_t l = 0, h = 0;
        char tail[8] = {};
        if (std::sscanf(name.c_str(), "L%zu.H%zu.%7s", &l, &h, tail) == 3 && std::string(tail) == "E") heads.emplace_back(l, h);
    }
    std::sort(heads.begin(), heads.end());
    for (auto [l, h] : heads) {
        const std::string pre = snapshot_prefix(l, h);
        out.push_back(HeadSnapshot{l, h, b.matrix(pre + "E"), b.matrix(pre + "Wv"), b.matrix(pre + "H"), b.matrix(pre + "A")});
    }
    if (out.empty()) throw InvalidArgument("bundle holds no head snapshots (need E, Wv, H, A)");
    return out;
}

inline void put_config(TensorBundle& b, const ModelConfig& c) {
    b.metadata["model.layers"] = std::to_string(c.layers);
    b.metadata["model.heads"] = std::to_string(c.heads);
    b.metadata["model.dim"] = std::to_string(c.dim);
    b.metadata["model.ff_dim"] = std::to_string(c.ff_dim);
    b.metadata["model.vocab"] = std::to_string(c.vocab);
    b.metadata["model.max_len"] = std::to_string(c.max_len);
    b.metadata["model.seed"] = std::to_string(c.seed);
}

inline ModelConfig config_from_bundle(const TensorBundle& b) {
    auto get = [&](const char* key) -> std::uint64_t {
        const auto it = b.metadata.find(key);
        if (it == b.metadata.end()) throw InvalidArgument(std::string("bundle metadata lacks ") + key);
        return std::stoull(it->second);
    };
    ModelConfig c;
    c.layers = get("model.layers");
    c.heads = get("model.heads");
    c.dim = get("model.dim");
    c.ff_dim = get("model.ff_dim");
    c.vocab = get("model.vocab");
    c.max_len = get("model.max_len");
    c.seed = get("model.seed");
    return c;
}

inline TensorBundle model_to_bundle(const Model& m) {
    TensorBundle b;
    b.metadata["kind"] = "model";
    put_config(b, m.config);
    for (const auto& [name, mat] : named_parameters(m)) b.put("model." + name, *mat);
    return b;
}

inline Model model_from_bundle(const TensorBundle& b) {
    Model m = zero_model(config_from_bundle(b));
    for (auto& [name, mat] : named_parameters(m)) {
        Matrix loaded = b.matrix("model." + name);
        if (loaded.rows() != mat->rows() || loaded.cols() != mat->cols()) {
            throw ShapeError("parameter '" + name + "' is " + loaded.shape() + ", expected " + mat->shape());
        }
        *mat = std::move(loaded);
    }
    return m;
}

inline TensorBundle trace_to_bundle(const ForwardTrace& t) {
    TensorBundle b;
    b.metadata["kind"] = "trace";
    b.metadata["layers"] = std::to_string(t.layers());
    b.put("X", t.X);
    for (std::size_t l = 1; l <= t.layers(); ++l) b.put("e" + std::to_string(l), t.hidden(l));
    for (const auto& s : t.snapshots) put_snapshot(b, s);
    return b;
}

} // namespace attnid

#endif // ATTNID_BUNDLE_HPP
