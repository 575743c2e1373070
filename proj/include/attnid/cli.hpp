// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef ATTNID_CLI_HPP
#define ATTNID_CLI_HPP

// The `attnid` command line. `run_cli` is the whole program, so tests can
// drive it in-process. Exit codes: 0 success, 1 analysis failure, 2 usage.

#include "attnid/acceptance.hpp"
#include "attnid/attribution.hpp"
#include "attnid/bundle.hpp"
#include "attnid/corpus.hpp"
#include "attnid/csv.hpp"
#include "attnid/effective_attention.hpp"
#include "attnid/head_geometry.hpp"
#include "attnid/probe.hpp"
#include "attnid/simplex_alternatives.hpp"
#include "attnid/toy_transformer.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace attnid::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitAnalysisFailure = 1;
inline constexpr int kExitUsage = 2;

/// Bad flag values that CLI11 cannot catch on its own.
class UsageError : public Error {
public:
    using Error::Error;
};

struct Settings {
    std::uint64_t seed = 1;
    std::optional<double> tol;
    double scale = kDefaultPerturbationScale;
    std::size_t folds = 3;
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t dim = 16;
    std::optional<std::size_t> dv;
    std::optional<std::size_t> dff;
    std::size_t vocab = MarkovCorpus(1).vocab_size();
    std::size_t len = 16;
    std::string out = ".";
    std::string input;
    std::size_t count = 20;

    // train
    std::size_t steps = 2000;
    double learn_rate = TrainOptions{}.learn_rate;
    std::size_t corpus_size = 2000;
    // probe
    std::size_t max_epochs = 2000;
    bool with_mlp = false;
    // verify
    std::vector<std::string> only;
    bool no_rerun = false;

    ModelConfig model_config() const {
        ModelConfig c;
        c.layers = layers;
        c.heads = heads;
        c.dim = dim;
        if (dv) {
            if (*dv == 0 || dim % *dv != 0) throw UsageError("--dv must divide --dim");
            if (dim / *dv != heads) {
                throw UsageError("--dv " + std::to_string(*dv) + " with --dim " + std::to_string(dim) +
                                 " implies " + std::to_string(dim / *dv) + " heads, but --heads is " +
                                 std::to_string(heads));
            }
        }
        c.ff_dim = dff.value_or(4 * dim);
        c.vocab = vocab;
        c.max_len = std::max<std::size_t>(len, 1);
        c.seed = seed;
        try {
            c.validate();
        } catch (const InvalidArgument& e) {
            throw UsageError(e.what());
        }
        if (vocab < kFirstSymbol + MarkovCorpus::kPool) {
            throw UsageError("--vocab must be at least " + std::to_string(kFirstSymbol + MarkovCorpus::kPool));
        }
        return c;
    }

    MarkovCorpus corpus() const { return MarkovCorpus(seed, vocab - kFirstSymbol); }

    std::string path(const std::string& name) const { return (std::filesystem::path(out) / name).string(); }
};

namespace detail {

inline long long ll(std::size_t v) { return static_cast<long long>(v); }

inline bool is_model_bundle(const TensorBundle& b) {
    const auto it = b.metadata.find("kind");
    return it != b.metadata.end() && it->second == "model";
}

/// The model named by --input, or a freshly initialized one from the flags.
inline Model load_or_init_model(const Settings& s) {
    if (!s.input.empty()) {
        const TensorBundle b = load_bundle(s.input);
        if (!is_model_bundle(b)) throw InvalidArgument("--input " + s.input + " is not a model bundle");
        return model_from_bundle(b);
    }
    return init(s.model_config());
}

inline std::vector<TokenSequence> sequences_for(const Settings& s, const Model& m) {
    if (s.len < 3) throw UsageError("--len must be at least 3");
    if (s.len > m.config.max_len) {
        throw UsageError("--len " + std::to_string(s.len) + " exceeds the model's max_len " +
                         std::to_string(m.config.max_len));
    }
    const std::size_t symbols = m.config.vocab - kFirstSymbol;
    return MarkovCorpus(m.config.seed, symbols).generate(s.count, s.len, s.seed);
}

/// Head snapshots with the sequence each came from and, when known, the
/// token-type labels of that sequence.
struct SnapshotSet {
    std::vector<HeadSnapshot> snaps;
    std::vector<std::size_t> sequence;
    std::vector<std::vector<std::string>> labels; ///< per sequence; empty if unknown
};

inline std::vector<std::size_t> tokens_from(const Matrix& m) {
    std::vector<std::size_t> out;
    for (double v : m.data()) out.push_back(static_cast<std::size_t>(v));
    return out;
}

inline SnapshotSet collect_snapshots(const Settings& s) {
    SnapshotSet set;
    std::optional<Model> model;
    if (!s.input.empty()) {
        const TensorBundle b = load_bundle(s.input);
        if (is_model_bundle(b)) {
            model = model_from_bundle(b);
        } else {
            set.snaps = snapshots_from_bundle(b);
            set.sequence.assign(set.snaps.size(), 0);
            set.labels.emplace_back();
            if (b.has("tokens")) set.labels.back() = token_type_labels(tokens_from(b.matrix("tokens")));
            return set;
        }
    } else {
        model = init(s.model_config());
    }
    const auto seqs = sequences_for(s, *model);
    for (std::size_t k = 0; k < seqs.size(); ++k) {
        ForwardTrace tr = forward(*model, seqs[k]);
        for (auto& snap : tr.snapshots) {
            set.snaps.push_back(std::move(snap));
            set.sequence.push_back(k);
        }
        set.labels.push_back(token_type_labels(seqs[k].tokens));
    }
    return set;
}

inline void announce(std::ostream& out, const std::string& path) { out << "wrote " << path << "\n"; }

inline void write_table(const CsvTable& t, const Settings& s, const std::string& name, std::ostream& out) {
    emit_csv(t, s.path(name));
    announce(out, s.path(name));
}

// --- subcommands -------------------------------------------------------------

inline int cmd_train(const Settings& s, std::ostream& out) {
    const ModelConfig c = s.model_config();
    if (s.len < 3) throw UsageError("--len must be at least 3");
    const auto corpus = s.corpus().generate(s.corpus_size, s.len, s.seed);
    TrainOptions opt;
    opt.steps = s.steps;
    opt.learn_rate = s.learn_rate;
    opt.seed = s.seed;
    const TrainResult r = train_mlm(init(c), corpus, opt);
    CsvTable t{{"step", "loss"}, {}};
    for (std::size_t i = 0; i < r.losses.size(); ++i) t.add({ll(i), r.losses[i]});
    write_table(t, s, "train_loss.csv", out);
    save_bundle(model_to_bundle(r.model), s.path("model.atnt"));
    announce(out, s.path("model.atnt"));
    if (!r.losses.empty()) out << "loss " << r.losses.front() << " -> " << r.losses.back() << "\n";
    return kExitOk;
}

inline int cmd_forward(const Settings& s, std::ostream& out) {
    const Model m = load_or_init_model(s);
    Settings one = s;
    one.count = 1;
    const TokenSequence seq = sequences_for(one, m).front();
    TensorBundle b = trace_to_bundle(forward(m, seq));
    Matrix toks(1, seq.size()), segs(1, seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i) {
        toks(0, i) = static_cast<double>(seq.tokens[i]);
        segs(0, i) = static_cast<double>(seq.segments[i]);
    }
    b.put("tokens", toks);
    b.put("segments", segs);
    save_bundle(b, s.path("trace.atnt"));
    announce(out, s.path("trace.atnt"));
    return kExitOk;
}

inline int cmd_nullspace(const Settings& s, std::ostream& out) {
    const SnapshotSet set = collect_snapshots(s);
    CsvTable t{{"sequence", "layer", "head", "d_s", "d", "d_v", "rank_T", "dim_LN_T", "dim_LN_T1", "lower_bound_LN_T",
                "lower_bound_LN_T1", "s1"},
               {}};
    for (std::size_t k = 0; k < set.snaps.size(); ++k) {
        const NullspaceReport r = nullspace_report(set.snaps[k], s.tol);
        t.add({ll(set.sequence[k]), ll(r.layer), ll(r.head), ll(r.d_s), ll(r.d), ll(r.d_v), ll(r.rank_T),
               ll(r.dim_LN_T), ll(r.dim_LN_T1), ll(r.lower_bound_LN_T), ll(r.lower_bound_LN_T1), r.s1});
        if (set.snaps.size() <= 8) {
            out << "layer " << r.layer << " head " << r.head << ": d_s=" << r.d_s << " rank(T)=" << r.rank_T
                << " dim LN(T)=" << r.dim_LN_T << " dim LN([T,1])=" << r.dim_LN_T1 << "\n";
        }
    }
    write_table(t, s, "nullspace.csv", out);
    return kExitOk;
}

inline int cmd_effective(const Settings& s, std::ostream& out) {
    const SnapshotSet set = collect_snapshots(s);
    std::vector<AttentionDecomposition> decs;
    decs.reserve(set.snaps.size());
    for (const auto& snap : set.snaps) decs.push_back(decompose(snap, s.tol));

    const CorrelationProfile by_len = correlation_profile(decs, true);
    CsvTable prof{{"d_s", "n", "mean_pearson"}, {}};
    for (const auto& r : by_len.rows) prof.add({ll(r.d_s), ll(r.n), r.n ? CsvCell{r.mean_pearson} : CsvCell{""}});
    write_table(prof, s, "effective_correlation.csv", out);

    const CorrelationProfile per_head = correlation_profile(decs, false);
    CsvTable heads{{"sequence", "layer", "head", "d_s", "pearson"}, {}};
    for (std::size_t k = 0; k < decs.size(); ++k) {
        const auto& r = per_head.rows[k];
        heads.add({ll(set.sequence[k]), ll(decs[k].layer), ll(decs[k].head), ll(r.d_s),
                   r.n ? CsvCell{r.mean_pearson} : CsvCell{""}});
    }
    write_table(heads, s, "effective_per_head.csv", out);

    CsvTable undefined{{"sequence", "layer", "head", "d_s"}, {}};
    for (const auto& f : per_head.undefined)
        undefined.add({ll(set.sequence[f.index]), ll(f.layer), ll(f.head), ll(f.d_s)});
    write_table(undefined, s, "effective_undefined.csv", out);

    CsvTable groups{{"sequence", "layer", "head", "matrix", "group", "members", "mean_weight"}, {}};
    const std::vector<std::string> expected{"CLS", "SEP", "MASK", "other"};
    for (std::size_t k = 0; k < decs.size(); ++k) {
        const auto& labels = set.labels[set.sequence[k]];
        if (labels.size() != decs[k].A.cols()) continue;
        for (const auto& [name, mat] : {std::pair<std::string, const Matrix*>{"raw", &decs[k].A},
                                        {"effective", &decs[k].A_perp}}) {
            for (const auto& g : token_group_aggregate(*mat, labels, expected)) {
                groups.add({ll(set.sequence[k]), ll(decs[k].layer), ll(decs[k].head), name, g.group, ll(g.members),
                            g.mean ? CsvCell{*g.mean} : CsvCell{""}});
            }
        }
    }
    write_table(groups, s, "effective_token_groups.csv", out);

    // Raw / effective / null matrices of the first sequence, long format.
    CsvTable trip{{"sequence", "layer", "head", "matrix", "row", "col", "value"}, {}};
    for (std::size_t k = 0; k < decs.size() && set.sequence[k] == set.sequence.front(); ++k) {
        const AttentionTriplet tr = dump_triplet(decs[k]);
        for (const auto& [name, mat] : {std::pair<std::string, const Matrix*>{"raw", &tr.raw},
                                        {"effective", &tr.effective}, {"null", &tr.null}}) {
            for (std::size_t i = 0; i < mat->rows(); ++i)
                for (std::size_t j = 0; j < mat->cols(); ++j)
                    trip.add({ll(set.sequence[k]), ll(decs[k].layer), ll(decs[k].head), name, ll(i), ll(j), (*mat)(i, j)});
        }
    }
    write_table(trip, s, "effective_triplets.csv", out);
    for (const auto& r : by_len.rows)
        out << "d_s=" << r.d_s << ": mean Pearson(A, A_perp) over " << r.n << " heads = " << r.mean_pearson << "\n";
    return kExitOk;
}

inline int cmd_perturb(const Settings& s, std::ostream& out) {
    if (!(s.scale > 0.0 && s.scale <= 1.0)) throw UsageError("--scale must lie in (0, 1]");
    const SnapshotSet set = collect_snapshots(s);
    CsvTable t{{"sequence", "layer", "head", "d_s", "status", "max_attention_change", "max_output_diff",
                "rel_output_diff", "max_row_sum_err", "min_entry", "pass"},
               {}};
    TensorBundle alt;
    alt.metadata["kind"] = "perturbed";
    bool all_pass = true;
    const Philox base(s.seed, 0x9E7);
    for (std::size_t k = 0; k < set.snaps.size(); ++k) {
        const HeadSnapshot& snap = set.snaps[k];
        const Matrix T = compute_T(snap);
        const double s1 = singular_values(T).front();
        Matrix a_alt = snap.A;
        std::string status = "perturbed";
        try {
            a_alt = perturb_attention(snap, base.substream(k), s.scale, s.tol).A_alt;
        } catch (const IdentifiableHead&) {
            status = "identifiable";
        }
        const EquivalenceReport rep = verify_equivalence(snap.A, a_alt, T, 1e-9 * std::max(s1, 1.0));
        all_pass = all_pass && rep.pass;
        t.add({ll(set.sequence[k]), ll(snap.layer), ll(snap.head), ll(snap.A.rows()), status,
               max_abs_diff(a_alt, snap.A), rep.max_output_diff, s1 > 0.0 ? rep.max_output_diff / s1 : 0.0,
               rep.max_row_sum_err, rep.min_entry, rep.pass ? 1LL : 0LL});
        if (set.sequence[k] == 0) {
            HeadSnapshot copy = snap;
            copy.A = a_alt;
            put_snapshot(alt, copy);
        }
    }
    write_table(t, s, "perturb.csv", out);
    save_bundle(alt, s.path("perturbed.atnt"));
    announce(out, s.path("perturbed.atnt"));
    out << (all_pass ? "every alternative attention is output-equivalent\n"
                     : "equivalence check FAILED for at least one head\n");
    return all_pass ? kExitOk : kExitAnalysisFailure;
}

inline CsvCell opt_cell(const std::optional<double>& v) { return v ? CsvCell{*v} : CsvCell{""}; }

inline int cmd_attribute(const Settings& s, std::ostream& out) {
    const Model m = load_or_init_model(s);
    const auto seqs = sequences_for(s, m);
    std::vector<AttributionTensor> tensors;
    std::vector<std::vector<std::string>> labels;
    for (const auto& seq : seqs) {
        tensors.push_back(attribute(m, seq));
        labels.push_back(token_type_labels(seq.tokens));
    }

    CsvTable self{{"layer", "group", "n", "median", "q1", "q3", "whisker_low", "whisker_high"}, {}};
    for (const auto& r : self_contribution_stats(tensors, labels)) {
        self.add({ll(r.layer), r.group, ll(r.stats.n), r.stats.median, r.stats.q1, r.stats.q3, r.stats.whisker_low,
                  r.stats.whisker_high});
    }
    write_table(self, s, "attribution_self.csv", out);

    CsvTable nm{{"layer", "non_max_fraction"}, {}};
    for (const auto& v : non_max_fraction(tensors)) nm.add({ll(v.layer), v.value});
    write_table(nm, s, "attribution_non_max.csv", out);

    const LocalityProfile loc = locality_profile(tensors);
    CsvTable share{{"layer", "group", "share", "mean_contribution", "targets"}, {}};
    for (std::size_t l = 0; l < loc.layers.size(); ++l)
        for (std::size_t g = 0; g < loc.groups.size(); ++g)
            share.add({ll(loc.layers[l]), loc.groups[g].name, opt_cell(loc.share[l][g]),
                       opt_cell(loc.mean_contribution[l][g]), ll(loc.target_counts[g])});
    write_table(share, s, "attribution_locality.csv", out);

    CsvTable curves{{"layer", "offset", "total"}, {}};
    for (const auto& c : loc.curves)
        for (std::size_t k = 0; k < c.offsets.size(); ++k)
            curves.add({ll(c.layer), static_cast<long long>(c.offsets[k]), c.total[k]});
    write_table(curves, s, "attribution_offsets.csv", out);

    // The first sequence's CLS position tracked through the layers.
    const Matrix cls = track_token(tensors.front(), 0);
    CsvTable track{{"layer", "source", "contribution"}, {}};
    for (std::size_t l = 0; l < cls.rows(); ++l)
        for (std::size_t i = 0; i < cls.cols(); ++i) track.add({ll(tensors.front().layer_ids[l]), ll(i), cls(l, i)});
    write_table(track, s, "attribution_cls.csv", out);
    return kExitOk;
}

inline int cmd_probe(const Settings& s, std::ostream& out) {
    if (s.folds == 0) throw UsageError("--folds must be at least 1");
    const Model m = load_or_init_model(s);
    const auto seqs = sequences_for(s, m);
    std::vector<ForwardTrace> traces;
    for (const auto& seq : seqs) traces.push_back(forward(m, seq));

    RateProfileOptions opt;
    for (std::size_t l = 0; l <= m.config.layers; ++l) opt.layers.push_back(l);
    opt.kinds = {ProbeKind::linear, ProbeKind::naive};
    if (s.with_mlp) opt.kinds.insert(opt.kinds.begin() + 1, ProbeKind::mlp);
    opt.folds = s.folds;
    opt.split_seed = s.seed;
    opt.hyper.seed = s.seed;
    opt.hyper.max_epochs = s.max_epochs;
    CsvTable rates{{"layer", "probe", "metric", "rate_train", "rate_test"}, {}};
    for (const auto& r : rate_profile(traces, opt)) {
        rates.add({ll(r.layer), std::string(to_string(r.kind)), std::string(to_string(r.metric)), r.rate_train,
                   r.rate_test});
    }
    write_table(rates, s, "probe_rates.csv", out);

    // A linear cosine probe trained on layer 1 applied to every layer.
    if (m.config.layers >= 1) {
        std::vector<ProbeDataset> per_layer;
        for (std::size_t l = 0; l <= m.config.layers; ++l)
            per_layer.push_back(build_dataset(traces, l, ProbeTarget::input, 0, s.seed));
        const ProbeModel p = train_probe(per_layer[1], ProbeKind::linear, ProbeMetric::cosine, opt.hyper);
        CsvTable cross{{"trained_layer", "eval_layer", "rate_test"}, {}};
        const auto r = cross_layer_eval(p, per_layer);
        for (std::size_t l = 0; l < r.size(); ++l) cross.add({1LL, ll(l), r[l]});
        write_table(cross, s, "probe_cross_layer.csv", out);
    }
    return kExitOk;
}

inline int cmd_verify(const Settings& s, std::ostream& out) {
    if (!(s.scale > 0.0 && s.scale <= 1.0)) throw UsageError("--scale must lie in (0, 1]");
    acceptance::Options opt;
    opt.seed = s.seed;
    opt.out_dir = s.out;
    opt.scale = s.scale;
    opt.determinism_rerun = !s.no_rerun;
    opt.only = s.only;
    const auto results = acceptance::run(opt, [&](const acceptance::Result& r) {
        out << acceptance::format_line(r) << std::endl;
    });
    std::size_t passed = 0;
    for (const auto& r : results) passed += r.pass;
    out << passed << "/" << results.size() << " criteria passed\n";
    return passed == results.size() ? kExitOk : kExitAnalysisFailure;
}

} // namespace detail

/// Parse `argv` and run one subcommand.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    Settings s;
    CLI::App app{"Identifiability analyses of self-attention on a toy transformer or dumped tensors", "attnid"};
    app.set_config("--config", "", "flat key=value file; command-line flags override it");
    app.require_subcommand(1);

    app.add_option("--seed", s.seed, "seed for models, corpora, splits and perturbations");
    app.add_option("--tol", s.tol, "singular-value cutoff (default max(d_s,d) * eps * s1)");
    app.add_option("--scale", s.scale, "perturbation scale in (0, 1]");
    app.add_option("--folds", s.folds, "probe cross-validation folds");
    app.add_option("--layers", s.layers, "encoder layers");
    app.add_option("--heads", s.heads, "attention heads per layer");
    app.add_option("--dim", s.dim, "model dimension d");
    app.add_option("--dv", s.dv, "head dimension d_v (= dim / heads)");
    app.add_option("--dff", s.dff, "feed-forward dimension (default 4 * dim)");
    app.add_option("--vocab", s.vocab, "vocabulary size including 3 special tokens");
    app.add_option("--len", s.len, "sequence length d_s");
    app.add_option("--out", s.out, "output directory");
    app.add_option("--input", s.input, "model, trace or snapshot bundle to analyse");
    app.add_option("--count", s.count, "sequences to analyse");

    struct Sub {
        const char* name;
        const char* help;
        int (*fn)(const Settings&, std::ostream&);
    };
    const Sub subs[] = {
        {"train", "train the toy model with masked-token prediction", detail::cmd_train},
        {"forward", "dump a forward trace bundle", detail::cmd_forward},
        {"nullspace", "rank and null-space dimensions per head", detail::cmd_nullspace},
        {"effective", "effective-attention decompositions and correlations", detail::cmd_effective},
        {"perturb", "output-equivalent alternative attention per head", detail::cmd_perturb},
        {"attribute", "hidden token attribution statistics", detail::cmd_attribute},
        {"probe", "token identifiability probes", detail::cmd_probe},
        {"verify", "run the acceptance suite", detail::cmd_verify},
    };
    std::vector<std::pair<CLI::App*, const Sub*>> apps;
    for (const Sub& sub : subs) {
        CLI::App* sc = app.add_subcommand(sub.name, sub.help);
        sc->fallthrough();
        apps.emplace_back(sc, &sub);
    }
    CLI::App* train = apps[0].first;
    train->add_option("--steps", s.steps, "optimizer steps");
    train->add_option("--lr", s.learn_rate, "Adam learning rate");
    train->add_option("--corpus-size", s.corpus_size, "training sequences");
    CLI::App* probe = apps[6].first;
    probe->add_option("--max-epochs", s.max_epochs, "epoch cap per probe");
    probe->add_flag("--mlp", s.with_mlp, "also train MLP probes");
    CLI::App* verify = apps[7].first;
    verify->add_option("--only", s.only, "criteria to run, e.g. A1 A4");
    verify->add_flag("--no-rerun", s.no_rerun, "skip the determinism rerun");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "attnid: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        std::filesystem::create_directories(s.out);
        for (const auto& [sc, sub] : apps)
            if (sc->parsed()) return sub->fn(s, out);
    } catch (const UsageError& e) {
        err << "attnid: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "attnid: " << e.what() << "\n";
        return kExitAnalysisFailure;
    }
    return kExitUsage;
}

} // namespace attnid::cli

#endif // ATTNID_CLI_HPP
