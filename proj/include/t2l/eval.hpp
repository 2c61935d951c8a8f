#pragma once

// Accuracy, relative performance, compression ratio, adapter averaging,
// weight-space similarity studies, activation export and FLOPs accounting.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "t2l/base_lm.hpp"
#include "t2l/hypernet.hpp"
#include "t2l/lora.hpp"
#include "t2l/task_embed.hpp"
#include "t2l/taskgen.hpp"

namespace t2l {

// ---------------------------------------------------------------------------
// Accuracy

inline constexpr std::size_t kEvalBatch = 64;

/// Fraction of `examples` whose greedy completion equals the reference.
inline double accuracy_on(const BaseLM& lm, const std::vector<Example>& examples, const AdapterSet* adapters = nullptr) {
    if (examples.empty()) throw ContractError("evaluate: empty test split");
    std::optional<AdapterView> v;
    if (adapters) v = view_of(*adapters);
    std::size_t hits = 0;
    for (std::size_t s = 0; s < examples.size(); s += kEvalBatch) {
        std::vector<Example> chunk(examples.begin() + static_cast<std::ptrdiff_t>(s),
                                   examples.begin() + static_cast<std::ptrdiff_t>(std::min(examples.size(), s + kEvalBatch)));
        for (bool ok : exact_match(lm, chunk, v ? &*v : nullptr)) hits += ok;
    }
    return static_cast<double>(hits) / static_cast<double>(examples.size());
}

/// Exact-match accuracy on the task's test split.
inline double evaluate(const BaseLM& lm, const AdapterSet* adapters, const ToyTask& task) {
    return accuracy_on(lm, task.test, adapters);
}

inline double evaluate(const BaseLM& lm, const AdapterSet& adapters, const ToyTask& task) {
    return evaluate(lm, &adapters, task);
}

/// Mean accuracy of hypernet-generated adapters over several descriptions.
inline double evaluate_descriptions(const BaseLM& lm, const Hypernet& h, const ToyTask& task,
                                    const std::vector<std::string>& descriptions,
                                    const std::function<Tensor(const std::string&)>& embed) {
    if (descriptions.empty()) throw ContractError("evaluate_descriptions: no descriptions");
    NoGradGuard no_grad;
    double total = 0.0;
    for (const auto& d : descriptions) {
        AdapterSet a = generate(h, embed(d));
        total += evaluate(lm, a, task);
    }
    return total / static_cast<double>(descriptions.size());
}

// ---------------------------------------------------------------------------
// Reports

struct EvalRow {
    std::string task_id;
    std::string tag;  // base, oracle, multitask, averaged, t2l-L, ...
    double accuracy = 0.0;

    bool operator==(const EvalRow&) const = default;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::vector<std::uint64_t> seeds;
    double runtime_seconds = 0.0;

    void add(const std::string& task, const std::string& tag, double acc) {
        if (!(acc >= 0.0 && acc <= 1.0)) throw ContractError("EvalReport: accuracy outside [0, 1]");
        rows.push_back({task, tag, acc});
    }

    std::optional<double> get(const std::string& task, const std::string& tag) const {
        for (const auto& r : rows)
            if (r.task_id == task && r.tag == tag) return r.accuracy;
        return std::nullopt;
    }

    double mean(const std::string& tag) const {
        double s = 0.0;
        std::size_t n = 0;
        for (const auto& r : rows)
            if (r.tag == tag) {
                s += r.accuracy;
                ++n;
            }
        if (n == 0) throw ContractError("EvalReport: no rows tagged '" + tag + "'");
        return s / static_cast<double>(n);
    }

    /// Rows only; runtime is excluded so reruns compare equal.
    bool same_results(const EvalReport& o) const { return rows == o.rows && seeds == o.seeds; }
};

inline void write_report(const EvalReport& r, std::ostream& out) {
    out << "# seeds";
    for (auto s : r.seeds) out << ' ' << s;
    out << "\n# runtime_seconds " << r.runtime_seconds << "\n";
    out << "task\ttag\taccuracy\n";
    out << std::setprecision(17);
    for (const auto& row : r.rows) out << row.task_id << '\t' << row.tag << '\t' << row.accuracy << '\n';
}

inline void write_report(const EvalReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open '" + path + "' for writing");
    write_report(r, out);
}

inline EvalReport read_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open report '" + path + "'");
    EvalReport r;
    std::string line;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.rfind("# seeds", 0) == 0) {
            std::istringstream ss(line.substr(7));
            std::uint64_t s;
            while (ss >> s) r.seeds.push_back(s);
            continue;
        }
        if (line.rfind("# runtime_seconds", 0) == 0) {
            r.runtime_seconds = std::stod(line.substr(17));
            continue;
        }
        if (!header) {
            header = true;
            continue;
        }
        std::istringstream ss(line);
        EvalRow row;
        std::string acc;
        if (!std::getline(ss, row.task_id, '\t') || !std::getline(ss, row.tag, '\t') || !std::getline(ss, acc))
            throw InputError("'" + path + "': malformed report row");
        row.accuracy = std::stod(acc);
        r.rows.push_back(row);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Metrics

struct RelativePerformance {
    double value = 0.0;
    bool degenerate = false;  // oracle - base below 0.01: value is unreliable
};

inline constexpr double kDegenerateGap = 0.01;

/// (acc - base) / (oracle - base), flagged when the gap is too small to divide by.
inline RelativePerformance relative_performance(double acc, double base_acc, double oracle_acc) {
    const double gap = oracle_acc - base_acc;
    if (gap < kDegenerateGap) return {gap > 0.0 ? (acc - base_acc) / gap : std::nan(""), true};
    return {(acc - base_acc) / gap, false};
}

/// Total adapter parameters in the library over hypernet parameters.
inline double compression_ratio(const AdapterLibrary& library, const Hypernet& h) {
    if (library.empty()) throw ContractError("compression_ratio: empty library");
    std::size_t total = 0;
    for (const auto& a : library.adapters) total += a.param_count();
    return static_cast<double>(total) / static_cast<double>(h.param_count());
}

/// Elementwise mean of every A and B across the library.
inline AdapterSet average_lora(const AdapterLibrary& library) {
    if (library.empty()) throw ContractError("average_lora: empty library");
    library.validate();
    std::vector<double> acc(library.adapters[0].param_count(), 0.0);
    for (const auto& a : library.adapters) {
        const auto f = a.flatten_ab();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += f[i];
    }
    for (double& v : acc) v /= static_cast<double>(library.size());
    AdapterSet out = library.adapters[0].with_values(acc);
    out.task_id = "averaged";
    out.description.clear();
    return out;
}

/// Sample Pearson correlation.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ShapeError("pearson: series of different length");
    if (x.size() < 3) throw ContractError("pearson: need at least 3 points");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw UndefinedError("pearson: a series has zero variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Weight-space similarity versus embedding similarity

struct NamedVector {
    std::string id;
    std::vector<double> values;
};

struct SimilarityRow {
    std::string benchmark;
    std::string member;
    double embed_cos = 0.0;
    double ab_cos = 0.0;
    double dw_cos = 0.0;
    std::optional<double> relative_performance;
};

struct SimilarityTable {
    std::vector<SimilarityRow> rows;
    /// Per benchmark: Pearson r of embedding cosine against A/B and against delta-W cosine.
    std::map<std::string, std::pair<double, double>> pearson_by_benchmark;
    double pearson_ab = 0.0;  // over all rows
    double pearson_dw = 0.0;
};

namespace detail {

inline void require_aligned(const std::vector<AdapterSet>& adapters, const std::vector<NamedVector>& emb,
                            const char* what) {
    if (adapters.size() != emb.size())
        throw IndexError(std::string("similarity_study: ") + what + " has " + std::to_string(adapters.size()) +
                         " adapters but " + std::to_string(emb.size()) + " embeddings");
    for (std::size_t i = 0; i < adapters.size(); ++i)
        if (adapters[i].task_id != emb[i].id)
            throw IndexError(std::string("similarity_study: ") + what + " entry " + std::to_string(i) + " is task '" +
                             adapters[i].task_id + "' but its embedding is for '" + emb[i].id + "'");
}

}  // namespace detail

/// Compares each benchmark adapter with every library member. `rel_perf`,
/// when given, maps (benchmark id, member id) to the member's relative
/// performance on the benchmark task.
inline SimilarityTable similarity_study(
    const AdapterLibrary& library, const std::vector<NamedVector>& library_embeddings,
    const std::vector<AdapterSet>& benchmarks, const std::vector<NamedVector>& benchmark_embeddings,
    const std::map<std::pair<std::string, std::string>, double>& rel_perf = {}) {
    detail::require_aligned(library.adapters, library_embeddings, "library");
    detail::require_aligned(benchmarks, benchmark_embeddings, "benchmarks");
    SimilarityTable t;
    std::vector<double> all_e, all_ab, all_dw;
    for (std::size_t b = 0; b < benchmarks.size(); ++b) {
        std::vector<double> e, ab, dw;
        for (std::size_t j = 0; j < library.size(); ++j) {
            SimilarityRow row;
            row.benchmark = benchmarks[b].task_id;
            row.member = library.adapters[j].task_id;
            row.embed_cos = cosine_similarity(benchmark_embeddings[b].values, library_embeddings[j].values);
            row.ab_cos = similarity_ab(benchmarks[b], library.adapters[j]);
            row.dw_cos = similarity_dw(benchmarks[b], library.adapters[j]);
            auto it = rel_perf.find({row.benchmark, row.member});
            if (it != rel_perf.end()) row.relative_performance = it->second;
            e.push_back(row.embed_cos);
            ab.push_back(row.ab_cos);
            dw.push_back(row.dw_cos);
            t.rows.push_back(row);
        }
        if (e.size() >= 3) t.pearson_by_benchmark[benchmarks[b].task_id] = {pearson(e, ab), pearson(e, dw)};
        all_e.insert(all_e.end(), e.begin(), e.end());
        all_ab.insert(all_ab.end(), ab.begin(), ab.end());
        all_dw.insert(all_dw.end(), dw.begin(), dw.end());
    }
    t.pearson_ab = pearson(all_e, all_ab);
    t.pearson_dw = pearson(all_e, all_dw);
    return t;
}

inline void write_similarity_table(const SimilarityTable& t, std::ostream& out) {
    out << std::setprecision(17);
    out << "benchmark\tmember\tembed_cos\tab_cos\tdw_cos\trelative_performance\n";
    for (const auto& r : t.rows) {
        out << r.benchmark << '\t' << r.member << '\t' << r.embed_cos << '\t' << r.ab_cos << '\t' << r.dw_cos << '\t';
        if (r.relative_performance) out << *r.relative_performance;
        out << '\n';
    }
    out << "# pearson(embed, ab)\t" << t.pearson_ab << "\n# pearson(embed, dw)\t" << t.pearson_dw << '\n';
    for (const auto& [b, rs] : t.pearson_by_benchmark)
        out << "# " << b << "\tpearson_ab " << rs.first << "\tpearson_dw " << rs.second << '\n';
}

// ---------------------------------------------------------------------------
// Activation export

struct ActivationRow {
    std::string task_id;
    std::size_t description_index = 0;
    std::string description;
    HypernetActivations act;
};

/// One row per (task, description).
inline std::vector<ActivationRow> export_activations(
    const Hypernet& h, const std::vector<std::pair<std::string, std::vector<std::string>>>& task_descriptions,
    const std::function<Tensor(const std::string&)>& embed) {
    std::vector<ActivationRow> rows;
    for (const auto& [id, descs] : task_descriptions) {
        if (descs.empty()) throw ContractError("export_activations: task '" + id + "' has no descriptions");
        for (std::size_t i = 0; i < descs.size(); ++i) rows.push_back({id, i, descs[i], activations(h, embed(descs[i]))});
    }
    return rows;
}

/// TAB-separated: task_id, description index, comma-joined task-encoder
/// activations, comma-joined last-block activations.
inline void write_activations(const std::vector<ActivationRow>& rows, std::ostream& out) {
    out << std::setprecision(17);
    auto csv = [&](const std::vector<double>& v) {
        for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
    };
    for (const auto& r : rows) {
        out << r.task_id << '\t' << r.description_index << '\t';
        csv(r.act.task_encoder);
        out << '\t';
        csv(r.act.last_block);
        out << '\n';
    }
}

/// Mean pairwise Euclidean distance between rows of different tasks and of the same task.
inline std::pair<double, double> inter_intra_distance(const std::vector<ActivationRow>& rows, bool last_block = true) {
    double inter = 0.0, intra = 0.0;
    std::size_t ni = 0, nj = 0;
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = i + 1; j < rows.size(); ++j) {
            const auto& a = last_block ? rows[i].act.last_block : rows[i].act.task_encoder;
            const auto& b = last_block ? rows[j].act.last_block : rows[j].act.task_encoder;
            double d = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
            d = std::sqrt(d);
            if (rows[i].task_id == rows[j].task_id) {
                intra += d;
                ++nj;
            } else {
                inter += d;
                ++ni;
            }
        }
    return {ni ? inter / static_cast<double>(ni) : 0.0, nj ? intra / static_cast<double>(nj) : 0.0};
}

// ---------------------------------------------------------------------------
// FLOPs (input-token GEMMs only)

/// Self-attention 8SH^2 + 4HS^2 plus feed-forward 16SH^2.
inline std::uint64_t flops_block(std::uint64_t S, std::uint64_t H) { return 24 * S * H * H + 4 * H * S * S; }

inline std::uint64_t flops_model(std::uint64_t S, std::uint64_t H, std::uint64_t L) { return L * flops_block(S, H); }

struct TransformerShape {
    std::uint64_t seq = 0, hidden = 0, layers = 0;
};

struct HypernetFlopsShape {
    std::uint64_t d_text = 1024;   // text-encoder output width
    std::uint64_t d_task_enc = 64;
    std::uint64_t d_desc = 128;
    std::uint64_t d_hidden = 512;
    std::uint64_t n_blocks = 4;    // mixer, mlp1, mlp2, mlp3
    std::uint64_t d_target = 4096;
    std::uint64_t rank = 8;
};

/// Task encoder 2*d_text*d_enc, four two-layer blocks 4*n_blocks*d_desc*d_hidden,
/// output head d_desc*d_target*rank.
inline std::uint64_t flops_hypernet(const HypernetFlopsShape& h) {
    return 2 * h.d_text * h.d_task_enc + 4 * h.n_blocks * h.d_desc * h.d_hidden + h.d_desc * h.d_target * h.rank;
}

struct PipelineFlops {
    std::uint64_t encoder = 0, hypernet = 0, base = 0;
    std::uint64_t total() const { return encoder + hypernet + base; }
};

inline PipelineFlops flops_t2l_pipeline(const TransformerShape& encoder, const HypernetFlopsShape& hypernet,
                                        const TransformerShape& lm) {
    return {flops_model(encoder.seq, encoder.hidden, encoder.layers), flops_hypernet(hypernet),
            flops_model(lm.seq, lm.hidden, lm.layers)};
}

/// Base model over a prompt lengthened to `shots_len` tokens by in-context examples.
inline std::uint64_t flops_icl(const TransformerShape& lm, std::uint64_t shots_len) {
    return flops_model(shots_len, lm.hidden, lm.layers);
}

/// Component TFLOPs rounded the way they are usually quoted (three decimals,
/// or one significant digit below 0.001) and summed; reproduces the quoted
/// pipeline figure, which differs from the exact total in the sixth decimal.
inline std::string printed_tflops(const PipelineFlops& f) {
    auto micro = [](std::uint64_t flops) -> std::uint64_t {  // units of 1e-6 TFLOPs
        if (flops >= 1'000'000'000ull) return (flops + 500'000'000ull) / 1'000'000'000ull * 1000;
        std::uint64_t unit = 1'000'000;  // one digit at the leading magnitude
        while (flops / unit >= 10) unit *= 10;
        return (flops + unit / 2) / unit * unit / 1'000'000;
    };
    const std::uint64_t m = micro(f.encoder) + micro(f.hypernet) + micro(f.base);
    std::ostringstream s;
    s << m / 1'000'000 << '.' << std::setw(6) << std::setfill('0') << m % 1'000'000;
    return s.str();
}

/// Shapes at the published scale: gte-large encoder over 48 tokens, a 4096-wide
/// 32-layer base model over 64 tokens (320 with three in-context examples).
struct PaperFlopsPreset {
    TransformerShape encoder{48, 1024, 24};
    HypernetFlopsShape hypernet{};
    TransformerShape lm{64, 4096, 32};
    std::uint64_t icl_len = 320;
};

}  // namespace t2l
