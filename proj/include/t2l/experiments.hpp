#pragma once

// Desk-scale experiment drivers: oracle libraries, the compression curve,
// zero-shot generalization to held-out tasks, description alignment, and the
// rank-rotation similarity study.

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "t2l/eval.hpp"
#include "t2l/train.hpp"

namespace t2l {

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::vector<Tensor> embed_all(const Embedder& embed, const std::vector<std::string>& texts) {
    std::vector<Tensor> out;
    for (const auto& t : texts) out.push_back(embed(t));
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Oracle library

struct OracleConfig {
    LoraConfig lora{};
    TrainConfig train{.max_steps = 400, .batch_size = 16, .max_lr = 1e-2, .warmup_fraction = 0.1};
};

struct OracleSet {
    std::vector<ToyTask> tasks;
    AdapterLibrary library;
    std::vector<double> base_acc;
    std::vector<double> oracle_acc;

    RelativePerformance relative(std::size_t i, double acc) const {
        return relative_performance(acc, base_acc.at(i), oracle_acc.at(i));
    }
};

/// One task-specific adapter per task, with base and oracle test accuracy.
inline OracleSet build_oracles(const BaseLM& lm, const std::vector<ToyTask>& tasks, const OracleConfig& oc,
                               std::uint64_t seed) {
    OracleSet out;
    out.tasks = tasks;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        TrainConfig tc = oc.train;
        tc.seed = seed + 1000 * i;
        AdapterSet a = train_task_lora(tasks[i], lm, oc.lora, tc);
        out.base_acc.push_back(evaluate(lm, nullptr, tasks[i]));
        out.oracle_acc.push_back(evaluate(lm, a, tasks[i]));
        out.library.adapters.push_back(std::move(a));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Compression curve: reconstruction quality versus library size

struct CompressionPoint {
    std::size_t n_tasks = 0;
    double compression_ratio = 0.0;
    double mean_l1_raw = 0.0;
    double mean_relative_performance = 0.0;
    std::size_t n_degenerate = 0;  // tasks excluded for a tiny oracle-base gap
};

struct CompressionCurve {
    Arch arch = Arch::M;
    std::uint64_t seed = 0;
    std::vector<CompressionPoint> points;  // ordered by n_tasks
};

struct CompressionConfig {
    std::vector<std::size_t> sizes{2, 4, 8, 16};
    Arch arch = Arch::M;
    TrainConfig recon{.max_steps = 2000, .batch_size = 1, .max_lr = 1e-3, .warmup_fraction = 0.1};
    double hypernet_dropout = 0.0;
};

/// Recon-trains one hypernet per library prefix with one-hot task embeddings
/// and scores the generated adapters against their oracles.
inline CompressionCurve compression_curve(const BaseLM& lm, const OracleSet& oracles, const CompressionConfig& cc,
                                          std::uint64_t seed) {
    CompressionCurve curve{cc.arch, seed, {}};
    for (std::size_t n : cc.sizes) {
        if (n > oracles.library.size())
            throw CapacityError("compression_curve: " + std::to_string(n) + " tasks requested, library has " +
                                std::to_string(oracles.library.size()));
        AdapterLibrary lib;
        lib.adapters.assign(oracles.library.adapters.begin(),
                            oracles.library.adapters.begin() + static_cast<std::ptrdiff_t>(n));
        std::vector<Tensor> emb;
        for (std::size_t i = 0; i < n; ++i) emb.push_back(embed_one_hot(i, n).vector);
        LoraConfig lora;
        lora.rank = lib.adapters[0].rank();
        lora.alpha = lib.adapters[0].scaling() * static_cast<double>(lora.rank);
        HypernetConfig hc = HypernetConfig::for_model(lm.config, lora, cc.arch, n);
        hc.scaling = lib.adapters[0].scaling();
        hc.dropout = cc.hypernet_dropout;
        TrainConfig tc = cc.recon;
        tc.seed = seed;
        ReconResult rr = train_t2l_recon(lib, emb, hc, tc, seed);

        CompressionPoint p;
        p.n_tasks = n;
        p.compression_ratio = compression_ratio(lib, rr.hypernet);
        p.mean_l1_raw = rr.final_l1_raw;
        double rel = 0.0;
        std::size_t counted = 0;
        NoGradGuard no_grad;
        for (std::size_t i = 0; i < n; ++i) {
            const double acc = evaluate(lm, generate(rr.hypernet, emb[i]), oracles.tasks[i]);
            const auto r = oracles.relative(i, acc);
            if (r.degenerate) {
                ++p.n_degenerate;
                continue;
            }
            rel += r.value;
            ++counted;
        }
        p.mean_relative_performance = counted ? rel / static_cast<double>(counted) : std::nan("");
        curve.points.push_back(p);
    }
    return curve;
}

/// Sorting points by L1 error, relative performance never rises by more than `band`.
inline bool monotone_in_error(const std::vector<CompressionPoint>& pts, double band) {
    std::vector<CompressionPoint> s = pts;
    std::sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.mean_l1_raw < b.mean_l1_raw; });
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = i + 1; j < s.size(); ++j)
            if (s[j].mean_relative_performance > s[i].mean_relative_performance + band) return false;
    return true;
}

inline void write_curve(const CompressionCurve& c, std::ostream& out) {
    out << std::setprecision(10);
    out << "# arch " << arch_name(c.arch) << " seed " << c.seed << "\n";
    out << "n_tasks\tcompression_ratio\tmean_l1_raw\tmean_relative_performance\tn_degenerate\n";
    for (const auto& p : c.points)
        out << p.n_tasks << '\t' << p.compression_ratio << '\t' << p.mean_l1_raw << '\t'
            << p.mean_relative_performance << '\t' << p.n_degenerate << '\n';
}

// ---------------------------------------------------------------------------
// Zero-shot generalization

struct ZeroShotConfig {
    LoraConfig lora{};
    TrainConfig multitask{.max_steps = 3000, .batch_size = 16, .max_lr = 1e-2, .warmup_fraction = 0.1};
    TrainConfig sft{.max_steps = 5000, .batch_size = 16, .max_lr = 2e-3, .warmup_fraction = 0.1};
    Arch arch = Arch::M;
    std::size_t d_task = 128;
};

struct ZeroShotResult {
    EvalReport report;
    double base_mean = 0.0;
    double multitask_mean = 0.0;
    double t2l_mean = 0.0;
    Hypernet hypernet;
};

/// Trains the multitask baseline and an SFT hypernet on the training tasks,
/// then scores both, and the bare base model, on the held-out tasks. T2L
/// adapters come from each held-out task's evaluation descriptions.
inline ZeroShotResult zero_shot(const BaseLM& lm, const TaskSuite& suite, const ZeroShotConfig& zc,
                                std::uint64_t seed) {
    if (suite.held_out.empty()) throw ConfigError("zero_shot: no held-out tasks");
    const auto t0 = std::chrono::steady_clock::now();
    TrainConfig mt = zc.multitask;
    mt.seed = seed;
    AdapterSet multi = train_multitask_lora(suite.train_tasks, lm, zc.lora, mt);

    const std::string tag = std::string("t2l-") + arch_name(zc.arch);
    HypernetConfig hc = HypernetConfig::for_model(lm.config, zc.lora, zc.arch, zc.d_task);
    TrainConfig st = zc.sft;
    st.seed = seed + 1;
    Embedder embed = hashed_embedder(zc.d_task);
    Hypernet h = train_t2l_sft(suite.train_tasks, lm, hc, st, embed, seed + 2);

    ZeroShotResult res{{}, 0.0, 0.0, 0.0, h};
    res.report.seeds = {seed};
    for (const auto& t : suite.held_out) {
        res.report.add(t.id, "base", evaluate(lm, nullptr, t));
        res.report.add(t.id, "multitask", evaluate(lm, multi, t));
        res.report.add(t.id, tag, evaluate_descriptions(lm, h, t, t.eval_descriptions, embed));
    }
    res.base_mean = res.report.mean("base");
    res.multitask_mean = res.report.mean("multitask");
    res.t2l_mean = res.report.mean(tag);
    res.report.runtime_seconds = detail::seconds_since(t0);
    return res;
}

// ---------------------------------------------------------------------------
// Description alignment

struct AlignmentConfig {
    Arch arch = Arch::M;
    std::size_t d_task = 128;
    std::size_t descriptions_per_task = 4;  // training copies of each library member
    TrainConfig recon{.max_steps = 1500, .batch_size = 1, .max_lr = 1e-3, .warmup_fraction = 0.1};
    double hypernet_dropout = 0.0;
};

struct AlignmentResult {
    double aligned_train = 0.0;   // the task's own training descriptions
    double aligned_eval = 0.0;    // its held-back evaluation descriptions
    double unaligned = 0.0;       // descriptions of other tasks
    EvalReport report;
};

/// Recon-trains on (description embedding, oracle) pairs, then evaluates each
/// task with aligned and unaligned descriptions.
inline AlignmentResult description_alignment(const BaseLM& lm, const OracleSet& oracles, const TaskSuite& suite,
                                             const AlignmentConfig& ac, std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    Embedder embed = hashed_embedder(ac.d_task);
    AdapterLibrary lib;
    std::vector<Tensor> emb;
    for (std::size_t i = 0; i < oracles.tasks.size(); ++i) {
        const auto& t = oracles.tasks[i];
        const std::size_t k = std::min(ac.descriptions_per_task, t.descriptions.size());
        for (std::size_t j = 0; j < k; ++j) {
            lib.adapters.push_back(oracles.library.adapters[i]);
            emb.push_back(embed(t.descriptions[j]));
        }
    }
    LoraConfig lora;
    lora.rank = lib.adapters.at(0).rank();
    lora.alpha = lib.adapters[0].scaling() * static_cast<double>(lora.rank);
    HypernetConfig hc = HypernetConfig::for_model(lm.config, lora, ac.arch, ac.d_task);
    hc.scaling = lib.adapters[0].scaling();
    hc.dropout = ac.hypernet_dropout;
    TrainConfig tc = ac.recon;
    tc.seed = seed;
    ReconResult rr = train_t2l_recon(lib, emb, hc, tc, seed);

    AlignmentResult res;
    res.report.seeds = {seed};
    for (std::size_t i = 0; i < oracles.tasks.size(); ++i) {
        const auto& t = oracles.tasks[i];
        const std::size_t k = std::min(ac.descriptions_per_task, t.descriptions.size());
        std::vector<std::string> train_desc(t.descriptions.begin(), t.descriptions.begin() + static_cast<std::ptrdiff_t>(k));
        res.report.add(t.id, "aligned-train", evaluate_descriptions(lm, rr.hypernet, t, train_desc, embed));
        res.report.add(t.id, "aligned-eval", evaluate_descriptions(lm, rr.hypernet, t, t.eval_descriptions, embed));
        res.report.add(t.id, "train-random",
                       evaluate_descriptions(lm, rr.hypernet, t, unaligned_descriptions(suite, t.id, k, seed), embed));
    }
    res.aligned_train = res.report.mean("aligned-train");
    res.aligned_eval = res.report.mean("aligned-eval");
    res.unaligned = res.report.mean("train-random");
    res.report.runtime_seconds = detail::seconds_since(t0);
    return res;
}

// ---------------------------------------------------------------------------
// Rank-rotation similarity study

struct RotationStudyConfig {
    std::size_t n_groups = 4;
    std::size_t members_per_group = 6;
    std::size_t d_embed = 16;
    double embed_noise = 0.5;
    BaseLMConfig lm = [] {
        BaseLMConfig c;
        c.d_model = 16;
        c.n_layers = 2;
        c.n_heads = 2;
        c.d_ff = 32;
        return c;
    }();
    LoraConfig lora{};
};

/// Random r x r orthogonal matrix (Gram-Schmidt on Gaussian columns).
inline std::vector<double> random_orthogonal(std::size_t r, Rng& rng) {
    std::vector<double> q(r * r);
    for (double& v : q) v = rng.normal();
    for (std::size_t j = 0; j < r; ++j) {
        for (std::size_t k = 0; k < j; ++k) {
            double d = 0.0;
            for (std::size_t i = 0; i < r; ++i) d += q[i * r + j] * q[i * r + k];
            for (std::size_t i = 0; i < r; ++i) q[i * r + j] -= d * q[i * r + k];
        }
        double n = 0.0;
        for (std::size_t i = 0; i < r; ++i) n += q[i * r + j] * q[i * r + j];
        n = std::sqrt(n);
        for (std::size_t i = 0; i < r; ++i) q[i * r + j] /= n;
    }
    return q;
}

/// (Q A, Q B): delta_W = B^T Q^T Q A is unchanged.
inline AdapterSet rotate_rank_space(const AdapterSet& s, const std::vector<double>& q) {
    const std::size_t r = s.rank();
    if (q.size() != r * r) throw ShapeError("rotate_rank_space: rotation is not r x r");
    Tensor qt({r, r}, q);
    NoGradGuard no_grad;
    std::vector<LoraPair> e;
    for (const auto& p : s.entries()) e.push_back({matmul(qt, p.a).detach(), matmul(qt, p.b).detach(), p.scaling});
    AdapterSet out(s.modules(), s.n_layers(), std::move(e), s.fingerprint());
    out.task_id = s.task_id;
    out.description = s.description;
    return out;
}

/// Groups of adapters that share a delta_W but differ by a rank-space
/// rotation; members of a group get nearby embeddings. One benchmark adapter
/// per group, itself another rotation.
inline SimilarityTable rotation_similarity_study(const RotationStudyConfig& rc, std::uint64_t seed) {
    Rng rng(seed);
    AdapterLibrary lib;
    std::vector<NamedVector> lib_emb, bench_emb;
    std::vector<AdapterSet> bench;
    const std::size_t r = rc.lora.rank;
    auto noisy = [&](const std::vector<double>& c) {
        std::vector<double> v = c;
        for (double& x : v) x += rc.embed_noise * rng.normal();
        return v;
    };
    for (std::size_t g = 0; g < rc.n_groups; ++g) {
        AdapterSet proto = init_lora(rc.lm, rc.lora, rng.next_u64(), false);
        for (auto& p : proto.mutable_entries()) p.b = Tensor::normal(p.b.shape(), 0.1, rng);
        std::vector<double> centroid(rc.d_embed);
        for (double& x : centroid) x = rng.normal();
        for (std::size_t m = 0; m <= rc.members_per_group; ++m) {
            AdapterSet a = rotate_rank_space(proto, random_orthogonal(r, rng));
            const bool is_bench = m == rc.members_per_group;
            a.task_id = "group" + std::to_string(g) + (is_bench ? "_bench" : "_m" + std::to_string(m));
            NamedVector e{a.task_id, noisy(centroid)};
            if (is_bench) {
                bench.push_back(std::move(a));
                bench_emb.push_back(std::move(e));
            } else {
                lib.adapters.push_back(std::move(a));
                lib_emb.push_back(std::move(e));
            }
        }
    }
    return similarity_study(lib, lib_emb, bench, bench_emb);
}

}  // namespace t2l
