// Acceptance run: one PASS/FAIL line per criterion. Exits nonzero if any fail.
//
//   acceptance --base base.t2lm --work dir [--only name,...]

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>

#include "graphs.hpp"
#include "primitive_cases.hpp"
#include "t2l/cli.hpp"

using namespace t2l;
using namespace t2l::check;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Env {
    std::string base_path;
    fs::path work;
    const BaseLM& lm() {
        if (!lm_) lm_ = load_base_lm(base_path);
        return *lm_;
    }
    std::optional<BaseLM> lm_;
};

const std::uint64_t kSeeds[] = {1, 2, 3};
const Arch kArchs[] = {Arch::L, Arch::M, Arch::S};

std::string fmt(double v, int prec = 4) {
    std::ostringstream s;
    s << std::setprecision(prec) << v;
    return s.str();
}

// ---------------------------------------------------------------------------

Outcome flops_exact(Env&) {
    PaperFlopsPreset p;
    const PipelineFlops t = flops_t2l_pipeline(p.encoder, p.hypernet, p.lm);
    const std::uint64_t icl = flops_icl(p.lm, p.icl_len);
    const bool ints = t.base == 826'781'204'480ull && icl == 4'176'855'695'360ull && t.encoder == 29'217'521'664ull &&
                      t.hypernet == 5'373'952ull && t.total() == t.encoder + t.hypernet + t.base;
    const std::string quoted = printed_tflops(t);
    const double ratio = static_cast<double>(icl) / static_cast<double>(t.total());
    return {ints && quoted == "0.856005" && ratio > 4.0,
            "base " + std::to_string(t.base) + ", icl " + std::to_string(icl) + ", encoder " +
                std::to_string(t.encoder) + ", hypernet " + std::to_string(t.hypernet) + ", total " +
                std::to_string(t.total()) + " (quoted " + quoted + " TFLOPs), ratio " + fmt(ratio)};
}

Outcome param_counts(Env&) {
    BaseLMConfig mistral;
    mistral.d_model = 4096;
    mistral.n_layers = 32;
    mistral.n_heads = 32;
    mistral.n_kv_heads = 8;
    mistral.d_ff = 14336;
    LoraConfig r8;
    r8.rank = 8;
    const std::size_t n = param_count(mistral, r8);
    auto hc = [&](Arch a, std::size_t r) {
        LoraConfig l;
        l.rank = r;
        return HypernetConfig::for_model(BaseLMConfig{}, l, a, 64);
    };
    const bool l_is_2m = head_weight_count(hc(Arch::L, 4)) == 2 * head_weight_count(hc(Arch::M, 4)) &&
                         head_weight_count(hc(Arch::L, 8)) == 2 * head_weight_count(hc(Arch::M, 8));
    const bool s_free = head_weight_count(hc(Arch::S, 2)) == head_weight_count(hc(Arch::S, 4)) &&
                        head_weight_count(hc(Arch::S, 4)) == head_weight_count(hc(Arch::S, 8));
    return {n == 3'407'872u && l_is_2m && s_free,
            "mistral r=8 " + std::to_string(n) + ", L=2M " + (l_is_2m ? "yes" : "no") + ", S independent of r " +
                (s_free ? "yes" : "no")};
}

Outcome bias_hyperinit(Env&) {
    const BaseLMConfig cfg{};
    BaseLM lm = init_base_lm(cfg, 11);
    Rng rng(12);
    std::size_t checked = 0, mismatched = 0;
    for (Arch a : kArchs) {
        Hypernet h = build_hypernet(HypernetConfig::for_model(cfg, LoraConfig{}, a, 64), 13);
        NoGradGuard ng;
        for (int i = 0; i < 100; ++i) {
            AdapterSet set = generate(h, Tensor::normal({64}, 1.0, rng));
            std::vector<int> toks(1 + rng.index(cfg.max_seq));
            for (int& t : toks) t = static_cast<int>(rng.index(cfg.vocab_size));
            Tensor x = forward(lm, {toks}), y = forward(lm, {toks}, set);
            for (std::size_t k = 0; k < x.numel(); ++k) mismatched += x[k] != y[k];
            ++checked;
        }
    }
    return {mismatched == 0, std::to_string(checked) + " inputs over L/M/S, " + std::to_string(mismatched) +
                                 " logits differ"};
}

Outcome gradient_suite(Env&) {
    double worst = 0.0;
    std::string where;
    std::size_t graphs = 0, min_coords = SIZE_MAX;
    auto note = [&](const std::string& name, const GradCheck& r) {
        ++graphs;
        min_coords = std::min(min_coords, r.checked);
        if (r.max_rel >= worst) {
            worst = r.max_rel;
            where = name + " (" + r.worst + ")";
        }
    };
    for (const auto& c : primitive_grad_cases()) note(c.name, gradcheck(c.params, c.loss, 24, 1));
    BaseLM lm = init_base_lm(tiny_lm_config(), 17);
    for (Arch a : kArchs) {
        Hypernet h = build_hypernet(tiny_hypernet_config(lm.config, a), 18);
        perturb_heads(h, 19);
        auto embs = toy_task_embeddings(3, 8, 20);
        auto batch = toy_batch();
        note(std::string("sft-") + arch_name(a),
             gradcheck_each(h.parameters(), [&] { return sft_graph_loss(h, lm, batch, embs); }, 1, 21));
        auto targets = random_recon_targets(h.config, 3, 22);
        note(std::string("recon-") + arch_name(a),
             gradcheck_each(h.parameters(), [&] { return recon_graph_loss(h, embs, targets); }, 1, 23));
    }
    return {worst <= 1e-4 && min_coords >= 20, std::to_string(graphs) + " graphs, >= " + std::to_string(min_coords) +
                                                   " coords each, max rel err " + fmt(worst, 3) + " at " + where};
}

Outcome batched_generation(Env&) {
    Rng rng(30);
    std::size_t n = 0, diff = 0;
    for (Arch a : kArchs) {
        Hypernet h = build_hypernet(HypernetConfig::for_model(BaseLMConfig{}, LoraConfig{}, a, 64), 31);
        perturb_heads(h, 32);
        NoGradGuard ng;
        for (int t = 0; t < 5; ++t) {
            Tensor emb = Tensor::normal({64}, 1.0, rng);
            diff += generate(h, emb).flatten_ab() != generate_sequential(h, emb).flatten_ab();
            ++n;
        }
    }
    return {diff == 0, std::to_string(n) + " descriptors over L/M/S, " + std::to_string(diff) + " differ"};
}

// ---------------------------------------------------------------------------
// Trained studies share one oracle library per seed.

constexpr std::size_t kOracles = 16;

TaskSuite oracle_suite() {
    SuiteConfig sc;
    sc.train_ids.resize(kOracles);
    sc.held_out_ids.clear();
    return make_suite(sc, 7);
}

std::map<std::uint64_t, OracleSet> g_oracles;

const OracleSet& oracles_for(Env& env, std::uint64_t seed) {
    auto it = g_oracles.find(seed);
    if (it != g_oracles.end()) return it->second;
    return g_oracles.emplace(seed, build_oracles(env.lm(), oracle_suite().train_tasks, OracleConfig{}, seed))
        .first->second;
}

Outcome compression(Env& env) {
    bool ok = true;
    std::ostringstream d;
    std::size_t below = 0;
    fs::create_directories(env.work / "compression");
    for (Arch a : kArchs) {
        std::vector<CompressionPoint> mean(4);
        for (std::uint64_t seed : kSeeds) {
            const OracleSet& o = oracles_for(env, seed);
            CompressionConfig cc;
            cc.arch = a;
            CompressionCurve c = compression_curve(env.lm(), o, cc, seed);
            std::ofstream f(env.work / "compression" / (std::string(arch_name(a)) + "_seed" + std::to_string(seed) + ".tsv"));
            write_curve(c, f);
            for (std::size_t i = 0; i < c.points.size(); ++i) {
                const auto& p = c.points[i];
                mean[i].n_tasks = p.n_tasks;
                mean[i].mean_l1_raw += p.mean_l1_raw / 3.0;
                mean[i].mean_relative_performance += p.mean_relative_performance / 3.0;
                if (p.mean_l1_raw < 1e-4) {
                    ++below;
                    if (!(p.mean_relative_performance >= 0.95)) {
                        ok = false;
                        d << " [" << arch_name(a) << " seed " << seed << " n=" << p.n_tasks << ": L1 "
                          << fmt(p.mean_l1_raw, 3) << " but rel " << fmt(p.mean_relative_performance) << "]";
                    }
                }
            }
        }
        const bool mono = monotone_in_error(mean, 0.05);
        ok = ok && mono;
        d << " " << arch_name(a) << ":";
        for (const auto& p : mean) d << " n" << p.n_tasks << " L1 " << fmt(p.mean_l1_raw, 3) << " rel " << fmt(p.mean_relative_performance, 3) << ";";
        d << (mono ? " monotone" : " NOT monotone");
    }
    if (below == 0) ok = false;
    return {ok, std::to_string(below) + " runs reached L1 < 1e-4;" + d.str()};
}

Outcome zero_shot_study(Env& env) {
    SuiteConfig sc;
    TaskSuite s = make_suite(sc, 7);
    double base = 0, multi = 0, t2l = 0;
    std::ostringstream d;
    fs::create_directories(env.work / "zero_shot");
    for (std::uint64_t seed : kSeeds) {
        ZeroShotResult r = zero_shot(env.lm(), s, ZeroShotConfig{}, seed);
        write_report(r.report, (env.work / "zero_shot" / ("report_seed" + std::to_string(seed) + ".tsv")).string());
        base += r.base_mean / 3.0;
        multi += r.multitask_mean / 3.0;
        t2l += r.t2l_mean / 3.0;
        d << " seed " << seed << " (" << fmt(r.base_mean, 3) << ", " << fmt(r.multitask_mean, 3) << ", "
          << fmt(r.t2l_mean, 3) << ");";
    }
    const bool ok = t2l >= multi && multi >= base && t2l >= base && sc.train_ids.size() >= 8 &&
                    sc.held_out_ids.size() >= 2 && sc.n_descriptions >= 8;
    return {ok, "3-seed means: base " + fmt(base, 3) + ", multitask " + fmt(multi, 3) + ", T2L-M " + fmt(t2l, 3) +
                    " on " + std::to_string(s.held_out.size()) + " held-out tasks;" + d.str()};
}

Outcome alignment(Env& env) {
    bool ok = true;
    std::ostringstream d;
    fs::create_directories(env.work / "alignment");
    TaskSuite s = oracle_suite();
    for (std::uint64_t seed : kSeeds) {
        AlignmentResult r = description_alignment(env.lm(), oracles_for(env, seed), s, AlignmentConfig{}, seed);
        write_report(r.report, (env.work / "alignment" / ("report_seed" + std::to_string(seed) + ".tsv")).string());
        const bool good = r.aligned_train > r.unaligned && r.aligned_eval > r.unaligned;
        ok = ok && good;
        d << " seed " << seed << ": train " << fmt(r.aligned_train, 3) << ", eval " << fmt(r.aligned_eval, 3)
          << ", random " << fmt(r.unaligned, 3) << (good ? "" : " (not separated)") << ";";
    }
    return {ok, d.str().substr(1)};
}

Outcome similarity(Env&) {
    bool ok = true;
    std::ostringstream d;
    for (std::uint64_t seed : kSeeds) {
        SimilarityTable t = rotation_similarity_study(RotationStudyConfig{}, seed);
        ok = ok && t.pearson_dw > t.pearson_ab;
        d << " seed " << seed << ": r(dW) " << fmt(t.pearson_dw, 3) << " vs r(AB) " << fmt(t.pearson_ab, 3) << ";";
    }
    return {ok, d.str().substr(1)};
}

Outcome round_trip(Env& env) {
    const fs::path dir = env.work / "round_trip";
    fs::remove_all(dir);
    fs::create_directories(dir);
    bool ok = true;
    std::ostringstream d;
    for (Arch a : kArchs) {
        Hypernet h = build_hypernet(HypernetConfig::for_model(BaseLMConfig{}, LoraConfig{}, a, 64), 40);
        perturb_heads(h, 41);
        const std::size_t n = param_count(BaseLMConfig{}, LoraConfig{});
        h.zscore = ZScoreStats{std::vector<double>(n, 0.25), std::vector<double>(n, 3.0)};
        const std::string hp = (dir / (std::string(arch_name(a)) + ".t2lh")).string();
        save_hypernet(h, hp);
        Hypernet hb = load_hypernet(hp);
        auto x = h.named_parameters(), y = hb.named_parameters();
        bool same = x.size() == y.size() && hb.zscore && hb.zscore->mean == h.zscore->mean;
        for (std::size_t i = 0; same && i < x.size(); ++i)
            same = x[i].first == y[i].first && x[i].second.values() == y[i].second.values();
        Rng rng(42);
        NoGradGuard ng;
        AdapterSet s = generate(hb, Tensor::normal({64}, 1.0, rng));
        s.task_id = "rt";
        s.description = "round trip";
        const std::string ap = (dir / (std::string(arch_name(a)) + ".t2la")).string();
        save_adapter(s, ap);
        AdapterSet sb = load_adapter(ap);
        same = same && sb.flatten_ab() == s.flatten_ab() && sb.task_id == "rt" && sb.description == "round trip";
        ok = ok && same;
        d << arch_name(a) << (same ? " bitwise; " : " DIFFERS; ");
    }

    // eval through the command line, then again from its manifest.
    std::ostringstream out, err;
    const std::vector<std::string> first{
        "t2l", "eval", "--base", env.base_path, "--tasks", "copy,sort,shift_2", "--adapter",
        (dir / "M.t2la").string(), "--out", (dir / "eval_a").string(), "--seed", "5"};
    int s1 = run(first, out, err);
    int s2 = run({"t2l", "rerun", "--manifest", (dir / "eval_a" / "manifest.yaml").string(), "--out",
                  (dir / "eval_b").string()},
                 out, err);
    bool rerun = s1 == 0 && s2 == 0;
    if (rerun) {
        EvalReport a = read_report((dir / "eval_a" / "report.tsv").string());
        EvalReport b = read_report((dir / "eval_b" / "report.tsv").string());
        rerun = !a.rows.empty() && a.same_results(b);
        d << "rerun report " << (rerun ? "identical (" + std::to_string(a.rows.size()) + " rows)" : "differs");
    } else {
        d << "cli failed: " << err.str();
    }
    return {ok && rerun, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    Env env;
    std::string work = "acceptance_runs";
    std::vector<std::string> only;
    app.add_option("--base", env.base_path, "pretrained base model (.t2lm)")->required();
    app.add_option("--work", work, "scratch directory");
    app.add_option("--only", only, "run a subset by name")->delimiter(',');
    CLI11_PARSE(app, argc, argv);
    env.work = work;
    fs::create_directories(env.work);

    const std::vector<std::pair<std::string, Outcome (*)(Env&)>> criteria{
        {"flops", flops_exact},
        {"param-counts", param_counts},
        {"bias-hyperinit", bias_hyperinit},
        {"gradients", gradient_suite},
        {"batched-generation", batched_generation},
        {"compression", compression},
        {"zero-shot", zero_shot_study},
        {"alignment", alignment},
        {"similarity", similarity},
        {"round-trip", round_trip},
    };
    const std::set<std::string> pick(only.begin(), only.end());
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        if (!pick.empty() && !pick.count(name)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn(env);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << " (" << fmt(detail::seconds_since(t0), 3) << " s): "
                  << o.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
