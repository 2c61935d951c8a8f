#pragma once

// Command-line front end. run() parses arguments, resolves the config, writes
// a manifest into the run directory and dispatches to the library.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "t2l/config.hpp"
#include "t2l/experiments.hpp"

namespace t2l {

inline constexpr const char* kVersion = "0.1.0";

namespace cli {

namespace fs = std::filesystem;

struct Context {
    RunConfig cfg;
    std::ostream& out;
    std::ostream& err;

    fs::path dir() const { return fs::path(cfg.paths.out_dir); }
    std::string file(const std::string& name) const { return (dir() / name).string(); }

    /// Resumable training: trainer state lives in the run directory.
    TrainConfig train_cfg(const TrainConfig& base, const std::string& name, std::uint64_t seed) const {
        TrainConfig t = base;
        t.seed = seed;
        t.log_path = file(name + ".log.jsonl");
        t.checkpoint_path = file(name + ".state");
        if (t.checkpoint_every == 0) t.checkpoint_every = 100;
        if (t.log_every == 0) t.log_every = 1;
        return t;
    }
};

inline void require(const std::string& value, const std::string& key, const std::string& hint = "") {
    if (value.empty()) throw ConfigError(key + " is required" + (hint.empty() ? "" : " (" + hint + ")"));
    if (!fs::exists(value)) throw InputError(key + " '" + value + "' does not exist");
}

inline BaseLM base_of(const Context& c) {
    require(c.cfg.paths.base, "paths.base (--base)", "create one with `t2l pretrain-base`");
    return load_base_lm(c.cfg.paths.base);
}

inline TaskSuite suite_of(const Context& c) {
    if (!c.cfg.paths.tasks.empty()) {
        require(c.cfg.paths.tasks, "paths.tasks");
        TaskSuite s;
        s.train_tasks = load_tasks(c.cfg.paths.tasks);
        return s;
    }
    return make_suite(c.cfg.suite_config(), c.cfg.tasks.seed);
}

inline std::vector<ToyTask> all_tasks(const TaskSuite& s) {
    std::vector<ToyTask> v = s.train_tasks;
    v.insert(v.end(), s.held_out.begin(), s.held_out.end());
    return v;
}

/// Description embedder for the hashed and table providers.
inline Embedder text_embedder(const Context& c, std::size_t d_task) {
    const EmbedProvider p = parse_provider(c.cfg.embeddings.provider);
    if (p == EmbedProvider::Hashed) return hashed_embedder(d_task, c.cfg.embeddings.hash_seed);
    if (p == EmbedProvider::Table) {
        require(c.cfg.paths.embedding_table, "paths.embedding_table (--table)");
        auto table = std::make_shared<EmbeddingTable>(load_embedding_table(c.cfg.paths.embedding_table));
        if (table->dim() != d_task)
            throw EmbeddingDimensionError("embedding table has dimension " + std::to_string(table->dim()) +
                                          ", hypernet expects " + std::to_string(d_task));
        return [table](const std::string& text) {
            auto e = table->lookup(text);
            if (!e) throw InputError("description not in embedding table: '" + text + "'");
            return e->vector;
        };
    }
    throw ConfigError(std::string("embedding provider '") + provider_name(p) +
                      "' has no text embedder; use hashed or table");
}

// ---------------------------------------------------------------------------
// Subcommands

inline int pretrain_base(Context& c) {
    PretrainConfig pc;
    pc.train = c.train_cfg(c.cfg.pretrain, "pretrain", c.cfg.seed);
    BaseLM lm = pretrain_base_lm(c.cfg.base, pc, c.cfg.seed);
    const std::string path = c.file("base.t2lm");
    save_base_lm(lm, path);
    c.out << "base model: " << path << " (" << lm.param_count() << " parameters)\n";
    return 0;
}

inline int train_lora(Context& c) {
    BaseLM lm = base_of(c);
    TaskSuite s = suite_of(c);
    const auto& tasks = s.train_tasks;
    if (tasks.empty()) throw ConfigError("tasks.train is empty");
    std::vector<const ToyTask*> ptrs;
    for (const auto& t : tasks) ptrs.push_back(&t);
    AdapterSet a = train_multitask_lora(ptrs, lm, c.cfg.lora, c.train_cfg(c.cfg.train, "lora", c.cfg.seed));
    const std::string path = c.cfg.output.empty() ? c.file(a.task_id + ".t2la") : c.cfg.output;
    save_adapter(a, path);
    c.out << "adapter: " << path << "\n";
    return 0;
}

inline int build_library(Context& c) {
    BaseLM lm = base_of(c);
    TaskSuite s = suite_of(c);
    std::vector<ManifestEntry> entries;
    for (std::size_t i = 0; i < s.train_tasks.size(); ++i) {
        const ToyTask& t = s.train_tasks[i];
        const std::string name = t.id + ".t2la";
        if (!fs::exists(c.file(name))) {
            AdapterSet a = train_task_lora(t, lm, c.cfg.lora, c.train_cfg(c.cfg.train, t.id, c.cfg.seed + 1000 * i));
            save_adapter(a, c.file(name));
            fs::remove(c.file(t.id + ".state"));
        }
        entries.push_back({name, t.id, t.descriptions.at(0)});
        c.out << "oracle " << t.id << ": " << c.file(name) << "\n";
    }
    save_manifest(entries, c.file("library.manifest"));
    c.out << "library manifest: " << c.file("library.manifest") << "\n";
    return 0;
}

inline int train_recon(Context& c) {
    BaseLM lm = base_of(c);
    require(c.cfg.paths.library, "paths.library (--library)");
    AdapterLibrary lib = load_library(c.cfg.paths.library, lm.config);
    if (lib.empty()) throw ConfigError("library '" + c.cfg.paths.library + "' is empty");
    const EmbedProvider p = parse_provider(c.cfg.embeddings.provider);
    std::vector<Tensor> emb;
    std::size_t d_task = c.cfg.hypernet.d_task;
    if (p == EmbedProvider::OneHot) {
        d_task = lib.size();
        for (std::size_t i = 0; i < lib.size(); ++i) emb.push_back(embed_one_hot(i, lib.size()).vector);
    } else if (p == EmbedProvider::Hashed || p == EmbedProvider::Table) {
        Embedder e = text_embedder(c, d_task);
        for (const auto& a : lib.adapters) emb.push_back(e(a.description));
    }
    HypernetConfig hc = c.cfg.hypernet_config(lm.config, d_task);
    hc.rank = lib.adapters[0].rank();
    hc.scaling = lib.adapters[0].scaling();
    if (p == EmbedProvider::Learned) hc.n_learned = lib.size();
    ReconResult rr = train_t2l_recon(lib, emb, hc, c.train_cfg(c.cfg.train, "recon", c.cfg.seed), c.cfg.seed);
    const std::string path = c.cfg.output.empty() ? c.file("hypernet.t2lh") : c.cfg.output;
    save_hypernet(rr.hypernet, path);
    c.out << "hypernet: " << path << " (" << rr.hypernet.param_count() << " parameters, compression ratio "
          << compression_ratio(lib, rr.hypernet) << ")\nfinal raw L1: " << rr.final_l1_raw << "\n";
    return 0;
}

inline int train_sft(Context& c) {
    BaseLM lm = base_of(c);
    TaskSuite s = suite_of(c);
    HypernetConfig hc = c.cfg.hypernet_config(lm.config, c.cfg.hypernet.d_task);
    Hypernet h = train_t2l_sft(s.train_tasks, lm, hc, c.train_cfg(c.cfg.train, "sft", c.cfg.seed),
                               text_embedder(c, hc.d_task), c.cfg.seed);
    const std::string path = c.cfg.output.empty() ? c.file("hypernet.t2lh") : c.cfg.output;
    save_hypernet(h, path);
    c.out << "hypernet: " << path << " (" << h.param_count() << " parameters)\n";
    return 0;
}

/// Task input for one --describe value: text for hashed/table, an index for onehot/learned.
inline Tensor task_input(const Context& c, const Hypernet& h, const std::string& d) {
    const EmbedProvider p = parse_provider(c.cfg.embeddings.provider);
    if (p == EmbedProvider::OneHot || p == EmbedProvider::Learned) {
        const std::size_t i = detail::parse_scalar<std::uint64_t>("describe", d);
        return p == EmbedProvider::OneHot ? embed_one_hot(i, h.config.d_task).vector : h.learned_embedding(i).detach();
    }
    return text_embedder(c, h.config.d_task)(d);
}

inline int generate_cmd(Context& c) {
    require(c.cfg.paths.ckpt, "paths.ckpt (--ckpt)");
    if (c.cfg.describe.empty()) throw ConfigError("generate needs at least one --describe");
    Hypernet h = load_hypernet(c.cfg.paths.ckpt);
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < c.cfg.describe.size(); ++i) {
        AdapterSet a = generate(h, task_input(c, h, c.cfg.describe[i]));
        a.task_id = "generated";
        a.description = c.cfg.describe[i];
        std::string path = c.cfg.output.empty() ? c.file("generated.t2la") : c.cfg.output;
        if (c.cfg.describe.size() > 1) path += "." + std::to_string(i);
        save_adapter(a, path);
        c.out << "adapter: " << path << "\n";
    }
    return 0;
}

inline std::string adapter_tag(const AdapterSet& a, const std::vector<ToyTask>& tasks) {
    for (const auto& t : tasks)
        if (t.id == a.task_id) return "oracle";
    if (a.task_id == "multitask" || a.task_id == "averaged") return a.task_id;
    return "adapter:" + a.task_id;
}

inline int eval_cmd(Context& c) {
    BaseLM lm = base_of(c);
    const auto tasks = all_tasks(suite_of(c));
    EvalReport report;
    report.seeds = {c.cfg.seed, c.cfg.tasks.seed};
    std::vector<AdapterSet> adapters;
    for (const auto& p : c.cfg.adapters) {
        require(p, "--adapter");
        adapters.push_back(load_adapter(p, lm.config));
    }
    std::optional<Hypernet> h;
    if (!c.cfg.paths.ckpt.empty()) {
        require(c.cfg.paths.ckpt, "paths.ckpt");
        h = load_hypernet(c.cfg.paths.ckpt, lm.config);
    }
    for (const auto& t : tasks) {
        report.add(t.id, "base", evaluate(lm, nullptr, t));
        for (const auto& a : adapters) {
            const std::string tag = adapter_tag(a, tasks);
            if (tag == "oracle" && a.task_id != t.id) continue;
            report.add(t.id, tag, evaluate(lm, a, t));
        }
        if (h)
            report.add(t.id, std::string("t2l-") + arch_name(h->config.arch),
                       evaluate_descriptions(lm, *h, t, t.eval_descriptions, text_embedder(c, h->config.d_task)));
    }
    write_report(report, c.file("report.tsv"));
    write_report(report, c.out);
    return 0;
}

inline int study_cmd(Context& c) {
    const std::string& kind = c.cfg.study.kind;
    if (kind == "similarity") {
        RotationStudyConfig rc;
        rc.n_groups = c.cfg.study.n_groups;
        rc.members_per_group = c.cfg.study.members_per_group;
        rc.lora = c.cfg.lora;
        SimilarityTable t = rotation_similarity_study(rc, c.cfg.seed);
        std::ofstream f(c.file("similarity.tsv"));
        write_similarity_table(t, f);
        c.out << "pearson(embed, ab) " << t.pearson_ab << "\npearson(embed, dw) " << t.pearson_dw << "\n";
        return 0;
    }
    BaseLM lm = base_of(c);
    TaskSuite s = suite_of(c);
    if (kind == "compression" || kind == "alignment") {
        OracleConfig oc{c.cfg.lora, c.cfg.train};
        OracleSet o = build_oracles(lm, s.train_tasks, oc, c.cfg.seed);
        if (kind == "compression") {
            CompressionConfig cc;
            cc.sizes = c.cfg.study.sizes;
            cc.arch = parse_arch(c.cfg.hypernet.arch);
            cc.recon.max_steps = c.cfg.study.recon_steps;
            cc.recon.max_lr = c.cfg.study.recon_lr;
            CompressionCurve curve = compression_curve(lm, o, cc, c.cfg.seed);
            std::ofstream f(c.file("compression_curve.tsv"));
            write_curve(curve, f);
            write_curve(curve, c.out);
        } else {
            AlignmentConfig ac;
            ac.arch = parse_arch(c.cfg.hypernet.arch);
            ac.d_task = c.cfg.hypernet.d_task;
            ac.recon.max_steps = c.cfg.study.recon_steps;
            ac.recon.max_lr = c.cfg.study.recon_lr;
            AlignmentResult r = description_alignment(lm, o, s, ac, c.cfg.seed);
            write_report(r.report, c.file("report.tsv"));
            c.out << "aligned (train) " << r.aligned_train << "\naligned (eval) " << r.aligned_eval
                  << "\ntrain (random) " << r.unaligned << "\n";
        }
        return 0;
    }
    if (kind == "zero-shot") {
        ZeroShotConfig zc;
        zc.lora = c.cfg.lora;
        zc.multitask.max_steps = c.cfg.study.multitask_steps;
        zc.multitask.max_lr = c.cfg.study.multitask_lr;
        zc.sft.max_steps = c.cfg.study.sft_steps;
        zc.sft.max_lr = c.cfg.study.sft_lr;
        zc.arch = parse_arch(c.cfg.hypernet.arch);
        zc.d_task = c.cfg.hypernet.d_task;
        ZeroShotResult r = zero_shot(lm, s, zc, c.cfg.seed);
        write_report(r.report, c.file("report.tsv"));
        save_hypernet(r.hypernet, c.file("hypernet.t2lh"));
        c.out << "base " << r.base_mean << "\nmultitask " << r.multitask_mean << "\nt2l " << r.t2l_mean << "\n";
        return 0;
    }
    throw ConfigError("unknown study kind '" + kind + "' (expected similarity, compression, zero-shot, alignment)");
}

inline int export_activations_cmd(Context& c) {
    require(c.cfg.paths.ckpt, "paths.ckpt (--ckpt)");
    Hypernet h = load_hypernet(c.cfg.paths.ckpt);
    std::vector<std::pair<std::string, std::vector<std::string>>> td;
    for (const auto& t : all_tasks(suite_of(c))) td.push_back({t.id, t.eval_descriptions});
    auto rows = export_activations(h, td, text_embedder(c, h.config.d_task));
    const std::string path = c.cfg.output.empty() ? c.file("activations.tsv") : c.cfg.output;
    std::ofstream f(path);
    if (!f) throw InputError("cannot open '" + path + "' for writing");
    write_activations(rows, f);
    const auto [inter, intra] = inter_intra_distance(rows);
    c.out << "activations: " << path << " (" << rows.size() << " rows; mean inter-task distance " << inter
          << ", intra-task " << intra << ")\n";
    return 0;
}

inline void print_flops(std::ostream& out, const PaperFlopsPreset& p) {
    const PipelineFlops t = flops_t2l_pipeline(p.encoder, p.hypernet, p.lm);
    const std::uint64_t icl = flops_icl(p.lm, p.icl_len);
    out << "base LM without ICL (S=" << p.lm.seq << "): " << t.base << "\n";
    out << "base LM with 3-shot ICL (S=" << p.icl_len << "): " << icl << "\n";
    out << "task-description encoder: " << t.encoder << "\n";
    out << "hypernetwork: " << t.hypernet << "\n";
    out << "T2L pipeline total: " << t.total() << " (quoted as " << printed_tflops(t) << " TFLOPs)\n";
    out << "ICL / T2L ratio: " << static_cast<double>(icl) / static_cast<double>(t.total()) << "\n";
}

/// Writes resolved config, seed and versions beside the outputs.
inline void write_manifest(const Context& c) {
    std::ofstream f(c.file("manifest.yaml"));
    if (!f) throw InputError("cannot write manifest in '" + c.cfg.paths.out_dir + "'");
    f << "# t2l " << kVersion << ", file format " << io::kFormatVersion << "\n";
    f << dump_config(c.cfg);
}

inline std::string absolute(const std::string& p) {
    return p.empty() ? p : fs::absolute(fs::path(p)).lexically_normal().string();
}

inline int dispatch(Context& c) {
    auto& p = c.cfg.paths;
    for (auto* s : {&p.out_dir, &p.base, &p.tasks, &p.library, &p.ckpt, &p.adapter, &p.embedding_table, &c.cfg.output})
        *s = absolute(*s);
    for (auto& a : c.cfg.adapters) a = absolute(a);
    fs::create_directories(c.cfg.paths.out_dir);
    if (c.cfg.output.size()) fs::create_directories(fs::path(c.cfg.output).parent_path());
    write_manifest(c);
    const std::string& s = c.cfg.subcommand;
    if (s == "pretrain-base") return pretrain_base(c);
    if (s == "train-lora") return train_lora(c);
    if (s == "build-library") return build_library(c);
    if (s == "train-t2l-recon") return train_recon(c);
    if (s == "train-t2l-sft") return train_sft(c);
    if (s == "generate") return generate_cmd(c);
    if (s == "eval") return eval_cmd(c);
    if (s == "study") return study_cmd(c);
    if (s == "export-activations") return export_activations_cmd(c);
    throw ConfigError("manifest names unknown subcommand '" + s + "'");
}

inline const char* error_kind(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return "config";
    if (dynamic_cast<const FileFormatError*>(&e)) return "file format";
    if (dynamic_cast<const ShapeError*>(&e)) return "shape";
    if (dynamic_cast<const TrainingError*>(&e)) return "training";
    if (dynamic_cast<const CapacityError*>(&e)) return "capacity";
    if (dynamic_cast<const InputError*>(&e)) return "input";
    if (dynamic_cast<const ContractError*>(&e)) return "contract";
    return "error";
}

}  // namespace cli

/// Entry point; returns the process exit status.
inline int run(const std::vector<std::string>& argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Text-to-LoRA at desk scale: adapters from task descriptions", "t2l"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    std::string config_path;
    std::vector<std::string> sets;
    struct Flags {
        std::string out, base, tasks_file, library, ckpt, table, arch, embeddings, output, preset, manifest, kind;
        std::vector<std::string> tasks, describe, adapters;
        std::optional<std::size_t> steps;
        std::optional<std::uint64_t> seed;
        std::size_t seq = 0, hidden = 0, layers = 0, shots_len = 0;
    } fl;

    auto common = [&](CLI::App* sc) {
        sc->add_option("-c,--config", config_path, "YAML config file");
        sc->add_option("--set", sets, "key=value override (repeatable)");
        sc->add_option("--seed", fl.seed, "global seed (falls back to T2L_SEED)");
        sc->add_option("--out", fl.out, "run directory");
        sc->add_option("--base", fl.base, "base model checkpoint (.t2lm)");
        sc->add_option("--steps", fl.steps, "training steps");
        sc->add_option("--tasks", fl.tasks, "task ids")->delimiter(',');
        sc->add_option("--tasks-file", fl.tasks_file, "task dump file");
        return sc;
    };
    auto* pre = common(app.add_subcommand("pretrain-base", "pretrain the base model on instructed examples"));
    auto* tl = common(app.add_subcommand("train-lora", "train a task or multi-task LoRA"));
    tl->add_option("--output", fl.output, "adapter file");
    auto* bl = common(app.add_subcommand("build-library", "train one oracle adapter per task"));
    auto* rc = common(app.add_subcommand("train-t2l-recon", "fit a hypernet to an adapter library"));
    rc->add_option("--library", fl.library, "library manifest");
    rc->add_option("--arch", fl.arch, "L, M or S");
    rc->add_option("--embeddings", fl.embeddings, "onehot, learned, hashed or table");
    rc->add_option("--table", fl.table, "embedding table file");
    auto* sf = common(app.add_subcommand("train-t2l-sft", "train a hypernet end to end through the base model"));
    sf->add_option("--arch", fl.arch, "L, M or S");
    sf->add_option("--embeddings", fl.embeddings, "hashed or table");
    sf->add_option("--table", fl.table, "embedding table file");
    auto* gen = common(app.add_subcommand("generate", "generate adapters from descriptions"));
    gen->add_option("--ckpt", fl.ckpt, "hypernet checkpoint (.t2lh)");
    gen->add_option("--describe", fl.describe, "task description (an index for onehot/learned)");
    gen->add_option("--embeddings", fl.embeddings, "onehot, learned, hashed or table");
    gen->add_option("--table", fl.table, "embedding table file");
    gen->add_option("--output", fl.output, "adapter file");
    gen->get_option("--out")->description("adapter file; its directory becomes the run directory");
    auto* ev = common(app.add_subcommand("eval", "exact-match evaluation"));
    ev->add_option("--adapter", fl.adapters, "adapter file (repeatable)");
    ev->add_option("--ckpt", fl.ckpt, "hypernet checkpoint; evaluated with each task's evaluation descriptions");
    ev->add_option("--embeddings", fl.embeddings, "hashed or table");
    ev->add_option("--table", fl.table, "embedding table file");
    auto* st = common(app.add_subcommand("study", "run a desk-scale experiment"));
    st->add_option("--kind", fl.kind, "similarity, compression, zero-shot or alignment");
    st->add_option("--arch", fl.arch, "L, M or S");
    auto* ex = common(app.add_subcommand("export-activations", "dump hypernet activations per description"));
    ex->add_option("--ckpt", fl.ckpt, "hypernet checkpoint");
    ex->add_option("--output", fl.output, "activation file");
    auto* fp = app.add_subcommand("flops", "analytic FLOPs per instance");
    fp->add_option("--preset", fl.preset, "paper")->check(CLI::IsMember({"paper"}));
    fp->add_option("--seq", fl.seq, "sequence length");
    fp->add_option("--hidden", fl.hidden, "hidden width");
    fp->add_option("--layers", fl.layers, "layer count");
    auto* rr = app.add_subcommand("rerun", "repeat a run from its manifest");
    rr->add_option("--manifest", fl.manifest, "manifest.yaml of an earlier run")->required();
    rr->add_option("--out", fl.out, "new run directory");

    std::vector<std::string> args(argv.rbegin(), argv.rend());
    if (!args.empty()) args.pop_back();  // program name
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? 0 : 2;
    }

    try {
        CLI::App* sc = app.get_subcommands().front();
        if (sc == fp) {
            if (fl.preset == "paper") {
                cli::print_flops(out, PaperFlopsPreset{});
            } else {
                if (!fl.seq || !fl.hidden || !fl.layers)
                    throw ConfigError("flops needs --preset paper or all of --seq, --hidden, --layers");
                out << "model: " << flops_model(fl.seq, fl.hidden, fl.layers) << "\n";
            }
            return 0;
        }

        RunConfig cfg;
        if (sc == rr) {
            cfg = load_config(fl.manifest);
            if (!fl.out.empty()) cfg.paths.out_dir = fl.out;
            if (cfg.output.size() && !fl.out.empty())
                cfg.output = (std::filesystem::path(fl.out) / std::filesystem::path(cfg.output).filename()).string();
        } else {
            std::vector<std::string> ov;
            if (fl.seed) ov.push_back("seed=" + std::to_string(*fl.seed));
            if (!fl.out.empty()) ov.push_back((sc == gen ? "output=" : "paths.out_dir=") + fl.out);
            if (sc == gen && !fl.out.empty())
                ov.push_back("paths.out_dir=" + std::filesystem::absolute(fl.out).parent_path().string());
            if (!fl.output.empty()) ov.push_back("output=" + fl.output);
            if (!fl.base.empty()) ov.push_back("paths.base=" + fl.base);
            if (!fl.tasks_file.empty()) ov.push_back("paths.tasks=" + fl.tasks_file);
            if (!fl.library.empty()) ov.push_back("paths.library=" + fl.library);
            if (!fl.ckpt.empty()) ov.push_back("paths.ckpt=" + fl.ckpt);
            if (!fl.table.empty()) ov.push_back("paths.embedding_table=" + fl.table);
            if (!fl.arch.empty()) ov.push_back("hypernet.arch=" + fl.arch);
            if (!fl.embeddings.empty()) ov.push_back("embeddings.provider=" + fl.embeddings);
            if (!fl.kind.empty()) ov.push_back("study.kind=" + fl.kind);
            if (fl.steps) ov.push_back((sc == pre ? "pretrain.max_steps=" : "train.max_steps=") + std::to_string(*fl.steps));
            if (!fl.tasks.empty()) {
                std::string j;
                for (const auto& t : fl.tasks) j += (j.empty() ? "" : ",") + t;
                ov.push_back("tasks.train=" + j);
                ov.push_back("tasks.held_out=");
            }
            ov.insert(ov.end(), sets.begin(), sets.end());
            cfg = load_config(config_path, ov);
            cfg.subcommand = sc->get_name();
            for (const auto& d : fl.describe) cfg.describe.push_back(d);
            for (const auto& a : fl.adapters) cfg.adapters.push_back(a);
        }
        (void)bl;
        cli::Context ctx{cfg, out, err};
        return cli::dispatch(ctx);
    } catch (const std::exception& e) {
        err << "t2l " << app.get_subcommands().front()->get_name() << ": " << cli::error_kind(e) << " error: " << e.what()
            << "\n";
        return 1;
    }
}

inline int run(int argc, char** argv) { return run(std::vector<std::string>(argv, argv + argc)); }

}  // namespace t2l
