#pragma once

// Optimization loops: task / multi-task LoRA fine-tuning, base-model
// pretraining, hypernet reconstruction training on z-scored adapters, and
// end-to-end hypernet SFT through the frozen base model.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "t2l/base_lm.hpp"
#include "t2l/binary_io.hpp"
#include "t2l/hypernet.hpp"
#include "t2l/lora.hpp"
#include "t2l/task_embed.hpp"
#include "t2l/taskgen.hpp"
#include "t2l/tensor.hpp"

namespace t2l {

struct TrainConfig {
    std::size_t max_steps = 1000;
    std::size_t steps_per_task = 0;  // > 0: max_steps = steps_per_task * number of tasks
    std::size_t batch_size = 16;
    double max_lr = 1e-3;
    double warmup_fraction = 0.1;
    double grad_clip_norm = 1.0;
    double neftune_alpha = 0.0;
    double lora_dropout = 0.0;
    std::uint64_t seed = 0;
    std::string log_path;         // JSON lines, one record per logged step
    std::size_t log_every = 1;
    std::string checkpoint_path;  // trainer state for resuming; empty disables
    std::size_t checkpoint_every = 0;

    std::size_t resolved_steps(std::size_t n_tasks) const {
        return steps_per_task > 0 ? steps_per_task * std::max<std::size_t>(n_tasks, 1) : max_steps;
    }

    void validate() const {
        if (max_steps == 0 && steps_per_task == 0) throw ConfigError("TrainConfig: max_steps must be positive");
        if (batch_size == 0) throw ConfigError("TrainConfig: batch_size must be positive");
        if (!(max_lr > 0.0)) throw ConfigError("TrainConfig: max_lr must be positive");
        if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
            throw ConfigError("TrainConfig: warmup_fraction must lie in [0, 1)");
        if (!(grad_clip_norm > 0.0)) throw ConfigError("TrainConfig: grad_clip_norm must be positive");
    }
};

/// Linear warmup to max_lr over warmup_fraction * max_steps, then linear decay to 0.
inline double lr_at(std::size_t step, std::size_t max_steps, double max_lr, double warmup_fraction) {
    const double T = static_cast<double>(max_steps);
    const double warm = warmup_fraction * T;
    const double s = static_cast<double>(step);
    if (s < warm) return max_lr * s / warm;
    return max_lr * (T - s) / (T - warm);
}

inline double lr_at(std::size_t step, const TrainConfig& c) {
    return lr_at(step, c.max_steps, c.max_lr, c.warmup_fraction);
}

// ---------------------------------------------------------------------------
// Optimizer

/// Global L2 norm of all gradients (absent gradients count as zero).
inline double grad_norm(const std::vector<Tensor>& params) {
    double s = 0.0;
    for (const auto& p : params)
        if (p.has_grad()) s += sq_norm(p.grad());
    return std::sqrt(s);
}

/// Rescales gradients so their global norm is at most max_norm; returns the pre-clip norm.
inline double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
    const double n = grad_norm(params);
    if (n > max_norm) {
        const double f = max_norm / n;
        for (auto& p : params)
            if (p.has_grad())
                for (double& g : p.mutable_grad()) g *= f;
    }
    return n;
}

class AdamW {
   public:
    explicit AdamW(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                   double weight_decay = 0.0)
        : params_(std::move(params)), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {
        for (const auto& p : params_) {
            m_.emplace_back(p.numel(), 0.0);
            v_.emplace_back(p.numel(), 0.0);
        }
    }

    void step(double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Tensor& p = params_[k];
            const bool has = p.has_grad();
            auto g = p.grad();
            auto w = p.mutable_data();
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gi = has ? g[i] : 0.0;
                m[i] = b1_ * m[i] + (1.0 - b1_) * gi;
                v[i] = b2_ * v[i] + (1.0 - b2_) * gi * gi;
                const double upd = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
                w[i] -= lr * (upd + wd_ * w[i]);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    std::vector<Tensor>& params() { return params_; }
    std::size_t steps_taken() const { return t_; }

    void save(io::BinaryWriter& w) const {
        w.u64(t_);
        w.u32(static_cast<std::uint32_t>(params_.size()));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            w.u64(params_[k].numel());
            w.f64s(params_[k].values());
            w.f64s(m_[k]);
            w.f64s(v_[k]);
        }
    }

    void load(io::BinaryReader& r) {
        t_ = r.u64();
        if (r.u32() != params_.size()) throw FileFormatError("'" + r.path() + "': optimizer parameter count mismatch");
        for (std::size_t k = 0; k < params_.size(); ++k) {
            if (r.u64() != params_[k].numel()) throw FileFormatError("'" + r.path() + "': optimizer shape mismatch");
            auto w = r.f64s(params_[k].numel());
            std::copy(w.begin(), w.end(), params_[k].mutable_data().begin());
            m_[k] = r.f64s(params_[k].numel());
            v_[k] = r.f64s(params_[k].numel());
        }
    }

   private:
    std::vector<Tensor> params_;
    double b1_, b2_, eps_, wd_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Logging

struct LogRecord {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double grad_norm = 0.0;
    std::optional<double> recon_l1;
};

struct TrainLog {
    std::vector<LogRecord> records;

    double final_loss() const { return records.empty() ? 0.0 : records.back().loss; }
};

inline std::string log_line(const LogRecord& r) {
    std::ostringstream os;
    os.precision(17);
    os << "{\"step\":" << r.step << ",\"lr\":" << r.lr << ",\"loss\":" << r.loss << ",\"grad_norm\":" << r.grad_norm;
    if (r.recon_l1) os << ",\"recon_l1\":" << *r.recon_l1;
    os << "}";
    return os.str();
}

namespace detail {

inline void save_trainer_state(const std::string& path, const AdamW& opt, std::size_t step, const Rng& rng,
                               const TrainLog& log) {
    const std::string tmp = path + ".tmp";
    {
        io::BinaryWriter w(tmp);
        w.magic("T2LS");
        w.u32(io::kFormatVersion);
        w.u64(step);
        w.str(rng.state());
        opt.save(w);
        w.u64(log.records.size());
        for (const auto& r : log.records) {
            w.u64(r.step);
            w.f64(r.lr);
            w.f64(r.loss);
            w.f64(r.grad_norm);
            w.u32(r.recon_l1 ? 1 : 0);
            w.f64(r.recon_l1.value_or(0.0));
        }
        w.finish();
    }
    std::filesystem::rename(tmp, path);
}

inline std::size_t load_trainer_state(const std::string& path, AdamW& opt, Rng& rng, TrainLog& log) {
    io::BinaryReader r(path);
    r.expect_header("T2LS");
    const std::size_t step = r.u64();
    rng.set_state(r.str());
    opt.load(r);
    log.records.clear();
    const std::size_t n = r.u64();
    for (std::size_t i = 0; i < n; ++i) {
        LogRecord rec;
        rec.step = r.u64();
        rec.lr = r.f64();
        rec.loss = r.f64();
        rec.grad_norm = r.f64();
        const bool has = r.u32() == 1;
        const double l1 = r.f64();
        if (has) rec.recon_l1 = l1;
        log.records.push_back(rec);
    }
    return step;
}

/// Shared loop: loss_fn(step, rng) builds the loss; the optimizer owns `params`.
/// extra(step) may attach a recon L1 value to the logged record.
inline TrainLog optimize(std::vector<Tensor> params, TrainConfig cfg, std::size_t max_steps,
                         const std::function<Tensor(std::size_t, Rng&)>& loss_fn,
                         const std::function<std::optional<double>(std::size_t)>& extra = {}) {
    cfg.max_steps = max_steps;
    cfg.validate();
    AdamW opt(std::move(params));
    Rng rng(cfg.seed);
    TrainLog log;
    std::size_t start = 0;
    if (!cfg.checkpoint_path.empty() && std::filesystem::exists(cfg.checkpoint_path))
        start = load_trainer_state(cfg.checkpoint_path, opt, rng, log);
    std::ofstream log_out;
    if (!cfg.log_path.empty()) {
        log_out.open(cfg.log_path, std::ios::trunc);
        if (!log_out) throw InputError("cannot open training log '" + cfg.log_path + "'");
        for (const auto& r : log.records) log_out << log_line(r) << '\n';
    }
    for (std::size_t step = start; step < cfg.max_steps; ++step) {
        const double lr = lr_at(step, cfg);
        opt.zero_grad();
        Tensor loss = loss_fn(step, rng);
        const double lv = loss.item();
        if (!std::isfinite(lv)) throw TrainingError("non-finite loss", step);
        loss.backward();
        const double gn = clip_grad_norm(opt.params(), cfg.grad_clip_norm);
        if (!std::isfinite(gn)) throw TrainingError("non-finite gradient norm", step);
        opt.step(lr);
        if (step % cfg.log_every == 0 || step + 1 == cfg.max_steps) {
            LogRecord rec{step, lr, lv, gn, extra ? extra(step) : std::nullopt};
            log.records.push_back(rec);
            if (log_out) log_out << log_line(rec) << '\n' << std::flush;
        }
        if (!cfg.checkpoint_path.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
            save_trainer_state(cfg.checkpoint_path, opt, step + 1, rng, log);
    }
    opt.zero_grad();
    return log;
}

inline std::vector<Example> sample_batch(const std::vector<Example>& pool, std::size_t n, Rng& rng) {
    std::vector<Example> b;
    for (std::size_t i = 0; i < n; ++i) b.push_back(pool[rng.index(pool.size())]);
    return b;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// LoRA fine-tuning

/// Task index of each draw in a uniformly mixed multi-task stream.
inline std::vector<std::size_t> sample_mixed_tasks(std::size_t n_tasks, std::size_t n, Rng& rng) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(rng.index(n_tasks));
    return out;
}

/// One adapter trained on uniformly mixed batches across `tasks`.
inline AdapterSet train_multitask_lora(const std::vector<const ToyTask*>& tasks, const BaseLM& lm,
                                       const LoraConfig& lora, const TrainConfig& cfg, TrainLog* log_out = nullptr) {
    if (tasks.empty()) throw ConfigError("train_multitask_lora: no tasks");
    for (const auto* t : tasks)
        if (t->train.empty()) throw ConfigError("train_lora: task '" + t->id + "' has an empty train split");
    AdapterSet set = init_lora(lm.config, lora, cfg.seed ^ 0x5eedULL, /*requires_grad=*/true);
    AdapterView view = view_of(set);
    auto loss_fn = [&](std::size_t, Rng& rng) {
        std::vector<Example> batch;
        for (std::size_t ti : sample_mixed_tasks(tasks.size(), cfg.batch_size, rng)) {
            const auto& pool = tasks[ti]->train;
            batch.push_back(pool[rng.index(pool.size())]);
        }
        ForwardOptions opt;
        opt.adapters = &view;
        opt.neftune_alpha = cfg.neftune_alpha;
        opt.lora_dropout = cfg.lora_dropout;
        opt.rng = &rng;
        return sft_loss(lm, batch, opt);
    };
    TrainLog log = detail::optimize(set.parameters(), cfg, cfg.resolved_steps(tasks.size()), loss_fn);
    if (log_out) *log_out = std::move(log);
    AdapterSet out = set.detached();
    out.task_id = tasks.size() == 1 ? tasks[0]->id : "multitask";
    out.description = tasks.size() == 1 && !tasks[0]->descriptions.empty() ? tasks[0]->descriptions[0] : "";
    return out;
}

inline AdapterSet train_multitask_lora(const std::vector<ToyTask>& tasks, const BaseLM& lm, const LoraConfig& lora,
                                       const TrainConfig& cfg, TrainLog* log_out = nullptr) {
    if (tasks.size() < 2) throw ConfigError("train_multitask_lora: needs at least two tasks");
    std::vector<const ToyTask*> ptrs;
    for (const auto& t : tasks) ptrs.push_back(&t);
    return train_multitask_lora(ptrs, lm, lora, cfg, log_out);
}

/// Task-specific ("oracle") adapter.
inline AdapterSet train_task_lora(const ToyTask& task, const BaseLM& lm, const LoraConfig& lora,
                                  const TrainConfig& cfg, TrainLog* log_out = nullptr) {
    return train_multitask_lora(std::vector<const ToyTask*>{&task}, lm, lora, cfg, log_out);
}

// ---------------------------------------------------------------------------
// Base-model pretraining on instructed prompts

struct PretrainConfig {
    TrainConfig train{.max_steps = 6000, .batch_size = 32, .max_lr = 3e-3, .warmup_fraction = 0.05};
    std::vector<TaskSpec> specs = all_task_specs();
};

/// Full-parameter training of a fresh model on instructed examples drawn from
/// `specs`. Returns frozen weights.
inline BaseLM pretrain_base_lm(const BaseLMConfig& config, const PretrainConfig& pc, std::uint64_t init_seed,
                               TrainLog* log_out = nullptr) {
    if (pc.specs.empty()) throw ConfigError("pretrain_base_lm: no task specs");
    BaseLM lm = init_base_lm(config, init_seed, /*trainable=*/true);
    auto loss_fn = [&](std::size_t, Rng& rng) {
        std::vector<Example> batch;
        for (std::size_t i = 0; i < pc.train.batch_size; ++i) {
            const TaskSpec& s = pc.specs[rng.index(pc.specs.size())];
            auto x = sample_input(s, rng);
            batch.push_back(instructed(s, {prompt_tokens(x), completion_tokens(apply_rule(s, x))}));
        }
        return sft_loss(lm, batch);
    };
    TrainLog log = detail::optimize(lm.parameters(), pc.train, pc.train.max_steps, loss_fn);
    if (log_out) *log_out = std::move(log);
    return with_trainable(lm, false);
}

// ---------------------------------------------------------------------------
// Reconstruction training

inline ZScoreStats compute_zscore_stats(const AdapterLibrary& library) {
    if (library.empty()) throw ConfigError("compute_zscore_stats: empty library");
    library.validate();
    const std::size_t n = library.adapters.front().param_count();
    ZScoreStats st;
    st.mean.assign(n, 0.0);
    st.std.assign(n, 0.0);
    std::vector<std::vector<double>> flats;
    for (const auto& a : library.adapters) flats.push_back(a.flatten_ab());
    const double k = static_cast<double>(flats.size());
    for (const auto& f : flats)
        for (std::size_t i = 0; i < n; ++i) st.mean[i] += f[i];
    for (double& m : st.mean) m /= k;
    if (flats.size() == 1) {
        st.std.assign(n, 1.0);
        return st;
    }
    for (const auto& f : flats)
        for (std::size_t i = 0; i < n; ++i) st.std[i] += (f[i] - st.mean[i]) * (f[i] - st.mean[i]);
    for (double& s : st.std) s = std::max(std::sqrt(s / k), ZScoreStats::kFloor);
    return st;
}

struct ReconResult {
    Hypernet hypernet;
    TrainLog log;
    double final_l1_z = 0.0;    // mean per-element |z_target - output|
    double final_l1_raw = 0.0;  // same, scaled elementwise by std
    std::vector<double> per_task_l1_raw;
};

namespace detail {

/// Per-entry target tensors [n_tasks, r, d] in the generation layout.
inline std::vector<std::pair<Tensor, Tensor>> stacked_targets(const std::vector<std::vector<double>>& z,
                                                              const AdapterSet& like) {
    std::vector<std::pair<Tensor, Tensor>> out;
    const std::size_t n = z.size();
    std::size_t off = 0;
    for (const auto& p : like.entries()) {
        auto gather = [&](const Tensor& t) {
            std::vector<double> v;
            v.reserve(n * t.numel());
            for (const auto& zi : z)
                v.insert(v.end(), zi.begin() + static_cast<std::ptrdiff_t>(off),
                         zi.begin() + static_cast<std::ptrdiff_t>(off + t.numel()));
            off += t.numel();
            return Tensor({n, t.dim(0), t.dim(1)}, std::move(v));
        };
        Tensor a = gather(p.a);
        Tensor b = gather(p.b);
        out.emplace_back(a, b);
    }
    return out;
}

inline Tensor recon_loss(const AdapterView& out, const std::vector<std::pair<Tensor, Tensor>>& targets) {
    Tensor total;
    std::size_t count = 0;
    for (std::size_t i = 0; i < out.entries.size(); ++i) {
        for (int ab = 0; ab < 2; ++ab) {
            const Tensor& o = ab == 0 ? out.entries[i].a : out.entries[i].b;
            const Tensor& t = ab == 0 ? targets[i].first : targets[i].second;
            Tensor s = sum(abs(sub(o, t)));
            total = total.defined() ? add(total, s) : s;
            count += o.numel();
        }
    }
    return scale(total, 1.0 / static_cast<double>(count));
}

}  // namespace detail

/// Mean per-element L1 of the hypernet's (denormalized) output against each
/// library member, in raw weight units.
inline std::vector<double> recon_l1_raw(const Hypernet& h, const AdapterLibrary& library,
                                        const std::vector<Tensor>& embeddings) {
    NoGradGuard no_grad;
    std::vector<double> out;
    for (std::size_t i = 0; i < library.size(); ++i) {
        const auto got = generate(h, embeddings[i]).flatten_ab();
        const auto want = library.adapters[i].flatten_ab();
        double s = 0.0;
        for (std::size_t j = 0; j < got.size(); ++j) s += std::fabs(got[j] - want[j]);
        out.push_back(s / static_cast<double>(got.size()));
    }
    return out;
}

/// Fits the hypernet to reproduce every library member from its embedding.
/// One batch is the whole library. `embeddings` may be empty when the config
/// has a learned dictionary with one row per member.
inline ReconResult train_t2l_recon(const AdapterLibrary& library, const std::vector<Tensor>& embeddings,
                                   const HypernetConfig& hc, const TrainConfig& cfg, std::uint64_t init_seed) {
    if (library.empty()) throw ConfigError("train_t2l_recon: empty library");
    library.validate();
    const bool learned = embeddings.empty();
    if (learned && hc.n_learned != library.size())
        throw ConfigError("train_t2l_recon: need one embedding per library member");
    if (!learned && embeddings.size() != library.size())
        throw ConfigError("train_t2l_recon: " + std::to_string(embeddings.size()) + " embeddings for " +
                          std::to_string(library.size()) + " adapters");
    if (library.adapters[0].fingerprint() != hc.base_fingerprint || library.adapters[0].rank() != hc.rank)
        throw FingerprintError("train_t2l_recon: library does not match the hypernet target config");

    ReconResult res{build_hypernet(hc, init_seed), {}, 0.0, 0.0, {}};
    Hypernet& h = res.hypernet;
    const ZScoreStats stats = compute_zscore_stats(library);
    std::vector<std::vector<double>> z;
    for (const auto& a : library.adapters) z.push_back(stats.normalize(a.flatten_ab()));
    const auto targets = detail::stacked_targets(z, library.adapters[0]);

    auto task_inputs = [&]() {
        if (!learned) return embeddings;
        std::vector<Tensor> v;
        for (std::size_t i = 0; i < library.size(); ++i) v.push_back(h.learned_embedding(i));
        return v;
    };
    double last_l1 = 0.0;
    auto loss_fn = [&](std::size_t, Rng& rng) {
        GenOptions opt{.train = true, .rng = &rng, .denormalize = false};
        Tensor loss = detail::recon_loss(generate_many(h, task_inputs(), opt), targets);
        last_l1 = loss.item();
        return loss;
    };
    res.log = detail::optimize(h.parameters(), cfg, cfg.resolved_steps(library.size()), loss_fn,
                               [&](std::size_t) { return std::optional<double>(last_l1); });

    h.zscore = stats;
    {
        NoGradGuard no_grad;
        GenOptions opt{.train = false, .rng = nullptr, .denormalize = false};
        AdapterView out = generate_many(h, task_inputs(), opt);
        res.final_l1_z = detail::recon_loss(out, targets).item();
        // Raw-space error: |std * (z - out)| summed in canonical order.
        double raw = 0.0;
        std::size_t count = 0, off = 0;
        const std::size_t n = library.size();
        std::vector<double> per_task(n, 0.0);
        for (std::size_t i = 0; i < out.entries.size(); ++i)
            for (int ab = 0; ab < 2; ++ab) {
                const Tensor& o = ab == 0 ? out.entries[i].a : out.entries[i].b;
                const Tensor& t = ab == 0 ? targets[i].first : targets[i].second;
                const std::size_t per = o.numel() / n;
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t j = 0; j < per; ++j) {
                        const double e = stats.std[off + j] * std::fabs(t[b * per + j] - o[b * per + j]);
                        raw += e;
                        per_task[b] += e;
                    }
                count += o.numel();
                off += per;
            }
        res.final_l1_raw = raw / static_cast<double>(count);
        for (double& p : per_task) p /= static_cast<double>(count / n);
        res.per_task_l1_raw = per_task;
    }
    return res;
}

// ---------------------------------------------------------------------------
// SFT training of the hypernet

using Embedder = std::function<Tensor(const std::string&)>;

inline Embedder hashed_embedder(std::size_t d_task, std::uint64_t hash_seed = kDefaultHashSeed) {
    auto cache = std::make_shared<std::map<std::string, Tensor>>();
    return [=](const std::string& text) {
        auto it = cache->find(text);
        if (it != cache->end()) return it->second;
        Tensor v = embed_hashed(text, d_task, hash_seed).vector;
        cache->emplace(text, v);
        return v;
    };
}

/// Each datapoint samples one of its task's descriptions; the generated
/// per-example adapters feed the masked SFT loss; only hypernet weights move.
inline Hypernet train_t2l_sft(const std::vector<const ToyTask*>& tasks, const BaseLM& lm, const HypernetConfig& hc,
                              const TrainConfig& cfg, const Embedder& embed, std::uint64_t init_seed,
                              TrainLog* log_out = nullptr) {
    if (tasks.empty()) throw ConfigError("train_t2l_sft: no tasks");
    for (const auto* t : tasks) {
        if (t->descriptions.empty()) throw ConfigError("train_t2l_sft: task '" + t->id + "' has no descriptions");
        if (t->train.empty()) throw ConfigError("train_t2l_sft: task '" + t->id + "' has no training data");
    }
    if (hc.base_fingerprint != lm.config.fingerprint())
        throw FingerprintError("train_t2l_sft: hypernet targets a different base config");
    Hypernet h = build_hypernet(hc, init_seed);
    auto loss_fn = [&](std::size_t, Rng& rng) {
        std::vector<Example> batch;
        std::vector<Tensor> embs;
        for (std::size_t ti : sample_mixed_tasks(tasks.size(), cfg.batch_size, rng)) {
            const ToyTask& t = *tasks[ti];
            batch.push_back(t.train[rng.index(t.train.size())]);
            embs.push_back(embed(t.descriptions[rng.index(t.descriptions.size())]));
        }
        GenOptions gopt{.train = true, .rng = &rng, .denormalize = true};
        AdapterView view = generate_many(h, embs, gopt);
        ForwardOptions opt;
        opt.adapters = &view;
        opt.neftune_alpha = cfg.neftune_alpha;
        opt.lora_dropout = cfg.lora_dropout;
        opt.rng = &rng;
        return sft_loss(lm, batch, opt);
    };
    TrainLog log = detail::optimize(h.parameters(), cfg, cfg.resolved_steps(tasks.size()), loss_fn);
    if (log_out) *log_out = std::move(log);
    return h;
}

inline Hypernet train_t2l_sft(const std::vector<ToyTask>& tasks, const BaseLM& lm, const HypernetConfig& hc,
                              const TrainConfig& cfg, const Embedder& embed, std::uint64_t init_seed,
                              TrainLog* log_out = nullptr) {
    std::vector<const ToyTask*> ptrs;
    for (const auto& t : tasks) ptrs.push_back(&t);
    return train_t2l_sft(ptrs, lm, hc, cfg, embed, init_seed, log_out);
}

}  // namespace t2l
