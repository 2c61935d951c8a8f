#pragma once

// Hypernetwork that maps a task embedding to a full AdapterSet in one pass.
//
// Every (module, layer[, A/B][, rank]) slot becomes one backbone row:
//
//   desc = [LN(W_enc f(z) + b) ; LN(E_mod[m]) ; LN(E_layer[l])]
//   h    = mixer(desc)
//   h   += mlp1(h)            then  h += E_ab[m, ab]        (M, S)
//   h   += mlp2(h)            then  h += LN(E_rank[k])      (S)
//   h    = mlp3(h)
//   out  = head_m(h)
//
// Head outputs per module: L emits A and B flattened together, M emits one
// r x d_max matrix per A/B selector, S emits one d_max row per (A/B, rank).

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "t2l/base_lm.hpp"
#include "t2l/binary_io.hpp"
#include "t2l/lm_config.hpp"
#include "t2l/lora.hpp"
#include "t2l/task_embed.hpp"
#include "t2l/tensor.hpp"

namespace t2l {

enum class Arch { L, M, S };

inline const char* arch_name(Arch a) {
    switch (a) {
        case Arch::L: return "L";
        case Arch::M: return "M";
        case Arch::S: return "S";
    }
    return "?";
}

inline Arch parse_arch(const std::string& s) {
    if (s == "L" || s == "l") return Arch::L;
    if (s == "M" || s == "m") return Arch::M;
    if (s == "S" || s == "s") return Arch::S;
    throw ConfigError("unknown hypernet arch '" + s + "' (expected L, M or S)");
}

struct HypernetConfig {
    Arch arch = Arch::M;
    std::size_t d_task = 64;
    std::size_t d_task_enc = 64;
    std::size_t d_embed = 32;
    std::size_t d_hidden = 128;
    double dropout = 0.05;
    std::size_t n_layers = 4;
    std::vector<ModuleDims> modules;
    std::size_t rank = 4;
    double scaling = 4.0;
    std::uint64_t base_fingerprint = 0;
    std::size_t n_learned = 0;  // rows of the learned task-embedding dictionary

    static HypernetConfig for_model(const BaseLMConfig& lm, const LoraConfig& lora, Arch arch, std::size_t d_task) {
        lm.validate();
        lora.validate(lm);
        HypernetConfig c;
        c.arch = arch;
        c.d_task = d_task;
        c.n_layers = lm.n_layers;
        c.modules = lm.target_dims();
        c.rank = lora.rank;
        c.scaling = lora.scaling();
        c.base_fingerprint = lm.fingerprint();
        return c;
    }

    std::size_t d_desc() const { return d_task_enc + 2 * d_embed; }
    std::size_t n_ab() const { return arch == Arch::L ? 1 : 2; }
    std::size_t n_rank_rows() const { return arch == Arch::S ? rank : 1; }
    /// Backbone rows generated per module for one task.
    std::size_t rows_per_module() const { return n_layers * n_ab() * n_rank_rows(); }
    static std::size_t d_max(const ModuleDims& d) { return std::max(d.d_in, d.d_out); }

    /// Width of one head output row for module `d`.
    std::size_t head_out(const ModuleDims& d) const {
        switch (arch) {
            case Arch::L: return rank * (d.d_in + d.d_out);
            case Arch::M: return rank * d_max(d);
            case Arch::S: return d_max(d);
        }
        return 0;
    }
    /// Rows of the head bias table: one shared row (L), one per A/B (M), one per (A/B, rank) (S).
    std::size_t bias_rows() const {
        switch (arch) {
            case Arch::L: return 1;
            case Arch::M: return 2;
            case Arch::S: return 2 * rank;
        }
        return 0;
    }

    void validate() const {
        if (d_task == 0 || d_task_enc == 0 || d_embed == 0 || d_hidden == 0 || n_layers == 0 || rank == 0)
            throw ConfigError("HypernetConfig: all extents must be positive");
        if (modules.empty()) throw ConfigError("HypernetConfig: no target modules");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("HypernetConfig: dropout must lie in [0, 1)");
        for (const auto& m : modules)
            if (rank >= std::min(m.d_in, m.d_out))
                throw ConfigError("HypernetConfig: rank " + std::to_string(rank) + " too large for " + m.name);
    }
};

/// Head weights only (the size formulas compared across archs).
inline std::size_t head_weight_count(const HypernetConfig& c) {
    c.validate();
    std::size_t n = 0;
    for (const auto& m : c.modules) n += c.d_hidden * c.head_out(m);
    return n;
}

/// Head weights plus bias tables, summed over per-module heads.
inline std::size_t head_param_count(const HypernetConfig& c) {
    std::size_t n = head_weight_count(c);
    for (const auto& m : c.modules) n += c.bias_rows() * c.head_out(m);
    return n;
}

struct ResidualMlp {
    Tensor ln_g, ln_b, w1, b1, w2, b2;
};

struct OutputHead {
    Tensor w;     // [head_out, d_hidden]
    Tensor bias;  // [bias_rows, head_out]
};

struct Hypernet {
    HypernetConfig config;
    Tensor enc_w, enc_b, enc_ln_g, enc_ln_b;
    Tensor layer_emb, layer_ln_g, layer_ln_b;
    Tensor module_emb, module_ln_g, module_ln_b;
    Tensor mix_w1, mix_b1, mix_w2, mix_b2;
    ResidualMlp mlp1, mlp2;
    Tensor m3_ln_g, m3_ln_b, m3_w1, m3_b1, m3_w2, m3_b2;
    Tensor ab_emb;                            // [n_modules * 2, d_desc] (M, S)
    Tensor rank_emb, rank_ln_g, rank_ln_b;    // [rank, d_desc] (S)
    Tensor task_table;                        // [n_learned, d_task] when n_learned > 0
    std::vector<OutputHead> heads;
    std::optional<ZScoreStats> zscore;        // set by reconstruction training

    std::vector<std::pair<std::string, Tensor>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor>> p{
            {"enc.w", enc_w},           {"enc.b", enc_b},           {"enc.ln.g", enc_ln_g},
            {"enc.ln.b", enc_ln_b},     {"layer.emb", layer_emb},   {"layer.ln.g", layer_ln_g},
            {"layer.ln.b", layer_ln_b}, {"module.emb", module_emb}, {"module.ln.g", module_ln_g},
            {"module.ln.b", module_ln_b}, {"mixer.w1", mix_w1},     {"mixer.b1", mix_b1},
            {"mixer.w2", mix_w2},       {"mixer.b2", mix_b2}};
        auto block = [&](const char* name, const ResidualMlp& b) {
            const std::string n(name);
            p.insert(p.end(), {{n + ".ln.g", b.ln_g}, {n + ".ln.b", b.ln_b}, {n + ".w1", b.w1}, {n + ".b1", b.b1},
                               {n + ".w2", b.w2}, {n + ".b2", b.b2}});
        };
        block("mlp1", mlp1);
        block("mlp2", mlp2);
        p.insert(p.end(), {{"mlp3.ln.g", m3_ln_g}, {"mlp3.ln.b", m3_ln_b}, {"mlp3.w1", m3_w1}, {"mlp3.b1", m3_b1},
                           {"mlp3.w2", m3_w2}, {"mlp3.b2", m3_b2}});
        if (ab_emb.defined()) p.emplace_back("ab.emb", ab_emb);
        if (rank_emb.defined()) {
            p.emplace_back("rank.emb", rank_emb);
            p.emplace_back("rank.ln.g", rank_ln_g);
            p.emplace_back("rank.ln.b", rank_ln_b);
        }
        if (task_table.defined()) p.emplace_back("task.table", task_table);
        for (std::size_t m = 0; m < heads.size(); ++m) {
            const std::string n = "head." + config.modules[m].name;
            p.emplace_back(n + ".w", heads[m].w);
            p.emplace_back(n + ".bias", heads[m].bias);
        }
        return p;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (auto& [_, t] : named_parameters()) out.push_back(t);
        return out;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& t : parameters()) n += t.numel();
        return n;
    }

    /// Learned-dictionary task embedding (tape-connected to task_table).
    Tensor learned_embedding(std::size_t index) const {
        if (!task_table.defined() || index >= config.n_learned)
            throw IndexError("learned_embedding: index " + std::to_string(index) + " outside dictionary of " +
                             std::to_string(config.n_learned));
        const int i = static_cast<int>(index);
        return reshape(embedding(task_table, std::span<const int>(&i, 1)), {config.d_task});
    }
};

namespace detail {

inline Tensor torch_linear_w(std::size_t out, std::size_t in, Rng& rng) {
    const double b = 1.0 / std::sqrt(static_cast<double>(in));
    return Tensor::uniform({out, in}, -b, b, rng, true);
}
inline Tensor torch_linear_b(std::size_t out, std::size_t in, Rng& rng) {
    const double b = 1.0 / std::sqrt(static_cast<double>(in));
    return Tensor::uniform({out}, -b, b, rng, true);
}

}  // namespace detail

/// Backbone weights follow the usual U(+-1/sqrt(fan_in)) rule; head weights are
/// zero and head biases reproduce a fresh LoRA init (A uniform, B zero).
inline Hypernet build_hypernet(const HypernetConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    const std::size_t D = config.d_desc(), H = config.d_hidden, E = config.d_embed;
    Hypernet h;
    h.config = config;
    h.enc_w = detail::torch_linear_w(config.d_task_enc, config.d_task, rng);
    h.enc_b = detail::torch_linear_b(config.d_task_enc, config.d_task, rng);
    h.enc_ln_g = Tensor::full({config.d_task_enc}, 1.0, true);
    h.enc_ln_b = Tensor::zeros({config.d_task_enc}, true);
    h.layer_emb = Tensor::normal({config.n_layers, E}, 1.0, rng, true);
    h.layer_ln_g = Tensor::full({E}, 1.0, true);
    h.layer_ln_b = Tensor::zeros({E}, true);
    h.module_emb = Tensor::normal({config.modules.size(), E}, 1.0, rng, true);
    h.module_ln_g = Tensor::full({E}, 1.0, true);
    h.module_ln_b = Tensor::zeros({E}, true);
    h.mix_w1 = detail::torch_linear_w(H, D, rng);
    h.mix_b1 = detail::torch_linear_b(H, D, rng);
    h.mix_w2 = detail::torch_linear_w(D, H, rng);
    h.mix_b2 = detail::torch_linear_b(D, H, rng);
    for (ResidualMlp* b : {&h.mlp1, &h.mlp2}) {
        b->ln_g = Tensor::full({D}, 1.0, true);
        b->ln_b = Tensor::zeros({D}, true);
        b->w1 = detail::torch_linear_w(H, D, rng);
        b->b1 = detail::torch_linear_b(H, D, rng);
        b->w2 = detail::torch_linear_w(D, H, rng);
        b->b2 = detail::torch_linear_b(D, H, rng);
    }
    h.m3_ln_g = Tensor::full({D}, 1.0, true);
    h.m3_ln_b = Tensor::zeros({D}, true);
    h.m3_w1 = detail::torch_linear_w(H, D, rng);
    h.m3_b1 = detail::torch_linear_b(H, D, rng);
    h.m3_w2 = detail::torch_linear_w(H, H, rng);
    h.m3_b2 = detail::torch_linear_b(H, H, rng);
    if (config.arch != Arch::L) h.ab_emb = Tensor::normal({config.modules.size() * 2, D}, 1.0, rng, true);
    if (config.arch == Arch::S) {
        h.rank_emb = Tensor::normal({config.rank, D}, 1.0, rng, true);
        h.rank_ln_g = Tensor::full({D}, 1.0, true);
        h.rank_ln_b = Tensor::zeros({D}, true);
    }
    if (config.n_learned > 0)
        h.task_table = Tensor::normal({config.n_learned, config.d_task},
                                      1.0 / std::sqrt(static_cast<double>(config.d_task)), rng, true);

    const std::size_t r = config.rank;
    for (const auto& m : config.modules) {
        OutputHead head;
        const std::size_t out = config.head_out(m);
        head.w = Tensor::zeros({out, H}, true);
        std::vector<double> bias(config.bias_rows() * out, 0.0);
        const double din = static_cast<double>(m.d_in);
        switch (config.arch) {
            case Arch::L:
                // [A (r x d_in) | B (r x d_out)]: only the A segment is nonzero.
                for (std::size_t i = 0; i < r * m.d_in; ++i) bias[i] = rng.uniform(-1.0 / din, 1.0 / din);
                break;
            case Arch::M: {
                // Row 0 selects A, row 1 selects B; each row is r x d_max.
                const double bound = 1.0 / (std::sqrt(2.0) * din);
                const std::size_t dm = HypernetConfig::d_max(m);
                for (std::size_t k = 0; k < r; ++k)
                    for (std::size_t j = 0; j < m.d_in; ++j) bias[k * dm + j] = rng.uniform(-bound, bound);
                break;
            }
            case Arch::S: {
                // Rows [0, r) are A ranks, rows [r, 2r) are B ranks.
                const double bound = 1.0 / (std::sqrt(2.0 * static_cast<double>(r)) * din);
                for (std::size_t k = 0; k < r; ++k)
                    for (std::size_t j = 0; j < m.d_in; ++j) bias[k * out + j] = rng.uniform(-bound, bound);
                break;
            }
        }
        head.bias = Tensor({config.bias_rows(), out}, std::move(bias), true);
        h.heads.push_back(std::move(head));
    }
    return h;
}

// ---------------------------------------------------------------------------
// Forward

struct GenOptions {
    bool train = false;  // enables backbone dropout
    Rng* rng = nullptr;
    bool denormalize = true;  // apply attached z-score stats
};

/// One backbone row: which task, module, layer, A/B selector and rank it serves.
struct SlotIndex {
    std::size_t task = 0, module = 0, layer = 0, ab = 0, rank = 0;
};

namespace detail {

inline Tensor maybe_dropout(const Tensor& x, const Hypernet& h, const GenOptions& opt) {
    if (!opt.train || h.config.dropout <= 0.0) return x;
    if (!opt.rng) throw ContractError("hypernet: training mode needs an rng");
    return dropout(x, h.config.dropout, *opt.rng);
}

inline Tensor residual_mlp(const Tensor& x, const ResidualMlp& b, const Hypernet& h, const GenOptions& opt) {
    Tensor y = layer_norm(x, b.ln_g, b.ln_b);
    y = maybe_dropout(silu(linear(y, b.w1, b.b1)), h, opt);
    y = maybe_dropout(silu(linear(y, b.w2, b.b2)), h, opt);
    return add(x, y);
}

/// Encoded task vectors for a [n_tasks, d_task] matrix.
inline Tensor encode_tasks(const Hypernet& h, const Tensor& tasks) {
    return layer_norm(linear(tasks, h.enc_w, h.enc_b), h.enc_ln_g, h.enc_ln_b);
}

/// Descriptor rows [n, d_desc] for the given slots.
inline Tensor descriptor_rows(const Hypernet& h, const Tensor& encoded, const std::vector<SlotIndex>& slots) {
    std::vector<int> ti, mi, li;
    for (const auto& s : slots) {
        ti.push_back(static_cast<int>(s.task));
        mi.push_back(static_cast<int>(s.module));
        li.push_back(static_cast<int>(s.layer));
    }
    Tensor mod = layer_norm(h.module_emb, h.module_ln_g, h.module_ln_b);
    Tensor lay = layer_norm(h.layer_emb, h.layer_ln_g, h.layer_ln_b);
    return concat({embedding(encoded, ti), embedding(mod, mi), embedding(lay, li)}, 1);
}

/// Backbone output [n, d_hidden] for descriptor rows.
inline Tensor backbone(const Hypernet& h, const Tensor& desc, const std::vector<SlotIndex>& slots,
                       const GenOptions& opt) {
    Tensor x = maybe_dropout(silu(linear(desc, h.mix_w1, h.mix_b1)), h, opt);
    x = maybe_dropout(silu(linear(x, h.mix_w2, h.mix_b2)), h, opt);
    x = residual_mlp(x, h.mlp1, h, opt);
    if (h.config.arch != Arch::L) {
        std::vector<int> ai;
        for (const auto& s : slots) ai.push_back(static_cast<int>(s.module * 2 + s.ab));
        x = add(x, embedding(h.ab_emb, ai));
    }
    x = residual_mlp(x, h.mlp2, h, opt);
    if (h.config.arch == Arch::S) {
        std::vector<int> ri;
        for (const auto& s : slots) ri.push_back(static_cast<int>(s.rank));
        x = add(x, embedding(layer_norm(h.rank_emb, h.rank_ln_g, h.rank_ln_b), ri));
    }
    Tensor y = layer_norm(x, h.m3_ln_g, h.m3_ln_b);
    y = maybe_dropout(silu(linear(y, h.m3_w1, h.m3_b1)), h, opt);
    return silu(linear(y, h.m3_w2, h.m3_b2));
}

/// Head output for rows that all belong to module m.
inline Tensor head_rows(const Hypernet& h, std::size_t m, const Tensor& feats, const std::vector<SlotIndex>& slots) {
    const OutputHead& head = h.heads[m];
    Tensor out = linear(feats, head.w);
    std::vector<int> sel;
    for (const auto& s : slots) {
        switch (h.config.arch) {
            case Arch::L: sel.push_back(0); break;
            case Arch::M: sel.push_back(static_cast<int>(s.ab)); break;
            case Arch::S: sel.push_back(static_cast<int>(s.ab * h.config.rank + s.rank)); break;
        }
    }
    return add(out, embedding(head.bias, sel));
}

/// Slots for `n_tasks` tasks in generation order: module, task, layer, A/B, rank.
inline std::vector<SlotIndex> module_slots(const HypernetConfig& c, std::size_t m, std::size_t n_tasks) {
    std::vector<SlotIndex> out;
    for (std::size_t b = 0; b < n_tasks; ++b)
        for (std::size_t l = 0; l < c.n_layers; ++l)
            for (std::size_t ab = 0; ab < c.n_ab(); ++ab)
                for (std::size_t k = 0; k < c.n_rank_rows(); ++k) out.push_back({b, m, l, ab, k});
    return out;
}

inline Tensor task_matrix(const Hypernet& h, const std::vector<Tensor>& tasks) {
    if (tasks.empty()) throw ShapeError("hypernet: no task embeddings");
    for (const auto& t : tasks)
        if (t.numel() != h.config.d_task)
            throw ShapeError("hypernet: task embedding has " + std::to_string(t.numel()) + " values, expected d_task " +
                             std::to_string(h.config.d_task));
    std::vector<Tensor> rows;
    for (const auto& t : tasks) rows.push_back(t.rank() == 1 ? t : reshape(t, {h.config.d_task}));
    return stack(rows);
}

/// Splits one module's head output [n_tasks * rows_per_module, width] into
/// per-layer (A [B, r, d_in], B [B, r, d_out]).
inline std::vector<std::pair<Tensor, Tensor>> split_module(const HypernetConfig& c, const ModuleDims& md,
                                                           const Tensor& out, std::size_t n_tasks) {
    const std::size_t r = c.rank, L = c.n_layers;
    std::vector<std::pair<Tensor, Tensor>> res;
    if (c.arch == Arch::L) {
        Tensor x = reshape(out, {n_tasks, L, r * (md.d_in + md.d_out)});
        for (std::size_t l = 0; l < L; ++l) {
            Tensor row = slice(x, 1, l, 1);
            Tensor a = reshape(slice(row, 2, 0, r * md.d_in), {n_tasks, r, md.d_in});
            Tensor b = reshape(slice(row, 2, r * md.d_in, r * md.d_out), {n_tasks, r, md.d_out});
            res.emplace_back(a, b);
        }
        return res;
    }
    const std::size_t dm = HypernetConfig::d_max(md);
    Tensor x = reshape(out, {n_tasks, L, 2, r, dm});
    for (std::size_t l = 0; l < L; ++l) {
        Tensor row = slice(x, 1, l, 1);
        Tensor a = slice(slice(row, 2, 0, 1), 4, 0, md.d_in);
        Tensor b = slice(slice(row, 2, 1, 1), 4, 0, md.d_out);
        res.emplace_back(reshape(a, {n_tasks, r, md.d_in}), reshape(b, {n_tasks, r, md.d_out}));
    }
    return res;
}

/// mean + std * z for every entry, broadcast over the task axis.
inline void apply_zscore(const HypernetConfig& c, const ZScoreStats& st, AdapterView& view, std::size_t n_tasks) {
    std::size_t off = 0;
    for (auto& p : view.entries) {
        for (Tensor* t : {&p.a, &p.b}) {
            const std::size_t per = t->numel() / n_tasks;
            if (off + per > st.size()) throw ShapeError("hypernet: z-score stats shorter than adapter");
            std::vector<double> sd(t->numel()), mu(t->numel());
            for (std::size_t b = 0; b < n_tasks; ++b)
                for (std::size_t i = 0; i < per; ++i) {
                    sd[b * per + i] = st.std[off + i];
                    mu[b * per + i] = st.mean[off + i];
                }
            *t = add(mul(*t, Tensor(t->shape(), std::move(sd))), Tensor(t->shape(), std::move(mu)));
            off += per;
        }
    }
    if (off != st.size()) throw ShapeError("hypernet: z-score stats do not match adapter size");
    (void)c;
}

}  // namespace detail

/// Descriptor row for one slot. `ab` is required for M and S, `rank` for S.
inline Tensor descriptor(const Hypernet& h, const Tensor& task_emb, std::size_t module, std::size_t layer,
                         std::optional<std::size_t> ab = std::nullopt, std::optional<std::size_t> rank = std::nullopt) {
    const HypernetConfig& c = h.config;
    if (module >= c.modules.size() || layer >= c.n_layers)
        throw IndexError("descriptor: (module " + std::to_string(module) + ", layer " + std::to_string(layer) +
                         ") outside the target grid");
    if (c.arch != Arch::L && !ab) throw ContractError(std::string("descriptor: arch ") + arch_name(c.arch) + " needs an A/B selector");
    if (c.arch == Arch::S && !rank) throw ContractError("descriptor: arch S needs a rank index");
    if (ab && *ab > 1) throw IndexError("descriptor: A/B selector must be 0 or 1");
    if (rank && *rank >= c.rank) throw IndexError("descriptor: rank index out of range");
    Tensor enc = detail::encode_tasks(h, detail::task_matrix(h, {task_emb}));
    Tensor row = detail::descriptor_rows(h, enc, {{0, module, layer, ab.value_or(0), rank.value_or(0)}});
    return reshape(row, {c.d_desc()});
}

/// Adapters for a batch of tasks from one backbone evaluation over every slot.
/// Entries are per-example: A [n_tasks, r, d_in], B [n_tasks, r, d_out].
inline AdapterView generate_many(const Hypernet& h, const std::vector<Tensor>& tasks, const GenOptions& opt = {}) {
    const HypernetConfig& c = h.config;
    const std::size_t n = tasks.size();
    Tensor enc = detail::encode_tasks(h, detail::task_matrix(h, tasks));
    std::vector<SlotIndex> slots;
    std::vector<std::size_t> offsets;
    for (std::size_t m = 0; m < c.modules.size(); ++m) {
        offsets.push_back(slots.size());
        auto s = detail::module_slots(c, m, n);
        slots.insert(slots.end(), s.begin(), s.end());
    }
    Tensor feats = detail::backbone(h, detail::descriptor_rows(h, enc, slots), slots, opt);

    std::vector<std::vector<std::pair<Tensor, Tensor>>> per_module;
    const std::size_t rows = c.rows_per_module() * n;
    for (std::size_t m = 0; m < c.modules.size(); ++m) {
        std::vector<SlotIndex> ms(slots.begin() + static_cast<std::ptrdiff_t>(offsets[m]),
                                  slots.begin() + static_cast<std::ptrdiff_t>(offsets[m] + rows));
        Tensor out = detail::head_rows(h, m, slice(feats, 0, offsets[m], rows), ms);
        per_module.push_back(detail::split_module(c, c.modules[m], out, n));
    }
    AdapterView view;
    view.n_modules = c.modules.size();
    for (std::size_t l = 0; l < c.n_layers; ++l)
        for (std::size_t m = 0; m < c.modules.size(); ++m)
            view.entries.push_back({per_module[m][l].first, per_module[m][l].second, c.scaling});
    if (opt.denormalize && h.zscore) detail::apply_zscore(c, *h.zscore, view, n);
    return view;
}

namespace detail {

inline AdapterSet to_adapter_set(const HypernetConfig& c, const AdapterView& view) {
    std::vector<LoraPair> entries;
    for (const auto& p : view.entries) {
        const std::size_t r = p.a.dim(1);
        entries.push_back({reshape(p.a, {r, p.a.dim(2)}), reshape(p.b, {r, p.b.dim(2)}), p.scaling});
    }
    return AdapterSet(c.modules, c.n_layers, std::move(entries), c.base_fingerprint);
}

}  // namespace detail

/// Full AdapterSet for one task embedding.
inline AdapterSet generate(const Hypernet& h, const Tensor& task_emb, const GenOptions& opt = {}) {
    return detail::to_adapter_set(h.config, generate_many(h, {task_emb}, opt));
}

inline AdapterSet generate(const Hypernet& h, const TaskEmbedding& task_emb, const GenOptions& opt = {}) {
    AdapterSet set = generate(h, task_emb.vector, opt);
    set.description = task_emb.source;
    return set;
}

/// Reference path: every slot through the backbone and head on its own.
/// Matches generate() bitwise; used to check that batching is pure reshaping.
inline AdapterSet generate_sequential(const Hypernet& h, const Tensor& task_emb) {
    NoGradGuard no_grad;
    const HypernetConfig& c = h.config;
    GenOptions opt;
    Tensor enc = detail::encode_tasks(h, detail::task_matrix(h, {task_emb}));
    std::vector<LoraPair> entries(c.n_layers * c.modules.size());
    for (std::size_t m = 0; m < c.modules.size(); ++m) {
        const ModuleDims& md = c.modules[m];
        const std::size_t r = c.rank, dm = HypernetConfig::d_max(md);
        std::vector<std::vector<double>> a(c.n_layers, std::vector<double>(r * md.d_in));
        std::vector<std::vector<double>> b(c.n_layers, std::vector<double>(r * md.d_out));
        for (const SlotIndex& s : detail::module_slots(c, m, 1)) {
            std::vector<SlotIndex> one{s};
            Tensor feats = detail::backbone(h, detail::descriptor_rows(h, enc, one), one, opt);
            Tensor out = detail::head_rows(h, m, feats, one);
            const auto& v = out.values();
            switch (c.arch) {
                case Arch::L:
                    std::copy_n(v.begin(), r * md.d_in, a[s.layer].begin());
                    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * md.d_in), r * md.d_out, b[s.layer].begin());
                    break;
                case Arch::M:
                    for (std::size_t k = 0; k < r; ++k) {
                        auto src = v.begin() + static_cast<std::ptrdiff_t>(k * dm);
                        if (s.ab == 0)
                            std::copy_n(src, md.d_in, a[s.layer].begin() + static_cast<std::ptrdiff_t>(k * md.d_in));
                        else
                            std::copy_n(src, md.d_out, b[s.layer].begin() + static_cast<std::ptrdiff_t>(k * md.d_out));
                    }
                    break;
                case Arch::S:
                    if (s.ab == 0)
                        std::copy_n(v.begin(), md.d_in, a[s.layer].begin() + static_cast<std::ptrdiff_t>(s.rank * md.d_in));
                    else
                        std::copy_n(v.begin(), md.d_out, b[s.layer].begin() + static_cast<std::ptrdiff_t>(s.rank * md.d_out));
                    break;
            }
        }
        for (std::size_t l = 0; l < c.n_layers; ++l)
            entries[l * c.modules.size() + m] = {Tensor({r, md.d_in}, std::move(a[l])),
                                                 Tensor({r, md.d_out}, std::move(b[l])), c.scaling};
    }
    AdapterSet set(c.modules, c.n_layers, std::move(entries), c.base_fingerprint);
    if (h.zscore) set = set.with_values(h.zscore->denormalize(set.flatten_ab()));
    return set;
}

/// Task-encoder output and the last MLP block output averaged over all slots.
struct HypernetActivations {
    std::vector<double> task_encoder;
    std::vector<double> last_block;
};

inline HypernetActivations activations(const Hypernet& h, const Tensor& task_emb) {
    NoGradGuard no_grad;
    const HypernetConfig& c = h.config;
    Tensor enc = detail::encode_tasks(h, detail::task_matrix(h, {task_emb}));
    std::vector<SlotIndex> slots;
    for (std::size_t m = 0; m < c.modules.size(); ++m) {
        auto s = detail::module_slots(c, m, 1);
        slots.insert(slots.end(), s.begin(), s.end());
    }
    Tensor feats = detail::backbone(h, detail::descriptor_rows(h, enc, slots), slots, {});
    HypernetActivations act;
    act.task_encoder = enc.values();
    act.last_block.assign(c.d_hidden, 0.0);
    for (std::size_t i = 0; i < slots.size(); ++i)
        for (std::size_t j = 0; j < c.d_hidden; ++j) act.last_block[j] += feats[i * c.d_hidden + j];
    for (double& v : act.last_block) v /= static_cast<double>(slots.size());
    return act;
}

// ---------------------------------------------------------------------------
// T2LH checkpoint

inline void save_hypernet(const Hypernet& h, const std::string& path) {
    const HypernetConfig& c = h.config;
    io::BinaryWriter w(path);
    w.magic("T2LH");
    w.u32(io::kFormatVersion);
    w.u64(c.base_fingerprint);
    w.str(arch_name(c.arch));
    for (std::size_t v : {c.d_task, c.d_task_enc, c.d_embed, c.d_hidden, c.n_layers, c.rank, c.n_learned})
        w.u32(static_cast<std::uint32_t>(v));
    w.f64(c.dropout);
    w.f64(c.scaling);
    w.u32(static_cast<std::uint32_t>(c.modules.size()));
    for (const auto& m : c.modules) {
        w.str(m.name);
        w.u32(static_cast<std::uint32_t>(m.d_in));
        w.u32(static_cast<std::uint32_t>(m.d_out));
    }
    const auto params = h.named_parameters();
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
        w.f64s(t.values());
    }
    w.u32(h.zscore ? 1 : 0);
    if (h.zscore) {
        w.u64(h.zscore->size());
        w.f64s(h.zscore->mean);
        w.f64s(h.zscore->std);
    }
    w.finish();
}

inline Hypernet load_hypernet(const std::string& path) {
    io::BinaryReader r(path);
    r.expect_header("T2LH");
    HypernetConfig c;
    c.base_fingerprint = r.u64();
    try {
        c.arch = parse_arch(r.str());
    } catch (const ConfigError& e) {
        throw FileFormatError("'" + path + "': " + e.what());
    }
    c.d_task = r.u32();
    c.d_task_enc = r.u32();
    c.d_embed = r.u32();
    c.d_hidden = r.u32();
    c.n_layers = r.u32();
    c.rank = r.u32();
    c.n_learned = r.u32();
    c.dropout = r.f64();
    c.scaling = r.f64();
    const std::size_t nm = r.u32();
    if (nm == 0 || nm > 64) throw FileFormatError("'" + path + "': implausible module count");
    for (std::size_t i = 0; i < nm; ++i) {
        ModuleDims d;
        d.name = r.str();
        d.d_in = r.u32();
        d.d_out = r.u32();
        c.modules.push_back(d);
    }
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw FileFormatError("'" + path + "': " + e.what());
    }
    Hypernet h = build_hypernet(c, 0);
    auto params = h.named_parameters();
    if (r.u32() != params.size()) throw FileFormatError("'" + path + "': parameter count mismatch");
    for (auto& [name, t] : params) {
        if (r.str() != name) throw FileFormatError("'" + path + "': expected parameter '" + name + "'");
        const std::size_t rank = r.u32();
        Shape s;
        for (std::size_t i = 0; i < rank && i < 8; ++i) s.push_back(r.u32());
        if (s != t.shape()) throw FileFormatError("'" + path + "': parameter '" + name + "' has wrong shape");
        auto v = r.f64s(t.numel());
        std::copy(v.begin(), v.end(), t.mutable_data().begin());
    }
    if (r.u32() == 1) {
        ZScoreStats st;
        const std::size_t n = r.u64();
        if (n > (std::size_t{1} << 32)) throw FileFormatError("'" + path + "': implausible stats length");
        st.mean = r.f64s(n);
        st.std = r.f64s(n);
        h.zscore = std::move(st);
    }
    return h;
}

/// Loads and checks the checkpoint targets `lm`.
inline Hypernet load_hypernet(const std::string& path, const BaseLMConfig& lm) {
    Hypernet h = load_hypernet(path);
    if (h.config.base_fingerprint != lm.fingerprint())
        throw FingerprintError("'" + path + "': hypernet was trained for a different base config");
    return h;
}

/// Deep copy with fresh leaf tensors (no shared storage with `h`).
inline Hypernet clone(const Hypernet& h) {
    Hypernet out = build_hypernet(h.config, 0);
    auto src = h.named_parameters();
    auto dst = out.named_parameters();
    for (std::size_t i = 0; i < src.size(); ++i)
        std::copy(src[i].second.values().begin(), src[i].second.values().end(), dst[i].second.mutable_data().begin());
    out.zscore = h.zscore;
    return out;
}

}  // namespace t2l
