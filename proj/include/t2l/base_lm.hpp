#pragma once

// Frozen toy decoder-only transformer with LoRA injection points.
//
// Pre-norm blocks, learned positional embeddings, causal multi-head attention
// (grouped key/value heads allowed) and a SiLU feed-forward. No biases except
// in the norms. Any subset of {q,k,v,o,up,down}_proj may carry adapters.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "t2l/binary_io.hpp"
#include "t2l/lm_config.hpp"
#include "t2l/lora.hpp"
#include "t2l/tensor.hpp"

namespace t2l {

struct BlockWeights {
    Tensor ln1_g, ln1_b;
    Tensor wq, wk, wv, wo;
    Tensor ln2_g, ln2_b;
    Tensor w_up, w_down;
};

struct BaseLM {
    BaseLMConfig config;
    Tensor tok_emb;  // [vocab, d_model]
    Tensor pos_emb;  // [max_seq, d_model]
    std::vector<BlockWeights> blocks;
    Tensor lnf_g, lnf_b;
    Tensor head;  // [vocab, d_model]

    /// Every weight tensor in a fixed order (serialization, checksums, pretraining).
    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out{tok_emb, pos_emb};
        for (const auto& b : blocks)
            for (const Tensor* t : {&b.ln1_g, &b.ln1_b, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_g, &b.ln2_b, &b.w_up,
                                    &b.w_down})
                out.push_back(*t);
        out.push_back(lnf_g);
        out.push_back(lnf_b);
        out.push_back(head);
        return out;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& t : parameters()) n += t.numel();
        return n;
    }

    /// Weight matrix [d_out, d_in] of a named module in one layer.
    const Tensor& module_weight(const std::string& name, std::size_t layer) const {
        const BlockWeights& b = blocks.at(layer);
        if (name == "q_proj") return b.wq;
        if (name == "k_proj") return b.wk;
        if (name == "v_proj") return b.wv;
        if (name == "o_proj") return b.wo;
        if (name == "up_proj") return b.w_up;
        if (name == "down_proj") return b.w_down;
        throw ConfigError("BaseLM: unknown module '" + name + "'");
    }
    Tensor& module_weight(const std::string& name, std::size_t layer) {
        return const_cast<Tensor&>(static_cast<const BaseLM*>(this)->module_weight(name, layer));
    }

    /// Order-sensitive hash of every weight bit.
    std::uint64_t checksum() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& t : parameters())
            for (double v : t.values()) h = mix64(h ^ std::bit_cast<std::uint64_t>(v));
        return h;
    }
};

/// Closed-form parameter count for a config.
inline std::size_t base_lm_param_count(const BaseLMConfig& c) {
    const std::size_t d = c.d_model;
    const std::size_t per_block = 4 * d + 2 * d * d + 2 * c.d_kv() * d + 2 * c.d_ff * d;
    return 2 * c.vocab_size * d + c.max_seq * d + c.n_layers * per_block + 2 * d;
}

/// Weights ~ N(0, 0.02) (output projections scaled by 1/sqrt(2L)), norms at identity.
inline BaseLM init_base_lm(const BaseLMConfig& config, std::uint64_t seed, bool trainable = false) {
    config.validate();
    Rng rng(seed);
    const std::size_t d = config.d_model;
    const double sd = 0.02;
    const double sd_out = sd / std::sqrt(2.0 * static_cast<double>(config.n_layers));
    BaseLM lm;
    lm.config = config;
    lm.tok_emb = Tensor::normal({config.vocab_size, d}, sd, rng, trainable);
    lm.pos_emb = Tensor::normal({config.max_seq, d}, sd, rng, trainable);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        BlockWeights b;
        b.ln1_g = Tensor::full({d}, 1.0, trainable);
        b.ln1_b = Tensor::zeros({d}, trainable);
        b.wq = Tensor::normal({d, d}, sd, rng, trainable);
        b.wk = Tensor::normal({config.d_kv(), d}, sd, rng, trainable);
        b.wv = Tensor::normal({config.d_kv(), d}, sd, rng, trainable);
        b.wo = Tensor::normal({d, d}, sd_out, rng, trainable);
        b.ln2_g = Tensor::full({d}, 1.0, trainable);
        b.ln2_b = Tensor::zeros({d}, trainable);
        b.w_up = Tensor::normal({config.d_ff, d}, sd, rng, trainable);
        b.w_down = Tensor::normal({d, config.d_ff}, sd_out, rng, trainable);
        lm.blocks.push_back(std::move(b));
    }
    lm.lnf_g = Tensor::full({d}, 1.0, trainable);
    lm.lnf_b = Tensor::zeros({d}, trainable);
    lm.head = Tensor::normal({config.vocab_size, d}, sd, rng, trainable);
    return lm;
}

/// Copy whose weights carry the given requires_grad flag and no tape linkage.
inline BaseLM with_trainable(const BaseLM& lm, bool trainable) {
    BaseLM out = lm;
    auto fix = [&](Tensor& t) { t = Tensor(t.shape(), t.values(), trainable); };
    fix(out.tok_emb);
    fix(out.pos_emb);
    for (auto& b : out.blocks)
        for (Tensor* t : {&b.ln1_g, &b.ln1_b, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_g, &b.ln2_b, &b.w_up, &b.w_down})
            fix(*t);
    fix(out.lnf_g);
    fix(out.lnf_b);
    fix(out.head);
    return out;
}

// ---------------------------------------------------------------------------
// Adapters as seen by the forward pass

/// Adapter entries in canonical order (layer-major). Each pair is either
/// shared by the whole batch (A [r, d_in], B [r, d_out]) or per example
/// (A [batch, r, d_in], B [batch, r, d_out]).
struct AdapterView {
    std::vector<LoraPair> entries;
    std::size_t n_modules = 0;

    bool empty() const { return entries.empty(); }
    const LoraPair& at(std::size_t module, std::size_t layer) const { return entries[layer * n_modules + module]; }
};

inline AdapterView view_of(const AdapterSet& set) { return {set.entries(), set.modules().size()}; }

/// Stacks one adapter per example into a per-example view.
inline AdapterView stack_adapters(const std::vector<AdapterSet>& sets) {
    if (sets.empty()) throw ShapeError("stack_adapters: no adapters");
    AdapterView v;
    v.n_modules = sets[0].modules().size();
    for (std::size_t i = 0; i < sets[0].entries().size(); ++i) {
        std::vector<Tensor> as, bs;
        for (const auto& s : sets) {
            if (s.entries().size() != sets[0].entries().size() || s.fingerprint() != sets[0].fingerprint())
                throw ShapeError("stack_adapters: adapters disagree on layout");
            as.push_back(s.entries()[i].a);
            bs.push_back(s.entries()[i].b);
        }
        v.entries.push_back({stack(as), stack(bs), sets[0].entries()[i].scaling});
    }
    return v;
}

struct ForwardOptions {
    const AdapterView* adapters = nullptr;
    double neftune_alpha = 0.0;  // > 0 adds uniform noise to input embeddings
    double lora_dropout = 0.0;   // input dropout on the adapter branch
    Rng* rng = nullptr;          // required when either of the above is active
    /// Per-example unpadded lengths, used for the NEFTune scale; empty: full width.
    const std::vector<std::size_t>* lengths = nullptr;
};

namespace detail {

inline void check_adapters(const BaseLMConfig& c, const AdapterView& v, std::size_t batch) {
    const auto dims = c.target_dims();
    if (v.n_modules != dims.size() || v.entries.size() != dims.size() * c.n_layers)
        throw ShapeError("forward: adapter covers " + std::to_string(v.entries.size()) + " (module, layer) slots, model has " +
                         std::to_string(dims.size() * c.n_layers));
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        for (std::size_t m = 0; m < dims.size(); ++m) {
            const LoraPair& p = v.at(m, l);
            const std::size_t ra = p.a.rank();
            bool ok = (ra == 2 || ra == 3) && p.b.rank() == ra && p.a.dim(ra - 2) == p.b.dim(ra - 2) &&
                      p.a.dim(ra - 1) == dims[m].d_in && p.b.dim(ra - 1) == dims[m].d_out;
            if (ok && ra == 3) ok = p.a.dim(0) == batch && p.b.dim(0) == batch;
            if (!ok)
                throw ShapeError("forward: adapter for (" + dims[m].name + ", layer " + std::to_string(l) + ") has A " +
                                 shape_str(p.a.shape()) + " B " + shape_str(p.b.shape()) + ", module is " +
                                 std::to_string(dims[m].d_in) + "->" + std::to_string(dims[m].d_out));
        }
    }
}

/// x [B, T, d_in] -> x W^T (+ s * (x A^T) B when adapted).
inline Tensor project(const Tensor& x, const Tensor& w, const LoraPair* pair, const ForwardOptions& opt) {
    Tensor y = linear(x, w);
    if (!pair) return y;
    Tensor xin = x;
    if (opt.lora_dropout > 0.0) xin = dropout(x, opt.lora_dropout, *opt.rng);
    Tensor low = matmul(xin, pair->a, /*transpose_b=*/true);  // [B, T, r]
    Tensor up = matmul(low, pair->b);                          // [B, T, d_out]
    return add(y, scale(up, pair->scaling));
}

/// [B, T, n*hd] -> [B, n, T, hd]
inline Tensor split_heads(const Tensor& x, std::size_t n, std::size_t hd) {
    return permute(reshape(x, {x.dim(0), x.dim(1), n, hd}), {0, 2, 1, 3});
}

}  // namespace detail

/// Logits [batch, seq, vocab] for equal-length token rows.
inline Tensor forward(const BaseLM& lm, const std::vector<std::vector<int>>& tokens, const ForwardOptions& opt = {}) {
    const BaseLMConfig& c = lm.config;
    if (tokens.empty()) throw ShapeError("forward: empty batch");
    const std::size_t B = tokens.size(), T = tokens[0].size();
    if (T == 0) throw ShapeError("forward: empty sequence");
    if (T > c.max_seq)
        throw ShapeError("forward: sequence length " + std::to_string(T) + " exceeds max_seq " + std::to_string(c.max_seq));
    std::vector<int> flat, pos;
    flat.reserve(B * T);
    for (const auto& row : tokens) {
        if (row.size() != T) throw ShapeError("forward: ragged batch");
        for (int t : row) {
            if (t < 0 || static_cast<std::size_t>(t) >= c.vocab_size)
                throw IndexError("forward: token " + std::to_string(t) + " outside vocab " + std::to_string(c.vocab_size));
            flat.push_back(t);
        }
    }
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t) pos.push_back(static_cast<int>(t));
    if (opt.adapters) detail::check_adapters(c, *opt.adapters, B);
    if ((opt.neftune_alpha > 0.0 || opt.lora_dropout > 0.0) && !opt.rng)
        throw ContractError("forward: noise options need an rng");

    const std::size_t d = c.d_model;
    Tensor x = embedding(lm.tok_emb, flat);
    if (opt.neftune_alpha > 0.0) {
        std::vector<double> noise(B * T * d);
        for (std::size_t b = 0; b < B; ++b) {
            const double len = opt.lengths ? static_cast<double>(opt.lengths->at(b)) : static_cast<double>(T);
            const double mag = opt.neftune_alpha / std::sqrt(len * static_cast<double>(d));
            for (std::size_t i = 0; i < T * d; ++i) noise[b * T * d + i] = mag * opt.rng->uniform(-1.0, 1.0);
        }
        x = add(x, Tensor(x.shape(), std::move(noise)));
    }
    x = reshape(add(x, embedding(lm.pos_emb, pos)), {B, T, d});

    const std::size_t H = c.n_heads, Hk = c.kv_heads(), hd = c.head_dim();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<std::size_t> slot(BaseLMConfig::known_modules().size(), c.target_modules.size());
    for (std::size_t k = 0; k < BaseLMConfig::known_modules().size(); ++k)
        for (std::size_t m = 0; m < c.target_modules.size(); ++m)
            if (c.target_modules[m] == BaseLMConfig::known_modules()[k]) slot[k] = m;
    auto pair_for = [&](std::size_t known_idx, std::size_t layer) -> const LoraPair* {
        if (!opt.adapters || slot[known_idx] == c.target_modules.size()) return nullptr;
        return &opt.adapters->at(slot[known_idx], layer);
    };

    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const BlockWeights& w = lm.blocks[l];
        Tensor h = layer_norm(x, w.ln1_g, w.ln1_b);
        Tensor q = detail::split_heads(detail::project(h, w.wq, pair_for(0, l), opt), H, hd);
        Tensor k = detail::split_heads(detail::project(h, w.wk, pair_for(1, l), opt), Hk, hd);
        Tensor v = detail::split_heads(detail::project(h, w.wv, pair_for(2, l), opt), Hk, hd);
        if (Hk != H) {
            const std::size_t group = H / Hk;
            std::vector<Tensor> ks, vs;
            for (std::size_t i = 0; i < H; ++i) {
                ks.push_back(slice(k, 1, i / group, 1));
                vs.push_back(slice(v, 1, i / group, 1));
            }
            k = concat(ks, 1);
            v = concat(vs, 1);
        }
        Tensor att = softmax(scale(matmul(q, k, /*transpose_b=*/true), inv_sqrt), /*causal=*/true);
        Tensor ctx = reshape(permute(matmul(att, v), {0, 2, 1, 3}), {B, T, d});
        x = add(x, detail::project(ctx, w.wo, pair_for(3, l), opt));

        Tensor h2 = layer_norm(x, w.ln2_g, w.ln2_b);
        Tensor f = silu(detail::project(h2, w.w_up, pair_for(4, l), opt));
        x = add(x, detail::project(f, w.w_down, pair_for(5, l), opt));
    }
    return linear(layer_norm(x, lm.lnf_g, lm.lnf_b), lm.head);
}

inline Tensor forward(const BaseLM& lm, const std::vector<std::vector<int>>& tokens, const AdapterSet& adapters) {
    AdapterView v = view_of(adapters);
    ForwardOptions opt;
    opt.adapters = &v;
    return forward(lm, tokens, opt);
}

/// Base model with every target weight replaced by W0 + s B^T A.
inline BaseLM merge_adapters(const BaseLM& lm, const AdapterSet& set) {
    if (set.fingerprint() != lm.config.fingerprint())
        throw FingerprintError("merge_adapters: adapter was built for a different base config");
    NoGradGuard no_grad;
    BaseLM out = lm;
    for (std::size_t l = 0; l < lm.config.n_layers; ++l)
        for (std::size_t m = 0; m < set.modules().size(); ++m) {
            Tensor& w = out.module_weight(set.modules()[m].name, l);
            w = merge(w, set.at(m, l)).detach();
        }
    return out;
}

// ---------------------------------------------------------------------------
// Supervised batches

/// Prompt X and completion Y; the model is trained to emit Y after X.
struct Example {
    std::vector<int> prompt;
    std::vector<int> completion;

    bool operator==(const Example&) const = default;
};

inline constexpr int kPadToken = 0;

/// Right-padded inputs and next-token targets (-1 where not a completion token).
struct PackedBatch {
    std::vector<std::vector<int>> inputs;
    std::vector<int> targets;  // [batch * seq]
    std::vector<std::size_t> lengths;
    std::size_t seq = 0;
};

inline PackedBatch pack_batch(const std::vector<Example>& batch, std::size_t max_seq) {
    PackedBatch p;
    for (const auto& e : batch) p.seq = std::max(p.seq, e.prompt.size() + e.completion.size() - 1);
    if (p.seq > max_seq)
        throw ShapeError("pack_batch: example needs " + std::to_string(p.seq) + " positions, max_seq is " +
                         std::to_string(max_seq));
    for (const auto& e : batch) {
        if (e.prompt.empty()) throw ShapeError("pack_batch: empty prompt");
        std::vector<int> full(e.prompt);
        full.insert(full.end(), e.completion.begin(), e.completion.end());
        std::vector<int> in(full.begin(), full.end() - 1);
        p.lengths.push_back(in.size());
        in.resize(p.seq, kPadToken);
        p.inputs.push_back(std::move(in));
        for (std::size_t t = 0; t < p.seq; ++t) {
            const bool scored = t + 1 >= e.prompt.size() && t + 1 < full.size();
            p.targets.push_back(scored ? full[t + 1] : -1);
        }
    }
    return p;
}

/// Mean cross-entropy over completion tokens.
inline Tensor sft_loss(const BaseLM& lm, const std::vector<Example>& batch, ForwardOptions opt = {}) {
    PackedBatch p = pack_batch(batch, lm.config.max_seq);
    opt.lengths = &p.lengths;
    Tensor logits = forward(lm, p.inputs, opt);
    return cross_entropy(logits, p.targets);
}

inline Tensor sft_loss(const BaseLM& lm, const std::vector<Example>& batch, const AdapterSet& adapters) {
    AdapterView v = view_of(adapters);
    ForwardOptions opt;
    opt.adapters = &v;
    return sft_loss(lm, batch, opt);
}

namespace detail {

inline int argmax_row(const double* p, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (p[i] > p[best]) best = i;
    return static_cast<int>(best);
}

}  // namespace detail

/// Greedy decoding from a prompt until `eos` or `max_new` tokens.
inline std::vector<int> greedy_decode(const BaseLM& lm, const std::vector<int>& prompt, int eos, std::size_t max_new,
                                      const AdapterSet* adapters = nullptr) {
    NoGradGuard no_grad;
    std::optional<AdapterView> v;
    ForwardOptions opt;
    if (adapters) {
        v = view_of(*adapters);
        opt.adapters = &*v;
    }
    std::vector<int> seq(prompt), out;
    while (out.size() < max_new && seq.size() < lm.config.max_seq) {
        Tensor logits = forward(lm, {seq}, opt);
        const std::size_t V = lm.config.vocab_size;
        const int next = detail::argmax_row(logits.data().data() + (seq.size() - 1) * V, V);
        out.push_back(next);
        if (next == eos) break;
        seq.push_back(next);
    }
    return out;
}

/// Per-example exact match of the greedy completion, computed with one
/// teacher-forced forward per batch. Greedy decoding reproduces Y exactly iff
/// every completion position's argmax equals the reference token, so this is
/// the same predicate as decoding token by token.
inline std::vector<bool> exact_match(const BaseLM& lm, const std::vector<Example>& batch,
                                     const AdapterView* adapters = nullptr) {
    NoGradGuard no_grad;
    PackedBatch p = pack_batch(batch, lm.config.max_seq);
    ForwardOptions opt;
    opt.adapters = adapters;
    Tensor logits = forward(lm, p.inputs, opt);
    const std::size_t V = lm.config.vocab_size;
    std::vector<bool> ok(batch.size(), true);
    for (std::size_t b = 0; b < batch.size(); ++b)
        for (std::size_t t = 0; t < p.seq; ++t) {
            const int target = p.targets[b * p.seq + t];
            if (target < 0) continue;
            if (detail::argmax_row(logits.data().data() + (b * p.seq + t) * V, V) != target) ok[b] = false;
        }
    return ok;
}

// ---------------------------------------------------------------------------
// T2LM checkpoint

inline void write_lm_config(io::BinaryWriter& w, const BaseLMConfig& c) {
    for (std::size_t v : {c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.kv_heads(), c.d_ff, c.max_seq})
        w.u32(static_cast<std::uint32_t>(v));
    w.u32(static_cast<std::uint32_t>(c.target_modules.size()));
    for (const auto& m : c.target_modules) w.str(m);
}

inline BaseLMConfig read_lm_config(io::BinaryReader& r) {
    BaseLMConfig c;
    c.vocab_size = r.u32();
    c.d_model = r.u32();
    c.n_layers = r.u32();
    c.n_heads = r.u32();
    c.n_kv_heads = r.u32();
    c.d_ff = r.u32();
    c.max_seq = r.u32();
    const std::size_t n = r.u32();
    if (n > 64) throw FileFormatError("'" + r.path() + "': implausible target module count");
    c.target_modules.clear();
    for (std::size_t i = 0; i < n; ++i) c.target_modules.push_back(r.str());
    if (c.n_kv_heads == c.n_heads) c.n_kv_heads = 0;
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw FileFormatError("'" + r.path() + "': " + e.what());
    }
    return c;
}

inline void save_base_lm(const BaseLM& lm, const std::string& path) {
    io::BinaryWriter w(path);
    w.magic("T2LM");
    w.u32(io::kFormatVersion);
    w.u64(lm.config.fingerprint());
    write_lm_config(w, lm.config);
    for (const auto& t : lm.parameters()) w.f64s(t.values());
    w.finish();
}

inline BaseLM load_base_lm(const std::string& path) {
    io::BinaryReader r(path);
    r.expect_header("T2LM");
    const std::uint64_t fp = r.u64();
    BaseLMConfig c = read_lm_config(r);
    if (fp != c.fingerprint()) throw FingerprintError("'" + path + "': stored fingerprint does not match its config");
    BaseLM lm = init_base_lm(c, 0);
    auto fill = [&](Tensor& t) { t = Tensor(t.shape(), r.f64s(t.numel())); };
    fill(lm.tok_emb);
    fill(lm.pos_emb);
    for (auto& b : lm.blocks)
        for (Tensor* t : {&b.ln1_g, &b.ln1_b, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_g, &b.ln2_b, &b.w_up, &b.w_down})
            fill(*t);
    fill(lm.lnf_g);
    fill(lm.lnf_b);
    fill(lm.head);
    return lm;
}

}  // namespace t2l
