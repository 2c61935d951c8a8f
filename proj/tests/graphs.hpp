#pragma once

// Small composed graphs (hypernet -> adapters -> base LM -> loss) shared by
// the hypernet/train unit tests and the acceptance run.

#include "gradcheck.hpp"
#include "t2l/base_lm.hpp"
#include "t2l/hypernet.hpp"
#include "t2l/train.hpp"

namespace t2l::check {

inline BaseLMConfig tiny_lm_config() {
    BaseLMConfig c;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_ff = 32;
    c.max_seq = 16;
    return c;
}

inline HypernetConfig tiny_hypernet_config(const BaseLMConfig& lm, Arch arch, std::size_t d_task = 8) {
    LoraConfig lora;
    lora.rank = 2;
    HypernetConfig hc = HypernetConfig::for_model(lm, lora, arch, d_task);
    hc.d_task_enc = 8;
    hc.d_embed = 4;
    hc.d_hidden = 12;
    hc.dropout = 0.0;
    return hc;
}

/// Fresh heads have zero weights, which would hide every backbone gradient;
/// give them small random values so the whole graph is exercised.
inline void perturb_heads(Hypernet& h, std::uint64_t seed, double sd = 0.05) {
    Rng rng(seed);
    for (auto& head : h.heads) {
        auto w = head.w.mutable_data();
        for (auto& v : w) v = rng.normal() * sd;
        auto b = head.bias.mutable_data();
        for (auto& v : b) v += rng.normal() * sd;
    }
}

inline std::vector<Example> toy_batch() {
    return {{{1, 4, 5, 24, 27, 2}, {28, 3}}, {{1, 4, 5, 30, 31, 25, 2}, {26, 29, 3}}, {{1, 4, 5, 33, 2}, {24, 3}}};
}

inline std::vector<Tensor> toy_task_embeddings(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(Tensor::normal({d}, 1.0, rng));
    return out;
}

/// SFT objective: per-example adapters generated from task embeddings.
inline Tensor sft_graph_loss(const Hypernet& h, const BaseLM& lm, const std::vector<Example>& batch,
                             const std::vector<Tensor>& embs) {
    AdapterView view = generate_many(h, embs);
    ForwardOptions opt;
    opt.adapters = &view;
    return sft_loss(lm, batch, opt);
}

/// Reconstruction objective against fixed z-space targets.
inline Tensor recon_graph_loss(const Hypernet& h, const std::vector<Tensor>& embs,
                               const std::vector<std::pair<Tensor, Tensor>>& targets) {
    GenOptions opt;
    opt.denormalize = false;
    return detail::recon_loss(generate_many(h, embs, opt), targets);
}

inline std::vector<std::pair<Tensor, Tensor>> random_recon_targets(const HypernetConfig& hc, std::size_t n,
                                                                   std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::pair<Tensor, Tensor>> out;
    for (std::size_t l = 0; l < hc.n_layers; ++l)
        for (const auto& m : hc.modules)
            out.emplace_back(Tensor::normal({n, hc.rank, m.d_in}, 1.0, rng),
                             Tensor::normal({n, hc.rank, m.d_out}, 1.0, rng));
    return out;
}

/// Checks `per_param` coordinates inside every parameter tensor separately so
/// that small tensors (norm gains, embeddings) cannot be skipped by sampling.
inline GradCheck gradcheck_each(const std::vector<Tensor>& params, const std::function<Tensor()>& loss,
                                std::size_t per_param, std::uint64_t seed) {
    GradCheck all;
    for (std::size_t i = 0; i < params.size(); ++i) {
        GradCheck one = gradcheck({params[i]}, loss, per_param, seed + i);
        all.checked += one.checked;
        if (one.max_rel >= all.max_rel) {
            all.max_rel = one.max_rel;
            all.worst = "tensor " + std::to_string(i) + ": " + one.worst;
        }
    }
    return all;
}

}  // namespace t2l::check
