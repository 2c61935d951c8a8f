#include <gtest/gtest.h>

#include <filesystem>

#include "graphs.hpp"
#include "t2l/hypernet.hpp"

using namespace t2l;
using namespace t2l::check;

namespace {

const Arch kArchs[] = {Arch::L, Arch::M, Arch::S};

HypernetConfig desk_config(Arch a) { return HypernetConfig::for_model(BaseLMConfig{}, LoraConfig{}, a, 64); }

std::string tmp(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("t2l_test_hyper_" + name)).string();
}

}  // namespace

TEST(HypernetBuild, BiasHyperInitLeavesBaseLogitsUnchanged) {
    BaseLM lm = init_base_lm(BaseLMConfig{}, 1);
    Rng rng(2);
    for (Arch a : kArchs) {
        Hypernet h = build_hypernet(desk_config(a), 3);
        Tensor emb = Tensor::normal({64}, 1.0, rng);
        AdapterSet set = generate(h, emb);
        for (const auto& p : set.entries())
            for (double v : p.b.values()) ASSERT_EQ(v, 0.0) << arch_name(a);
        std::vector<std::vector<int>> toks{{1, 4, 5, 30, 31, 2, 40}};
        Tensor x = forward(lm, toks), y = forward(lm, toks, set);
        for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_EQ(x[i], y[i]) << arch_name(a);
    }
}

TEST(HypernetBuild, BiasBoundsPerArch) {
    for (Arch a : kArchs) {
        HypernetConfig c = desk_config(a);
        Hypernet h = build_hypernet(c, 4);
        const double d = 64.0;
        const double bound = a == Arch::L ? 1.0 / d : a == Arch::M ? 1.0 / (std::sqrt(2.0) * d) : 1.0 / (std::sqrt(8.0) * d);
        AdapterSet set = generate(h, Tensor::zeros({64}));
        double widest = 0.0;
        for (const auto& p : set.entries())
            for (double v : p.a.values()) widest = std::max(widest, std::fabs(v));
        EXPECT_LE(widest, bound) << arch_name(a);
        EXPECT_GT(widest, 0.8 * bound) << arch_name(a);
    }
}

TEST(HypernetBuild, SameSeedSameParameters) {
    for (Arch a : kArchs) {
        auto p = build_hypernet(desk_config(a), 5).parameters(), q = build_hypernet(desk_config(a), 5).parameters();
        ASSERT_EQ(p.size(), q.size());
        for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i].values(), q[i].values());
    }
}

TEST(HypernetBuild, ParamCountMatchesAllocation) {
    for (Arch a : kArchs) {
        Hypernet h = build_hypernet(desk_config(a), 6);
        std::size_t heads = 0;
        for (const auto& head : h.heads) heads += head.w.numel() + head.bias.numel();
        EXPECT_EQ(heads, head_param_count(h.config));
        std::size_t total = 0;
        for (const auto& t : h.parameters()) total += t.numel();
        EXPECT_EQ(total, h.param_count());
    }
}

TEST(HypernetHeads, SizeRelations) {
    EXPECT_EQ(head_weight_count(desk_config(Arch::L)), 2 * head_weight_count(desk_config(Arch::M)));
    HypernetConfig s4 = desk_config(Arch::S), s8 = desk_config(Arch::S);
    s8.rank = 8;
    EXPECT_EQ(head_weight_count(s4), head_weight_count(s8));
    EXPECT_EQ(head_weight_count(s4), 128u * 64u * 2u);  // two 64-wide modules
    // One 64 -> 64 module at desk width: 128 * 2 * 4 * 64.
    EXPECT_EQ(head_weight_count(desk_config(Arch::L)) / 2, 65'536u);
}

TEST(HypernetDescriptor, LengthAndLayerSegment) {
    for (Arch a : kArchs) {
        Hypernet h = build_hypernet(desk_config(a), 7);
        Rng rng(8);
        Tensor emb = Tensor::normal({64}, 1.0, rng);
        auto ab = a == Arch::L ? std::nullopt : std::optional<std::size_t>(1);
        auto rk = a == Arch::S ? std::optional<std::size_t>(2) : std::nullopt;
        Tensor d0 = descriptor(h, emb, 0, 0, ab, rk), d0b = descriptor(h, emb, 0, 0, ab, rk);
        Tensor d1 = descriptor(h, emb, 0, 3, ab, rk);
        ASSERT_EQ(d0.numel(), 64u + 2 * 32u);
        EXPECT_EQ(d0.values(), d0b.values());
        const std::size_t enc = h.config.d_task_enc, E = h.config.d_embed;
        for (std::size_t i = 0; i < d0.numel(); ++i) {
            const bool layer_segment = i >= enc + E;
            if (layer_segment) continue;
            EXPECT_EQ(d0[i], d1[i]) << "index " << i;
        }
        bool differs = false;
        for (std::size_t i = enc + E; i < d0.numel(); ++i) differs = differs || d0[i] != d1[i];
        EXPECT_TRUE(differs);
    }
}

TEST(HypernetDescriptor, MissingSelectorsAreContractErrors) {
    Hypernet m = build_hypernet(desk_config(Arch::M), 9), s = build_hypernet(desk_config(Arch::S), 9);
    Tensor emb = Tensor::zeros({64});
    EXPECT_THROW(descriptor(m, emb, 0, 0), ContractError);
    EXPECT_THROW(descriptor(s, emb, 0, 0, 0), ContractError);
    EXPECT_THROW(descriptor(m, emb, 0, 4, 0), IndexError);
    EXPECT_THROW(parse_arch("XL"), ConfigError);
}

TEST(HypernetGenerate, BatchedEqualsSequentialBitwise) {
    Rng rng(10);
    for (Arch a : kArchs) {
        Hypernet h = build_hypernet(desk_config(a), 11);
        perturb_heads(h, 12);
        for (int t = 0; t < 3; ++t) {
            Tensor emb = Tensor::normal({64}, 1.0, rng);
            NoGradGuard ng;
            EXPECT_EQ(generate(h, emb).flatten_ab(), generate_sequential(h, emb).flatten_ab()) << arch_name(a);
        }
    }
}

TEST(HypernetGenerate, ManyTasksMatchOneAtATime) {
    Hypernet h = build_hypernet(desk_config(Arch::M), 13);
    perturb_heads(h, 14);
    auto embs = toy_task_embeddings(3, 64, 15);
    NoGradGuard ng;
    AdapterView many = generate_many(h, embs);
    for (std::size_t t = 0; t < 3; ++t) {
        auto one = generate(h, embs[t]);
        for (std::size_t e = 0; e < one.entries().size(); ++e) {
            const auto& pa = one.entries()[e].a;
            for (std::size_t i = 0; i < pa.numel(); ++i) EXPECT_EQ(many.entries[e].a[t * pa.numel() + i], pa[i]);
        }
    }
}

TEST(HypernetGenerate, ShapeContractAndCoverage) {
    BaseLMConfig lm;
    lm.n_kv_heads = 2;  // v_proj narrower than q_proj
    lm.target_modules = {"q_proj", "v_proj", "down_proj"};
    for (Arch a : kArchs) {
        Hypernet h = build_hypernet(HypernetConfig::for_model(lm, LoraConfig{}, a, 64), 16);
        AdapterSet s = generate(h, Tensor::zeros({64}));
        ASSERT_EQ(s.entries().size(), 3u * lm.n_layers);
        for (std::size_t l = 0; l < lm.n_layers; ++l)
            for (std::size_t m = 0; m < 3; ++m) {
                const auto& p = s.at(m, l);
                const auto d = lm.module_dims(lm.target_modules[m]);
                EXPECT_EQ(p.a.shape(), (Shape{4, d.d_in}));
                EXPECT_EQ(p.b.shape(), (Shape{4, d.d_out}));
            }
        EXPECT_THROW(generate(h, Tensor::zeros({32})), ShapeError);
    }
}

TEST(HypernetGrad, SftGraphFiniteDifferences) {
    BaseLM lm = init_base_lm(tiny_lm_config(), 17);
    for (Arch a : kArchs) {
        Hypernet h = build_hypernet(tiny_hypernet_config(lm.config, a), 18);
        perturb_heads(h, 19);
        auto embs = toy_task_embeddings(3, 8, 20);
        auto batch = toy_batch();
        auto r = gradcheck_each(h.parameters(), [&] { return sft_graph_loss(h, lm, batch, embs); }, 1, 21);
        EXPECT_GE(r.checked, 20u);
        EXPECT_LE(r.max_rel, 1e-4) << arch_name(a) << " " << r.worst;
    }
}

TEST(HypernetGrad, EveryParameterReceivesGradient) {
    BaseLM lm = init_base_lm(tiny_lm_config(), 22);
    for (Arch a : kArchs) {
        Hypernet h = build_hypernet(tiny_hypernet_config(lm.config, a), 23);
        perturb_heads(h, 24);
        sft_graph_loss(h, lm, toy_batch(), toy_task_embeddings(3, 8, 25)).backward();
        for (const auto& [name, t] : h.named_parameters()) {
            ASSERT_TRUE(t.has_grad()) << name;
            double n = 0.0;
            for (double g : t.grad()) n += std::fabs(g);
            EXPECT_GT(n, 0.0) << arch_name(a) << " " << name;
        }
    }
}

TEST(HypernetFile, RoundTripIsBitwise) {
    for (Arch a : kArchs) {
        HypernetConfig c = desk_config(a);
        c.n_learned = 3;
        Hypernet h = build_hypernet(c, 26);
        perturb_heads(h, 27);
        h.zscore = ZScoreStats{std::vector<double>(5, 0.5), std::vector<double>(5, 2.0)};
        const std::string p = tmp(std::string(arch_name(a)) + ".t2lh");
        save_hypernet(h, p);
        Hypernet back = load_hypernet(p, BaseLMConfig{});
        auto x = h.named_parameters(), y = back.named_parameters();
        ASSERT_EQ(x.size(), y.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            EXPECT_EQ(x[i].first, y[i].first);
            EXPECT_EQ(x[i].second.values(), y[i].second.values());
        }
        ASSERT_TRUE(back.zscore.has_value());
        EXPECT_EQ(back.zscore->std, h.zscore->std);
        BaseLMConfig other;
        other.n_layers = 3;
        EXPECT_THROW(load_hypernet(p, other), FingerprintError);
        std::filesystem::remove(p);
    }
}

TEST(HypernetLearned, DictionaryRowsAreTaskEmbeddings) {
    HypernetConfig c = desk_config(Arch::M);
    c.n_learned = 4;
    Hypernet h = build_hypernet(c, 28);
    EXPECT_EQ(h.learned_embedding(2).shape(), (Shape{64}));
    EXPECT_THROW(h.learned_embedding(4), IndexError);
}
