#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "gradcheck.hpp"
#include "t2l/base_lm.hpp"

using namespace t2l;

namespace {

BaseLMConfig tiny(std::size_t kv_heads = 0) {
    BaseLMConfig c;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 4;
    c.n_kv_heads = kv_heads;
    c.d_ff = 32;
    c.max_seq = 16;
    return c;
}

LoraConfig rank2() {
    LoraConfig l;
    l.rank = 2;
    return l;
}

AdapterSet random_adapter(const BaseLMConfig& c, std::uint64_t seed, bool grad = false, double b_sd = 0.3) {
    AdapterSet a = init_lora(c, rank2(), seed, grad);
    Rng rng(seed + 1);
    for (auto& p : a.mutable_entries()) p.b = Tensor::normal(p.b.shape(), b_sd, rng, grad);
    return a;
}

std::vector<std::vector<int>> random_tokens(std::size_t B, std::size_t T, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<int>> out(B);
    for (auto& r : out)
        for (std::size_t t = 0; t < T; ++t) r.push_back(static_cast<int>(rng.index(64)));
    return out;
}

std::string tmp(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("t2l_test_lm_" + name)).string();
}

}  // namespace

TEST(BaseLM, ParamCountMatchesClosedForm) {
    for (std::size_t kv : {0, 2, 1}) {
        BaseLM lm = init_base_lm(tiny(kv), 1);
        EXPECT_EQ(lm.param_count(), base_lm_param_count(tiny(kv)));
    }
    EXPECT_EQ(init_base_lm(BaseLMConfig{}, 1).param_count(), base_lm_param_count(BaseLMConfig{}));
}

TEST(BaseLM, ForwardShapeAndCausality) {
    BaseLM lm = init_base_lm(tiny(2), 3);
    auto toks = random_tokens(2, 7, 4);
    Tensor a = forward(lm, toks);
    EXPECT_EQ(a.shape(), (Shape{2, 7, 64}));
    toks[0][6] = (toks[0][6] + 1) % 64;
    Tensor b = forward(lm, toks);
    for (std::size_t i = 0; i < 6 * 64; ++i) EXPECT_EQ(a[i], b[i]) << "position " << i / 64 << " saw the future";
}

TEST(BaseLM, ZeroBAdapterLeavesLogitsBitwiseUnchanged) {
    BaseLM lm = init_base_lm(tiny(), 5);
    AdapterSet zero = init_lora(lm.config, rank2(), 6, false);
    auto toks = random_tokens(3, 9, 7);
    Tensor a = forward(lm, toks), b = forward(lm, toks, zero);
    ASSERT_EQ(a.numel(), b.numel());
    for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a[i], b[i]);
}

TEST(BaseLM, MergedWeightsMatchAdapterForward) {
    BaseLM lm = init_base_lm(tiny(), 8);
    AdapterSet ad = random_adapter(lm.config, 9);
    auto toks = random_tokens(2, 8, 10);
    Tensor a = forward(lm, toks, ad), m = forward(merge_adapters(lm, ad), toks);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], m[i], 1e-10);
}

TEST(BaseLM, PerExampleAdaptersMatchIndividualRuns) {
    BaseLM lm = init_base_lm(tiny(), 11);
    std::vector<AdapterSet> sets{random_adapter(lm.config, 12), random_adapter(lm.config, 13)};
    AdapterView stacked = stack_adapters(sets);
    auto toks = random_tokens(2, 6, 14);
    ForwardOptions opt;
    opt.adapters = &stacked;
    Tensor both = forward(lm, toks, opt);
    for (std::size_t b = 0; b < 2; ++b) {
        Tensor one = forward(lm, {toks[b]}, sets[b]);
        for (std::size_t i = 0; i < one.numel(); ++i) EXPECT_NEAR(both[b * one.numel() + i], one[i], 1e-12);
    }
}

TEST(BaseLM, PackBatchScoresCompletionOnly) {
    Example e{{1, 4, 5, 30, 31, 2}, {40, 41, 3}};
    PackedBatch p = pack_batch({e, Example{{1, 4, 5, 30, 2}, {40, 3}}}, 16);
    ASSERT_EQ(p.seq, 8u);
    // Input position t predicts token t+1; completion tokens start at index 6.
    std::vector<int> want{-1, -1, -1, -1, -1, 40, 41, 3};
    for (std::size_t t = 0; t < 8; ++t) EXPECT_EQ(p.targets[t], want[t]);
    EXPECT_EQ(p.inputs[1][6], kPadToken);
    EXPECT_EQ(p.targets[8 + 6], -1);
}

TEST(BaseLM, GradientsReachAdaptersOnly) {
    BaseLM lm = init_base_lm(tiny(), 15);
    AdapterSet ad = random_adapter(lm.config, 16, true);
    std::vector<Example> batch{{{1, 4, 5, 30, 2}, {31, 3}}, {{1, 4, 5, 33, 34, 2}, {35, 36, 3}}};
    sft_loss(lm, batch, ad).backward();
    for (const auto& t : lm.parameters()) EXPECT_FALSE(t.has_grad());
    bool any = false;
    for (const auto& t : ad.parameters()) any = any || t.has_grad();
    EXPECT_TRUE(any);
}

TEST(BaseLM, SftLossGradcheckThroughAdapters) {
    BaseLM lm = init_base_lm(tiny(2), 17);
    AdapterSet ad = random_adapter(lm.config, 18, true);
    std::vector<Example> batch{{{1, 4, 5, 30, 2}, {31, 3}}, {{1, 4, 5, 33, 34, 2}, {35, 36, 3}}};
    auto r = check::gradcheck(ad.parameters(), [&] { return sft_loss(lm, batch, ad); }, 24, 19);
    EXPECT_LE(r.max_rel, 1e-4) << r.worst;
}

TEST(BaseLM, PretrainingGradcheckOnBaseWeights) {
    BaseLM lm = init_base_lm(tiny(), 20, true);
    std::vector<Example> batch{{{1, 6, 17, 30, 2}, {31, 3}}};
    auto r = check::gradcheck(lm.parameters(), [&] { return sft_loss(lm, batch); }, 24, 21);
    EXPECT_LE(r.max_rel, 1e-4) << r.worst;
}

TEST(BaseLM, NeftuneNoiseIsBoundedAndOffByDefault) {
    BaseLM lm = init_base_lm(tiny(), 22);
    auto toks = random_tokens(1, 5, 23);
    Rng rng(1);
    ForwardOptions off;
    off.rng = &rng;
    Tensor base = forward(lm, toks), same = forward(lm, toks, off);
    for (std::size_t i = 0; i < base.numel(); ++i) EXPECT_EQ(base[i], same[i]);
    ForwardOptions on = off;
    on.neftune_alpha = 5.0;
    Tensor noisy = forward(lm, toks, on);
    double diff = 0.0;
    for (std::size_t i = 0; i < base.numel(); ++i) diff += std::fabs(base[i] - noisy[i]);
    EXPECT_GT(diff, 0.0);
    EXPECT_THROW(forward(lm, toks, ForwardOptions{.neftune_alpha = 1.0}), ContractError);
}

TEST(BaseLM, TeacherForcedExactMatchAgreesWithGreedyDecode) {
    BaseLM lm = init_base_lm(tiny(), 24);
    AdapterSet ad = random_adapter(lm.config, 25, false, 1.0);
    Rng rng(26);
    std::vector<Example> batch;
    for (int i = 0; i < 12; ++i) {
        std::vector<int> prompt{1, 4, 5};
        for (int k = 0; k < 3; ++k) prompt.push_back(24 + static_cast<int>(rng.index(16)));
        prompt.push_back(2);
        // Half the references are the model's own greedy output, so both outcomes occur.
        std::vector<int> y = greedy_decode(lm, prompt, 3, 2, &ad);
        if (i % 2 == 1) y = {24 + static_cast<int>(rng.index(16)), 3};
        batch.push_back({prompt, y});
    }
    AdapterView v = view_of(ad);
    auto fast = exact_match(lm, batch, &v);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const bool slow = greedy_decode(lm, batch[i].prompt, 3, batch[i].completion.size(), &ad) == batch[i].completion;
        EXPECT_EQ(fast[i], slow) << "example " << i;
        hits += slow;
    }
    EXPECT_GT(hits, 0u);
}

TEST(BaseLM, CheckpointRoundTripIsBitwise) {
    BaseLM lm = init_base_lm(tiny(2), 27);
    const std::string p = tmp("rt.t2lm");
    save_base_lm(lm, p);
    BaseLM back = load_base_lm(p);
    EXPECT_EQ(back.config, lm.config);
    EXPECT_EQ(back.checksum(), lm.checksum());
    std::filesystem::remove(p);
}

TEST(BaseLM, CorruptCheckpointsAreRejected) {
    BaseLM lm = init_base_lm(tiny(), 28);
    const std::string p = tmp("bad.t2lm");
    save_base_lm(lm, p);
    const auto size = std::filesystem::file_size(p);
    std::filesystem::resize_file(p, size - 9);
    EXPECT_THROW(load_base_lm(p), TruncatedFileError);
    {
        std::ofstream f(p, std::ios::binary);
        f << "NOPE0000000000000000";
    }
    EXPECT_THROW(load_base_lm(p), BadMagicError);
    std::filesystem::remove(p);
}

TEST(BaseLM, InputValidation) {
    BaseLM lm = init_base_lm(tiny(), 29);
    EXPECT_THROW(forward(lm, {{1, 64}}), IndexError);
    EXPECT_THROW(forward(lm, random_tokens(1, 17, 1)), ShapeError);
    EXPECT_THROW(forward(lm, {{1, 2}, {1}}), ShapeError);
    BaseLMConfig other = tiny();
    other.d_model = 32;
    EXPECT_THROW(forward(lm, {{1, 2}}, init_lora(other, rank2(), 1, false)), ShapeError);
    BaseLMConfig bad = tiny();
    bad.n_heads = 3;
    EXPECT_THROW(init_base_lm(bad, 1), ConfigError);
}
