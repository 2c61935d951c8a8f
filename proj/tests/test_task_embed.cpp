#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "t2l/task_embed.hpp"

using namespace t2l;

namespace {

std::string write_file(const std::string& name, const std::string& body) {
    const auto p = (std::filesystem::temp_directory_path() / ("t2l_test_embed_" + name)).string();
    std::ofstream(p) << body;
    return p;
}

double cos_of(const TaskEmbedding& a, const TaskEmbedding& b) { return cosine_similarity(a.vector.values(), b.vector.values()); }

}  // namespace

TEST(OneHot, BasisVectorsAndRange) {
    EXPECT_EQ(embed_one_hot(0, 3).vector.values(), (std::vector<double>{1, 0, 0}));
    EXPECT_EQ(embed_one_hot(2, 3).vector.values(), (std::vector<double>{0, 0, 1}));
    EXPECT_THROW(embed_one_hot(3, 3), IndexError);
}

TEST(OneHot, MutuallyOrthonormal) {
    const std::size_t n = 7;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            auto a = embed_one_hot(i, n).vector.values(), b = embed_one_hot(j, n).vector.values();
            double dot = 0.0;
            for (std::size_t k = 0; k < n; ++k) dot += a[k] * b[k];
            EXPECT_EQ(dot, i == j ? 1.0 : 0.0);
        }
}

TEST(Hashed, DeterministicAndUnitNorm) {
    for (const char* text : {"copy the input", "x", "Sort THE tokens, ascending!", "a a a a b"}) {
        auto a = embed_hashed(text, 64), b = embed_hashed(text, 64);
        EXPECT_EQ(a.vector.values(), b.vector.values());
        EXPECT_NEAR(std::sqrt(sq_norm(a.vector.values())), 1.0, 1e-12);
        for (double v : a.vector.values()) EXPECT_TRUE(std::isfinite(v));
    }
    EXPECT_NE(embed_hashed("copy the input", 64, 1).vector.values(), embed_hashed("copy the input", 64, 2).vector.values());
}

TEST(Hashed, SharedTokensRaiseCosine) {
    auto a = embed_hashed("sort the tokens ascending", 64);
    auto b = embed_hashed("sort tokens in ascending order", 64);
    auto c = embed_hashed("answer science questions", 64);
    EXPECT_GT(cos_of(a, b), cos_of(a, c));
}

TEST(Hashed, OrderFreeOverTokenMultiset) {
    std::vector<std::string> words{"shift", "every", "symbol", "forward", "by", "two"};
    auto join = [](const std::vector<std::string>& w) {
        std::string s;
        for (const auto& x : w) s += x + " ";
        return s;
    };
    const auto ref = embed_hashed(join(words), 32).vector.values();
    Rng rng(1);
    for (int t = 0; t < 10; ++t) {
        for (std::size_t i = words.size() - 1; i > 0; --i) std::swap(words[i], words[rng.index(i + 1)]);
        EXPECT_EQ(embed_hashed(join(words), 32).vector.values(), ref);
    }
}

TEST(Hashed, EmptyDescriptionIsRejected) {
    EXPECT_THROW(embed_hashed("", 64), InputError);
    EXPECT_THROW(embed_hashed(" ,.; ", 64), InputError);
    EXPECT_THROW(embed_hashed("ok", 0), ConfigError);
}

TEST(Table, LoadsWellFormedFileAndReportsMisses) {
    auto p = write_file("ok.tsv", "copy the input\t1,0,0\nreverse it\t0,0.5,-2\n");
    EmbeddingTable t = load_embedding_table(p);
    EXPECT_EQ(t.size(), 2u);
    EXPECT_EQ(t.dim(), 3u);
    EXPECT_EQ(t.lookup("reverse it")->vector.values(), (std::vector<double>{0, 0.5, -2}));
    EXPECT_FALSE(t.lookup("unknown").has_value());

    const auto q = write_file("rt.tsv", "");
    save_embedding_table(t, q);
    EXPECT_EQ(load_embedding_table(q).rows(), t.rows());
}

TEST(Table, DistinctErrors) {
    EXPECT_THROW(load_embedding_table(write_file("dim.tsv", "a\t1,2\nb\t1,2,3\n")), EmbeddingDimensionError);
    EXPECT_THROW(load_embedding_table(write_file("dup.tsv", "a\t1,2\na\t3,4\n")), DuplicateKeyError);
    EXPECT_THROW(load_embedding_table(write_file("nan.tsv", "a\t1,zz\n")), ParseError);
    EXPECT_THROW(load_embedding_table(write_file("tab.tsv", "no tab here\n")), ParseError);
    EXPECT_THROW(load_embedding_table("/nonexistent/t2l/table.tsv"), InputError);
}

TEST(Provider, NamesRoundTrip) {
    for (auto p : {EmbedProvider::OneHot, EmbedProvider::Learned, EmbedProvider::Hashed, EmbedProvider::Table})
        EXPECT_EQ(parse_provider(provider_name(p)), p);
    EXPECT_THROW(parse_provider("gte"), ConfigError);
}
