#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "primitive_cases.hpp"
#include "t2l/tensor.hpp"

using namespace t2l;
using t2l::check::gradcheck;
using t2l::check::probe;
using t2l::check::grad_param;

namespace {

constexpr double kTol = 1e-4;
constexpr std::size_t kCoords = 24;

std::vector<double> naive_matmul(const Tensor& a, const Tensor& b, std::size_t m, std::size_t k, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
    return c;
}

}  // namespace

TEST(TensorGrad, EveryPrimitiveMatchesFiniteDifferences) {
    for (const auto& c : check::primitive_grad_cases()) {
        auto r = gradcheck(c.params, c.loss, kCoords, 1);
        EXPECT_GE(r.checked, 20u) << c.name;
        EXPECT_LE(r.max_rel, kTol) << c.name << ": " << r.worst;
    }
}

TEST(TensorGrad, AccumulatesAcrossUses) {
    Tensor a = grad_param({4, 5}, 25);
    a.zero_grad();
    sum(add(a, a)).backward();
    for (double g : a.grad()) EXPECT_EQ(g, 2.0);
}

TEST(TensorKernel, GemmMatchesNaiveForRaggedShapes) {
    for (auto [m, k, n] : {std::tuple{1, 1, 1}, {3, 5, 7}, {4, 16, 16}, {5, 17, 33}, {9, 3, 18}, {13, 64, 20}}) {
        Tensor a = grad_param({std::size_t(m), std::size_t(k)}, 30 + m);
        Tensor b = grad_param({std::size_t(k), std::size_t(n)}, 40 + n);
        NoGradGuard ng;
        Tensor c = matmul(a, b);
        auto want = naive_matmul(a, b, m, k, n);
        for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(c[i], want[i], 1e-12);
    }
}

TEST(TensorKernel, RowResultIndependentOfBatchSize) {
    Tensor a = grad_param({9, 20}, 50), w = grad_param({19, 20}, 51);
    NoGradGuard ng;
    Tensor full = matmul(a, w, true);
    for (std::size_t r = 0; r < 9; ++r) {
        Tensor one = matmul(slice(a, 0, r, 1), w, true);
        for (std::size_t j = 0; j < 19; ++j) EXPECT_EQ(one[j], full[r * 19 + j]);
    }
}

TEST(TensorForward, SoftmaxRowsSumToOneAndRespectMask) {
    Tensor x = grad_param({2, 4, 4}, 60);
    Tensor y = softmax(x, true);
    for (std::size_t r = 0; r < 8; ++r) {
        double s = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            s += y[r * 4 + i];
            if (i > r % 4) {
                EXPECT_EQ(y[r * 4 + i], 0.0);
            }
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(TensorForward, LayerNormRowsAreStandardized) {
    Tensor x = grad_param({3, 10}, 61);
    Tensor y = layer_norm(x, Tensor::full({10}, 1.0), Tensor::zeros({10}));
    for (std::size_t r = 0; r < 3; ++r) {
        double mu = 0.0, var = 0.0;
        for (std::size_t i = 0; i < 10; ++i) mu += y[r * 10 + i];
        mu /= 10;
        for (std::size_t i = 0; i < 10; ++i) var += (y[r * 10 + i] - mu) * (y[r * 10 + i] - mu);
        EXPECT_NEAR(mu, 0.0, 1e-12);
        EXPECT_NEAR(var / 10, 1.0, 1e-4);
    }
}

TEST(TensorForward, CrossEntropyOfUniformLogitsIsLogVocab) {
    Tensor logits = Tensor::zeros({3, 8});
    std::vector<int> t{1, 2, -1};
    EXPECT_NEAR(cross_entropy(logits, t).item(), std::log(8.0), 1e-12);
}

TEST(TensorErrors, ShapeAndIndexViolations) {
    Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({4, 5});
    EXPECT_THROW(matmul(a, b), ShapeError);
    EXPECT_THROW(add(a, b), ShapeError);
    EXPECT_THROW(reshape(a, {5}), ShapeError);
    std::vector<int> bad{9};
    EXPECT_THROW(embedding(a, bad), IndexError);
    std::vector<int> masked{-1, -1};
    EXPECT_THROW(cross_entropy(a, masked), ContractError);
    EXPECT_THROW(Tensor::zeros({2, 2}).backward(), ContractError);
}

TEST(TensorTape, NoGradBuildsNoTape) {
    Tensor a = grad_param({2, 2}, 70);
    {
        NoGradGuard ng;
        EXPECT_FALSE(add(a, a).has_tape_node());
    }
    EXPECT_TRUE(add(a, a).has_tape_node());
}
