#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sifa/tensor.hpp"
#include "test_util.hpp"

using namespace sifa;

TEST(Tensor, ZerosAreZero) {
    const auto z = Tensor::zeros({2, 2});
    for (float v : z.data()) EXPECT_EQ(v, 0.0f);
    EXPECT_EQ(sum(Tensor::zeros({3, 4, 5})), 0.0);
}

TEST(Tensor, ZeroExtentRejected) {
    EXPECT_THROW(Tensor::zeros({0}), ShapeError);
    EXPECT_THROW(Tensor::zeros({2, 0, 3}), ShapeError);
    EXPECT_THROW(Tensor::zeros({1, 1, 1, 1, 1}), ShapeError);
}

TEST(Tensor, SizeMatchesShape) {
    EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), ShapeError);
    const Tensor t({2, 3, 4});
    EXPECT_EQ(t.size(), 24u);
}

TEST(Tensor, RowMajorIndexRoundTrip) {
    const Tensor t({3, 4, 5, 6});
    for (std::size_t flat = 0; flat < t.size(); ++flat) {
        const auto c = t.coords(flat);
        ASSERT_EQ(c.size(), 4u);
        EXPECT_EQ(((c[0] * 4 + c[1]) * 5 + c[2]) * 6 + c[3], flat);
        EXPECT_EQ(t.index(std::span<const std::size_t>(c)), flat);
    }
    EXPECT_THROW(t.index({3, 0, 0, 0}), ShapeError);
}

TEST(Tensor, Elementwise) {
    const Tensor a({2}, {4, 1}), b({2}, {1, 2});
    const auto d = sub(a, b);
    EXPECT_EQ(d[0], 3.0f);
    EXPECT_EQ(d[1], -1.0f);

    std::mt19937_64 rng(1);
    const auto x = test::random_tensor<float>({3, 4, 5}, rng), y = test::random_tensor<float>({3, 4, 5}, rng);
    EXPECT_EQ(add(x, y), add(y, x));
    EXPECT_EQ(mul(x, Tensor::zeros_like(x)), Tensor::zeros_like(x));
    EXPECT_THROW(add(x, Tensor::zeros({3, 4})), ShapeError);
}

TEST(Tensor, Sigmoid) {
    EXPECT_EQ(sigmoid(0.0), 0.5);
    EXPECT_NEAR(sigmoid(std::log(3.0)), 0.75, 1e-15);
    const double tail = sigmoid(-100.0);
    EXPECT_GT(tail, 0.0);
    EXPECT_LT(tail, 1e-40);
    EXPECT_EQ(sigmoid(1000.0), 1.0);
    EXPECT_TRUE(std::isfinite(sigmoid(-1000.0)));
}

TEST(Tensor, Dot) {
    const std::vector<float> a{1, 2}, b{3, 4};
    EXPECT_EQ(dot<float>(a, b), 11.0f);

    std::mt19937_64 rng(2);
    std::normal_distribution<double> n;
    std::vector<double> p(64), q(64);
    for (auto& v : p) v = n(rng);
    for (auto& v : q) v = n(rng);
    double naive = 0.0;
    for (std::size_t i = 0; i < 64; ++i) naive += p[i] * q[i];
    EXPECT_EQ(dot<double>(p, q), naive);
    EXPECT_GE(dot<double>(p, p), 0.0);
    EXPECT_THROW(dot<double>(p, std::span<const double>(q).first(3)), ShapeError);
}

TEST(Tensor, NonFiniteRejected) {
    const Tensor t({2}, {1.0f, NAN});
    EXPECT_THROW(require_finite(t, "test"), NumericError);
    EXPECT_THROW(add(Tensor({1}, {INFINITY}), Tensor({1}, {1.0f})), NumericError);
}

TEST(Conv2d, ZeroWeightsGiveBias) {
    auto p = Conv2dParams::zeros(3, 2, 3);
    p.bias = Tensor({3}, {1.0f, -2.0f, 0.5f});
    std::mt19937_64 rng(3);
    const auto y = conv2d(test::random_tensor<float>({2, 4, 5}, rng), p);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(y[c * 20 + i], p.bias[c]);
}

TEST(Conv2d, IdentityKernel) {
    auto p = Conv2dParams::zeros(4, 4, 1);
    for (std::size_t c = 0; c < 4; ++c) p.weight[c * 4 + c] = 1.0f;
    std::mt19937_64 rng(4);
    const auto x = test::random_tensor<float>({4, 5, 6}, rng);
    EXPECT_EQ(conv2d(x, p), x);
}

TEST(Conv2d, MatchesLoopOracle) {
    std::mt19937_64 rng(5);
    for (std::size_t kernel : {1u, 3u, 5u}) {
        Conv2dParams p{test::random_tensor<float>({3, 4, kernel, kernel}, rng), test::random_tensor<float>({3}, rng),
                       (kernel - 1) / 2};
        const auto x = test::random_tensor<float>({4, 5, 5}, rng);
        const auto y = conv2d(x, p);
        ASSERT_EQ(y.shape(), (Shape{3, 5, 5}));
        EXPECT_LT(test::max_abs_diff(y, test::conv2d_loop(x, p)), 1e-6);
    }
}

TEST(Conv2d, ChannelMismatch) {
    auto p = Conv2dParams::zeros(2, 3, 3);
    EXPECT_THROW(conv2d(Tensor({4, 5, 5}), p), ShapeError);
    p.padding = 0;
    EXPECT_THROW(conv2d(Tensor({3, 5, 5}), p), ShapeError);
}

TEST(Conv2d, Linearity) {
    std::mt19937_64 rng(6);
    auto check = [&](auto tag, double tol) {
        using T = decltype(tag);
        BasicConv2dParams<T> p{test::random_tensor<T>({3, 2, 3, 3}, rng), BasicTensor<T>({3}), 1};
        const auto x = test::random_tensor<T>({2, 6, 6}, rng), y = test::random_tensor<T>({2, 6, 6}, rng);
        const T alpha = T(0.7), beta = T(-1.3);
        BasicTensor<T> mix(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) mix[i] = alpha * x[i] + beta * y[i];
        const auto lhs = conv2d(mix, p);
        const auto cx = conv2d(x, p), cy = conv2d(y, p);
        double scale = 0.0, diff = 0.0;
        for (std::size_t i = 0; i < lhs.size(); ++i) {
            const double rhs = double(alpha) * cx[i] + double(beta) * cy[i];
            diff = std::max(diff, std::abs(lhs[i] - rhs));
            scale = std::max(scale, std::abs(rhs));
        }
        EXPECT_LT(diff / scale, tol);
    };
    check(float{}, 1e-5);
    check(double{}, 1e-12);
}

TEST(Conv2d, Deterministic) {
    std::mt19937_64 rng(7);
    Conv2dParams p{test::random_tensor<float>({4, 4, 3, 3}, rng), test::random_tensor<float>({4}, rng), 1};
    const auto x = test::random_tensor<float>({4, 8, 8}, rng);
    EXPECT_EQ(conv2d(x, p), conv2d(x, p));
}
