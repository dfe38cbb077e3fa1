#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sifa/attention.hpp"
#include "test_util.hpp"

using namespace sifa;
using namespace sifa::attn;

namespace {

deform::NeighborSet<double> random_neighbors(std::size_t channels, std::size_t count, std::mt19937_64& rng) {
    deform::NeighborSet<double> n;
    n.keys = test::random_tensor<double>({channels, count}, rng);
    n.vals = n.keys;
    n.coords.resize(count);
    return n;
}

// Brute-force correlate -> softmax/raw -> weighted sum -> residual.
std::vector<double> brute_force(std::span<const double> q, const TensorD& keys, NormMode mode) {
    const std::size_t c = keys.extent(0), n = keys.extent(1);
    std::vector<double> w(n);
    for (std::size_t g = 0; g < n; ++g)
        for (std::size_t i = 0; i < c; ++i) w[g] += q[i] * keys.at({i, g});
    if (mode == NormMode::softmax) {
        double z = 0.0;
        for (auto& v : w) z += std::exp(v / std::sqrt(double(c)));
        for (auto& v : w) v = std::exp(v / std::sqrt(double(c))) / z;
    }
    std::vector<double> y(q.begin(), q.end());
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t g = 0; g < n; ++g) y[i] += w[g] * keys.at({i, g});
    return y;
}

}  // namespace

TEST(Correlate, SelfAndOrthogonal) {
    const std::vector<double> q{1.0, -2.0, 0.5};
    TensorD keys({3, 9});
    for (std::size_t g = 0; g < 9; ++g)
        for (std::size_t i = 0; i < 3; ++i) keys.at({i, g}) = q[i];
    for (double v : correlate<double>(q, keys).values) EXPECT_DOUBLE_EQ(v, 5.25);

    TensorD ortho({3, 2}, {2.0, 0.0, 1.0, 1.0, 0.0, 4.0});  // columns (2,1,0) and (0,1,4)
    for (double v : correlate<double>(q, ortho).values) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(correlate<double>(q, TensorD({4, 9})), ShapeError);
}

TEST(Correlate, MatchesLoop) {
    std::mt19937_64 rng(1);
    const auto keys = test::random_tensor<double>({16, 9}, rng);
    const auto q = test::random_tensor<double>({16}, rng);
    const auto w = correlate<double>(q.data(), keys);
    ASSERT_EQ(w.values.size(), 9u);
    EXPECT_EQ(w.mode, NormMode::raw);
    for (std::size_t g = 0; g < 9; ++g) {
        double acc = 0.0;
        for (std::size_t i = 0; i < 16; ++i) acc += q[i] * keys.at({i, g});
        EXPECT_NEAR(w.values[g], acc, 1e-13);
    }
}

TEST(Normalize, RawIsIdentity) {
    const AttentionWeights w{{1.5, -3.0, 1e4}, NormMode::raw};
    EXPECT_EQ(normalize(w, NormMode::raw, 4).values, w.values);
}

TEST(Normalize, SoftmaxProperties) {
    const AttentionWeights equal{std::vector<double>(9, 2.5), NormMode::raw};
    for (double v : normalize(equal, NormMode::softmax, 16).values) EXPECT_NEAR(v, 1.0 / 9.0, 1e-15);

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> d(-5, 5);
    AttentionWeights w{std::vector<double>(9), NormMode::raw}, shifted = w;
    for (std::size_t i = 0; i < 9; ++i) {
        w.values[i] = d(rng);
        shifted.values[i] = w.values[i] + 123.0;
    }
    const auto a = normalize(w, NormMode::softmax, 4), b = normalize(shifted, NormMode::softmax, 4);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-12);

    // Scaled by 1/sqrt(C): C=4 halves the logits.
    const auto two = normalize(AttentionWeights{{2.0, 0.0}, NormMode::raw}, NormMode::softmax, 4);
    EXPECT_NEAR(two.values[0], std::exp(1.0) / (std::exp(1.0) + 1.0), 1e-15);
}

TEST(Normalize, SimplexUnderExtremeLogits) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> d(-1e4, 1e4);
    for (int trial = 0; trial < 100; ++trial) {
        AttentionWeights w{std::vector<double>(18), NormMode::raw};
        for (auto& v : w.values) v = d(rng);
        const auto s = normalize(w, NormMode::softmax, 1);
        double total = 0.0;
        for (double v : s.values) {
            EXPECT_GE(v, 0.0);
            EXPECT_TRUE(std::isfinite(v));
            total += v;
        }
        EXPECT_NEAR(total, 1.0, 1e-6);
    }
}

TEST(Aggregate, SelectionAndAnnihilation) {
    std::mt19937_64 rng(4);
    const auto vals = test::random_tensor<double>({5, 9}, rng);
    AttentionWeights onehot{std::vector<double>(9, 0.0), NormMode::softmax};
    onehot.values[4] = 1.0;
    const auto sel = aggregate(onehot, vals);
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(sel[c], vals.at({c, 4}));
    for (double v : aggregate(AttentionWeights{std::vector<double>(9, 0.0), NormMode::raw}, vals)) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(aggregate(onehot, TensorD({5, 8})), ShapeError);
}

TEST(Aggregate, MatchesLoop) {
    std::mt19937_64 rng(5);
    const auto vals = test::random_tensor<double>({16, 9}, rng);
    AttentionWeights w{std::vector<double>(9), NormMode::raw};
    std::uniform_real_distribution<double> d(-1, 1);
    for (auto& v : w.values) v = d(rng);
    const auto a = aggregate(w, vals);
    for (std::size_t c = 0; c < 16; ++c) {
        double acc = 0.0;
        for (std::size_t g = 0; g < 9; ++g) acc += w.values[g] * vals.at({c, g});
        EXPECT_NEAR(a[c], acc, 1e-14);
    }
}

TEST(Aggregate, RawModeIsBilinearInValues) {
    std::mt19937_64 rng(6);
    const auto vals = test::random_tensor<double>({4, 9}, rng);
    AttentionWeights w{std::vector<double>(9), NormMode::raw};
    std::uniform_real_distribution<double> d(-1, 1);
    for (auto& v : w.values) v = d(rng);
    TensorD scaled = vals;
    for (auto& v : scaled.data()) v *= 4.0;  // power of two: exact
    const auto a = aggregate(w, vals), b = aggregate(w, scaled);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(b[c], 4.0 * a[c]);
}

TEST(Enhance, AdditiveIdentity) {
    const std::vector<float> q{1, 2, 3}, z{0, 0, 0}, a{-1, 0.5, 4};
    EXPECT_EQ(enhance<float>(q, z), q);
    EXPECT_EQ(enhance<float>(z, a), a);
    EXPECT_THROW(enhance<float>(q, std::span<const float>(a).first(2)), ShapeError);
}

TEST(AttendQuery, ZeroNeighborsLeaveQuery) {
    std::mt19937_64 rng(7);
    const auto q = test::random_tensor<double>({6}, rng);
    deform::NeighborSet<double> n;
    n.keys = TensorD({6, 9});
    n.vals = n.keys;
    for (auto mode : {NormMode::raw, NormMode::softmax}) {
        const auto r = attend_query<double>(q.data(), n, mode);
        for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(r.enhanced[c], q[c]);
    }
}

TEST(AttendQuery, SingleKeySoftmaxAddsValue) {
    std::mt19937_64 rng(8);
    const auto frame = test::random_tensor<float>({4, 5, 5}, rng);
    const auto q = test::random_tensor<float>({4}, rng, -100, 100);
    const auto n = deform::extract_neighbors<float>(frame, 1, 3, 1, nullptr);
    const auto r = attend_query<float>(q.data(), n, NormMode::softmax);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(r.enhanced[c], q[c] + frame.at({c, 1, 3}));
}

TEST(AttendQuery, ResidualLawAndBruteForce) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t c = trial % 2 ? 16 : 4;
        const auto n = random_neighbors(c, trial % 3 ? 9 : 25, rng);
        const auto q = test::random_tensor<double>({c}, rng);
        for (auto mode : {NormMode::raw, NormMode::softmax}) {
            const auto r = attend_query<double>(q.data(), n, mode);
            for (std::size_t i = 0; i < c; ++i) EXPECT_EQ(r.enhanced[i], q[i] + r.aggregated[i]);
            const auto ref = brute_force(q.data(), n.keys, mode);
            for (std::size_t i = 0; i < c; ++i) EXPECT_NEAR(r.enhanced[i], ref[i], 1e-12);
        }
    }
}

TEST(AttendQuery, PermutationEquivariant) {
    std::mt19937_64 rng(10);
    const auto n = random_neighbors(8, 9, rng);
    const auto q = test::random_tensor<double>({8}, rng);
    std::vector<std::size_t> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto p = n;
    for (std::size_t g = 0; g < 9; ++g)
        for (std::size_t c = 0; c < 8; ++c) p.keys.at({c, g}) = n.keys.at({c, perm[g]});
    p.vals = p.keys;
    for (auto mode : {NormMode::raw, NormMode::softmax}) {
        const auto a = attend_query<double>(q.data(), n, mode), b = attend_query<double>(q.data(), p, mode);
        for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(a.enhanced[c], b.enhanced[c], 1e-6 * std::max(1.0, std::abs(a.enhanced[c])));
    }
}

TEST(AttendFrame, MatchesPerQueryComposition) {
    std::mt19937_64 rng(11);
    const auto q = test::random_tensor<double>({4, 6, 5}, rng), f = test::random_tensor<double>({4, 6, 5}, rng);
    const auto off = test::random_tensor<double>({18, 6, 5}, rng, -2, 2);
    const deform::OffsetField<double> field{off, 3};
    const Source<double> src[] = {{&f, &off}};
    for (auto mode : {NormMode::raw, NormMode::softmax}) {
        const auto agg = attend_frame<double>(q, src, 3, mode);
        for (std::size_t r = 0; r < 6; ++r)
            for (std::size_t c = 0; c < 5; ++c) {
                std::vector<double> qv(4);
                for (std::size_t i = 0; i < 4; ++i) qv[i] = q.at({i, r, c});
                const auto n = deform::extract_neighbors(f, r, c, 3, &field);
                const auto res = attend_query<double>(qv, n, mode);
                for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(agg.at({i, r, c}), res.aggregated[i], 1e-13);
            }
    }
}

TEST(AttendFrame, JointPoolUniformOnEqualKeys) {
    // Constant frames: every key equals every other, so 2k^2 equal weights.
    const auto q = TensorD::full({2, 5, 5}, 1.0);
    const auto next = TensorD::full({2, 5, 5}, 0.5), prev = TensorD::full({2, 5, 5}, 0.5);
    const Source<double> src[] = {{&next, nullptr}, {&prev, nullptr}};
    AttentionProbe probe{2, 2, {}, {}};
    attend_frame<double>(q, src, 3, NormMode::softmax, nullptr, &probe);
    ASSERT_EQ(probe.weights.size(), 18u);
    for (double w : probe.weights) EXPECT_NEAR(w, 1.0 / 18.0, 1e-15);
}

TEST(CorrelationFrame, ConstantOnFlatInput) {
    const auto f = TensorD::full({3, 6, 6}, 0.25);
    const auto corr = correlation_frame(f, f, 3, NormMode::raw);
    ASSERT_EQ(corr.shape(), (Shape{9, 6, 6}));
    for (std::size_t g = 0; g < 9; ++g) EXPECT_DOUBLE_EQ(corr.at({g, 3, 3}), 3 * 0.0625);
    const auto flat = correlation_frame(TensorD({3, 6, 6}), TensorD({3, 6, 6}), 3, NormMode::softmax);
    for (double v : flat.data()) {
        EXPECT_NEAR(v, 1.0 / 9.0, 1e-15);
    }
}
